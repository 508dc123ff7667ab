"""Variable-density incompressible momentum step on the staggered grid.

One fractional step:
  (i)   transport/viscous solve for the intermediate velocity in conservative form,
        h^2 (rho+_f vt - rho^n_f v^n)/dt + ADV(G) vt + VISC vt = 0,
        where G is the advective mass flux (rho v + relative flux) on cell faces,
        ADV is conservative upwind on the face control volumes with edge fluxes
        averaged from G (so the face continuity matches the cell continuity
        exactly), and VISC is the symmetric form of -div(2 nu(phi) D v) with
        no-slip walls;
  (ii)  capillary impulse v* = vt + (dt/rho+_f) F with the face force F;
  (iii) variable-coefficient projection div((1/rho+_f) grad p) = div(v*)/dt with
        Neumann pressure and mean-zero gauge, v+ = v* - (dt/rho+_f) grad p.

Because the impulse and the correction share the same 1/rho+_f metric, adding any
discrete gradient field to F changes v+ only at the projection tolerance.  The
default force is -phibar grad mu, which equals the capillary force mu grad phi
minus the exact discrete gradient of mu*phi (absorbed by the pressure).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .ch_solvers import StepFailure
from .grid import (GridSpec, ScalarField, VectorField, apply_divergence, apply_gradient,
                   face_average, field_norm)
from .operators import CgNeumannSolver
from .physics import PhysicalParams


@dataclass(frozen=True)
class FlowStepConfig:
    dt: float
    projection_tol: float = 1e-10
    projection_max_iter: int = 10
    viscous_treatment: str = "semi_implicit"  # "semi_implicit" | "explicit"

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.viscous_treatment not in ("semi_implicit", "explicit"):
            raise ValueError(f"unknown viscous_treatment {self.viscous_treatment!r}")


def relative_flux(phi: ScalarField, mu: ScalarField, params: PhysicalParams) -> VectorField:
    """Diffusive mass flux -((rho2-rho1)/2) m(phi on faces) grad mu; zero on
    boundary faces since grad mu has zero normal component there."""
    if phi.grid != mu.grid:
        raise ValueError("phi and mu must share a grid")
    pu, pv = face_average(phi)
    grad = apply_gradient(mu)
    beta = params.rho_diff_half
    return VectorField(phi.grid,
                       -beta * params.mobility_of(pu) * grad.u,
                       -beta * params.mobility_of(pv) * grad.v)


def capillary_force(phi: ScalarField, mu: ScalarField) -> VectorField:
    """Face-centered mu (arithmetic face average) times grad phi."""
    if phi.grid != mu.grid:
        raise ValueError("phi and mu must share a grid")
    mu_u, mu_v = face_average(mu)
    grad = apply_gradient(phi)
    return VectorField(phi.grid, mu_u * grad.u, mu_v * grad.v)


def capillary_force_phigrad(phi: ScalarField, mu: ScalarField) -> VectorField:
    """-phibar grad mu: the capillary force modulo the discrete gradient of mu*phi,
    which the projection annihilates.  This is the form whose power against the
    transport velocity cancels the convective free-energy exchange exactly."""
    pu, pv = face_average(phi)
    grad = apply_gradient(mu)
    return VectorField(phi.grid, -pu * grad.u, -pv * grad.v)


def default_mass_flux(v_n: VectorField, phi: ScalarField, mu: ScalarField,
                      params: PhysicalParams) -> VectorField:
    """Advective mass flux rho(phibar) v^n + relative flux on faces."""
    pu, pv = face_average(phi)
    jt = relative_flux(phi, mu, params)
    return VectorField(v_n.grid,
                       params.rho_of(pu) * v_n.u + jt.u,
                       params.rho_of(pv) * v_n.v + jt.v)


class _FaceIndexer:
    """Unknown numbering for interior faces: u block then v block."""

    def __init__(self, grid: GridSpec):
        self.grid = grid
        nx, ny = grid.nx, grid.ny
        self.n_u = (nx - 1) * ny
        self.n_v = nx * (ny - 1)
        self.n = self.n_u + self.n_v
        self.iu = np.arange(self.n_u).reshape(nx - 1, ny)          # u(i,j), i=1..nx-1 -> iu[i-1,j]
        self.iv = self.n_u + np.arange(self.n_v).reshape(nx, ny - 1)  # v(i,j), j=1..ny-1 -> iv[i,j-1]

    def gather(self, w: VectorField) -> np.ndarray:
        return np.concatenate([w.u[1:-1, :].ravel(), w.v[:, 1:-1].ravel()])

    def scatter(self, vec: np.ndarray) -> VectorField:
        nx, ny = self.grid.nx, self.grid.ny
        u = np.zeros((nx + 1, ny))
        v = np.zeros((nx, ny + 1))
        u[1:-1, :] = vec[: self.n_u].reshape(nx - 1, ny)
        v[:, 1:-1] = vec[self.n_u:].reshape(nx, ny - 1)
        return VectorField(self.grid, u, v)


def _upwind_entries(rows, cols_nb, phi_edge, h, valid_nb):
    """Conservative upwind edge assembly helper.

    For an edge with outward flux phi (positive = leaving the row CV toward the
    neighbor), upwind takes the row value when phi >= 0 and the neighbor value
    otherwise.  Returns (diag_add, off_rows, off_cols, off_vals) in integrated form.
    """
    pos = phi_edge >= 0.0
    diag_add = np.where(pos, h * phi_edge, 0.0)
    take = (~pos) & valid_nb
    off_rows = rows[take]
    off_cols = cols_nb[take]
    off_vals = h * phi_edge[take]
    return diag_add, off_rows, off_cols, off_vals


def _advection_matrix(indexer: _FaceIndexer, flux: VectorField) -> sp.csr_matrix:
    """Conservative upwind advection in CV-integrated form: row r holds
    h * sum_edges (+-) Phi_e upw_e, with edge mass fluxes averaged from the cell
    face fluxes so the face-CV continuity matches the cell continuity exactly."""
    g = indexer.grid
    nx, ny, h = g.nx, g.ny, g.h
    Gx = flux.u.copy()
    Gy = flux.v.copy()
    # boundary faces carry no mass flux (no-slip + zero-flux chemical potential)
    Gx[0, :] = 0.0
    Gx[-1, :] = 0.0
    Gy[:, 0] = 0.0
    Gy[:, -1] = 0.0

    rows_all, cols_all, vals_all = [], [], []
    diag = np.zeros(indexer.n)

    def add(diag_add, rmask_rows, orows, ocols, ovals):
        np.add.at(diag, rmask_rows, diag_add)
        rows_all.append(orows)
        cols_all.append(ocols)
        vals_all.append(ovals)

    # --- u control volumes: faces (i,j), i=1..nx-1 ---
    I, J = np.meshgrid(np.arange(1, nx), np.arange(ny), indexing="ij")
    r = indexer.iu[I - 1, J].ravel()
    If, Jf = I.ravel(), J.ravel()

    phiE = 0.5 * (Gx[If, Jf] + Gx[If + 1, Jf])
    nbE_ok = If + 1 <= nx - 1
    colE = np.where(nbE_ok, indexer.iu[np.minimum(If + 1, nx - 1) - 1, Jf], 0)
    dE, oRE, oCE, oVE = _upwind_entries(r, colE, phiE, h, nbE_ok)
    add(dE, r, oRE, oCE, oVE)

    phiW = 0.5 * (Gx[If - 1, Jf] + Gx[If, Jf])
    nbW_ok = If - 1 >= 1
    colW = np.where(nbW_ok, indexer.iu[np.maximum(If - 1, 1) - 1, Jf], 0)
    # west edge: term is -Phi_W * upw(u_W-nb, u_r) with upwind = neighbor when Phi_W >= 0
    posW = phiW >= 0.0
    diagW = np.where(posW, 0.0, -h * phiW)
    takeW = posW & nbW_ok
    add(diagW, r, r[takeW], colW[takeW], -h * phiW[takeW])

    phiN = 0.5 * (Gy[If - 1, Jf + 1] + Gy[If, Jf + 1])
    nbN_ok = Jf + 1 <= ny - 1
    colN = np.where(nbN_ok, indexer.iu[If - 1, np.minimum(Jf + 1, ny - 1)], 0)
    dN, oRN, oCN, oVN = _upwind_entries(r, colN, phiN, h, nbN_ok)
    add(dN, r, oRN, oCN, oVN)

    phiS = 0.5 * (Gy[If - 1, Jf] + Gy[If, Jf])
    nbS_ok = Jf - 1 >= 0
    colS = np.where(nbS_ok, indexer.iu[If - 1, np.maximum(Jf - 1, 0)], 0)
    posS = phiS >= 0.0
    diagS = np.where(posS, 0.0, -h * phiS)
    takeS = posS & nbS_ok
    add(diagS, r, r[takeS], colS[takeS], -h * phiS[takeS])

    # --- v control volumes: faces (i,j), j=1..ny-1 ---
    I, J = np.meshgrid(np.arange(nx), np.arange(1, ny), indexing="ij")
    r = indexer.iv[I, J - 1].ravel()
    If, Jf = I.ravel(), J.ravel()

    phiN = 0.5 * (Gy[If, Jf] + Gy[If, Jf + 1])
    nbN_ok = Jf + 1 <= ny - 1
    colN = np.where(nbN_ok, indexer.iv[If, np.minimum(Jf + 1, ny - 1) - 1], 0)
    dN, oRN, oCN, oVN = _upwind_entries(r, colN, phiN, h, nbN_ok)
    add(dN, r, oRN, oCN, oVN)

    phiS = 0.5 * (Gy[If, Jf - 1] + Gy[If, Jf])
    nbS_ok = Jf - 1 >= 1
    colS = np.where(nbS_ok, indexer.iv[If, np.maximum(Jf - 1, 1) - 1], 0)
    posS = phiS >= 0.0
    diagS = np.where(posS, 0.0, -h * phiS)
    takeS = posS & nbS_ok
    add(diagS, r, r[takeS], colS[takeS], -h * phiS[takeS])

    phiE = 0.5 * (Gx[If + 1, Jf - 1] + Gx[If + 1, Jf])
    nbE_ok = If + 1 <= nx - 1
    colE = np.where(nbE_ok, indexer.iv[np.minimum(If + 1, nx - 1), Jf - 1], 0)
    dE, oRE, oCE, oVE = _upwind_entries(r, colE, phiE, h, nbE_ok)
    add(dE, r, oRE, oCE, oVE)

    phiW = 0.5 * (Gx[If, Jf - 1] + Gx[If, Jf])
    nbW_ok = If - 1 >= 0
    colW = np.where(nbW_ok, indexer.iv[np.maximum(If - 1, 0), Jf - 1], 0)
    posW = phiW >= 0.0
    diagW = np.where(posW, 0.0, -h * phiW)
    takeW = posW & nbW_ok
    add(diagW, r, r[takeW], colW[takeW], -h * phiW[takeW])

    rows = np.concatenate(rows_all + [np.arange(indexer.n)])
    cols = np.concatenate(cols_all + [np.arange(indexer.n)])
    vals = np.concatenate(vals_all + [diag])
    return sp.coo_matrix((vals, (rows, cols)), shape=(indexer.n, indexer.n)).tocsr()


def _strain_operators(indexer: _FaceIndexer):
    """Sparse strain maps: Dxx, Dyy on cells and Dxy on corners, acting on the
    interior-face unknown vector; no-slip walls enter through one-sided differences
    against the zero wall velocity."""
    g = indexer.grid
    nx, ny, h = g.nx, g.ny, g.h
    inv_h = 1.0 / h

    # Dxx rows: cells (i,j); entries +u(i+1,j)/h, -u(i,j)/h (interior u only)
    rows, cols, vals = [], [], []
    cell = np.arange(nx * ny).reshape(nx, ny)
    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    # +u(i+1,j): valid for i+1 in 1..nx-1
    m = I + 1 <= nx - 1
    rows.append(cell[m])
    cols.append(indexer.iu[(I + 1)[m] - 1, J[m]])
    vals.append(np.full(m.sum(), inv_h))
    # -u(i,j): valid for i in 1..nx-1
    m = I >= 1
    rows.append(cell[m])
    cols.append(indexer.iu[I[m] - 1, J[m]])
    vals.append(np.full(m.sum(), -inv_h))
    dxx = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(nx * ny, indexer.n)).tocsr()

    rows, cols, vals = [], [], []
    m = J + 1 <= ny - 1
    rows.append(cell[m])
    cols.append(indexer.iv[I[m], (J + 1)[m] - 1])
    vals.append(np.full(m.sum(), inv_h))
    m = J >= 1
    rows.append(cell[m])
    cols.append(indexer.iv[I[m], J[m] - 1])
    vals.append(np.full(m.sum(), -inv_h))
    dyy = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(nx * ny, indexer.n)).tocsr()

    # Dxy rows: corners (i,j), i=0..nx, j=0..ny; 0.5*(du/dy + dv/dx)
    corner = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    rows, cols, vals = [], [], []

    # du/dy terms need u at column i (interior only: 1 <= i <= nx-1)
    Iu = np.arange(1, nx)
    # interior corners 1 <= j <= ny-1: (u(i,j) - u(i,j-1))/h
    for sign, joff in ((0.5 * inv_h, 0), (-0.5 * inv_h, -1)):
        Ic, Jc = np.meshgrid(Iu, np.arange(1, ny), indexing="ij")
        rows.append(corner[Ic, Jc].ravel())
        cols.append(indexer.iu[Ic - 1, Jc + joff].ravel())
        vals.append(np.full(Ic.size, sign))
    # bottom wall j=0: du/dy = 2 u(i,0)/h
    rows.append(corner[Iu, 0])
    cols.append(indexer.iu[Iu - 1, 0])
    vals.append(np.full(Iu.size, 0.5 * 2.0 * inv_h))
    # top wall j=ny: du/dy = -2 u(i,ny-1)/h
    rows.append(corner[Iu, ny])
    cols.append(indexer.iu[Iu - 1, ny - 1])
    vals.append(np.full(Iu.size, -0.5 * 2.0 * inv_h))

    # dv/dx terms need v at row j (interior only: 1 <= j <= ny-1)
    Jv = np.arange(1, ny)
    for sign, ioff in ((0.5 * inv_h, 0), (-0.5 * inv_h, -1)):
        Ic, Jc = np.meshgrid(np.arange(1, nx), Jv, indexing="ij")
        rows.append(corner[Ic, Jc].ravel())
        cols.append(indexer.iv[Ic + ioff, Jc - 1].ravel())
        vals.append(np.full(Ic.size, sign))
    # left wall i=0: dv/dx = 2 v(0,j)/h
    rows.append(corner[0, Jv])
    cols.append(indexer.iv[0, Jv - 1])
    vals.append(np.full(Jv.size, 0.5 * 2.0 * inv_h))
    # right wall i=nx: dv/dx = -2 v(nx-1,j)/h
    rows.append(corner[nx, Jv])
    cols.append(indexer.iv[nx - 1, Jv - 1])
    vals.append(np.full(Jv.size, -0.5 * 2.0 * inv_h))

    dxy = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=((nx + 1) * (ny + 1), indexer.n)).tocsr()
    return dxx, dyy, dxy


def _corner_average(values: np.ndarray) -> np.ndarray:
    """Average a cell field onto corners (edge/corner values use available cells)."""
    padded = np.pad(values, 1, mode="edge")
    return 0.25 * (padded[:-1, :-1] + padded[1:, :-1] + padded[:-1, 1:] + padded[1:, 1:])


def _viscous_matrix(indexer: _FaceIndexer, ops, nu_cells: np.ndarray) -> sp.csr_matrix:
    """Symmetric positive-semidefinite CV-integrated form of -div(2 nu D v):
    V = sum_q B_q^T W_q B_q with quadrature weights 2 nu h^2 (cells) and
    4 nu h^2 (corners)."""
    dxx, dyy, dxy = ops
    h2 = indexer.grid.h**2
    wc = 2.0 * nu_cells.ravel() * h2
    wn = 4.0 * _corner_average(nu_cells).ravel() * h2
    return (dxx.T @ sp.diags(wc) @ dxx
            + dyy.T @ sp.diags(wc) @ dyy
            + dxy.T @ sp.diags(wn) @ dxy).tocsr()


class FlowWorkspace:
    """Per-grid cached index maps and strain operator structure."""

    def __init__(self, grid: GridSpec):
        self.indexer = _FaceIndexer(grid)
        self.strain_ops = _strain_operators(self.indexer)


def _momentum_solve(system: sp.csr_matrix, rhs: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Jacobi-preconditioned GMRES for the transport/viscous system (moderate
    condition number at diffusive time steps); sparse LU on stagnation."""
    n = rhs.size
    diag = system.diagonal()
    inv_diag = 1.0 / diag
    prec = spla.LinearOperator((n, n), matvec=lambda v: inv_diag * v)
    target = tol * (np.linalg.norm(rhs) + 1.0)
    sol = np.zeros(n)
    res = rhs.copy()
    for _ in range(4):
        upd, _ = spla.gmres(system, res, M=prec, rtol=1e-13, atol=0.45 * target,
                            restart=80, maxiter=3)
        sol += upd
        res = rhs - system @ sol
        if np.linalg.norm(res) <= target:
            return sol
    lu = spla.splu(system.tocsc())
    for _ in range(4):
        if np.linalg.norm(res) <= target:
            break
        sol += lu.solve(res)
        res = rhs - system @ sol
    return sol


@dataclass
class NSStepResult:
    v: VectorField
    p: ScalarField
    viscous_dissipation: float  # 2 int nu |D vt|^2, CV-integrated, of the transport velocity
    div_norm: float


def ns_step(v_n: VectorField, p_n: ScalarField, phi: ScalarField, mu: ScalarField,
            params: PhysicalParams, cfg: FlowStepConfig, *,
            phi_old: ScalarField | None = None,
            mass_flux: VectorField | None = None,
            force: VectorField | None = None,
            workspace: FlowWorkspace | None = None) -> NSStepResult:
    """One momentum step.  phi is the end-of-step order parameter (density rho+),
    phi_old the start-of-step one (defaults to phi); mass_flux overrides the
    advective flux G (the coupled stepper passes the flux that matches its CH
    update exactly); force overrides the capillary face force."""
    g = v_n.grid
    if phi.grid != g or mu.grid != g:
        raise ValueError("fields must share the velocity grid")
    if phi_old is None:
        phi_old = phi
    ws = workspace if workspace is not None else FlowWorkspace(g)
    indexer = ws.indexer
    h, dt = g.h, cfg.dt

    rho_new = ScalarField(g, params.rho_of(phi.values))
    rho_old = ScalarField(g, params.rho_of(phi_old.values))
    ru_new, rv_new = face_average(rho_new)
    ru_old, rv_old = face_average(rho_old)
    rho_new_faces = np.concatenate([ru_new[1:-1, :].ravel(), rv_new[:, 1:-1].ravel()])
    rho_old_faces = np.concatenate([ru_old[1:-1, :].ravel(), rv_old[:, 1:-1].ravel()])

    if mass_flux is None:
        mass_flux = default_mass_flux(v_n, phi_old, mu, params)
    if force is None:
        force = capillary_force_phigrad(phi_old, mu)

    adv = _advection_matrix(indexer, mass_flux)
    visc = _viscous_matrix(indexer, ws.strain_ops, params.nu_of(phi.values))
    vn_vec = indexer.gather(v_n)
    h2 = h * h

    if cfg.viscous_treatment == "semi_implicit":
        system = (sp.diags(h2 * rho_new_faces / dt) + adv + visc).tocsr()
        rhs = (h2 / dt) * rho_old_faces * vn_vec
        vt_vec = _momentum_solve(system, rhs)
    else:
        cfl = max(np.max(np.abs(v_n.u)), np.max(np.abs(v_n.v))) * dt / h
        if cfl > 1.0:
            warnings.warn(f"advective CFL {cfl:.2f} > 1 with explicit viscosity", stacklevel=2)
            raise StepFailure(f"CFL violation under explicit viscosity: {cfl:.2f}", cfl)
        rhs = (h2 / dt) * rho_old_faces * vn_vec - adv @ vn_vec - visc @ vn_vec
        vt_vec = rhs * dt / (h2 * rho_new_faces)

    visc_vec = vt_vec if cfg.viscous_treatment == "semi_implicit" else vn_vec
    viscous_dissipation = float(visc_vec @ (visc @ visc_vec))

    # capillary impulse in the same 1/rho metric as the projection correction
    f_vec = indexer.gather(force)
    v_star_vec = vt_vec + dt * f_vec / rho_new_faces
    v_star = indexer.scatter(v_star_vec)

    # variable-coefficient pressure projection, mean-zero gauge; the Poisson
    # residual target keeps dt * ||residual|| below the divergence tolerance
    inv_ru = 1.0 / ru_new
    inv_rv = 1.0 / rv_new
    poisson = CgNeumannSolver(g, inv_ru, inv_rv, max_iter=max(cfg.projection_max_iter, 400))
    rhs_p = apply_divergence(v_star)
    abs_target = 0.05 * cfg.projection_tol / (dt * h)
    p = poisson.solve_field(ScalarField(g, rhs_p.values / dt), tol=abs_target)
    grad_p = apply_gradient(p)
    v_next = VectorField(g,
                         v_star.u - dt * inv_ru * grad_p.u,
                         v_star.v - dt * inv_rv * grad_p.v)
    v_next.u[0, :] = 0.0
    v_next.u[-1, :] = 0.0
    v_next.v[:, 0] = 0.0
    v_next.v[:, -1] = 0.0

    div_norm = field_norm(apply_divergence(v_next), "L2")
    if div_norm > cfg.projection_tol:
        raise StepFailure(f"projection failed: ||div v|| = {div_norm:.3e}", div_norm)
    return NSStepResult(v=v_next, p=p, viscous_dissipation=viscous_dissipation, div_norm=div_norm)
