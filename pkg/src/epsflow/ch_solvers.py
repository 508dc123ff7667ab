"""Semi-implicit, energy-stable time steppers for the convected nonlocal and local
Cahn-Hilliard equations.

One step solves, by damped Newton with a logarithmic barrier,

    (phi+ - phi^n)/dt + div(v^n phibar^n) = div(m_eff grad mu+),

with the convex/concave split chemical potential

    nonlocal:  mu+ = F0'(phi+) + a_eps phi+ - J_eps * phi+ - theta_c phi^n
    local:     mu+ = F0'(phi+) - Lap phi+                  - theta_c phi^n

Only the concave -theta_c s^2/2 part is explicit.  The interaction operator
a_eps phi - J_eps * phi is taken fully implicit: it is a bounded positive
semidefinite form, so implicitness preserves unconditional energy dissipation,
and lagging the convolution would introduce an O(dt * a_eps) = O(dt / eps^2)
phase lag that wrecks small-eps runs at fixed dt (measured as a ~10x slowdown of
mode decay at eps = 0.05, dt = 1e-4).

phibar^n is the centered face interpolation of phi^n, which makes the conservative
convective flux exactly mean-preserving and lets the coupled stepper cancel the
convection/capillary energy exchange to round-off.  m_eff is m(phi^n) averaged to
faces, optionally augmented by a nonnegative face field (the coupled stepper passes
dt*phibar^2/rho there to fold the capillary impulse into the transport velocity).

The implicit F0' (strictly increasing, singular at +-1) plus the implicit quadratic
parts give unconditional dissipation of the free energy for v = 0 and keep
|phi| < 1 at every accepted iterate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from scipy.fft import dctn, idctn

from .grid import GridSpec, ScalarField, VectorField, apply_divergence, face_average
from .kernel import KernelOperator
from .operators import weighted_laplacian_matrix
from .physics import PhysicalParams, potential, potential_f0_second


@dataclass(frozen=True)
class CHStepConfig:
    dt: float
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    linear_tol: float = 1e-11
    phi_cap: float = 1.0 - 1e-12

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not (0.0 < self.phi_cap < 1.0):
            raise ValueError("phi_cap must lie in (0, 1)")


class StepFailure(RuntimeError):
    """Nonlinear or linear solver failure; carries the last residual norm."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


@dataclass
class NewtonResult:
    values: np.ndarray
    iterations: int
    residual_norm: float


# residual norms below this are treated as converged to the arithmetic floor,
# so the post-tolerance polishing step is skipped
_NEWTON_FLOOR = 1e-13

# per-iteration limit on how much of a cell's remaining distance to +-1 may be
# consumed, keeping barrier curvatures commensurate with the current Jacobian
_BARRIER_APPROACH = 0.9


def newton_phi_solve(problem, x0: np.ndarray, cfg: CHStepConfig) -> NewtonResult:
    """Projected damped Newton for a monotone residual with barrier cap
    |x| <= phi_cap.

    `problem` provides residual(x) -> array and jacobian_solve(x, rhs) -> array
    (solving J(x) d = rhs to cfg.linear_tol).  Candidate iterates are clipped
    onto the admissible box, each cell may consume at most a fixed fraction of
    its remaining distance to the barrier per iteration, and the line search
    halves the step until the Euclidean residual decreases.  Convergence is
    measured in the residual max-norm; after crossing newton_tol one extra full
    step is taken when it still reduces the residual, pushing the converged
    residual to the arithmetic floor.
    """
    x = np.array(x0, dtype=float, copy=True)
    r = problem.residual(x)
    rmax = float(np.max(np.abs(r)))
    if rmax <= cfg.newton_tol:
        return NewtonResult(x, 0, rmax)
    rtwo = float(np.linalg.norm(r))

    polished = False
    iterations = 0
    while iterations < cfg.newton_max_iter:
        delta = problem.jacobian_solve(x, -r)
        iterations += 1
        hi = np.minimum(cfg.phi_cap, x + _BARRIER_APPROACH * (1.0 - x))
        lo = np.maximum(-cfg.phi_cap, x - _BARRIER_APPROACH * (1.0 + x))
        alpha = 1.0
        accepted = False
        for _ in range(60):
            cand = np.clip(x + alpha * delta, lo, hi)
            rc = problem.residual(cand)
            rctwo = float(np.linalg.norm(rc))
            if rctwo < rtwo:
                x, r, rtwo = cand, rc, rctwo
                rmax = float(np.max(np.abs(rc)))
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if rmax <= cfg.newton_tol:
                return NewtonResult(x, iterations - 1, rmax)
            raise StepFailure(f"Newton line search stalled at residual {rmax:.3e}", rmax)
        if rmax <= cfg.newton_tol:
            if polished or rmax <= _NEWTON_FLOOR:
                return NewtonResult(x, iterations, rmax)
            polished = True  # one more sweep to land on the floor
    if rmax <= cfg.newton_tol:
        return NewtonResult(x, iterations, rmax)
    raise StepFailure(f"Newton exhausted {cfg.newton_max_iter} iterations, residual {rmax:.3e}", rmax)


class _CHProblem:
    """Newton problem for one CH step: R(x) = x - b - dt*L(mu_imp(x) + g_exp)."""

    def __init__(self, lap_mobility: sp.csr_matrix, dt: float, b: np.ndarray,
                 g_exp: np.ndarray, mu_model, linear_tol: float, mobility_mean: float = 1.0):
        self.L = lap_mobility
        self.dt = dt
        self.b = b
        self.g_exp = g_exp
        self.mu_model = mu_model
        self.linear_tol = linear_tol
        self.mobility_mean = mobility_mean

    def mu_values(self, x: np.ndarray) -> np.ndarray:
        return self.mu_model.implicit(x) + self.g_exp

    def residual(self, x: np.ndarray) -> np.ndarray:
        return x - self.b - self.dt * (self.L @ self.mu_values(x))

    def jacobian_solve(self, x: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        return self.mu_model.solve_newton_system(self, x, rhs)


def _neumann_laplacian_symbol(grid: GridSpec) -> np.ndarray:
    """Eigenvalues of -Lap with zero-flux walls in the cosine (DCT-II) basis."""
    h2 = grid.h**2
    lx = 4.0 * np.sin(np.pi * np.arange(grid.nx) / (2 * grid.nx)) ** 2 / h2
    ly = 4.0 * np.sin(np.pi * np.arange(grid.ny) / (2 * grid.ny)) ** 2 / h2
    return lx[:, None] + ly[None, :]


class _SpectralPreconditioner:
    """Approximate inverse of I + dt mbar (-Lap)(Dbar + S) with frozen mean
    coefficients, applied in the DCT basis; S is the interaction symbol (the exact
    kernel symbol for the nonlocal model, the Laplacian symbol for the local one)."""

    def __init__(self, grid: GridSpec, symbol_interaction: np.ndarray):
        self.shape = (grid.nx, grid.ny)
        self.lap_symbol = _neumann_laplacian_symbol(grid)
        self.interaction_symbol = symbol_interaction

    def build(self, dt: float, m_mean: float, d_mean: float):
        denom = 1.0 + dt * m_mean * self.lap_symbol * (d_mean + self.interaction_symbol)

        def apply(v):
            spec = dctn(v.reshape(self.shape), type=2, norm="ortho")
            spec /= denom
            return idctn(spec, type=2, norm="ortho").ravel()

        return apply


class _NewtonSolveMixin:
    """Shared matrix-free GMRES machinery for the Newton systems
    J = I + dt (-L)(diag(F0'') + interaction), with a sparse-LU fallback when the
    frozen-coefficient spectral preconditioner stagnates (strongly varying
    barrier curvature)."""

    _GMRES_ROUNDS = 4
    _GMRES_RESTART = 60
    _GMRES_MAXITER = 4

    def solve_newton_system(self, prob: _CHProblem, x: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        L, dt, tol = prob.L, prob.dt, prob.linear_tol
        d = potential_f0_second(x, self.params)

        def matvec(v):
            return v - dt * (L @ (d * v + self.interaction(v)))

        n = x.size
        op = spla.LinearOperator((n, n), matvec=matvec)
        prec_apply = self.spectral.build(dt, prob.mobility_mean, float(np.mean(d)))
        prec = spla.LinearOperator((n, n), matvec=prec_apply)

        sol = np.zeros(n)
        res = rhs.copy()
        rhs_norm = float(np.linalg.norm(rhs))
        # absolute target; the 4*||rhs|| term sits just above the round-off floor
        # of the residual evaluation at large operator norms
        target = tol * (1.0 + 4.0 * rhs_norm)
        norm_prev = rhs_norm
        for _ in range(self._GMRES_ROUNDS):
            upd, _ = spla.gmres(op, res, M=prec, rtol=1e-13, atol=0.45 * target,
                                restart=self._GMRES_RESTART, maxiter=self._GMRES_MAXITER)
            sol += upd
            res = rhs - matvec(sol)
            norm = float(np.linalg.norm(res))
            if norm <= target:
                return sol
            if norm > 0.3 * norm_prev:
                # stagnation: at the arithmetic floor this is as good as the LU
                # fallback can do, so only genuinely unconverged solves fall back
                if norm <= 1e4 * target:
                    return sol
                break
            norm_prev = norm
        return self.fallback_solve(prob, d, sol, res, target)

    def interaction(self, x: np.ndarray) -> np.ndarray:  # overridden by the models
        raise NotImplementedError


class _NonlocalMu(_NewtonSolveMixin):
    """mu_imp(x) = F0'(x) + a_eps x - J*x (fully implicit interaction operator);
    explicit part -theta_c phi^n."""

    def __init__(self, kop: KernelOperator, params: PhysicalParams):
        self.kop = kop
        self.params = params
        self.a = kop.a_eps.values.ravel()
        g = kop.grid
        self._grid = g
        self._pad = (2 * g.nx, 2 * g.ny)
        ones_u = np.ones((g.nx + 1, g.ny))
        ones_v = np.ones((g.nx, g.ny + 1))
        self.neg_lap = -weighted_laplacian_matrix(g, ones_u, ones_v)
        # exact interaction symbol on the zero-padded grid: the DCT-II mode (i, j)
        # has wavenumber pi*i/lx, matching padded-FFT index i exactly
        mult = kop.spectral_multiplier
        sym = kop.plateau_mass - mult[: g.nx, : g.ny].real
        self.spectral = _SpectralPreconditioner(g, np.maximum(sym, 0.0))

    def _conv(self, x: np.ndarray) -> np.ndarray:
        g = self._grid
        pad = np.zeros(self._pad)
        pad[: g.nx, : g.ny] = x.reshape(g.nx, g.ny)
        out = np.fft.irfft2(np.fft.rfft2(pad) * self.kop.spectral_multiplier, s=self._pad)
        return out[: g.nx, : g.ny].ravel()

    def interaction(self, x: np.ndarray) -> np.ndarray:
        return self.a * x - self._conv(x)

    def explicit(self, phi_n: ScalarField) -> np.ndarray:
        return (-self.params.theta_c * phi_n.values).ravel()

    def implicit(self, x: np.ndarray) -> np.ndarray:
        return potential(x, "F0_prime", self.params) + self.interaction(x)

    def fallback_solve(self, prob, d, sol, res, target):
        """Surrogate-preconditioned GMRES rounds with the convolution intact (the
        surrogate replaces the convolution part by -Lap but keeps the exact
        barrier diagonal)."""
        L, dt = prob.L, prob.dt

        def matvec(v):
            return v - dt * (L @ (d * v + self.interaction(v)))

        n = d.size
        op = spla.LinearOperator((n, n), matvec=matvec)
        surrogate = sp.identity(n, format="csr") - dt * (L @ (sp.diags(d) + self.neg_lap))
        lu = spla.splu(surrogate.tocsc())
        prec = spla.LinearOperator((n, n), matvec=lu.solve)
        for _ in range(6):
            if np.linalg.norm(res) <= target:
                break
            upd, _ = spla.gmres(op, res, M=prec, rtol=1e-13, atol=0.45 * target,
                                restart=60, maxiter=6)
            sol = sol + upd
            res = res - matvec(upd)
        return sol


class _LocalMu(_NewtonSolveMixin):
    """mu_imp(x) = F0'(x) - Lap x;  explicit part -theta_c phi^n."""

    def __init__(self, grid: GridSpec, params: PhysicalParams):
        self.params = params
        ones_u = np.ones((grid.nx + 1, grid.ny))
        ones_v = np.ones((grid.nx, grid.ny + 1))
        self.neg_lap = -weighted_laplacian_matrix(grid, ones_u, ones_v)
        self.spectral = _SpectralPreconditioner(grid, _neumann_laplacian_symbol(grid))

    def interaction(self, x: np.ndarray) -> np.ndarray:
        return self.neg_lap @ x

    def explicit(self, phi_n: ScalarField) -> np.ndarray:
        return (-self.params.theta_c * phi_n.values).ravel()

    def implicit(self, x: np.ndarray) -> np.ndarray:
        return potential(x, "F0_prime", self.params) + self.neg_lap @ x

    def fallback_solve(self, prob, d, sol, res, target):
        """Exact sparse Jacobian with LU and iterative refinement."""
        L, dt = prob.L, prob.dt
        jac = sp.identity(d.size, format="csr") - dt * (L @ (sp.diags(d) + self.neg_lap))
        lu = spla.splu(jac.tocsc())
        for _ in range(6):
            if np.linalg.norm(res) <= target:
                break
            upd = lu.solve(res)
            sol = sol + upd
            res = res - jac @ upd
        return sol


def effective_mobility_faces(phi_n: ScalarField, params: PhysicalParams,
                             mobility_boost: tuple[np.ndarray, np.ndarray] | None):
    """Face mobility m(phi^n) (arithmetic average) plus the optional boost."""
    m_cells = ScalarField(phi_n.grid, params.mobility_of(phi_n.values))
    mu_u, mu_v = face_average(m_cells)
    if mobility_boost is not None:
        bu, bv = mobility_boost
        if np.any(bu < 0) or np.any(bv < 0):
            raise ValueError("mobility boost must be nonnegative")
        mu_u = mu_u + bu
        mu_v = mu_v + bv
    # zero-flux boundaries: boundary-face coefficients never act
    return mu_u, mu_v


def _convective_rhs(phi_n: ScalarField, v_n: VectorField) -> np.ndarray:
    """div(v^n phibar^n) with centered face values of phi (conservative form)."""
    pu, pv = face_average(phi_n)
    flux = VectorField(phi_n.grid, v_n.u * pu, v_n.v * pv)
    return apply_divergence(flux).values


def _ch_step_generic(phi_n: ScalarField, v_n: VectorField, mu_model, params: PhysicalParams,
                     cfg: CHStepConfig, mobility_boost=None) -> tuple[ScalarField, ScalarField]:
    if np.max(np.abs(phi_n.values)) >= 1.0:
        raise ValueError("CH step requires |phi^n| < 1 pointwise")
    g = phi_n.grid
    mu_u, mu_v = effective_mobility_faces(phi_n, params, mobility_boost)
    lap_m = weighted_laplacian_matrix(g, mu_u, mu_v)
    b = (phi_n.values - cfg.dt * _convective_rhs(phi_n, v_n)).ravel()
    m_mean = float(0.5 * (mu_u.mean() + mu_v.mean()))
    problem = _CHProblem(lap_m, cfg.dt, b, mu_model.explicit(phi_n), mu_model,
                         cfg.linear_tol, mobility_mean=m_mean)

    result = newton_phi_solve(problem, phi_n.values.ravel(), cfg)
    x = result.values
    # conservative flux form preserves the mean up to the Newton residual; restore
    # it exactly so trajectories hold mass to round-off
    x += phi_n.values.mean() - x.mean()
    phi_next = ScalarField(g, x.reshape(g.nx, g.ny))
    mu_next = ScalarField(g, problem.mu_values(x).reshape(g.nx, g.ny))
    return phi_next, mu_next


def ch_step_nonlocal(phi_n: ScalarField, v_n: VectorField, kop: KernelOperator,
                     params: PhysicalParams, cfg: CHStepConfig,
                     mobility_boost=None) -> tuple[ScalarField, ScalarField]:
    """One nonlocal CH step; returns (phi+, mu+)."""
    return _ch_step_generic(phi_n, v_n, _NonlocalMu(kop, params), params, cfg, mobility_boost)


def ch_step_local(phi_n: ScalarField, v_n: VectorField, params: PhysicalParams,
                  cfg: CHStepConfig, mobility_boost=None) -> tuple[ScalarField, ScalarField]:
    """One local CH step (Neumann conditions on phi and mu); returns (phi+, mu+)."""
    return _ch_step_generic(phi_n, v_n, _LocalMu(phi_n.grid, params), params, cfg, mobility_boost)
