"""Sparse-matrix forms of the grid operators and solvers for the singular
Neumann problems.  Cells are flattened row-major as k = i*ny + j."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.fft import dctn, idctn

from .grid import GridSpec, ScalarField


def weighted_laplacian_matrix(grid: GridSpec, coeff_u: np.ndarray, coeff_v: np.ndarray) -> sp.csr_matrix:
    """Matrix of f -> div(coeff grad f) with given face coefficients (boundary-face
    gradients are zero, so boundary coefficients never enter).  Symmetric negative
    semidefinite with kernel spanned by constants."""
    nx, ny = grid.nx, grid.ny
    inv_h2 = 1.0 / grid.h**2
    idx = np.arange(nx * ny).reshape(nx, ny)

    wu = (coeff_u[1:-1, :] * inv_h2).ravel()  # interior vertical faces (nx-1, ny)
    left = idx[:-1, :].ravel()
    right = idx[1:, :].ravel()

    wv = (coeff_v[:, 1:-1] * inv_h2).ravel()  # interior horizontal faces (nx, ny-1)
    bot = idx[:, :-1].ravel()
    top = idx[:, 1:].ravel()

    a = np.concatenate([left, right, bot, top])
    b = np.concatenate([right, left, top, bot])
    w = np.concatenate([wu, wu, wv, wv])

    rows = np.concatenate([a, a])
    cols = np.concatenate([a, b])
    vals = np.concatenate([-w, w])
    return sp.coo_matrix((vals, (rows, cols)), shape=(nx * ny, nx * ny)).tocsr()


class PinnedNeumannSolver:
    """Direct solver for div(c grad p) = rhs with zero-flux boundaries.

    The operator is singular (constants); the system is pinned symmetrically at
    cell 0, solved by sparse LU, shifted to mean zero, and polished by iterative
    refinement until the mean-zero residual is below tol.
    """

    def __init__(self, grid: GridSpec, coeff_u: np.ndarray, coeff_v: np.ndarray,
                 tol: float = 1e-10, max_refine: int = 5):
        self.grid = grid
        self.tol = tol
        self.max_refine = max_refine
        self.matrix = weighted_laplacian_matrix(grid, coeff_u, coeff_v)
        pinned = self.matrix.tolil(copy=True)
        pinned[0, :] = 0.0
        pinned[:, 0] = 0.0
        pinned[0, 0] = 1.0
        self._lu = spla.splu(pinned.tocsc())

    def solve(self, rhs_values: np.ndarray) -> np.ndarray:
        """Mean-zero solution of div(c grad p) = rhs; rhs is mean-adjusted first
        (the caller checks compatibility when that is part of its contract)."""
        g = self.grid
        b = rhs_values.ravel().copy()
        b -= b.mean()
        b_pinned = b.copy()
        b_pinned[0] = 0.0
        x = self._lu.solve(b_pinned)
        x -= x.mean()
        scale = np.linalg.norm(b) + 1.0
        for _ in range(self.max_refine):
            r = b - self.matrix @ x
            r -= r.mean()
            if np.linalg.norm(r) <= self.tol * scale:
                break
            r_pinned = r.copy()
            r_pinned[0] = 0.0
            dx = self._lu.solve(r_pinned)
            x += dx - dx.mean()
        return x.reshape(g.nx, g.ny)

    def solve_field(self, rhs: ScalarField) -> ScalarField:
        return ScalarField(self.grid, self.solve(rhs.values))


def neumann_laplacian_symbol(grid: GridSpec) -> np.ndarray:
    """Eigenvalues of -Lap with zero-flux walls in the cosine (DCT-II) basis."""
    h2 = grid.h**2
    lx = 4.0 * np.sin(np.pi * np.arange(grid.nx) / (2 * grid.nx)) ** 2 / h2
    ly = 4.0 * np.sin(np.pi * np.arange(grid.ny) / (2 * grid.ny)) ** 2 / h2
    return lx[:, None] + ly[None, :]


class CgNeumannSolver:
    """Conjugate gradients for -div(c grad p) = -rhs on the mean-zero subspace,
    preconditioned by the constant-coefficient inverse in the DCT basis.  The
    coefficient contrast bounds the preconditioned condition number, so iteration
    counts are grid-independent."""

    def __init__(self, grid: GridSpec, coeff_u: np.ndarray, coeff_v: np.ndarray,
                 tol: float = 1e-12, max_iter: int = 400):
        self.grid = grid
        self.tol = tol
        self.max_iter = max_iter
        self.matrix = weighted_laplacian_matrix(grid, coeff_u, coeff_v)
        c_mean = 0.5 * float(coeff_u[1:-1, :].mean() + coeff_v[:, 1:-1].mean())
        sym = c_mean * neumann_laplacian_symbol(grid)
        sym[0, 0] = 1.0  # kernel mode, projected out explicitly
        self._sym = sym
        self._shape = (grid.nx, grid.ny)

    def _prec(self, r: np.ndarray) -> np.ndarray:
        spec = dctn(r.reshape(self._shape), type=2, norm="ortho")
        spec /= self._sym
        spec[0, 0] = 0.0
        return idctn(spec, type=2, norm="ortho").ravel()

    def solve(self, rhs_values: np.ndarray, tol: float | None = None) -> np.ndarray:
        """Mean-zero p with div(c grad p) = rhs (rhs mean-adjusted first).
        `tol` is an absolute Euclidean bound on the final residual."""
        b = -rhs_values.ravel().copy()   # CG runs on the SPD operator -div(c grad)
        b -= b.mean()
        target = self.tol * (np.linalg.norm(b) + 1.0) if tol is None else tol
        a_mat = self.matrix
        x = np.zeros_like(b)
        r = b.copy()
        z = self._prec(r)
        p = z.copy()
        rz = float(r @ z)
        for _ in range(self.max_iter):
            if np.linalg.norm(r) <= target:
                break
            ap = -(a_mat @ p)
            alpha = rz / float(p @ ap)
            x += alpha * p
            r -= alpha * ap
            z = self._prec(r)
            rz_new = float(r @ z)
            beta = rz_new / rz
            rz = rz_new
            p = z + beta * p
        x -= x.mean()
        return x.reshape(self._shape)

    def solve_field(self, rhs: ScalarField, tol: float | None = None) -> ScalarField:
        return ScalarField(self.grid, self.solve(rhs.values, tol))
