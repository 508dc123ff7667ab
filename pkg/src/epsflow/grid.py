"""Uniform staggered (MAC) grid: cell-centered scalars, face-centered velocities,
and the discrete differential operators with zero-flux / no-slip boundary handling.

Scalars live at cell centers ((i+1/2)h, (j+1/2)h), indexed [i, j] with i the
x index.  The u velocity component lives on vertical faces (i h, (j+1/2)h),
shape (nx+1, ny); the v component on horizontal faces ((i+1/2)h, j h), shape
(nx, ny+1).  Gradients normal to the boundary are zero (mirror ghost cells),
which makes gradient/divergence exactly adjoint for fields with zero boundary
faces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class CoefficientPositivityError(ValueError):
    """Raised when a variable coefficient is not strictly positive."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform rectangular grid with square cells of width h = lx/nx."""

    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"grid must have at least 4 cells per side, got {self.nx}x{self.ny}")
        if self.lx <= 0 or self.ly <= 0:
            raise ValueError("domain side lengths must be positive")
        hx = self.lx / self.nx
        hy = self.ly / self.ny
        if not np.isclose(hx, hy, rtol=1e-12, atol=0.0):
            raise ValueError(f"cells must be square: lx/nx={hx} != ly/ny={hy}")

    @property
    def h(self) -> float:
        return self.lx / self.nx

    @property
    def area(self) -> float:
        return self.lx * self.ly

    def cell_centers(self):
        """Meshgrid (X, Y) of cell-center coordinates, each shape (nx, ny)."""
        h = self.h
        x = (np.arange(self.nx) + 0.5) * h
        y = (np.arange(self.ny) + 0.5) * h
        return np.meshgrid(x, y, indexing="ij")


@dataclass(eq=False)
class ScalarField:
    """Cell-centered scalar; values has shape (nx, ny)."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.nx, self.grid.ny):
            raise ValueError(
                f"scalar values shape {self.values.shape} != grid ({self.grid.nx}, {self.grid.ny})"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("scalar field contains non-finite values")

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    @classmethod
    def constant(cls, grid: GridSpec, value: float = 0.0) -> "ScalarField":
        return cls(grid, np.full((grid.nx, grid.ny), float(value)))

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> "ScalarField":
        X, Y = grid.cell_centers()
        return cls(grid, fn(X, Y))


@dataclass(eq=False)
class VectorField:
    """Face-centered vector field: u on vertical faces (nx+1, ny), v on horizontal
    faces (nx, ny+1).  Boundary faces carry 0 for no-slip velocities."""

    grid: GridSpec
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        nx, ny = self.grid.nx, self.grid.ny
        if self.u.shape != (nx + 1, ny) or self.v.shape != (nx, ny + 1):
            raise ValueError(
                f"vector shapes {self.u.shape}/{self.v.shape} incompatible with grid {nx}x{ny}"
            )

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.u.copy(), self.v.copy())

    @classmethod
    def zero(cls, grid: GridSpec) -> "VectorField":
        return cls(grid, np.zeros((grid.nx + 1, grid.ny)), np.zeros((grid.nx, grid.ny + 1)))

    @classmethod
    def from_stream_function(cls, grid: GridSpec, psi_corner: np.ndarray) -> "VectorField":
        """Exactly divergence-free field from corner stream values (nx+1, ny+1);
        no-slip boundary faces require psi constant along each wall."""
        h = grid.h
        u = (psi_corner[:, 1:] - psi_corner[:, :-1]) / h
        v = -(psi_corner[1:, :] - psi_corner[:-1, :]) / h
        return cls(grid, u, v)


def _check_same_grid(a, b):
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")


def apply_gradient(f: ScalarField) -> VectorField:
    """Face-centered difference gradient; boundary faces are 0 (mirror ghosts)."""
    g = f.grid
    h = g.h
    u = np.zeros((g.nx + 1, g.ny))
    v = np.zeros((g.nx, g.ny + 1))
    u[1:-1, :] = (f.values[1:, :] - f.values[:-1, :]) / h
    v[:, 1:-1] = (f.values[:, 1:] - f.values[:, :-1]) / h
    return VectorField(g, u, v)


def apply_divergence(w: VectorField) -> ScalarField:
    """Staggered flux-difference divergence; adjoint (up to sign) of apply_gradient
    for vector fields with zero boundary faces."""
    g = w.grid
    h = g.h
    d = (w.u[1:, :] - w.u[:-1, :]) / h + (w.v[:, 1:] - w.v[:, :-1]) / h
    return ScalarField(g, d)


def face_average(f: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    """Arithmetic average of cell values onto interior faces; boundary faces get
    the adjacent cell value (one-sided)."""
    g = f.grid
    cu = np.empty((g.nx + 1, g.ny))
    cv = np.empty((g.nx, g.ny + 1))
    cu[1:-1, :] = 0.5 * (f.values[1:, :] + f.values[:-1, :])
    cu[0, :] = f.values[0, :]
    cu[-1, :] = f.values[-1, :]
    cv[:, 1:-1] = 0.5 * (f.values[:, 1:] + f.values[:, :-1])
    cv[:, 0] = f.values[:, 0]
    cv[:, -1] = f.values[:, -1]
    return cu, cv


def weighted_laplacian(f: ScalarField, coeff_u: np.ndarray, coeff_v: np.ndarray) -> ScalarField:
    """div(coeff * grad f) with face coefficients given directly.  Symmetric
    negative-semidefinite; kernel = constants (boundary-face gradients are 0)."""
    grad = apply_gradient(f)
    grad.u *= coeff_u
    grad.v *= coeff_v
    return apply_divergence(grad)


def laplace_neumann(f: ScalarField, coeff: ScalarField) -> ScalarField:
    """Variable-coefficient operator div(coeff grad f), coefficient arithmetic-averaged
    onto faces.  Raises CoefficientPositivityError for nonpositive coefficients."""
    _check_same_grid(f, coeff)
    if np.any(coeff.values <= 0.0):
        raise CoefficientPositivityError("laplace_neumann requires coeff > 0 everywhere")
    cu, cv = face_average(coeff)
    return weighted_laplacian(f, cu, cv)


def cell_inner(f: ScalarField, g: ScalarField) -> float:
    """Discrete L2 inner product over cells, weight h^2."""
    _check_same_grid(f, g)
    return float(np.sum(f.values * g.values)) * f.grid.h**2


def face_inner(w1: VectorField, w2: VectorField) -> float:
    """Discrete L2 inner product over faces, weight h^2 per face."""
    _check_same_grid(w1, w2)
    return float(np.sum(w1.u * w2.u) + np.sum(w1.v * w2.v)) * w1.grid.h**2


def field_norm(f: ScalarField, kind: str) -> float:
    """L2 = sqrt(sum f^2 h^2); H1_semi uses apply_gradient; mean = average over the domain."""
    h2 = f.grid.h**2
    if kind == "L2":
        return float(np.sqrt(np.sum(f.values**2) * h2))
    if kind == "H1_semi":
        grad = apply_gradient(f)
        return float(np.sqrt((np.sum(grad.u**2) + np.sum(grad.v**2)) * h2))
    if kind == "mean":
        return float(np.sum(f.values) * h2 / f.grid.area)
    raise ValueError(f"unknown norm kind {kind!r}")


def velocity_norm_l2(w: VectorField) -> float:
    """Face-weighted L2 norm of a velocity field."""
    return float(np.sqrt((np.sum(w.u**2) + np.sum(w.v**2)) * w.grid.h**2))
