"""Logarithmic double-well potential with convex/concave split, constitutive
coefficients rho/nu/m of the order parameter, and the energy functionals.

F(s)   = (theta/2)[(1+s)log(1+s) + (1-s)log(1-s)] - (theta_c/2) s^2
F0(s)  = F(s) + (theta_c/2) s^2          (strictly convex logarithmic part)
F0'(s) = (theta/2) log((1+s)/(1-s))      (strictly increasing, odd)

The mixture density is affine: rho(phi) = (rho1+rho2)/2 + (rho2-rho1)/2 * phi;
viscosity follows the same affine law between nu1 and nu2, and mobility is either
constant m0 or affine m0(1 + m1 phi) clamped to >= m0/10.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ScalarField, VectorField, cell_inner, field_norm
from .kernel import KernelOperator, nonlocal_operator


class PotentialDomainError(ValueError):
    """Potential evaluated at |s| >= 1."""


@dataclass(frozen=True)
class PhysicalParams:
    rho1: float = 1.0
    rho2: float = 3.0
    theta: float = 1.0
    theta_c: float = 0.5
    nu1: float = 1.0
    nu2: float = 2.0
    m0: float = 1.0
    mobility_model: str = "constant"  # "constant" | "affine"
    m1: float = 0.0
    viscosity_model: str = "affine"

    def __post_init__(self):
        if self.rho1 <= 0 or self.rho2 <= 0:
            raise ValueError("pure-phase densities must be positive")
        if not (0.0 < self.theta_c < self.theta):
            raise ValueError(f"require 0 < theta_c < theta, got theta_c={self.theta_c}, theta={self.theta}")
        if self.nu1 <= 0 or self.nu2 <= 0:
            raise ValueError("viscosities must be positive")
        if self.m0 <= 0:
            raise ValueError("mobility scale m0 must be positive")
        if self.mobility_model not in ("constant", "affine"):
            raise ValueError(f"unknown mobility_model {self.mobility_model!r}")
        if self.mobility_model == "affine" and abs(self.m1) > 0.9:
            # affine mobility must stay >= m0/10 on [-1, 1]
            raise ValueError(f"|m1| <= 0.9 required for strictly positive mobility, got {self.m1}")
        if self.viscosity_model != "affine":
            raise ValueError(f"unknown viscosity_model {self.viscosity_model!r}")

    @property
    def rho_mean(self) -> float:
        return 0.5 * (self.rho1 + self.rho2)

    @property
    def rho_diff_half(self) -> float:
        """(rho2 - rho1)/2, the coefficient of the diffusive mass flux."""
        return 0.5 * (self.rho2 - self.rho1)

    def rho_of(self, phi_values):
        return self.rho_mean + self.rho_diff_half * phi_values

    def nu_of(self, phi_values):
        return 0.5 * (self.nu1 + self.nu2) + 0.5 * (self.nu2 - self.nu1) * phi_values

    def mobility_of(self, phi_values):
        if self.mobility_model == "constant":
            return np.full_like(np.asarray(phi_values, dtype=float), self.m0)
        return np.maximum(self.m0 * (1.0 + self.m1 * phi_values), 0.1 * self.m0)


def _check_open_interval(s):
    if np.any(np.abs(s) >= 1.0):
        raise PotentialDomainError("potential arguments must satisfy |s| < 1")


def potential(s, which: str, params: PhysicalParams):
    """Evaluate F, F', F0 or F0' elementwise; raises PotentialDomainError off (-1, 1)."""
    s = np.asarray(s, dtype=float)
    _check_open_interval(s)
    th, tc = params.theta, params.theta_c
    if which == "F":
        ent = (1.0 + s) * np.log1p(s) + (1.0 - s) * np.log1p(-s)
        return 0.5 * th * ent - 0.5 * tc * s * s
    if which == "F_prime":
        return 0.5 * th * (np.log1p(s) - np.log1p(-s)) - tc * s
    if which == "F0":
        ent = (1.0 + s) * np.log1p(s) + (1.0 - s) * np.log1p(-s)
        return 0.5 * th * ent
    if which == "F0_prime":
        return 0.5 * th * (np.log1p(s) - np.log1p(-s))
    raise ValueError(f"unknown potential selector {which!r}")


def potential_f0_second(s, params: PhysicalParams):
    """F0''(s) = theta / (1 - s^2) > 0."""
    s = np.asarray(s, dtype=float)
    _check_open_interval(s)
    return params.theta / (1.0 - s * s)


def coefficients(phi: ScalarField, params: PhysicalParams, which: str) -> ScalarField:
    """Constitutive coefficient field rho/nu/m evaluated at phi (requires |phi| <= 1)."""
    if np.any(np.abs(phi.values) > 1.0):
        raise ValueError("coefficients require |phi| <= 1 pointwise")
    if which == "rho":
        vals = params.rho_of(phi.values)
    elif which == "nu":
        vals = params.nu_of(phi.values)
    elif which == "m":
        vals = params.mobility_of(phi.values)
    else:
        raise ValueError(f"unknown coefficient {which!r}")
    return ScalarField(phi.grid, vals)


def energy_nonlocal_e0(kop: KernelOperator, phi: ScalarField) -> float:
    """Nonlocal interaction energy (1/2) <a_eps phi - J_eps*phi, phi>; algebraically
    equal to (1/4) sum_xy J_eps(x-y) (phi(x)-phi(y))^2 h^4 and hence nonnegative."""
    val = 0.5 * cell_inner(nonlocal_operator(kop, phi), phi)
    return max(val, 0.0)


def energy_nonlocal_e0_direct(kop: KernelOperator, phi: ScalarField) -> float:
    """Brute-force double-sum oracle for energy_nonlocal_e0; small grids only."""
    g = kop.grid
    h = g.h
    X, Y = g.cell_centers()
    px, py = X.ravel(), Y.ravel()
    d2 = (px[:, None] - px[None, :]) ** 2 + (py[:, None] - py[None, :]) ** 2
    jmat = kop.family.kernel_value(np.sqrt(d2))
    diff = phi.values.ravel()[:, None] - phi.values.ravel()[None, :]
    return float(0.25 * np.sum(jmat * diff * diff) * h**4)


def energy_local_e0(phi: ScalarField) -> float:
    """Dirichlet energy (1/2) sum |grad phi|^2 h^2 with the zero-flux discrete gradient."""
    return 0.5 * field_norm(phi, "H1_semi") ** 2


def energy_potential(phi: ScalarField, params: PhysicalParams) -> float:
    """int F(phi) dx by the midpoint rule."""
    return float(np.sum(potential(phi.values, "F", params)) * phi.grid.h**2)


def kinetic_energy_centered(v: VectorField, phi: ScalarField, params: PhysicalParams) -> float:
    """(1/2) int rho(phi) |v|^2 with velocity interpolated to cell centers by
    arithmetic face averages (reporting definition)."""
    rho = params.rho_of(phi.values)
    uc = 0.5 * (v.u[1:, :] + v.u[:-1, :])
    vc = 0.5 * (v.v[:, 1:] + v.v[:, :-1])
    return float(0.5 * np.sum(rho * (uc**2 + vc**2)) * phi.grid.h**2)


def kinetic_energy_faces(v: VectorField, phi: ScalarField, params: PhysicalParams) -> float:
    """(1/2) sum_f rho_f v_f^2 h^2 with face densities from arithmetic cell averages.
    This is the kinetic part of the discrete Lyapunov functional the time steppers
    dissipate, used by the energy audit."""
    from .grid import face_average  # local import to avoid cycle noise

    rho = ScalarField(phi.grid, params.rho_of(phi.values))
    ru, rv = face_average(rho)
    return float(0.5 * (np.sum(ru * v.u**2) + np.sum(rv * v.v**2)) * phi.grid.h**2)


def total_energy(phi: ScalarField, v: VectorField, params: PhysicalParams,
                 kop: KernelOperator | None = None) -> float:
    """Total energy: centered kinetic + interaction part (nonlocal if a kernel
    operator is given, Dirichlet otherwise) + int F(phi)."""
    if np.any(np.abs(phi.values) >= 1.0):
        raise PotentialDomainError("total_energy requires |phi| < 1")
    e0 = energy_nonlocal_e0(kop, phi) if kop is not None else energy_local_e0(phi)
    return kinetic_energy_centered(v, phi, params) + e0 + energy_potential(phi, params)
