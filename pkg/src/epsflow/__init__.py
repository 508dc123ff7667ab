"""Two-phase flow solvers coupling incompressible variable-density momentum with
nonlocal or local Cahn-Hilliard dynamics, plus the kernel-localization
convergence harness."""

from .grid import GridSpec, ScalarField, VectorField
from .kernel import KernelOperator, MollifierFamily, build_kernel_operator, build_mollifier
from .physics import PhysicalParams

__all__ = [
    "GridSpec",
    "ScalarField",
    "VectorField",
    "KernelOperator",
    "MollifierFamily",
    "build_kernel_operator",
    "build_mollifier",
    "PhysicalParams",
]

__version__ = "0.1.0"
