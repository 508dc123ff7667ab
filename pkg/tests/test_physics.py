import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epsflow.grid import GridSpec, ScalarField, VectorField
from epsflow.kernel import build_kernel_operator, build_mollifier
from epsflow.physics import (PhysicalParams, PotentialDomainError, coefficients,
                             energy_local_e0, energy_nonlocal_e0, energy_nonlocal_e0_direct,
                             energy_potential, kinetic_energy_centered, potential,
                             potential_f0_second, total_energy)

from conftest import cos_pix


class TestParams:
    def test_temperature_ordering_enforced(self):
        with pytest.raises(ValueError, match="theta_c"):
            PhysicalParams(theta=1.0, theta_c=1.0)

    def test_affine_mobility_positivity(self):
        with pytest.raises(ValueError, match="m1"):
            PhysicalParams(mobility_model="affine", m1=0.95)
        PhysicalParams(mobility_model="affine", m1=0.9)  # boundary case allowed

    def test_positive_scales(self):
        with pytest.raises(ValueError):
            PhysicalParams(rho1=-1.0)
        with pytest.raises(ValueError):
            PhysicalParams(m0=0.0)


class TestPotential:
    def test_values_at_zero(self, params):
        assert potential(0.0, "F", params) == 0.0
        assert potential(0.0, "F_prime", params) == 0.0
        assert potential(0.0, "F0_prime", params) == 0.0

    def test_value_at_half(self, params):
        # theta=1, theta_c=0.5: F(0.5) = (1/2)(1.5 ln 1.5 + 0.5 ln 0.5) - 0.0625
        expected = 0.5 * (1.5 * np.log(1.5) + 0.5 * np.log(0.5)) - 0.0625
        assert potential(0.5, "F", params) == pytest.approx(expected, abs=1e-15)

    @pytest.mark.parametrize("s", [-0.9, -0.5, 0.0, 0.5, 0.9])
    def test_derivative_finite_difference(self, s, params):
        delta = 1e-5
        fd = (potential(s + delta, "F", params) - potential(s - delta, "F", params)) / (2 * delta)
        assert abs(fd - potential(s, "F_prime", params)) <= 1e-6
        fd0 = (potential(s + delta, "F0", params) - potential(s - delta, "F0", params)) / (2 * delta)
        assert abs(fd0 - potential(s, "F0_prime", params)) <= 1e-6

    @settings(max_examples=50, deadline=None)
    @given(s=st.floats(-0.999, 0.999))
    def test_f0_prime_odd(self, s):
        p = PhysicalParams()
        assert potential(-s, "F0_prime", p) == pytest.approx(-potential(s, "F0_prime", p),
                                                             abs=1e-12)

    def test_f0_prime_strictly_increasing(self, params):
        s = np.linspace(-1 + 1e-6, 1 - 1e-6, 10_000)
        vals = potential(s, "F0_prime", params)
        assert np.all(np.diff(vals) > 0)

    def test_f0_second_positive(self, params):
        s = np.linspace(-0.99, 0.99, 101)
        assert np.all(potential_f0_second(s, params) > 0)

    def test_domain_error(self, params):
        with pytest.raises(PotentialDomainError):
            potential(1.0, "F", params)
        with pytest.raises(PotentialDomainError):
            potential(np.array([0.0, -1.2]), "F0_prime", params)


class TestCoefficients:
    def test_density_endpoints(self, unit_grid32):
        p = PhysicalParams(rho1=1.0, rho2=3.0)
        lo = coefficients(ScalarField.constant(unit_grid32, -1.0), p, "rho")
        hi = coefficients(ScalarField.constant(unit_grid32, 1.0), p, "rho")
        assert np.all(lo.values == 1.0)
        assert np.all(hi.values == 3.0)

    def test_density_midpoint(self, unit_grid32):
        p = PhysicalParams(rho1=1.0, rho2=3.0)
        mid = coefficients(ScalarField.constant(unit_grid32, 0.0), p, "rho")
        assert np.all(mid.values == 2.0)

    def test_constant_mobility_ignores_phi(self, unit_grid32, rng):
        p = PhysicalParams(m0=0.7, mobility_model="constant")
        phi = ScalarField(unit_grid32, 0.9 * (2 * rng.random((32, 32)) - 1))
        m = coefficients(phi, p, "m")
        assert np.all(m.values == 0.7)

    def test_affine_mobility_clamped(self, unit_grid32):
        p = PhysicalParams(m0=1.0, mobility_model="affine", m1=0.9)
        m = coefficients(ScalarField.constant(unit_grid32, -1.0), p, "m")
        assert np.all(m.values >= 0.1)

    def test_range_error(self, unit_grid32, params):
        with pytest.raises(ValueError, match="<= 1"):
            coefficients(ScalarField.constant(unit_grid32, 1.5), params, "rho")


class TestEnergies:
    def test_nonlocal_zero_for_constant(self):
        grid = GridSpec(24, 24)
        kop = build_kernel_operator(grid, build_mollifier(2, 0.2))
        assert energy_nonlocal_e0(kop, ScalarField.constant(grid, 0.4)) <= 1e-12

    def test_nonlocal_matches_double_sum(self, rng):
        grid = GridSpec(24, 24)
        kop = build_kernel_operator(grid, build_mollifier(2, 0.2))
        phi = ScalarField(grid, rng.standard_normal((24, 24)))
        fast = energy_nonlocal_e0(kop, phi)
        slow = energy_nonlocal_e0_direct(kop, phi)
        assert abs(fast - slow) <= 1e-10 * abs(slow)

    def test_nonlocal_nonnegative(self, rng):
        grid = GridSpec(24, 24)
        kop = build_kernel_operator(grid, build_mollifier(2, 0.2))
        for _ in range(5):
            phi = ScalarField(grid, rng.standard_normal((24, 24)))
            assert energy_nonlocal_e0(kop, phi) >= 0.0

    def test_local_zero_for_constant(self, unit_grid32):
        assert energy_local_e0(ScalarField.constant(unit_grid32, 0.3)) == 0.0

    def test_local_cos_oracle(self):
        target = np.pi**2 / 4
        errs = []
        for n in (32, 64, 128):
            errs.append(abs(energy_local_e0(cos_pix(GridSpec(n, n))) - target))
        assert np.log2(errs[0] / errs[1]) > 1.9
        assert np.log2(errs[1] / errs[2]) > 1.9

    def test_local_linear_slope(self):
        # mirror-ghost gradient zeroes the boundary faces, so the discrete value
        # is (1/2) lx ly (nx-1)/nx, converging to (1/2) lx ly
        for n in (32, 128):
            grid = GridSpec(n, n)
            X, _ = grid.cell_centers()
            e = energy_local_e0(ScalarField(grid, X))
            assert e == pytest.approx(0.5 * (n - 1) / n, abs=1e-12)


class TestTotalEnergy:
    def test_rest_zero_phase(self, unit_grid32, params):
        v = VectorField.zero(unit_grid32)
        phi = ScalarField.constant(unit_grid32, 0.0)
        assert total_energy(phi, v, params) == 0.0

    def test_constant_phase_potential_only(self, unit_grid32, params):
        v = VectorField.zero(unit_grid32)
        phi = ScalarField.constant(unit_grid32, 0.5)
        expected = potential(0.5, "F", params)  # times unit area
        assert total_energy(phi, v, params) == pytest.approx(expected, rel=1e-12)

    def test_uniform_kinetic(self, unit_grid32):
        p = PhysicalParams(rho1=1.0, rho2=3.0)
        v = VectorField(unit_grid32, np.ones((33, 32)), np.zeros((32, 33)))
        phi = ScalarField.constant(unit_grid32, 0.0)
        assert kinetic_energy_centered(v, phi, p) == pytest.approx(1.0, abs=1e-13)

    def test_range_error(self, unit_grid32, params):
        v = VectorField.zero(unit_grid32)
        with pytest.raises(PotentialDomainError):
            total_energy(ScalarField.constant(unit_grid32, 1.0), v, params)

    def test_nonlocal_variant_uses_kernel(self, unit_grid32, params):
        kop = build_kernel_operator(unit_grid32, build_mollifier(2, 0.2))
        phi = cos_pix(unit_grid32)
        v = VectorField.zero(unit_grid32)
        e_nl = total_energy(ScalarField(unit_grid32, 0.3 * phi.values), v, params, kop=kop)
        e_loc = total_energy(ScalarField(unit_grid32, 0.3 * phi.values), v, params)
        assert e_nl != e_loc
        assert e_nl == pytest.approx(
            energy_nonlocal_e0(kop, ScalarField(unit_grid32, 0.3 * phi.values))
            + energy_potential(ScalarField(unit_grid32, 0.3 * phi.values), params), rel=1e-12)
