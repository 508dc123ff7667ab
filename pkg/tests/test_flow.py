import numpy as np
import pytest

from epsflow.ch_solvers import StepFailure
from epsflow.flow import (FlowStepConfig, FlowWorkspace, capillary_force,
                          capillary_force_phigrad, default_mass_flux, ns_step, relative_flux)
from epsflow.grid import (GridSpec, ScalarField, VectorField, apply_divergence, apply_gradient,
                          field_norm)
from epsflow.physics import PhysicalParams, kinetic_energy_faces


def stream_vortex(grid, strength=0.05):
    x = np.linspace(0.0, grid.lx, grid.nx + 1)
    y = np.linspace(0.0, grid.ly, grid.ny + 1)
    psi = strength * np.sin(np.pi * x / grid.lx)[:, None] ** 2 * np.sin(np.pi * y / grid.ly)[None, :] ** 2
    return VectorField.from_stream_function(grid, psi)


class TestRelativeFlux:
    def test_constant_mu_zero_flux(self, unit_grid32, params):
        phi = ScalarField.constant(unit_grid32, 0.2)
        mu = ScalarField.constant(unit_grid32, 5.0)
        flux = relative_flux(phi, mu, params)
        assert np.all(flux.u == 0.0) and np.all(flux.v == 0.0)

    def test_matched_densities_decouple(self, unit_grid32, rng):
        p = PhysicalParams(rho1=2.0, rho2=2.0)
        phi = ScalarField(unit_grid32, 0.5 * rng.random((32, 32)))
        mu = ScalarField(unit_grid32, rng.standard_normal((32, 32)))
        flux = relative_flux(phi, mu, p)
        assert np.all(flux.u == 0.0) and np.all(flux.v == 0.0)

    def test_linear_mu_interior(self, unit_grid32):
        p = PhysicalParams(rho1=1.0, rho2=3.0, m0=1.0)  # (rho2-rho1)/2 = 1
        X, _ = unit_grid32.cell_centers()
        mu = ScalarField(unit_grid32, X)
        phi = ScalarField.constant(unit_grid32, 0.0)
        flux = relative_flux(phi, mu, p)
        assert np.allclose(flux.u[1:-1, :], -1.0, atol=1e-13)
        assert np.all(flux.u[0, :] == 0.0) and np.all(flux.u[-1, :] == 0.0)


class TestCapillaryForce:
    def test_constant_phi_zero_force(self, unit_grid32):
        phi = ScalarField.constant(unit_grid32, 0.4)
        mu = ScalarField(unit_grid32, np.random.default_rng(0).standard_normal((32, 32)))
        f = capillary_force(phi, mu)
        assert np.all(f.u == 0.0) and np.all(f.v == 0.0)

    def test_linear_phi_constant_mu(self, unit_grid32):
        X, _ = unit_grid32.cell_centers()
        f = capillary_force(ScalarField(unit_grid32, X), ScalarField.constant(unit_grid32, 2.0))
        assert np.allclose(f.u[1:-1, :], 2.0, atol=1e-13)

    def test_phigrad_form_differs_by_discrete_gradient(self, unit_grid32, rng):
        # mu grad phi + phi grad mu = grad(mu phi) with centered face averages
        phi = ScalarField(unit_grid32, rng.standard_normal((32, 32)))
        mu = ScalarField(unit_grid32, rng.standard_normal((32, 32)))
        f1 = capillary_force(phi, mu)
        f2 = capillary_force_phigrad(phi, mu)
        prod = ScalarField(unit_grid32, mu.values * phi.values)
        grad_prod = apply_gradient(prod)
        assert np.abs(f1.u - f2.u - grad_prod.u).max() <= 1e-12 * max(np.abs(grad_prod.u).max(), 1)
        assert np.abs(f1.v - f2.v - grad_prod.v).max() <= 1e-12 * max(np.abs(grad_prod.v).max(), 1)


class TestNSStep:
    def test_rest_state_preserved(self, unit_grid32, params):
        v0 = VectorField.zero(unit_grid32)
        p0 = ScalarField.constant(unit_grid32, 0.0)
        phi = ScalarField.constant(unit_grid32, 0.2)
        mu = ScalarField.constant(unit_grid32, 1.0)
        res = ns_step(v0, p0, phi, mu, params, FlowStepConfig(dt=1e-4))
        assert np.all(res.v.u == 0.0) and np.all(res.v.v == 0.0)
        assert np.ptp(res.p.values) == 0.0

    def test_gradient_force_annihilated(self, unit_grid32, params, rng):
        # adding a discrete gradient to the force changes v+ only at projection level
        cfg = FlowStepConfig(dt=1e-4)
        v0 = stream_vortex(unit_grid32, 0.05)
        p0 = ScalarField.constant(unit_grid32, 0.0)
        phi = ScalarField(unit_grid32, 0.3 * np.cos(np.pi * unit_grid32.cell_centers()[0]))
        mu = ScalarField(unit_grid32, rng.standard_normal((32, 32)))
        base_force = capillary_force_phigrad(phi, mu)
        res1 = ns_step(v0, p0, phi, mu, params, cfg, force=base_force)
        q = ScalarField(unit_grid32, rng.standard_normal((32, 32)))
        gq = apply_gradient(q)
        shifted = VectorField(unit_grid32, base_force.u + gq.u, base_force.v + gq.v)
        res2 = ns_step(v0, p0, phi, mu, params, cfg, force=shifted)
        dv = max(np.abs(res1.v.u - res2.v.u).max(), np.abs(res1.v.v - res2.v.v).max())
        assert dv <= 10 * cfg.projection_tol

    def test_constant_mu_capillary_leaves_rest(self, unit_grid32, params):
        # the capillary force with constant mu is a gradient field
        v0 = VectorField.zero(unit_grid32)
        p0 = ScalarField.constant(unit_grid32, 0.0)
        X, _ = unit_grid32.cell_centers()
        phi = ScalarField(unit_grid32, 0.5 * X - 0.2)
        mu = ScalarField.constant(unit_grid32, 2.0)
        res = ns_step(v0, p0, phi, mu, params, FlowStepConfig(dt=1e-4))
        assert max(np.abs(res.v.u).max(), np.abs(res.v.v).max()) <= 1e-9

    def test_viscous_decay_and_incompressibility(self, params):
        grid = GridSpec(32, 32)
        p = PhysicalParams(rho1=1.0, rho2=1.0, nu1=1.0, nu2=1.0)
        cfg = FlowStepConfig(dt=1e-4)
        v = stream_vortex(grid, 0.05)
        phi = ScalarField.constant(grid, 0.0)
        mu = ScalarField.constant(grid, 0.0)
        p0 = ScalarField.constant(grid, 0.0)
        ke = kinetic_energy_faces(v, phi, p)
        ws = FlowWorkspace(grid)
        for _ in range(10):
            res = ns_step(v, p0, phi, mu, p, cfg, workspace=ws)
            v = res.v
            ke_new = kinetic_energy_faces(v, phi, p)
            assert ke_new < ke
            ke = ke_new
            assert res.div_norm <= cfg.projection_tol
            assert np.all(v.u[0, :] == 0.0) and np.all(v.u[-1, :] == 0.0)
            assert np.all(v.v[:, 0] == 0.0) and np.all(v.v[:, -1] == 0.0)

    def test_variable_density_step_runs(self, params):
        grid = GridSpec(32, 32)
        X, Y = grid.cell_centers()
        phi_new = ScalarField(grid, 0.5 * np.cos(np.pi * Y))
        phi_old = ScalarField(grid, 0.48 * np.cos(np.pi * Y))
        mu = ScalarField(grid, 0.1 * np.cos(np.pi * X))
        v = stream_vortex(grid, 0.05)
        res = ns_step(v, ScalarField.constant(grid, 0.0), phi_new, mu, params,
                      FlowStepConfig(dt=1e-4), phi_old=phi_old,
                      mass_flux=default_mass_flux(v, phi_old, mu, params))
        assert res.div_norm <= 1e-10
        assert np.isfinite(res.viscous_dissipation) and res.viscous_dissipation >= 0.0

    def test_explicit_mode_cfl_guard(self, params):
        grid = GridSpec(32, 32)
        u = np.zeros((33, 32))
        u[1:-1, :] = 400.0  # CFL = 400*1e-4/h = 1.28 > 1
        v = VectorField(grid, u, np.zeros((32, 33)))
        cfg = FlowStepConfig(dt=1e-4, viscous_treatment="explicit")
        with pytest.raises(StepFailure), pytest.warns(UserWarning, match="CFL"):
            ns_step(v, ScalarField.constant(grid, 0.0), ScalarField.constant(grid, 0.0),
                    ScalarField.constant(grid, 0.0), params, cfg)

    def test_explicit_mode_small_dt_decays(self):
        grid = GridSpec(32, 32)
        p = PhysicalParams(rho1=1.0, rho2=1.0, nu1=0.1, nu2=0.1)
        cfg = FlowStepConfig(dt=1e-5, viscous_treatment="explicit")
        v = stream_vortex(grid, 0.01)
        phi = ScalarField.constant(grid, 0.0)
        mu = ScalarField.constant(grid, 0.0)
        ke = kinetic_energy_faces(v, phi, p)
        for _ in range(5):
            res = ns_step(v, ScalarField.constant(grid, 0.0), phi, mu, p, cfg)
            v = res.v
        assert kinetic_energy_faces(v, phi, p) < ke

    def test_pressure_mean_zero(self, unit_grid32, params, rng):
        v = stream_vortex(unit_grid32, 0.05)
        phi = ScalarField(unit_grid32, 0.3 * np.cos(np.pi * unit_grid32.cell_centers()[1]))
        mu = ScalarField(unit_grid32, 0.2 * np.cos(np.pi * unit_grid32.cell_centers()[0]))
        res = ns_step(v, ScalarField.constant(unit_grid32, 0.0), phi, mu, params,
                      FlowStepConfig(dt=1e-4))
        assert abs(field_norm(res.p, "mean")) <= 1e-12 * max(np.abs(res.p.values).max(), 1.0)
