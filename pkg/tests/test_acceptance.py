"""Acceptance suite: the exit criteria for the build, one test per criterion.

Each test prints a single PASS line with its headline numbers (visible with
pytest -s); tolerances are the contractual ones, fixed here and not tunable.
Run order follows the criterion numbering; the full suite is minutes-scale,
dominated by the kernel-localization sweep.
"""

import math
import time

import numpy as np
import pytest

from epsflow.analysis import (convergence_sweep, dual_h1_norm, energy_audit, gamma_table,
                              operator_table, weighted_neumann_solve)
from epsflow.ch_solvers import CHStepConfig, ch_step_local, ch_step_nonlocal
from epsflow.coupled import OutputConfig, RunConfig, run_simulation
from epsflow.grid import (GridSpec, ScalarField, VectorField, apply_gradient, field_norm,
                          laplace_neumann)
from epsflow.kernel import build_kernel_operator, build_mollifier, convolve, convolve_direct
from epsflow.physics import PhysicalParams

from test_ch_solvers import dense_nonlocal_step_oracle


def report(name: str, detail: str):
    print(f"\n[{name}] PASS: {detail}")


def test_criterion_1_kernel_normalization():
    t0 = time.time()
    worst = 0.0
    for eps in (0.2, 0.1, 0.05, 0.02):
        fam = build_mollifier(2, eps)
        assert fam.amplitude == 48.0 / math.pi
        worst = max(worst, abs(fam.moment_quadrature() - 2.0 / math.pi))
    assert worst <= 1e-10
    elapsed = time.time() - t0
    assert elapsed < 1.0
    report("criterion 1: kernel normalization",
           f"moment deviation {worst:.2e} <= 1e-10, amplitude exact, {elapsed:.2f}s")


def test_criterion_2_convolution_oracle():
    t0 = time.time()
    grid = GridSpec(32, 32)
    kop = build_kernel_operator(grid, build_mollifier(2, 0.2))
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        phi = ScalarField(grid, rng.standard_normal((32, 32)))
        fast = convolve(kop, phi)
        slow = convolve_direct(kop, phi)
        rel = np.abs(fast.values - slow.values).max() / np.abs(slow.values).max()
        worst = max(worst, rel)
    assert worst <= 1e-12
    elapsed = time.time() - t0
    assert elapsed < 10.0
    report("criterion 2: convolution oracle",
           f"20 fields, worst relative gap {worst:.2e} <= 1e-12, {elapsed:.1f}s")


def test_criterion_3_energy_localization_gamma_limit():
    t0 = time.time()
    grid = GridSpec(256, 256)
    X, Y = grid.cell_centers()
    phi = ScalarField(grid, np.cos(np.pi * X) * np.cos(np.pi * Y))
    target = np.pi**2 / 4
    rows = gamma_table(phi, [0.2, 0.1, 0.05, 0.02], target=target)
    errors = [r.rel_error for r in rows]
    assert all(b < a for a, b in zip(errors, errors[1:])), errors
    assert errors[-1] <= 0.05
    elapsed = time.time() - t0
    assert elapsed < 60.0
    report("criterion 3: energy localization",
           f"errors {['%.4f' % e for e in errors]} strictly decreasing, "
           f"final {errors[-1]:.4f} <= 0.05, {elapsed:.1f}s")


def test_criterion_4_operator_weak_limit():
    t0 = time.time()
    grid = GridSpec(256, 256)
    X, _ = grid.cell_centers()
    phi = ScalarField(grid, np.cos(np.pi * X))
    rows = operator_table(phi, phi, [0.2, 0.1, 0.05, 0.02], target=np.pi**2 / 2)
    errors = [r.rel_error for r in rows]
    assert all(b < a for a, b in zip(errors, errors[1:])), errors
    assert errors[-1] <= 0.05
    elapsed = time.time() - t0
    assert elapsed < 60.0
    report("criterion 4: operator weak limit",
           f"errors {['%.4f' % e for e in errors]} strictly decreasing, "
           f"final {errors[-1]:.4f} <= 0.05, {elapsed:.1f}s")


def test_criterion_5_energy_inequality_coupled_run():
    t0 = time.time()
    cfg = RunConfig(variant="nonlocal", eps=0.1, grid=GridSpec(64, 64),
                    params=PhysicalParams(), dt=1e-4, T=0.05, preset="sinusoid",
                    output=OutputConfig(snapshot_count=10))
    result = run_simulation(cfg)
    assert result.failure is None
    assert len(result.timeseries) == 500
    audit = energy_audit(result.state.energy_history)
    e0 = audit["initial_energy"]
    assert audit["audit_max"] <= 1e-8 * (1.0 + e0)
    mass0 = result.timeseries[0].mass_mean
    drift = max(abs(r.mass_mean - mass0) for r in result.timeseries)
    assert drift <= 1e-10
    assert max(r.max_abs_phi for r in result.timeseries) < 1.0
    worst_div = max(r.div_v_norm for r in result.timeseries)
    assert worst_div <= 1e-9
    elapsed = time.time() - t0
    assert elapsed < 300.0
    report("criterion 5: energy inequality",
           f"audit {audit['audit_max']:.2e} <= {1e-8 * (1 + e0):.2e}, mass drift {drift:.1e}, "
           f"max div {worst_div:.1e}, 500 steps in {elapsed:.0f}s")


def test_criterion_6_theorem_desk_scale_sweep():
    t0 = time.time()
    cfg = RunConfig(variant="nonlocal", eps=0.1, grid=GridSpec(128, 128),
                    params=PhysicalParams(rho1=1.0, rho2=3.0), dt=1e-4, T=0.05,
                    preset="sinusoid", output=OutputConfig(snapshot_count=10))
    report_obj = convergence_sweep(cfg, [0.2, 0.1, 0.05])
    assert all(not r.failed for r in report_obj.rows)
    phi_col = [r.sup_l2_phi_diff for r in report_obj.rows]
    v_col = [r.l2qt_v_diff for r in report_obj.rows]
    gap_col = [r.init_energy_gap for r in report_obj.rows]
    assert all(b < a for a, b in zip(phi_col, phi_col[1:])), phi_col
    assert all(b < a for a, b in zip(v_col, v_col[1:])), v_col
    assert all(b < a for a, b in zip(gap_col, gap_col[1:])), gap_col
    elapsed = time.time() - t0
    assert elapsed < 1800.0
    report("criterion 6: theorem desk-scale instance",
           f"phi {['%.3e' % v for v in phi_col]}, v {['%.3e' % v for v in v_col]}, "
           f"gap {['%.3e' % v for v in gap_col]} all decreasing, {elapsed:.0f}s")


def test_criterion_7_proof_machinery_operators():
    t0 = time.time()
    errors = []
    for n in (64, 128, 256):
        grid = GridSpec(n, n)
        X, _ = grid.cell_centers()
        f = ScalarField(grid, np.cos(np.pi * X))
        u = weighted_neumann_solve(ScalarField.constant(grid, 1.0), f)
        errors.append(np.abs(u.values - np.cos(np.pi * X) / np.pi**2).max())
    orders = [np.log2(errors[i] / errors[i + 1]) for i in range(2)]
    assert min(orders) >= 1.9

    grid = GridSpec(256, 256)
    X, _ = grid.cell_centers()
    value = dual_h1_norm(ScalarField(grid, np.cos(np.pi * X)))
    target = 1.0 / (np.pi * np.sqrt(2.0))
    rel = abs(value - target) / target
    assert rel <= 0.01
    elapsed = time.time() - t0
    assert elapsed < 30.0
    report("criterion 7: proof-machinery operators",
           f"Neumann solve orders {['%.2f' % o for o in orders]} >= 1.9, "
           f"dual norm rel error {rel:.4f} <= 0.01, {elapsed:.1f}s")


def test_criterion_8_scheme_self_convergence():
    t0 = time.time()
    params = PhysicalParams()
    grid = GridSpec(64, 64)
    X, Y = grid.cell_centers()
    phi0 = ScalarField(grid, 0.3 * np.cos(np.pi * X) * np.cos(np.pi * Y))
    v0 = VectorField.zero(grid)
    finals = []
    for dt in (4e-4, 2e-4, 1e-4):
        phi = phi0
        cfg = CHStepConfig(dt=dt)
        for _ in range(int(round(0.01 / dt))):
            phi, _ = ch_step_local(phi, v0, params, cfg)
        finals.append(phi.values.copy())
    d01 = np.sqrt(np.sum((finals[0] - finals[1]) ** 2) * grid.h**2)
    d12 = np.sqrt(np.sum((finals[1] - finals[2]) ** 2) * grid.h**2)
    contraction = d01 / d12
    assert abs(contraction - 2.0) <= 0.3

    grad_errors, lap_errors = [], []
    for n in (32, 64, 128):
        g = GridSpec(n, n)
        Xn, _ = g.cell_centers()
        f = ScalarField(g, np.cos(np.pi * Xn))
        gout = apply_gradient(f)
        x_faces = np.arange(1, n)[:, None] * g.h
        grad_errors.append(np.abs(gout.u[1:-1, :] + np.pi * np.sin(np.pi * x_faces)).max())
        lap = laplace_neumann(f, ScalarField.constant(g, 1.0))
        lap_errors.append(np.abs(lap.values + np.pi**2 * np.cos(np.pi * Xn)).max())
    g_orders = [np.log2(grad_errors[i] / grad_errors[i + 1]) for i in range(2)]
    l_orders = [np.log2(lap_errors[i] / lap_errors[i + 1]) for i in range(2)]
    assert min(g_orders) >= 1.9 and min(l_orders) >= 1.9
    elapsed = time.time() - t0
    assert elapsed < 120.0
    report("criterion 8: scheme self-convergence",
           f"dt contraction {contraction:.2f} in 2.0+-0.3, spatial orders "
           f"grad {['%.2f' % o for o in g_orders]}, lap {['%.2f' % o for o in l_orders]}, "
           f"{elapsed:.0f}s")


def test_criterion_9_small_instance_nonlinear_oracle():
    t0 = time.time()
    params = PhysicalParams()
    grid = GridSpec(8, 8)
    X, Y = grid.cell_centers()
    phi = ScalarField(grid, 0.4 * np.cos(np.pi * X) * np.cos(np.pi * Y))
    v0 = VectorField.zero(grid)
    kop = build_kernel_operator(grid, build_mollifier(2, 0.3))
    phi1, _ = ch_step_nonlocal(phi, v0, kop, params, CHStepConfig(dt=1e-4))
    oracle = dense_nonlocal_step_oracle(phi, v0, kop, params, 1e-4)
    gap = np.abs(phi1.values - oracle).max()
    assert gap <= 1e-9
    elapsed = time.time() - t0
    assert elapsed < 5.0
    report("criterion 9: small-instance nonlinear oracle",
           f"dense-solve gap {gap:.2e} <= 1e-9, {elapsed:.2f}s")
