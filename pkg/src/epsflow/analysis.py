"""Convergence harness: kernel-localization checks for the interaction energy and
operator, the dual-norm machinery, the interpolation-inequality diagnostic, the
per-run energy audit, and the kernel sweep comparing nonlocal runs against the
local reference."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .coupled import RunConfig, run_simulation
from .grid import ScalarField, apply_gradient, cell_inner, field_norm
from .kernel import build_kernel_operator, build_mollifier, nonlocal_operator
from .operators import PinnedNeumannSolver
from .physics import energy_local_e0, energy_nonlocal_e0

logger = logging.getLogger(__name__)


class CompatibilityError(ValueError):
    """Right-hand side incompatible with a pure Neumann problem (nonzero mean)."""


def weighted_neumann_solve(m_field: ScalarField, f: ScalarField,
                           linear_tol: float = 1e-11) -> ScalarField:
    """Mean-zero u with div(m grad u) = -f, i.e. the weak identity
    sum m grad u . grad psi h^2 = <f, psi> for all psi.  Requires mean(f) = 0
    (to 1e-10) and m > 0."""
    if m_field.grid != f.grid:
        raise ValueError("fields live on different grids")
    if np.any(m_field.values <= 0.0):
        raise ValueError("weight field must be strictly positive")
    mean_f = field_norm(f, "mean")
    if abs(mean_f) > 1e-10:
        raise CompatibilityError(f"mean(f) = {mean_f:.3e} exceeds the compatibility tolerance")
    from .grid import face_average

    cu, cv = face_average(m_field)
    solver = PinnedNeumannSolver(f.grid, cu, cv, tol=linear_tol)
    return solver.solve_field(ScalarField(f.grid, -f.values))


def dual_h1_norm(f: ScalarField) -> float:
    """Norm of f in the dual of H^1: the mean-zero part is measured through the
    unit-weight Neumann solve, the mean part contributes |mean| sqrt(|domain|)
    in quadrature."""
    mean = field_norm(f, "mean")
    f0 = ScalarField(f.grid, f.values - mean)
    u = weighted_neumann_solve(ScalarField.constant(f.grid, 1.0), f0)
    part_zero = cell_inner(f0, u)
    # round-off can leave a tiny negative value for f near constant
    part_zero = max(part_zero, 0.0)
    return float(np.sqrt(part_zero + mean**2 * f.grid.area))


@dataclass(frozen=True)
class GammaRow:
    eps: float
    nonlocal_energy: float
    local_energy: float
    rel_error: float
    resolved: bool  # eps >= 2h


def gamma_table(phi: ScalarField, eps_list: list[float],
                target: float | None = None) -> list[GammaRow]:
    """Table of interaction energies against the Dirichlet energy for decreasing
    eps; `target` overrides the discrete Dirichlet energy when an analytic value
    is known.  No assertions."""
    e_local = energy_local_e0(phi) if target is None else target
    rows = []
    for eps in eps_list:
        kop = build_kernel_operator(phi.grid, build_mollifier(2, eps))
        e_eps = energy_nonlocal_e0(kop, phi)
        rel = abs(e_eps - e_local) / abs(e_local) if e_local != 0.0 else abs(e_eps)
        rows.append(GammaRow(eps=eps, nonlocal_energy=e_eps, local_energy=e_local,
                             rel_error=rel, resolved=eps >= 2 * phi.grid.h))
    return rows


def assert_localization(errors: list[float], threshold: float, label: str) -> None:
    if any(e2 >= e1 for e1, e2 in zip(errors, errors[1:])):
        raise AssertionError(f"{label} errors not strictly decreasing: {errors}")
    if errors[-1] > threshold:
        raise AssertionError(f"final {label} error {errors[-1]:.3f} above {threshold}")


def gamma_check(phi: ScalarField, eps_list: list[float], threshold: float = 0.05,
                target: float | None = None) -> list[GammaRow]:
    """gamma_table plus the monotone-decrease and final-threshold assertions."""
    rows = gamma_table(phi, eps_list, target)
    assert_localization([r.rel_error for r in rows], threshold, "energy localization")
    return rows


@dataclass(frozen=True)
class OperatorRow:
    eps: float
    bilinear: float
    local_value: float
    rel_error: float
    resolved: bool


def operator_table(phi: ScalarField, zeta: ScalarField, eps_list: list[float],
                   target: float | None = None) -> list[OperatorRow]:
    """Table of <a_eps phi - J_eps*phi, zeta> against the Dirichlet form
    sum grad phi . grad zeta h^2.  No assertions."""
    if target is None:
        gp, gz = apply_gradient(phi), apply_gradient(zeta)
        local_value = float((np.sum(gp.u * gz.u) + np.sum(gp.v * gz.v)) * phi.grid.h**2)
    else:
        local_value = target
    rows = []
    for eps in eps_list:
        kop = build_kernel_operator(phi.grid, build_mollifier(2, eps))
        b = cell_inner(nonlocal_operator(kop, phi), zeta)
        rel = abs(b - local_value) / abs(local_value) if local_value != 0.0 else abs(b)
        rows.append(OperatorRow(eps=eps, bilinear=b, local_value=local_value,
                                rel_error=rel, resolved=eps >= 2 * phi.grid.h))
    return rows


def operator_check(phi: ScalarField, zeta: ScalarField, eps_list: list[float],
                   threshold: float = 0.05, target: float | None = None) -> list[OperatorRow]:
    """operator_table plus the monotone-decrease and final-threshold assertions."""
    rows = operator_table(phi, zeta, eps_list, target)
    assert_localization([r.rel_error for r in rows], threshold, "operator localization")
    return rows


@dataclass(frozen=True)
class Lemma34Record:
    l2_sq: float           # ||phi1 - phi2||_L2^2
    energy_term: float     # delta * (e01 + e02)
    dual_sq: float         # ||phi1 - phi2||_(H1)'^2
    c_implied: float

    @property
    def inequality_holds(self) -> bool:
        return self.l2_sq <= self.energy_term + self.c_implied * self.dual_sq + 1e-12


def lemma34_diagnostic(phi1: ScalarField, phi2: ScalarField, e01: float, e02: float,
                       delta: float) -> Lemma34Record:
    """Interpolation-inequality diagnostic: splits ||phi1 - phi2||^2_L2 into the
    interaction-energy part delta*(e01 + e02) and the dual-norm part, reporting
    the implied constant.  Diagnostic only: the constant is existential, so only
    finiteness is meaningful."""
    if phi1.grid != phi2.grid:
        raise ValueError("fields live on different grids")
    diff = ScalarField(phi1.grid, phi1.values - phi2.values)
    l2_sq = field_norm(diff, "L2") ** 2
    if not np.any(diff.values):
        return Lemma34Record(0.0, delta * (e01 + e02), 0.0, 0.0)
    dual_sq = dual_h1_norm(diff) ** 2
    energy_term = delta * (e01 + e02)
    numer = max(0.0, l2_sq - energy_term)
    if dual_sq == 0.0:
        c = 0.0 if numer == 0.0 else float("inf")
    else:
        c = numer / dual_sq
    return Lemma34Record(l2_sq=l2_sq, energy_term=energy_term, dual_sq=dual_sq, c_implied=c)


def energy_audit(history) -> dict:
    """max over n of E(t_n) + sum_{k<=n} D_k - E(0) from a run's energy history;
    nonpositive (up to solver tolerance) certifies the discrete dissipation law."""
    e0 = history[0].total
    worst = -np.inf
    cum = 0.0
    for rec in history:
        cum += rec.dissipation_increment
        worst = max(worst, rec.total + cum - e0)
    # the first record carries zero increment, so worst >= 0 always holds at n=0
    return {"audit_max": float(worst), "initial_energy": float(e0)}


@dataclass(frozen=True)
class SweepRow:
    eps: float
    sup_l2_phi_diff: float
    l2qt_v_diff: float
    l2l2_mu_diff: float
    init_energy_gap: float
    audit_max: float
    failed: bool = False


@dataclass
class SweepReport:
    eps_list: list[float]
    rows: list[SweepRow]
    local_audit_max: float
    phi_monotone: bool
    v_monotone: bool
    mu_monotone: bool
    gap_monotone: bool
    lemma34_max_c: float
    lemma34_records: list[Lemma34Record] = field(default_factory=list)


class _TrajectoryRecorder:
    """Stores the local reference trajectory (every step) for lockstep comparison."""

    def __init__(self):
        self.phi = {}
        self.u = {}
        self.v = {}
        self.mu = {}

    def __call__(self, step: int, state):
        self.phi[step] = state.phi.values.copy()
        self.u[step] = state.v.u.copy()
        self.v[step] = state.v.v.copy()
        self.mu[step] = state.mu.values.copy()


class _DistanceObserver:
    """Accumulates distance norms against a stored reference trajectory."""

    def __init__(self, ref: _TrajectoryRecorder, h2: float, dt: float):
        self.ref = ref
        self.h2 = h2
        self.dt = dt
        self.sup_phi = 0.0
        self.v_sq = []
        self.mu_sq = []

    def __call__(self, step: int, state):
        dphi = np.sqrt(np.sum((state.phi.values - self.ref.phi[step]) ** 2) * self.h2)
        self.sup_phi = max(self.sup_phi, float(dphi))
        dv_sq = (np.sum((state.v.u - self.ref.u[step]) ** 2)
                 + np.sum((state.v.v - self.ref.v[step]) ** 2)) * self.h2
        self.v_sq.append(float(dv_sq))
        dmu_sq = np.sum((state.mu.values - self.ref.mu[step]) ** 2) * self.h2
        self.mu_sq.append(float(dmu_sq))

    def l2qt_v(self) -> float:
        return float(np.sqrt(np.trapezoid(self.v_sq, dx=self.dt)))

    def l2l2_mu(self) -> float:
        return float(np.sqrt(np.trapezoid(self.mu_sq, dx=self.dt)))


def _column_monotone(values: list[float], label: str) -> bool:
    """Strict decrease check with the documented relaxation: when the column is
    not monotone the event is logged and only last < first is required."""
    decreasing = all(b < a for a, b in zip(values, values[1:]))
    if not decreasing:
        logger.warning("%s column not monotone: %s (relaxed check: last < first)", label, values)
        if not values[-1] < values[0]:
            raise AssertionError(f"{label} column does not decrease across the sweep: {values}")
    return decreasing


def convergence_sweep(base_cfg: RunConfig, eps_list: list[float],
                      lemma34_delta: float = 0.5) -> SweepReport:
    """Run the local reference once and one nonlocal run per eps with identical
    grid, step size and initial data; report solution distances, the initial
    interaction-energy gap and the per-run dissipation audits, asserting the
    monotone decrease of the phi and v distance columns."""
    eps_list = list(eps_list)
    if any(e2 >= e1 for e1, e2 in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")

    local_cfg = replace(base_cfg, variant="local", eps=None)
    recorder = _TrajectoryRecorder()
    local_result = run_simulation(local_cfg, observer=recorder)
    if local_result.failure is not None:
        raise RuntimeError(f"local reference run failed: {local_result.failure}")
    local_audit = energy_audit(local_result.state.energy_history)["audit_max"]
    e0_local_init = local_result.state.energy_history[0].e0_part

    h2 = base_cfg.grid.h**2
    rows: list[SweepRow] = []
    final_fields: list[tuple[float, ScalarField, float] | None] = []
    for eps in eps_list:
        cfg = replace(base_cfg, variant="nonlocal", eps=eps)
        obs = _DistanceObserver(recorder, h2, base_cfg.dt)
        result = run_simulation(cfg, observer=obs)
        if result.failure is not None:
            rows.append(SweepRow(eps=eps, sup_l2_phi_diff=float("nan"),
                                 l2qt_v_diff=float("nan"), l2l2_mu_diff=float("nan"),
                                 init_energy_gap=float("nan"), audit_max=float("nan"),
                                 failed=True))
            final_fields.append(None)
            continue
        hist = result.state.energy_history
        gap = abs(hist[0].e0_part - e0_local_init)
        rows.append(SweepRow(
            eps=eps,
            sup_l2_phi_diff=obs.sup_phi,
            l2qt_v_diff=obs.l2qt_v(),
            l2l2_mu_diff=obs.l2l2_mu(),
            init_energy_gap=gap,
            audit_max=energy_audit(hist)["audit_max"],
        ))
        final_fields.append((eps, result.state.phi.copy(), hist[-1].e0_part))

    ok_rows = [r for r in rows if not r.failed]
    if len(ok_rows) == len(rows) and len(rows) >= 2:
        phi_mono = _column_monotone([r.sup_l2_phi_diff for r in rows], "phi distance")
        v_mono = _column_monotone([r.l2qt_v_diff for r in rows], "v distance")
        gap_mono = _column_monotone([r.init_energy_gap for r in rows], "initial energy gap")
        mu_vals = [r.l2l2_mu_diff for r in rows]
        mu_mono = all(b < a for a, b in zip(mu_vals, mu_vals[1:]))  # reported only
    else:
        logger.warning("sweep contains failed rows; monotonicity assertions skipped")
        phi_mono = v_mono = gap_mono = mu_mono = False

    lemma_records = []
    max_c = 0.0
    pairs = [(a, b) for a, b in zip(final_fields, final_fields[1:])
             if a is not None and b is not None]
    for (eps1, f1, e01), (eps2, f2, e02) in pairs:
        rec = lemma34_diagnostic(f1, f2, e01, e02, lemma34_delta)
        lemma_records.append(rec)
        if np.isfinite(rec.c_implied):
            max_c = max(max_c, rec.c_implied)
        else:
            raise AssertionError(f"implied interpolation constant infinite for pair ({eps1}, {eps2})")

    return SweepReport(eps_list=eps_list, rows=rows, local_audit_max=local_audit,
                       phi_monotone=phi_mono, v_monotone=v_mono, mu_monotone=mu_mono,
                       gap_monotone=gap_mono, lemma34_max_c=max_c,
                       lemma34_records=lemma_records)
