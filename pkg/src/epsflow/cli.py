"""Command-line interface.

Subcommands: simulate, sweep, gamma-check, operator-check, lemma34, validate.
Exit codes: 0 success (all assertions pass), 1 assertion failure, 2 configuration
error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .analysis import (assert_localization, convergence_sweep, gamma_table, operator_table)
from .ch_solvers import StepFailure
from .config import ConfigError, parse_config
from .coupled import initial_fields, run_simulation
from .io_formats import write_snapshot, write_sweep_report, write_table, write_timeseries
from .plots import emit_line_chart, emit_plots

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epsflow",
                                     description="two-phase flow solvers with a "
                                                 "kernel-localization convergence harness")
    sub = parser.add_subparsers(dest="command")
    for name, doc in (("simulate", "run one simulation"),
                      ("sweep", "run the kernel-localization sweep"),
                      ("gamma-check", "interaction-energy localization table"),
                      ("operator-check", "interaction-operator localization table"),
                      ("lemma34", "interpolation-inequality diagnostic over the sweep"),
                      ("validate", "parse and validate a configuration")):
        cmd = sub.add_parser(name, help=doc)
        cmd.add_argument("config", help="path to the JSON configuration")
        cmd.add_argument("--output-dir", default=None, help="override output.dir")
        cmd.add_argument("--quiet", action="store_true", help="suppress progress output")
        cmd.add_argument("--seed", type=int, default=None, help="override run.seed")
    return parser


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _load(args):
    full = parse_config(args.config)
    run = full.run
    if args.seed is not None:
        run = dataclasses.replace(run, seed=args.seed)
    if args.output_dir is not None:
        run = dataclasses.replace(run, output=dataclasses.replace(run.output,
                                                                  directory=args.output_dir))
    return dataclasses.replace(full, run=run)


def _ensure_dir(path: str) -> None:
    os.makedirs(path, exist_ok=True)


def _cmd_validate(args) -> int:
    _load(args)
    _say(args, "configuration valid")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    full = _load(args)
    cfg = full.run
    out = cfg.output.directory
    _ensure_dir(out)
    result = run_simulation(cfg)
    write_timeseries(result.timeseries, os.path.join(out, "timeseries.csv"))
    for step, state in result.snapshots:
        write_snapshot(state, os.path.join(out, f"snapshot_{step:06d}.bin"))
    if result.timeseries:
        emit_plots(result, os.path.join(out, "energy.svg"))
    if result.failure is not None:
        _say(args, f"run aborted at step {result.failure['step']}: {result.failure['reason']}")
        return EXIT_SOLVER
    _say(args, f"run complete: {len(result.timeseries)} steps, outputs in {out}/")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    full = _load(args)
    cfg = full.run
    out = cfg.output.directory
    _ensure_dir(out)
    report = convergence_sweep(cfg, full.sweep_eps)
    write_sweep_report(report, os.path.join(out, "sweep.csv"))
    emit_plots(report, os.path.join(out, "sweep.svg"))
    if any(r.failed for r in report.rows):
        _say(args, "sweep contains failed runs")
        return EXIT_SOLVER
    _say(args, f"sweep complete: phi monotone={report.phi_monotone}, "
               f"v monotone={report.v_monotone}, outputs in {out}/")
    return EXIT_OK


def _static_field(cfg):
    phi, _ = initial_fields(cfg.grid, cfg.preset, cfg.preset_params, cfg.seed)
    return phi


def _cmd_gamma_check(args) -> int:
    full = _load(args)
    cfg = full.run
    out = cfg.output.directory
    _ensure_dir(out)
    phi = _static_field(cfg)
    rows = gamma_table(phi, full.sweep_eps)
    write_table("eps,nonlocal_energy,local_energy,rel_error",
                [(r.eps, r.nonlocal_energy, r.local_energy, r.rel_error) for r in rows],
                os.path.join(out, "gamma_check.csv"))
    emit_line_chart([("relative energy error", [r.eps for r in rows],
                      [max(r.rel_error, 1e-300) for r in rows])],
                    os.path.join(out, "gamma_check.svg"),
                    title="energy localization", xlabel="eps", ylabel="relative error",
                    log_x=True, log_y=True)
    assert_localization([r.rel_error for r in rows], 0.05, "energy localization")
    _say(args, f"energy localization verified over eps={full.sweep_eps}")
    return EXIT_OK


def _cmd_operator_check(args) -> int:
    full = _load(args)
    cfg = full.run
    out = cfg.output.directory
    _ensure_dir(out)
    phi = _static_field(cfg)
    rows = operator_table(phi, phi, full.sweep_eps)
    write_table("eps,bilinear,local_value,rel_error",
                [(r.eps, r.bilinear, r.local_value, r.rel_error) for r in rows],
                os.path.join(out, "operator_check.csv"))
    emit_line_chart([("relative operator error", [r.eps for r in rows],
                      [max(r.rel_error, 1e-300) for r in rows])],
                    os.path.join(out, "operator_check.svg"),
                    title="operator localization", xlabel="eps", ylabel="relative error",
                    log_x=True, log_y=True)
    assert_localization([r.rel_error for r in rows], 0.05, "operator localization")
    _say(args, f"operator localization verified over eps={full.sweep_eps}")
    return EXIT_OK


def _cmd_lemma34(args) -> int:
    full = _load(args)
    cfg = full.run
    out = cfg.output.directory
    _ensure_dir(out)
    report = convergence_sweep(cfg, full.sweep_eps)
    rows = [(e1, e2, rec.l2_sq, rec.energy_term, rec.dual_sq, rec.c_implied)
            for (e1, e2), rec in zip(zip(full.sweep_eps, full.sweep_eps[1:]),
                                     report.lemma34_records)]
    write_table("eps1,eps2,l2_sq,energy_term,dual_sq,c_implied", rows,
                os.path.join(out, "lemma34.csv"))
    if not all(np.isfinite(rec.c_implied) for rec in report.lemma34_records):
        _say(args, "implied constant not finite")
        return EXIT_ASSERTION
    _say(args, f"interpolation diagnostic: max implied constant {report.lemma34_max_c:.6g}")
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "sweep": _cmd_sweep,
    "gamma-check": _cmd_gamma_check,
    "operator-check": _cmd_operator_check,
    "lemma34": _cmd_lemma34,
    "validate": _cmd_validate,
}


def cli(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        # argparse exits 2 on usage errors, which matches the config-error code;
        # normalize --help (exit 0) through
        return EXIT_CONFIG if err.code not in (0, None) else EXIT_OK
    if args.command is None:
        parser.print_usage()
        return EXIT_CONFIG
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except AssertionError as err:
        print(f"assertion failed: {err}", file=sys.stderr)
        return EXIT_ASSERTION
    except StepFailure as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except RuntimeError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
