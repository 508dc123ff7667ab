"""Strict JSON run configuration: unknown keys are rejected with their full path,
physical constraints are re-validated, and all problems are reported together."""

from __future__ import annotations

import json
from dataclasses import dataclass

from .coupled import OutputConfig, RunConfig
from .grid import GridSpec
from .physics import PhysicalParams


class ConfigError(ValueError):
    """Carries a list of (key path, message) pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = list(errors)
        lines = "; ".join(f"{path}: {msg}" for path, msg in self.errors)
        super().__init__(f"invalid configuration: {lines}")


_GRID_KEYS = {"nx", "ny", "lx", "ly"}
_PARAM_KEYS = {"rho1", "rho2", "theta", "theta_c", "nu1", "nu2", "m0",
               "mobility_model", "m1", "viscosity_model"}
_RUN_KEYS = {"variant", "eps", "dt", "T", "preset", "preset_params", "seed"}
_SWEEP_KEYS = {"eps_list"}
_OUTPUT_KEYS = {"dir", "snapshot_count"}
_SECTIONS = {"grid", "params", "run", "sweep", "output"}


@dataclass(frozen=True)
class FullConfig:
    run: RunConfig
    sweep_eps: list[float]


def _check_keys(section: dict, allowed: set, prefix: str, errors: list):
    for key in section:
        if key not in allowed:
            errors.append((f"{prefix}.{key}", "unknown key"))


def _number(section: dict, key: str, default, prefix: str, errors: list,
            required: bool = False):
    if key not in section:
        if required:
            errors.append((f"{prefix}.{key}", "missing required key"))
        return default
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.append((f"{prefix}.{key}", f"expected a number, got {type(value).__name__}"))
        return default
    return value


def parse_config(path: str) -> FullConfig:
    """Load and validate a JSON configuration file; raises ConfigError with the
    full list of violations (key path + constraint)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as err:
        raise ConfigError([(path, "file not found")]) from err
    except json.JSONDecodeError as err:
        raise ConfigError([(path, f"malformed JSON: {err}")]) from err
    return parse_config_dict(doc)


def parse_config_dict(doc: dict) -> FullConfig:
    errors: list[tuple[str, str]] = []
    if not isinstance(doc, dict):
        raise ConfigError([("$", "top-level document must be an object")])
    for key in doc:
        if key not in _SECTIONS:
            errors.append((key, "unknown section"))

    grid_sec = doc.get("grid", {})
    params_sec = doc.get("params", {})
    run_sec = doc.get("run", {})
    sweep_sec = doc.get("sweep", {})
    output_sec = doc.get("output", {})
    for sec, allowed, name in ((grid_sec, _GRID_KEYS, "grid"),
                               (params_sec, _PARAM_KEYS, "params"),
                               (run_sec, _RUN_KEYS, "run"),
                               (sweep_sec, _SWEEP_KEYS, "sweep"),
                               (output_sec, _OUTPUT_KEYS, "output")):
        if not isinstance(sec, dict):
            errors.append((name, "section must be an object"))
            return _raise(errors)
        _check_keys(sec, allowed, name, errors)

    nx = _number(grid_sec, "nx", 64, "grid", errors)
    ny = _number(grid_sec, "ny", 64, "grid", errors)
    lx = _number(grid_sec, "lx", 1.0, "grid", errors)
    ly = _number(grid_sec, "ly", 1.0, "grid", errors)
    grid = None
    try:
        grid = GridSpec(int(nx), int(ny), float(lx), float(ly))
    except (ValueError, TypeError) as err:
        errors.append(("grid", str(err)))

    kwargs = {}
    for key in ("rho1", "rho2", "theta", "theta_c", "nu1", "nu2", "m0", "m1"):
        if key in params_sec:
            kwargs[key] = _number(params_sec, key, None, "params", errors)
    for key in ("mobility_model", "viscosity_model"):
        if key in params_sec:
            value = params_sec[key]
            if not isinstance(value, str):
                errors.append((f"params.{key}", "expected a string"))
            else:
                kwargs[key] = value
    params = None
    if not any(p.startswith("params") for p, _ in errors):
        try:
            params = PhysicalParams(**{k: v for k, v in kwargs.items() if v is not None})
        except ValueError as err:
            # constraint violations cite the defining inequality, e.g. 0 < theta_c < theta
            errors.append(("params", str(err)))

    variant = run_sec.get("variant", "nonlocal")
    if variant not in ("nonlocal", "local"):
        errors.append(("run.variant", f"must be 'nonlocal' or 'local', got {variant!r}"))
    eps = _number(run_sec, "eps", 0.1, "run", errors)
    dt = _number(run_sec, "dt", 1e-4, "run", errors)
    T = _number(run_sec, "T", 0.01, "run", errors)
    preset = run_sec.get("preset", "sinusoid")
    if preset not in ("sinusoid", "tanh_interface", "random_perturbation"):
        errors.append(("run.preset", f"unknown preset {preset!r}"))
    preset_params = run_sec.get("preset_params", {})
    if not isinstance(preset_params, dict):
        errors.append(("run.preset_params", "must be an object"))
        preset_params = {}
    seed = run_sec.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        errors.append(("run.seed", "must be an integer"))
        seed = 0

    eps_list = sweep_sec.get("eps_list", [0.2, 0.1, 0.05])
    if (not isinstance(eps_list, list) or not eps_list
            or not all(isinstance(e, (int, float)) and not isinstance(e, bool) for e in eps_list)):
        errors.append(("sweep.eps_list", "must be a nonempty list of numbers"))
        eps_list = [0.2, 0.1, 0.05]
    elif any(e2 >= e1 for e1, e2 in zip(eps_list, eps_list[1:])):
        errors.append(("sweep.eps_list", "must be strictly decreasing"))

    out_dir = output_sec.get("dir", "out")
    if not isinstance(out_dir, str):
        errors.append(("output.dir", "must be a string"))
        out_dir = "out"
    snap_count = output_sec.get("snapshot_count", 10)
    if isinstance(snap_count, bool) or not isinstance(snap_count, int) or snap_count < 1:
        errors.append(("output.snapshot_count", "must be a positive integer"))
        snap_count = 10

    if errors:
        return _raise(errors)

    run = None
    try:
        run = RunConfig(
            variant=variant,
            eps=float(eps) if variant == "nonlocal" else None,
            grid=grid,
            params=params,
            dt=float(dt),
            T=float(T),
            preset=preset,
            preset_params=dict(preset_params),
            seed=seed,
            output=OutputConfig(directory=out_dir, snapshot_count=snap_count),
        )
    except ValueError as err:
        return _raise([("run", str(err))])
    return FullConfig(run=run, sweep_eps=[float(e) for e in eps_list])


def _raise(errors):
    raise ConfigError(errors)
