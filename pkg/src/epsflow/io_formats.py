"""Deterministic on-disk formats: the binary field snapshot and the CSV tables.

Snapshot layout (little-endian):
    magic   4 bytes  "EPSF"
    version u32      1
    nx      u32
    ny      u32
    t       f64
    phi     nx*ny f64, row-major
    mu      nx*ny f64, row-major
    p       nx*ny f64, row-major
    u       (nx+1)*ny f64
    v       nx*(ny+1) f64
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, ScalarField, VectorField

MAGIC = b"EPSF"
VERSION = 1

TIMESERIES_HEADER = ("t,kinetic,e0_part,potential_part,total,dissipation_cum,"
                     "mass_mean,max_abs_phi,div_v_norm")
SWEEP_HEADER = "eps,sup_L2_phi_diff,L2QT_v_diff,L2L2_mu_diff,init_energy_gap,audit_max"


class SnapshotFormatError(ValueError):
    pass


def snapshot_byte_count(nx: int, ny: int) -> int:
    cells = nx * ny
    return 4 + 4 + 4 + 4 + 8 + 8 * (3 * cells + (nx + 1) * ny + nx * (ny + 1))


def write_snapshot(state, path: str) -> None:
    """Serialize (t, phi, mu, p, u, v); bit-exact round trip with read_snapshot."""
    g = state.phi.grid
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, g.nx, g.ny))
        fh.write(struct.pack("<d", state.t))
        fh.write(np.ascontiguousarray(state.phi.values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state.mu.values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state.p.values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state.v.u, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state.v.v, dtype="<f8").tobytes())


@dataclass
class SnapshotData:
    t: float
    grid: GridSpec
    phi: ScalarField
    mu: ScalarField
    p: ScalarField
    v: VectorField


def read_snapshot(path: str, lx: float | None = None, ly: float | None = None) -> SnapshotData:
    """Bit-exact inverse of write_snapshot.  The file stores the cell counts only;
    side lengths default to a unit-width cell ratio (lx = nx*h with h from lx/nx =
    ly/ny = 1/max(nx, ny) is not recoverable, so pass lx/ly when they matter)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise SnapshotFormatError(f"bad magic at offset 0: {blob[:4]!r}")
    try:
        version, nx, ny = struct.unpack_from("<III", blob, 4)
    except struct.error as err:
        raise SnapshotFormatError("truncated header") from err
    if version != VERSION:
        raise SnapshotFormatError(f"unsupported version {version}")
    expected = snapshot_byte_count(nx, ny)
    if len(blob) != expected:
        raise SnapshotFormatError(f"file has {len(blob)} bytes, expected {expected}")
    (t,) = struct.unpack_from("<d", blob, 16)
    if lx is None:
        lx = 1.0
    if ly is None:
        ly = lx * ny / nx
    grid = GridSpec(nx, ny, lx, ly)
    offset = 24
    cells = nx * ny

    def take(count):
        nonlocal offset
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).copy()
        offset += 8 * count
        return arr

    phi = take(cells).reshape(nx, ny)
    mu = take(cells).reshape(nx, ny)
    p = take(cells).reshape(nx, ny)
    u = take((nx + 1) * ny).reshape(nx + 1, ny)
    v = take(nx * (ny + 1)).reshape(nx, ny + 1)
    return SnapshotData(t=t, grid=grid,
                        phi=ScalarField(grid, phi), mu=ScalarField(grid, mu),
                        p=ScalarField(grid, p), v=VectorField(grid, u, v))


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_timeseries(rows, path: str) -> None:
    """CSV with the fixed per-step diagnostic columns, 17 significant digits."""
    lines = [TIMESERIES_HEADER]
    for r in rows:
        lines.append(",".join(_fmt(v) for v in (
            r.t, r.kinetic, r.e0_part, r.potential_part, r.total,
            r.dissipation_cum, r.mass_mean, r.max_abs_phi, r.div_v_norm)))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_sweep_report(report, path: str) -> None:
    """CSV of the per-eps sweep rows, ordered by decreasing eps."""
    lines = [SWEEP_HEADER]
    for r in report.rows:
        lines.append(",".join(_fmt(v) for v in (
            r.eps, r.sup_l2_phi_diff, r.l2qt_v_diff, r.l2l2_mu_diff,
            r.init_energy_gap, r.audit_max)))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_table(header: str, rows, path: str) -> None:
    """Generic numeric CSV writer used by the localization check tables."""
    lines = [header]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
