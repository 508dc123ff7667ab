"""Self-contained SVG line charts (no external renderer).  Deterministic byte
output for fixed input: coordinates are formatted with fixed precision and
series are drawn in the given order."""

from __future__ import annotations

import math

_WIDTH, _HEIGHT = 640, 420
_MARGIN = 60
_COLORS = ["#1f6fb2", "#c44e52", "#55a868", "#8172b2", "#ccb974"]


def _ticks(lo: float, hi: float, count: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / count
    return [lo + i * step for i in range(count + 1)]


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def emit_line_chart(series, path: str, title: str = "", xlabel: str = "", ylabel: str = "",
                    log_x: bool = False, log_y: bool = False) -> None:
    """Write an SVG chart; `series` is a list of (name, xs, ys).  Each data point
    is drawn as a circle, so point counts are visible in the markup."""
    def tx(v):
        return math.log10(v) if log_x else v

    def ty(v):
        return math.log10(v) if log_y else v

    pts = [(tx(x), ty(y)) for _, xs, ys in series for x, y in zip(xs, ys)]
    if not pts:
        xs_lo = ys_lo = 0.0
        xs_hi = ys_hi = 1.0
    else:
        xs_lo = min(p[0] for p in pts)
        xs_hi = max(p[0] for p in pts)
        ys_lo = min(p[1] for p in pts)
        ys_hi = max(p[1] for p in pts)
        if xs_hi == xs_lo:
            xs_hi = xs_lo + 1.0
        if ys_hi == ys_lo:
            ys_hi = ys_lo + 1.0

    inner_w = _WIDTH - 2 * _MARGIN
    inner_h = _HEIGHT - 2 * _MARGIN

    def px(v):
        return _MARGIN + (tx(v) - xs_lo) / (xs_hi - xs_lo) * inner_w

    def py(v):
        return _HEIGHT - _MARGIN - (ty(v) - ys_lo) / (ys_hi - ys_lo) * inner_h

    out = []
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
               f'viewBox="0 0 {_WIDTH} {_HEIGHT}">')
    out.append(f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>')
    if title:
        out.append(f'<text x="{_WIDTH//2}" y="24" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="15">{title}</text>')
    out.append(f'<rect x="{_MARGIN}" y="{_MARGIN}" width="{inner_w}" height="{inner_h}" '
               f'fill="none" stroke="#444444" stroke-width="1"/>')
    for t in _ticks(xs_lo, xs_hi):
        x = _MARGIN + (t - xs_lo) / (xs_hi - xs_lo) * inner_w
        label = _fmt(10 ** t) if log_x else _fmt(t)
        out.append(f'<line x1="{x:.2f}" y1="{_HEIGHT-_MARGIN}" x2="{x:.2f}" '
                   f'y2="{_HEIGHT-_MARGIN+5}" stroke="#444444"/>')
        out.append(f'<text x="{x:.2f}" y="{_HEIGHT-_MARGIN+20}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{label}</text>')
    for t in _ticks(ys_lo, ys_hi):
        y = _HEIGHT - _MARGIN - (t - ys_lo) / (ys_hi - ys_lo) * inner_h
        label = _fmt(10 ** t) if log_y else _fmt(t)
        out.append(f'<line x1="{_MARGIN-5}" y1="{y:.2f}" x2="{_MARGIN}" y2="{y:.2f}" '
                   f'stroke="#444444"/>')
        out.append(f'<text x="{_MARGIN-8}" y="{y+4:.2f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">{label}</text>')
    if xlabel:
        out.append(f'<text x="{_WIDTH//2}" y="{_HEIGHT-12}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="12">{xlabel}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{_HEIGHT//2}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="12" '
                   f'transform="rotate(-90 16 {_HEIGHT//2})">{ylabel}</text>')

    for k, (name, xs, ys) in enumerate(series):
        color = _COLORS[k % len(_COLORS)]
        coords = [(px(x), py(y)) for x, y in zip(xs, ys)]
        if len(coords) >= 2:
            path_d = " ".join(f"{x:.2f},{y:.2f}" for x, y in coords)
            out.append(f'<polyline points="{path_d}" fill="none" stroke="{color}" '
                       f'stroke-width="1.5"/>')
        for x, y in coords:
            out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="{color}"/>')
        out.append(f'<text x="{_WIDTH-_MARGIN+6}" y="{_MARGIN+16*k+10}" '
                   f'font-family="sans-serif" font-size="11" fill="{color}">{name}</text>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")


def emit_plots(result_or_report, path: str) -> None:
    """Chart dispatcher: a run result yields energy-vs-time, a sweep report yields
    a log-log distance chart."""
    if hasattr(result_or_report, "timeseries"):
        rows = result_or_report.timeseries
        ts = [r.t for r in rows]
        emit_line_chart(
            [("total", ts, [r.total for r in rows]),
             ("total+dissipated", ts, [r.total + r.dissipation_cum for r in rows])],
            path, title="energy vs time", xlabel="t", ylabel="energy")
    else:
        report = result_or_report
        eps = [r.eps for r in report.rows]
        emit_line_chart(
            [("sup-t L2 phi distance", eps, [r.sup_l2_phi_diff for r in report.rows]),
             ("L2(QT) v distance", eps, [r.l2qt_v_diff for r in report.rows])],
            path, title="distance to the local reference", xlabel="eps", ylabel="distance",
            log_x=True, log_y=True)
