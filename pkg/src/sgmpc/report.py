"""Deterministic report emission: CSV, JSON, and hand-rolled SVG line plots.

Every artifact embeds the experiment's config hash and seed and contains no
timestamps, so re-running with the same (config, seed) pair reproduces the
files byte for byte.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np


def config_hash(config: dict) -> str:
    """Stable short hash of a flat config mapping."""
    canon = "\n".join(f"{key}={config[key]!r}" for key in sorted(config))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))  # shortest round-trip form
    return str(value)


def write_csv(path, header, rows, meta: dict | None = None) -> None:
    """CSV with `# key=value` comment lines up front (hash, seed, ...)."""
    lines = []
    for key in sorted(meta or {}):
        lines.append(f"# {key}={_fmt((meta or {})[key])}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# SVG line plots

_PALETTE = ("#4c72b0", "#c44e52", "#55a868", "#8172b2", "#937860", "#64b5cd")
_W, _H = 860, 520
_ML, _MR, _MT, _MB = 72, 200, 48, 58  # margins: left, right (legend), top, bottom


def _ticks(lo: float, hi: float, n: int = 5):
    """Round tick positions covering [lo, hi]."""
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(n, 1)
    mag = 10.0 ** np.floor(np.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = np.ceil(lo / step) * step
    vals = np.arange(start, hi + 0.5 * step, step)
    return [float(v) for v in vals]


def svg_line_plot(
    path,
    series,
    title: str = "",
    x_label: str = "",
    y_label: str = "",
    meta: dict | None = None,
) -> None:
    """Minimal multi-series line plot. series = [(name, xs, ys), ...]."""
    if not series:
        raise ValueError("at least one series required")
    xs_all = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    ys_all = np.concatenate([np.asarray(s[2], dtype=float) for s in series])
    x_lo, x_hi = float(xs_all.min()), float(xs_all.max())
    y_lo, y_hi = float(ys_all.min()), float(ys_all.max())
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    pad = 0.06 * (y_hi - y_lo) if y_hi > y_lo else max(1e-12, 0.1 * abs(y_hi))
    y_lo, y_hi = y_lo - pad, y_hi + pad

    pw = _W - _ML - _MR
    ph = _H - _MT - _MB

    def px(x):
        return _ML + pw * (x - x_lo) / (x_hi - x_lo)

    def py(y):
        return _MT + ph * (1.0 - (y - y_lo) / (y_hi - y_lo))

    meta_str = " ".join(f"{k}={_fmt((meta or {})[k])}" for k in sorted(meta or {}))
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_W} {_H}" '
        f'font-family="sans-serif" font-size="13">',
        f"<desc>{meta_str}</desc>",
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_ML + pw / 2:.1f}" y="24" text-anchor="middle" '
        f'font-size="16">{title}</text>',
    ]
    # axes
    out.append(
        f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" '
        f'stroke="#222" stroke-width="1"/>'
    )
    for xv in _ticks(x_lo, x_hi):
        out.append(
            f'<line x1="{px(xv):.2f}" y1="{_MT + ph}" x2="{px(xv):.2f}" '
            f'y2="{_MT + ph + 5}" stroke="#222"/>'
        )
        out.append(
            f'<text x="{px(xv):.2f}" y="{_MT + ph + 20}" '
            f'text-anchor="middle">{xv:g}</text>'
        )
    for yv in _ticks(y_lo, y_hi):
        out.append(
            f'<line x1="{_ML - 5}" y1="{py(yv):.2f}" x2="{_ML}" '
            f'y2="{py(yv):.2f}" stroke="#222"/>'
        )
        out.append(
            f'<text x="{_ML - 8}" y="{py(yv) + 4:.2f}" '
            f'text-anchor="end">{yv:g}</text>'
        )
        out.append(
            f'<line x1="{_ML}" y1="{py(yv):.2f}" x2="{_ML + pw}" '
            f'y2="{py(yv):.2f}" stroke="#ddd" stroke-width="0.5"/>'
        )
    out.append(
        f'<text x="{_ML + pw / 2:.1f}" y="{_H - 14}" '
        f'text-anchor="middle">{x_label}</text>'
    )
    out.append(
        f'<text x="20" y="{_MT + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 20 {_MT + ph / 2:.1f})">{y_label}</text>'
    )
    # series + legend
    for i, (name, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(
            f"{px(float(x)):.2f},{py(float(y)):.2f}" for x, y in zip(xs, ys)
        )
        out.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="1.8"/>'
        )
        ly = _MT + 14 + 22 * i
        lx = _ML + pw + 16
        out.append(
            f'<line x1="{lx}" y1="{ly}" x2="{lx + 26}" y2="{ly}" '
            f'stroke="{color}" stroke-width="3"/>'
        )
        out.append(f'<text x="{lx + 32}" y="{ly + 4}">{name}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def records_to_rows(records):
    """Flatten TrialRecords to per-step CSV rows.

    Columns: trial, t, x..., u..., y..., violation (u/y empty on the final
    step of each trial, filled with nan)."""
    rows = []
    for idx, rec in enumerate(records):
        t_len = rec.inputs.shape[0]
        for t in range(t_len + 1):
            u = rec.inputs[t] if t < t_len else np.full(rec.inputs.shape[1], np.nan)
            y = (
                rec.measurements[t]
                if t < t_len
                else np.full(rec.measurements.shape[1], np.nan)
            )
            rows.append(
                [idx, t]
                + list(rec.states[t])
                + list(u)
                + list(y)
                + [bool(rec.violations[t])]
            )
    return rows


def records_header(n_x: int, n_u: int, n_y: int):
    return (
        ["trial", "t"]
        + [f"x{i}" for i in range(n_x)]
        + [f"u{i}" for i in range(n_u)]
        + [f"y{i}" for i in range(n_y)]
        + ["violation"]
    )
