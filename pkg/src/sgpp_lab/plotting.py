"""Deterministic SVG rendering of trajectory CSV files.

Hand-written SVG 1.1 so identical inputs give identical bytes; no imaging
dependency.  One file per experiment id.
"""

from __future__ import annotations

import csv
import re
from collections import OrderedDict
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .errors import SchemaMismatch

__all__ = ["csv_header", "read_trajectories", "render_svg", "render_plot"]

FIXED_HEAD = ["experiment_id", "method", "trajectory_id", "step", "t"]
FIXED_TAIL = ["normal_distance", "sigma_p", "eta", "seed_master", "seed_stream"]
SIZE = 480
MARGIN = 0.25
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2")


def csv_header(dim):
    return FIXED_HEAD + [f"x{i}" for i in range(dim)] + FIXED_TAIL


def _dim_from_header(header):
    if header[:5] != FIXED_HEAD or header[-5:] != FIXED_TAIL:
        raise SchemaMismatch(f"unexpected trajectory header: {','.join(header)}")
    coords = header[5:-5]
    if not coords or coords != [f"x{i}" for i in range(len(coords))]:
        raise SchemaMismatch(f"unexpected coordinate columns: {coords}")
    return len(coords)


def read_trajectories(csv_path):
    """``{experiment_id: {"method": str, "paths": {trajectory_id: (K, D) array}}}``.

    Ordered by first appearance.
    """
    out = OrderedDict()
    with open(csv_path, newline="") as fh:
        rows = csv.reader(fh)
        try:
            header = next(rows)
        except StopIteration:
            raise SchemaMismatch(f"{csv_path} is empty") from None
        dim = _dim_from_header(header)
        for row in rows:
            if len(row) != len(header):
                raise SchemaMismatch(f"row has {len(row)} fields, expected {len(header)}")
            exp = out.setdefault(row[0], {"method": row[1], "paths": OrderedDict()})
            try:
                pt = [float(v) for v in row[5:5 + dim]]
                tid = int(row[2])
            except ValueError as exc:
                raise SchemaMismatch(str(exc)) from None
            exp["paths"].setdefault(tid, []).append(pt)
    for exp in out.values():
        exp["paths"] = OrderedDict((k, np.array(v)) for k, v in exp["paths"].items())
    return out


def _view(outline):
    if outline:
        allpts = np.concatenate(outline)
        lo, hi = allpts[:, :2].min(axis=0), allpts[:, :2].max(axis=0)
    else:
        lo, hi = np.array([-1.0, -1.0]), np.array([1.0, 1.0])
    span = float(max(hi - lo)) * (1 + 2 * MARGIN) or 2.0
    mid = (lo + hi) / 2
    return mid - span / 2, span


def _to_px(P, origin, span):
    P = np.clip(P[:, :2], origin - 0.02 * span, origin + 1.02 * span)
    x = (P[:, 0] - origin[0]) / span * SIZE
    y = SIZE - (P[:, 1] - origin[1]) / span * SIZE
    return np.stack([x, y], axis=1)


def _polyline(px, style):
    pts = " ".join(f"{a:.3f},{b:.3f}" for a, b in px)
    return f'<polyline points="{pts}" {style}/>'


def render_svg(outline, paths, title="", polylines=True):
    """SVG text for a manifold outline and a dict of (K, D) paths."""
    origin, span = _view(outline)
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SIZE}" height="{SIZE}" '
        f'viewBox="0 0 {SIZE} {SIZE}">',
        f'<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white"/>',
    ]
    if title:
        parts.append(f'<title>{escape(title)}</title>')
        parts.append(f'<text x="8" y="18" font-family="sans-serif" font-size="12">{escape(title)}</text>')
    for line in outline:
        parts.append(_polyline(_to_px(line, origin, span), 'fill="none" stroke="black" stroke-width="2"'))
    for i, (tid, P) in enumerate(paths.items()):
        color = COLORS[i % len(COLORS)]
        px = _to_px(P, origin, span)
        if polylines and len(px) > 1:
            parts.append(_polyline(px, f'fill="none" stroke="{color}" stroke-width="0.8" stroke-opacity="0.6"'))
        x, y = px[-1]
        parts.append(f'<circle cx="{x:.3f}" cy="{y:.3f}" r="2.5" fill="{color}"><title>{tid}</title></circle>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _slug(text):
    return re.sub(r"[^A-Za-z0-9._=-]+", "_", text).strip("_")


def render_plot(csv_path, out_dir, outline=(), polylines=True):
    """Write one SVG per experiment id in ``csv_path``; returns the paths.

    With no trajectories at all, writes a single outline-only file.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = read_trajectories(csv_path)
    written = []
    if not data:
        p = out_dir / "plot_empty.svg"
        p.write_bytes(render_svg(outline, {}, "no trajectories", polylines).encode())
        return [p]
    for exp_id, exp in data.items():
        p = out_dir / f"plot_{_slug(exp_id)}.svg"
        p.write_bytes(render_svg(outline, exp["paths"], exp_id, polylines).encode())
        written.append(p)
    return written
