"""Standalone SVG output for the grid heatmaps and the 2D basin maps.

Everything is plain string building with fixed number formatting, so the same
input data always produces the same bytes.
"""
import json
from html import escape

import numpy as np

# viridis sampled at 9 points
_RAMP = [(68, 1, 84), (71, 44, 122), (59, 81, 139), (44, 113, 142), (33, 144, 141),
         (39, 173, 129), (92, 200, 99), (170, 220, 50), (253, 231, 37)]

BASIN_COLORS = {"global": "#f4a259", "local": "#5b8e7d", "other": "#8cb4d2",
                "unconverged": "#bbbbbb"}

CELL = 48
MARGIN_LEFT = 70
MARGIN_TOP = 50
LEGEND_W = 18


def ramp_color(t):
    """Map t in [0, 1] onto the color ramp; returns ``#rrggbb``."""
    t = min(max(float(t), 0.0), 1.0) * (len(_RAMP) - 1)
    i = min(int(t), len(_RAMP) - 2)
    w = t - i
    rgb = [round(a + (b - a) * w) for a, b in zip(_RAMP[i], _RAMP[i + 1])]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _num(x):
    return format(x, ".4g")


def _header(width, height, manifest):
    out = ['<?xml version="1.0" encoding="UTF-8"?>\n',
           f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif">\n']
    if manifest is not None:
        blob = json.dumps(manifest, sort_keys=True).replace("--", "- -")
        out.append(f"<!-- manifest: {blob} -->\n")
    out.append(f'<rect width="{width}" height="{height}" fill="white"/>\n')
    return out


def heatmap_svg(values, row_labels, col_labels, title, vmin, vmax, manifest=None,
                row_title="m", col_title="s"):
    """Grid of colored cells with the value printed in each and a labeled color bar.

    ``values[i][j]`` is drawn in row i (top to bottom) and column j.
    """
    values = np.asarray(values, dtype=float)
    nr, nc = values.shape
    grid_w, grid_h = nc * CELL, nr * CELL
    width = MARGIN_LEFT + grid_w + 30 + LEGEND_W + 80
    height = MARGIN_TOP + grid_h + 50
    span = vmax - vmin if vmax > vmin else 1.0
    out = _header(width, height, manifest)
    out.append(f'<text x="{MARGIN_LEFT}" y="22" font-size="15">{escape(title)}</text>\n')
    for i in range(nr):
        for j in range(nc):
            v = values[i, j]
            x, y = MARGIN_LEFT + j * CELL, MARGIN_TOP + i * CELL
            if not np.isfinite(v):
                # missing cell
                out.append(f'<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" '
                           f'fill="{BASIN_COLORS["unconverged"]}"/>\n')
                continue
            t = (v - vmin) / span
            out.append(f'<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" '
                       f'fill="{ramp_color(t)}"/>\n')
            ink = "black" if t > 0.6 else "white"
            out.append(f'<text x="{x + CELL // 2}" y="{y + CELL // 2 + 4}" font-size="10" '
                       f'text-anchor="middle" fill="{ink}">{_num(v)}</text>\n')
    for i, lab in enumerate(row_labels):
        out.append(f'<text x="{MARGIN_LEFT - 6}" y="{MARGIN_TOP + i * CELL + CELL // 2 + 4}" '
                   f'font-size="11" text-anchor="end">{escape(str(lab))}</text>\n')
    for j, lab in enumerate(col_labels):
        out.append(f'<text x="{MARGIN_LEFT + j * CELL + CELL // 2}" y="{MARGIN_TOP + grid_h + 16}" '
                   f'font-size="11" text-anchor="middle">{escape(str(lab))}</text>\n')
    out.append(f'<text x="14" y="{MARGIN_TOP + grid_h // 2}" font-size="12">{escape(row_title)}</text>\n')
    out.append(f'<text x="{MARGIN_LEFT + grid_w // 2}" y="{MARGIN_TOP + grid_h + 36}" '
               f'font-size="12" text-anchor="middle">{escape(col_title)}</text>\n')
    # color bar, top = vmax
    lx = MARGIN_LEFT + grid_w + 30
    steps = 32
    sh = grid_h / steps
    for k in range(steps):
        t = 1.0 - (k + 0.5) / steps
        out.append(f'<rect x="{lx}" y="{MARGIN_TOP + k * sh:.2f}" width="{LEGEND_W}" '
                   f'height="{sh + 0.5:.2f}" fill="{ramp_color(t)}"/>\n')
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = MARGIN_TOP + (1.0 - frac) * grid_h
        out.append(f'<line x1="{lx + LEGEND_W}" y1="{y:.2f}" x2="{lx + LEGEND_W + 4}" '
                   f'y2="{y:.2f}" stroke="black"/>\n')
        out.append(f'<text x="{lx + LEGEND_W + 7}" y="{y + 4:.2f}" font-size="10">'
                   f'{_num(vmin + frac * span)}</text>\n')
    out.append("</svg>\n")
    return "".join(out)


METRICS = {
    "mean_objective_error": "mean objective error",
    "failure_count": "failure count",
    "mean_rel_recovery_error": "mean relative recovery error",
}


def grid_heatmaps(cells, manifest=None):
    """One SVG per (metric, method) from aggregate rows.

    `cells` maps ``(method, m, mu)`` to a dict with the aggregate columns (the
    shape returned by ``experiments.read_aggregate``). All methods share one
    color scale per metric. Returns ``{filename: svg_text}``.
    """
    methods = [m for m in ("iht", "noisy", "parametric") if any(k[0] == m for k in cells)]
    ms = sorted({k[1] for k in cells})
    mus = sorted({k[2] for k in cells})
    s_of = {k[2]: v["s"] for k, v in cells.items()}
    files = {}
    for metric, label in METRICS.items():
        allv = [float(v[metric]) for v in cells.values()]
        vmin, vmax = min(allv), max(allv)
        for method in methods:
            vals = [[float(cells[(method, m, mu)][metric]) if (method, m, mu) in cells
                     else float("nan") for mu in mus] for m in ms]
            files[f"heatmap_{metric}_{method}.svg"] = heatmap_svg(
                vals, ms, [s_of[mu] for mu in mus], f"{method}: {label}", vmin, vmax, manifest)
    return files


def basin_map_svg(labels, grid, fixed_points, manifest=None, size=486, title=None):
    """Color each grid start by the fixed point it converges to.

    `fixed_points` is a list of dicts with ``location`` and ``is_global``;
    ``labels[i, j]`` refers to the start ``(grid[i], grid[j])``.
    """
    labels = np.asarray(labels)
    k = labels.shape[0]
    lo, hi = float(grid[0]), float(grid[-1])
    pad = 40
    cell = size / k
    out = _header(size + 2 * pad, size + 2 * pad, manifest)
    if title:
        out.append(f'<text x="{pad}" y="24" font-size="14">{escape(title)}</text>\n')

    def colour(lab):
        if lab < 0:
            return BASIN_COLORS["unconverged"]
        if len(fixed_points) == 2:
            return BASIN_COLORS["global" if fixed_points[lab]["is_global"] else "local"]
        return BASIN_COLORS["global"] if fixed_points[lab]["is_global"] else BASIN_COLORS["other"]

    for i in range(k):
        for j in range(k):
            x = pad + i * cell
            y = pad + (k - 1 - j) * cell
            out.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{cell + 0.05:.2f}" '
                       f'height="{cell + 0.05:.2f}" fill="{colour(int(labels[i, j]))}"/>\n')
    to_px = lambda v: (v - lo) / (hi - lo) * (size - cell) + cell / 2
    for fp in fixed_points:
        px = pad + to_px(fp["location"][0])
        py = pad + size - to_px(fp["location"][1])
        if fp["is_global"]:
            out.append(f'<path d="M{px - 7:.2f},{py - 7:.2f} L{px + 7:.2f},{py + 7:.2f} '
                       f'M{px - 7:.2f},{py + 7:.2f} L{px + 7:.2f},{py - 7:.2f}" '
                       f'stroke="#c00000" stroke-width="3"/>\n')
        else:
            out.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="6" fill="none" '
                       f'stroke="black" stroke-width="2"/>\n')
    out.append(f'<rect x="{pad}" y="{pad}" width="{size}" height="{size}" fill="none" '
               f'stroke="black"/>\n')
    for v in (lo, 0.0, hi):
        px = pad + to_px(v)
        out.append(f'<text x="{px:.2f}" y="{pad + size + 16}" font-size="11" '
                   f'text-anchor="middle">{_num(v)}</text>\n')
        out.append(f'<text x="{pad - 6}" y="{pad + size - to_px(v) + 4:.2f}" font-size="11" '
                   f'text-anchor="end">{_num(v)}</text>\n')
    out.append("</svg>\n")
    return "".join(out)
