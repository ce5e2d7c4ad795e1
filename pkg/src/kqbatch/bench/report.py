"""Aggregate benchmark CSVs and draw static SVG convergence charts."""
import csv
import math
from collections import defaultdict
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666")
AGG_FIELDS = ("function", "policy", "iteration", "count", "median_regret", "se_regret", "median_batch_size")


def read_results(path):
    """Rows of ``results.csv`` with numeric fields converted to float."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k, v in r.items():
            if k not in ("function", "policy"):
                r[k] = float(v) if v not in ("", "nan") else math.nan
    return rows


def standard_error(values):
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size < 2:
        return 0.0
    return float(np.std(v, ddof=1) / np.sqrt(v.size))


def aggregate(rows):
    """Median and standard error of simple regret per (function, policy, iteration)."""
    groups = defaultdict(list)
    for r in rows:
        groups[(r["function"], r["policy"], int(r["iteration"]))].append(r)
    out = []
    for (fn, pol, it), grp in sorted(groups.items()):
        reg = np.array([g["simple_regret"] for g in grp], dtype=float)
        finite = reg[np.isfinite(reg)]
        bs = np.array([g["batch_size"] for g in grp], dtype=float)
        out.append({
            "function": fn,
            "policy": pol,
            "iteration": it,
            "count": len(grp),
            "median_regret": float(np.median(finite)) if finite.size else math.nan,
            "se_regret": standard_error(finite),
            "median_batch_size": float(np.median(bs)),
        })
    return out


def _nice(v):
    if v == 0 or not math.isfinite(v):
        return "0"
    return f"{v:.3g}"


def svg_line_chart(series, title="", xlabel="iteration", ylabel="simple regret", width=640, height=400):
    """Render ``{label: (xs, ys)}`` as a standalone SVG document string."""
    ml, mr, mt, mb = 70, 170, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys if math.isfinite(y)]
    x0, x1 = (min(xs_all), max(xs_all)) if xs_all else (0.0, 1.0)
    y0, y1 = (min(ys_all), max(ys_all)) if ys_all else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        pad = abs(y0) * 0.1 or 1.0
        y0, y1 = y0 - pad, y1 + pad

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{ml + pw / 2}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
    ]
    for k in range(5):
        yv = y0 + (y1 - y0) * k / 4
        parts.append(f'<line x1="{ml}" x2="{ml + pw}" y1="{sy(yv):.2f}" y2="{sy(yv):.2f}" stroke="#ddd"/>')
        parts.append(
            f'<text x="{ml - 6}" y="{sy(yv) + 4:.2f}" text-anchor="end" font-family="sans-serif" font-size="11">{_nice(yv)}</text>'
        )
    for xv in sorted(set(xs_all)):
        parts.append(
            f'<text x="{sx(xv):.2f}" y="{mt + ph + 16}" text-anchor="middle" font-family="sans-serif" font-size="11">{_nice(xv)}</text>'
        )
    parts.append(
        f'<text x="{ml + pw / 2}" y="{height - 10}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(xlabel)}</text>'
    )
    parts.append(
        f'<text x="16" y="{mt + ph / 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {mt + ph / 2})">{escape(ylabel)}</text>'
    )
    for i, (label, (xs, ys)) in enumerate(series.items()):
        colour = PALETTE[i % len(PALETTE)]
        pts = [(sx(x), sy(y)) for x, y in zip(xs, ys) if math.isfinite(y)]
        if len(pts) > 1:
            path = " ".join(f"{px:.2f},{py:.2f}" for px, py in pts)
            parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="2" points="{path}"/>')
        for px, py in pts:
            parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="3" fill="{colour}"/>')
        ly = mt + 14 + 18 * i
        parts.append(f'<line x1="{ml + pw + 12}" x2="{ml + pw + 32}" y1="{ly}" y2="{ly}" stroke="{colour}" stroke-width="2"/>')
        parts.append(
            f'<text class="legend" x="{ml + pw + 38}" y="{ly + 4}" font-family="sans-serif" font-size="12">{escape(label)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(rows, out_dir):
    """Write ``aggregate.csv`` and one ``<function>.svg`` chart per function; returns the paths."""
    if not rows:
        raise ValueError("no records to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    agg = aggregate(rows)
    paths = [out / "aggregate.csv"]
    with open(paths[0], "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=AGG_FIELDS, lineterminator="\n")
        w.writeheader()
        for a in agg:
            w.writerow({k: (a[k] if isinstance(a[k], str) else repr(a[k])) for k in AGG_FIELDS})
    by_fn = defaultdict(lambda: defaultdict(lambda: ([], [])))
    for a in agg:
        xs, ys = by_fn[a["function"]][a["policy"]]
        xs.append(a["iteration"])
        ys.append(a["median_regret"])
    for fn, series in by_fn.items():
        p = out / f"{fn}.svg"
        p.write_text(svg_line_chart(dict(series), title=f"{fn}: median simple regret"))
        paths.append(p)
    return paths
