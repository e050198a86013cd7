"""Deterministic report emission: CSV, summary JSON, plan JSON and SVG charts.

CSV files are the canonical experiment output. All floats are rendered with
``repr``-exact shortest form so identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

CSV_COLUMNS = (
    "experiment",
    "param",
    "value",
    "planner",
    "theta",
    "travel",
    "queue",
    "charge",
    "total_chargers",
    "ev_avg_cost",
    "x",
    "y",
    "gap",
    "feasible",
    "converged",
    "note",
)
SCHEMA_VERSION = 1


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if np.isnan(value):
            return "nan"
        return repr(float(value))
    if isinstance(value, dict):
        return json.dumps(
            {str(k): round(float(v), 6) for k, v in sorted(value.items())},
            separators=(",", ":"),
        )
    return str(value)


def write_csv(path, rows):
    """Write report rows with the fixed column schema; header-only when empty.

    Wall-clock runtimes stay off the canonical CSV (they would break
    byte-level reproducibility); read them from the row objects instead.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(getattr(row, column)) for column in CSV_COLUMNS])
    return path


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return _jsonable(value.item())
    if isinstance(value, float):
        return None if np.isnan(value) else value
    return value


def write_summary(path, summary):
    """Write the experiment summary JSON with its schema version."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"schema_version": SCHEMA_VERSION}
    doc.update(_jsonable(summary))
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def plan_result_to_dict(result, catalog):
    """JSON-ready view of one plan: design, arrivals, profits, flows, costs."""
    net = catalog.network
    flows = result.equilibrium.flows
    travel, queue, charge = result.components
    nodes = []
    for i, node in enumerate(net.nodes):
        nodes.append(
            {
                "id": int(node.id),
                "chargers": float(result.design.x[i]),
                "price": float(result.design.y[i]),
                "arrivals": float(flows.arrivals[i]),
                "profit_gap": float(result.report.profit_gaps[i]),
            }
        )
    links = [
        {
            "tail": int(link.tail),
            "head": int(link.head),
            "ncd_flow": float(flows.ncd_link[j]),
            "ev_flow": float(flows.ev_link[j]),
        }
        for j, link in enumerate(net.links)
    ]
    return {
        "schema_version": SCHEMA_VERSION,
        "provenance": result.provenance,
        "social_cost": float(result.social_cost),
        "components": {
            "travel": float(travel),
            "queue": float(queue),
            "charge": float(charge),
        },
        "relaxed_social_cost": _jsonable(result.relaxed_social_cost),
        "converged": bool(result.converged),
        "total_chargers": float(np.sum(result.design.x)),
        "budget": int(result.report.budget),
        "violations": list(result.report.violations),
        "nodes": nodes,
        "links": links,
    }


def write_plan(path, result, catalog):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(plan_result_to_dict(result, catalog), indent=2, sort_keys=True)
        + "\n"
    )
    return path


def _svg_coords(values, lo, hi, size, margin, invert=False):
    span = hi - lo if hi > lo else 1.0
    out = []
    for v in values:
        frac = (v - lo) / span
        if invert:
            frac = 1.0 - frac
        out.append(margin + frac * (size - 2 * margin))
    return out


_SERIES_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b")


def write_svg_chart(path, series, title, xlabel, ylabel, width=640, height=420):
    """Minimal line chart: ``series`` maps label -> (xs, ys)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    margin = 60.0
    points = [
        (float(x), float(y))
        for xs, ys in series.values()
        for x, y in zip(xs, ys)
        if np.isfinite(x) and np.isfinite(y)
    ]
    if points:
        x_lo, x_hi = min(p[0] for p in points), max(p[0] for p in points)
        y_lo, y_hi = min(p[1] for p in points), max(p[1] for p in points)
    else:
        x_lo = y_lo = 0.0
        x_hi = y_hi = 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:g}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="16">{title}</text>',
        f'<line x1="{margin:g}" y1="{height - margin:g}" x2="{width - margin:g}" '
        f'y2="{height - margin:g}" stroke="black"/>',
        f'<line x1="{margin:g}" y1="{margin:g}" x2="{margin:g}" '
        f'y2="{height - margin:g}" stroke="black"/>',
        f'<text x="{width / 2:g}" y="{height - 16:g}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{xlabel}</text>',
        f'<text x="18" y="{height / 2:g}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 18 {height / 2:g})">{ylabel}</text>',
        f'<text x="{margin:g}" y="{height - margin + 16:g}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="10">{x_lo:g}</text>',
        f'<text x="{width - margin:g}" y="{height - margin + 16:g}" '
        f'text-anchor="middle" font-family="sans-serif" font-size="10">{x_hi:g}</text>',
        f'<text x="{margin - 6:g}" y="{height - margin:g}" text-anchor="end" '
        f'font-family="sans-serif" font-size="10">{y_lo:g}</text>',
        f'<text x="{margin - 6:g}" y="{margin:g}" text-anchor="end" '
        f'font-family="sans-serif" font-size="10">{y_hi:g}</text>',
    ]
    for k, (label, (xs, ys)) in enumerate(sorted(series.items())):
        colour = _SERIES_COLOURS[k % len(_SERIES_COLOURS)]
        pairs = [
            (x, y) for x, y in zip(xs, ys) if np.isfinite(x) and np.isfinite(y)
        ]
        if pairs:
            px = _svg_coords([p[0] for p in pairs], x_lo, x_hi, width, margin)
            py = _svg_coords(
                [p[1] for p in pairs], y_lo, y_hi, height, margin, invert=True
            )
            joined = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(px, py))
            parts.append(
                f'<polyline fill="none" stroke="{colour}" stroke-width="2" '
                f'points="{joined}"/>'
            )
        ly = margin + 16 * k
        parts.append(
            f'<rect x="{width - margin - 90:g}" y="{ly - 9:g}" width="12" '
            f'height="12" fill="{colour}"/>'
        )
        parts.append(
            f'<text x="{width - margin - 72:g}" y="{ly + 2:g}" '
            f'font-family="sans-serif" font-size="12">{label}</text>'
        )
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")
    return path


def emit_reports(outcome, out_dir):
    """Write the CSV, summary, plan JSONs and chart for one experiment."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kind = outcome.spec.kind
    written = [
        write_csv(out_dir / f"{kind}.csv", outcome.rows),
        write_summary(out_dir / f"{kind}_summary.json", outcome.summary),
    ]

    if outcome.results:
        scenario = outcome.spec.resolve()
        from .paths import build_catalog

        catalog = build_catalog(
            scenario.network,
            scenario.demands,
            k=outcome.spec.k_routes,
            candidate_stations=scenario.candidate_stations,
        )
        for name, result in sorted(outcome.results.items()):
            written.append(
                write_plan(out_dir / f"plan_{name}.json", result, catalog)
            )

    series = {}
    for row in outcome.rows:
        if row.feasible and np.isfinite(row.theta):
            series.setdefault(row.planner, ([], []))
            series[row.planner][0].append(row.value)
            series[row.planner][1].append(row.theta)
    if series:
        xlabel = outcome.rows[0].param if outcome.rows else "value"
        written.append(
            write_svg_chart(
                out_dir / f"{kind}.svg",
                series,
                title=f"social cost vs {xlabel}",
                xlabel=xlabel,
                ylabel="social cost",
            )
        )
    return written
