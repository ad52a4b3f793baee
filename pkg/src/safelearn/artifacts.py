"""File writers for trajectories, reports and the built-in SVG plot."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

SUMMARY_SCHEMA_VERSION = 1
TRAJECTORY_COLUMNS = (
    "t", "x1", "x2", "x3", "ubar1", "ubar2", "u1", "u2",
    "status", "achieved_delta", "min_clearance", "violated",
)
SUMMARY_KEYS = (
    "schema_version", "command", "config", "seed", "algorithm", "runs",
)
RUN_KEYS = (
    "algorithm", "seed", "episode", "steps", "reached_goal", "min_goal_distance",
    "min_clearance", "penetration_steps", "feasible_steps", "feasible_violations",
    "violation_steps", "relaxed_steps", "infeasible_steps", "failed_steps", "violation_rate",
)


def _num(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def jsonable(obj):
    """Convert numpy values and non-finite floats into plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def dumps(doc) -> str:
    return json.dumps(jsonable(doc), indent=2, sort_keys=True) + "\n"


def write_json(path: Path, doc) -> None:
    Path(path).write_text(dumps(doc), encoding="utf-8")


def trajectory_csv(log) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(TRAJECTORY_COLUMNS)
    for r in log.records:
        w.writerow([
            r.t, *(_num(v) for v in r.x), *(_num(v) for v in r.ubar), *(_num(v) for v in r.u),
            r.status, "" if r.achieved_delta is None else _num(r.achieved_delta),
            _num(r.min_clearance), int(r.violated),
        ])
    return buf.getvalue()


def write_trajectory_csv(path: Path, log) -> None:
    Path(path).write_bytes(trajectory_csv(log).encode("utf-8"))


def region_count_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(("t", "regions"))
    w.writerows(rows)
    return buf.getvalue()


def validate_summary(doc: dict) -> None:
    """Raise ``ValueError`` unless ``doc`` follows the summary schema."""
    if doc.get("schema_version") != SUMMARY_SCHEMA_VERSION:
        raise ValueError(f"summary schema_version must be {SUMMARY_SCHEMA_VERSION}")
    missing = [k for k in SUMMARY_KEYS if k not in doc]
    if missing:
        raise ValueError(f"summary is missing keys {missing}")
    if not isinstance(doc["runs"], dict) or not doc["runs"]:
        raise ValueError("summary.runs must be a non-empty object")
    for name, run in doc["runs"].items():
        missing = [k for k in RUN_KEYS if k not in run]
        if missing:
            raise ValueError(f"summary.runs.{name} is missing keys {missing}")
        if not isinstance(run["reached_goal"], bool):
            raise ValueError(f"summary.runs.{name}.reached_goal must be boolean")


# ----------------------------------------------------------------------- SVG

_COLORS = {"filtered": "#1f77b4", "unfiltered": "#d62728"}


def trajectory_svg(scenario, logs: dict, size: int = 640, margin: float = 3.0) -> str:
    """Standalone SVG with obstacles, offset discs, start/goal and trajectories."""
    pts = [np.asarray(scenario.start[:2], dtype=float), np.asarray(scenario.goal, dtype=float)]
    for log in logs.values():
        pts += [r.x[:2] for r in log.records] + [r.x_next[:2] for r in log.records[-1:]]
    for ob in scenario.obstacles:
        c = np.asarray(ob.center, dtype=float)
        pad = ob.radius + scenario.r_o
        pts += [c - pad, c + pad]
    pts = np.vstack(pts)
    lo = pts.min(axis=0) - margin
    hi = pts.max(axis=0) + margin
    scale = size / max(hi - lo)
    width, height = (hi - lo) * scale

    def xy(p):
        return f"{(p[0] - lo[0]) * scale:.3f}", f"{(hi[1] - p[1]) * scale:.3f}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.3f} {height:.3f}">',
        f'<rect width="{width:.3f}" height="{height:.3f}" fill="white"/>',
    ]
    for ob in scenario.obstacles:
        cx, cy = xy(ob.center)
        out.append(
            f'<circle cx="{cx}" cy="{cy}" r="{(ob.radius + scenario.r_o) * scale:.3f}" '
            'fill="none" stroke="#888" stroke-dasharray="4 3"/>'
        )
        out.append(f'<circle cx="{cx}" cy="{cy}" r="{ob.radius * scale:.3f}" fill="#555" fill-opacity="0.6"/>')
    for name, log in logs.items():
        path = [r.x[:2] for r in log.records] + [r.x_next[:2] for r in log.records[-1:]]
        coords = " ".join(",".join(xy(p)) for p in path)
        color = _COLORS.get(name, "#2ca02c")
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5">'
                   f"<title>{name}</title></polyline>")
    sx, sy = xy(scenario.start[:2])
    gx, gy = xy(scenario.goal)
    out.append(f'<circle cx="{sx}" cy="{sy}" r="5" fill="#2ca02c"><title>start</title></circle>')
    out.append(f'<rect x="{float(gx) - 5:.3f}" y="{float(gy) - 5:.3f}" width="10" height="10" fill="#ff7f0e">'
               "<title>goal</title></rect>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
