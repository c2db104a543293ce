"""CSV, SVG and JSON output for episode records and summaries."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from types import SimpleNamespace
from typing import Iterable, Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from crowdnav.evaluation import EpisodeRecord, MetricsSummary, VipSeries

EPISODE_COLUMNS = ("seed", "task", "outcome", "steps", "wall_time", "path_length")
SUMMARY_COLUMNS = (
    "policy",
    "episodes",
    "success_rate",
    "collision_rate",
    "timeout_rate",
    "mean_time_to_goal",
    "mean_path_length",
)
CURVE_COLUMNS = ("episode", "reward", "success", "obstacles", "epsilon")
SERIES_COLUMNS = ("time", "d_rp", "v_robot", "v_vip", "flag")


def _open_for_write(path):
    path = Path(path)
    try:
        if path.parent != Path(""):
            path.parent.mkdir(parents=True, exist_ok=True)
        return open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _fmt(x) -> str:
    # repr round-trips floats exactly
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_rows(path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_episodes_csv(path, records: Sequence[EpisodeRecord]) -> None:
    """One row per episode; enough to recompute :class:`MetricsSummary` exactly."""
    _write_rows(
        path,
        EPISODE_COLUMNS,
        ((r.seed, r.task_kind, r.outcome, r.steps, r.wall_time, r.path_length) for r in records),
    )


def read_episodes_csv(path) -> list:
    """Rows of :func:`write_episodes_csv` as lightweight objects accepted by ``summarize``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [
        SimpleNamespace(
            seed=int(r["seed"]),
            task_kind=r["task"],
            outcome=r["outcome"],
            steps=int(r["steps"]),
            wall_time=float(r["wall_time"]),
            path_length=float(r["path_length"]),
        )
        for r in rows
    ]


def write_summary_csv(path, summaries: Mapping[str, MetricsSummary]) -> None:
    """One row per policy. Time and path means cover successful episodes only."""
    _write_rows(
        path,
        SUMMARY_COLUMNS,
        ([name] + [s.as_row()[c] for c in SUMMARY_COLUMNS[1:]] for name, s in summaries.items()),
    )


def write_curve_csv(path, curve: Sequence[Mapping]) -> None:
    _write_rows(path, CURVE_COLUMNS, ([row[c] for c in CURVE_COLUMNS] for row in curve))


def write_series_csv(path, series: VipSeries, flags: Sequence[int]) -> None:
    _write_rows(path, SERIES_COLUMNS, zip(series.time, series.d_rp, series.v_robot, series.v_vip, flags))


# --- SVG -------------------------------------------------------------------

_PED_COLOURS = ("#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _points(xy: np.ndarray, to_px) -> str:
    return " ".join(f"{a:.2f},{b:.2f}" for a, b in (to_px(p) for p in xy))


def trajectory_svg(record: EpisodeRecord, scale: float = 40.0, margin: float = 20.0) -> str:
    """Top-down plot: obstacles, pedestrian paths labelled with start/end times, robot path, goal."""
    xmin, ymin, xmax, ymax = record.bounds
    w = (xmax - xmin) * scale + 2 * margin
    h = (ymax - ymin) * scale + 2 * margin

    def to_px(p):
        # flip y so +y points up on screen
        return margin + (p[0] - xmin) * scale, margin + (ymax - p[1]) * scale

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" viewBox="0 0 {w:.2f} {h:.2f}">',
        f"<title>seed {record.seed} {escape(record.task_kind)} {escape(record.outcome)}</title>",
        '<g class="obstacles" stroke="#000" fill="#999">',
    ]
    for x0, y0, x1, y1 in record.walls:
        (a, b), (c, d) = to_px((x0, y0)), to_px((x1, y1))
        out.append(f'<line x1="{a:.2f}" y1="{b:.2f}" x2="{c:.2f}" y2="{d:.2f}" stroke-width="2"/>')
    for cx, cy, r in record.circles:
        a, b = to_px((cx, cy))
        out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="{r * scale:.2f}"/>')
    out.append("</g>")

    out.append('<g class="pedestrians" fill="none" stroke-width="1">')
    t0, t1 = float(record.times[0]), float(record.times[-1])
    for j, pid in enumerate(record.ped_ids):
        colour = _PED_COLOURS[j % len(_PED_COLOURS)]
        path = record.ped_positions[:, j, :]
        out.append(f'<polyline class="ped" data-id="{int(pid)}" stroke="{colour}" points="{_points(path, to_px)}"/>')
        for p, t in ((path[0], t0), (path[-1], t1)):
            a, b = to_px(p)
            out.append(f'<text x="{a + 3:.2f}" y="{b - 3:.2f}" font-size="9" fill="{colour}">{t:.1f}s</text>')
    out.append("</g>")

    a, b = to_px(record.end_goal)
    out.append(f'<circle class="goal" cx="{a:.2f}" cy="{b:.2f}" r="{0.3 * scale:.2f}" fill="none" stroke="#d62728" stroke-width="2"/>')
    out.append(
        f'<polyline class="robot" fill="none" stroke="#ff7f0e" stroke-width="2" '
        f'points="{_points(record.robot_pose[:, :2], to_px)}"/>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, record: EpisodeRecord) -> None:
    text = trajectory_svg(record)
    with _open_for_write(path) as fh:
        fh.write(text)


# --- JSON records ----------------------------------------------------------

_ARRAYS = (
    "times",
    "robot_pose",
    "robot_velocity",
    "flags",
    "goal_none",
    "vip_position",
    "vip_velocity",
    "d_rp",
    "rewards",
    "reward_terms",
    "ped_ids",
    "ped_positions",
    "walls",
    "circles",
)


def _clean(x):
    # JSON has no NaN; store null
    if isinstance(x, list):
        return [_clean(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def record_to_dict(record: EpisodeRecord) -> dict:
    d = {
        "schema": 1,
        "seed": record.seed,
        "task_kind": record.task_kind,
        "dt": record.dt,
        "outcome": record.outcome,
        "end_goal": list(record.end_goal),
        "bounds": list(record.bounds),
        "wall_time": record.wall_time,
        "path_length": record.path_length,
    }
    for name in _ARRAYS:
        arr = getattr(record, name)
        d[name] = {"shape": list(arr.shape), "dtype": arr.dtype.name, "data": _clean(arr.ravel().tolist())}
    return d


def record_from_dict(d: Mapping) -> EpisodeRecord:
    if d.get("schema") != 1:
        raise ValueError(f"unsupported record schema {d.get('schema')!r}")
    arrays = {}
    for name in _ARRAYS:
        a = d[name]
        data = [math.nan if v is None else v for v in a["data"]]
        arrays[name] = np.array(data, dtype=a["dtype"]).reshape(a["shape"])
    return EpisodeRecord(
        seed=int(d["seed"]),
        task_kind=d["task_kind"],
        dt=float(d["dt"]),
        outcome=d["outcome"],
        end_goal=tuple(d["end_goal"]),
        bounds=tuple(d["bounds"]),
        wall_time=float(d["wall_time"]),
        path_length=float(d["path_length"]),
        **arrays,
    )


def save_record(path, record: EpisodeRecord) -> None:
    with _open_for_write(path) as fh:
        json.dump(record_to_dict(record), fh)


def load_record(path) -> EpisodeRecord:
    with open(path, encoding="utf-8") as fh:
        return record_from_dict(json.load(fh))


def csv_text(columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()
