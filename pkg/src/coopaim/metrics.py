"""Evaluation quantities: flow rate, stop ratios and collision rate."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import STOP_SPEED


@dataclass
class VehicleRecord:
    id: int
    path_id: str
    road_priority: str  # major | minor
    maneuver: str
    spawn_time: float
    cross_time: float | None = None
    min_speed: float = float("inf")
    stopped: bool = False
    reached_entry: bool = False
    collided: bool = False

    @property
    def crossed(self) -> bool:
        return self.cross_time is not None

    @property
    def counted(self) -> bool:
        """Whether the vehicle's stop outcome is known (it stopped or reached the stop line)."""
        return self.stopped or self.reached_entry or self.crossed


@dataclass
class EpisodeResult:
    planner: str
    seed: int
    duration: float
    vehicles: list[VehicleRecord] = field(default_factory=list)
    collisions: list[tuple[float, int, int]] = field(default_factory=list)  # (time, id, id)
    trajectories: list[tuple[float, int, float, float, float, float]] | None = None
    pending_spawns: int = 0
    aborted: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trajectories"] = None
        return d


def flow_rate(result: EpisodeResult) -> float:
    if result.duration <= 0:
        raise ValueError("episode duration must be positive")
    return sum(v.crossed for v in result.vehicles) / result.duration


def stop_ratio(result: EpisodeResult | list[EpisodeResult], group_by: str = "road_priority",
               threshold: float = STOP_SPEED) -> dict[str, tuple[int, float]]:
    """Per group: (vehicle count, fraction that dropped below ``threshold``).

    Vehicles whose outcome is still open at episode end (never stopped, never
    reached the stop line) are left out. ``group_by='all'`` gives one group.
    """
    results = result if isinstance(result, list) else [result]
    counts: dict[str, list[int]] = {}
    for res in results:
        for v in res.vehicles:
            if not v.counted:
                continue
            key = "all" if group_by == "all" else getattr(v, group_by)
            c = counts.setdefault(key, [0, 0])
            c[0] += 1
            c[1] += v.min_speed < threshold
    return {k: (n, s / n) for k, (n, s) in sorted(counts.items())}


def collision_rate(results: list[EpisodeResult]) -> float:
    """Percentage of spawned vehicles involved in a collision."""
    total = sum(len(r.vehicles) for r in results)
    if total == 0:
        return 0.0
    return 100.0 * sum(v.collided for r in results for v in r.vehicles) / total


def recompute_from_trajectories(result: EpisodeResult, exit_positions: dict[str, float],
                                despawn_margin: float) -> dict[int, tuple[bool, float]]:
    """Per vehicle (crossed, min speed) rebuilt from the raw trajectory samples."""
    if result.trajectories is None:
        raise ValueError("episode was run without trajectory recording")
    paths = {v.id: v.path_id for v in result.vehicles}
    out: dict[int, tuple[bool, float]] = {}
    for _t, vid, s, _x, _y, speed in result.trajectories:
        crossed, vmin = out.get(vid, (False, float("inf")))
        crossed = crossed or s > exit_positions[paths[vid]] + despawn_margin
        out[vid] = (crossed, min(vmin, speed))
    return out


# -- tables --------------------------------------------------------------------

SUMMARY_COLUMNS = ("planner", "seed", "duration", "spawned", "crossed", "flow_rate",
                   "stop_ratio_major", "stop_ratio_minor", "stop_ratio_all", "collided")


def summary_row(result: EpisodeResult) -> dict:
    stops = stop_ratio(result, "road_priority")
    overall = stop_ratio(result, "all").get("all", (0, 0.0))
    return {
        "planner": result.planner,
        "seed": result.seed,
        "duration": result.duration,
        "spawned": len(result.vehicles),
        "crossed": sum(v.crossed for v in result.vehicles),
        "flow_rate": flow_rate(result),
        "stop_ratio_major": stops.get("major", (0, 0.0))[1],
        "stop_ratio_minor": stops.get("minor", (0, 0.0))[1],
        "stop_ratio_all": overall[1],
        "collided": sum(v.collided for v in result.vehicles),
    }


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, rows: list[dict], columns, header_lines: list[str] = ()) -> None:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def group_table(results: list[EpisodeResult], group_by: str) -> list[dict]:
    """Stop ratio per planner and group, the data behind the stop-ratio bar plots."""
    rows = []
    planners = sorted({r.planner for r in results})
    for planner in planners:
        sel = [r for r in results if r.planner == planner]
        for group, (count, ratio) in stop_ratio(sel, group_by).items():
            rows.append({"planner": planner, "group": group, "count": count, "stop_ratio": ratio})
    return rows


def collision_table(results: list[EpisodeResult]) -> list[dict]:
    rows = []
    for planner in sorted({r.planner for r in results}):
        sel = [r for r in results if r.planner == planner]
        rows.append({"planner": planner, "episodes": len(sel),
                     "vehicles": sum(len(r.vehicles) for r in sel),
                     "collision_rate_percent": collision_rate(sel)})
    return rows


def median_flow(results: list[EpisodeResult]) -> float:
    return float(np.median([flow_rate(r) for r in results])) if results else 0.0


def write_json(path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
