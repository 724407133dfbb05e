"""Drone-recorded track files (inD column layout) to replayable spawn scenarios.

Only spawn events are taken from the recording: appearance time, incoming
lane, maneuver and first-frame speed. Trajectories themselves are not
replayed, so the intersection only has to be approximated by the network.

Tracks CSV, one row per (track, frame)::

    recordingId, trackId, frame, x, y, heading, width, length, xVelocity, yVelocity, class

``x``/``y`` in metres, ``heading`` in degrees (dataset convention), velocities
in m/s. ``xCenter``/``yCenter`` are accepted for ``x``/``y``.

Meta CSV, one row per recording::

    recordingId, frameRate, duration[, numVehicles][, xOffset, yOffset]

``duration`` in seconds. The offsets are subtracted from track positions to
move them into the network frame (intersection centre at the origin).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from .road_net import RoadNetwork, _distance_to_polyline
from .sim_env import Scenario, SpawnEvent

TRACK_COLUMNS = ("recordingId", "trackId", "frame", "x", "y", "heading", "width", "length",
                 "xVelocity", "yVelocity", "class")
META_COLUMNS = ("recordingId", "frameRate", "duration")
COLUMN_ALIASES = {"xCenter": "x", "yCenter": "y"}
VEHICLE_CLASSES = frozenset({"car", "van", "truck", "bus", "truck_bus", "motorcycle"})
VRU_CLASSES = frozenset({"pedestrian", "bicycle"})

MATCH_GATE = 3.0  # m, largest distance between a track end and the lane it is matched to
MIN_TRACK_DURATION = 1.0  # s


class IngestError(ValueError):
    """Malformed input; the message names the file and line."""


@dataclass
class Track:
    id: int
    recording: int
    cls: str
    frames: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray  # rad
    speed: np.ndarray
    width: float
    length: float

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class RecordingMeta:
    id: int
    frame_rate: float
    duration: float
    num_vehicles: int | None = None
    x_offset: float = 0.0
    y_offset: float = 0.0


@dataclass
class TrackRecording:
    tracks: list[Track]
    meta: dict[int, RecordingMeta]
    filtered: dict[str, int] = field(default_factory=dict)  # class -> tracks removed

    @property
    def duration(self) -> float:
        return sum(m.duration for m in self.meta.values())

    def start_offset(self, recording: int) -> float:
        """Time of a recording's first frame when recordings are played back to back."""
        return sum(m.duration for k, m in self.meta.items() if k < recording)


@dataclass
class IngestReport:
    matched: list[int] = field(default_factory=list)
    excluded: list[tuple[int, str]] = field(default_factory=list)  # (track id, reason)
    speed_clamped: list[int] = field(default_factory=list)
    filtered: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"matched": len(self.matched),
                "excluded": [{"track": t, "reason": r} for t, r in self.excluded],
                "speed_clamped": list(self.speed_clamped),
                "filtered": dict(sorted(self.filtered.items()))}


def _rows(path, required: tuple[str, ...]):
    """Yield (line number, row dict) with aliases applied; checks the header once."""
    path = FsPath(path)
    if not path.exists():
        raise IngestError(f"{path}: file not found")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [COLUMN_ALIASES.get(h.strip(), h.strip()) for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise IngestError(f"{path}:1: missing columns {missing}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            yield line, dict(zip(header, (c.strip() for c in row)))


def _num(row: dict, key: str, path, line: int, kind=float):
    try:
        value = kind(row[key])
    except (TypeError, ValueError):
        raise IngestError(f"{path}:{line}: bad {key} value {row[key]!r}") from None
    if kind is float and not math.isfinite(value):
        raise IngestError(f"{path}:{line}: non-finite {key}")
    return value


def parse_meta(path) -> dict[int, RecordingMeta]:
    meta = {}
    for line, row in _rows(path, META_COLUMNS):
        rid = _num(row, "recordingId", path, line, int)
        m = RecordingMeta(
            id=rid,
            frame_rate=_num(row, "frameRate", path, line),
            duration=_num(row, "duration", path, line),
            num_vehicles=_num(row, "numVehicles", path, line, int) if row.get("numVehicles") else None,
            x_offset=_num(row, "xOffset", path, line) if row.get("xOffset") else 0.0,
            y_offset=_num(row, "yOffset", path, line) if row.get("yOffset") else 0.0,
        )
        if m.frame_rate <= 0 or m.duration <= 0:
            raise IngestError(f"{path}:{line}: frameRate and duration must be positive")
        if rid in meta:
            raise IngestError(f"{path}:{line}: duplicate recordingId {rid}")
        meta[rid] = m
    if not meta:
        raise IngestError(f"{path}: no recordings listed")
    return meta


def parse_tracks(tracks_path, meta_path) -> TrackRecording:
    """Read a tracks CSV and its meta CSV; pedestrians and bicycles are filtered and counted."""
    meta = parse_meta(meta_path)
    rows: dict[tuple[int, int], list] = {}
    classes: dict[tuple[int, int], str] = {}
    for line, row in _rows(tracks_path, TRACK_COLUMNS):
        rid = _num(row, "recordingId", tracks_path, line, int)
        if rid not in meta:
            raise IngestError(f"{tracks_path}:{line}: recording {rid} missing from the meta file")
        key = (rid, _num(row, "trackId", tracks_path, line, int))
        cls = row["class"].lower()
        if cls not in VEHICLE_CLASSES and cls not in VRU_CLASSES:
            raise IngestError(f"{tracks_path}:{line}: unknown class {row['class']!r}")
        if classes.setdefault(key, cls) != cls:
            raise IngestError(f"{tracks_path}:{line}: track {key[1]} changes class")
        vals = [_num(row, c, tracks_path, line) for c in
                ("frame", "x", "y", "heading", "width", "length", "xVelocity", "yVelocity")]
        rows.setdefault(key, []).append((line, vals))

    tracks, filtered = [], {}
    for key in sorted(rows):
        rid, tid = key
        if classes[key] in VRU_CLASSES:
            filtered[classes[key]] = filtered.get(classes[key], 0) + 1
            continue
        entries = sorted(rows[key], key=lambda e: e[1][0])
        arr = np.array([e[1] for e in entries])
        frames = arr[:, 0].astype(np.int64)
        if np.any(frames != arr[:, 0]):
            raise IngestError(f"{tracks_path}:{entries[0][0]}: track {tid} has non-integer frames")
        gaps = np.diff(frames)
        if np.any(gaps != 1):
            bad = entries[int(np.flatnonzero(gaps != 1)[0]) + 1][0]
            raise IngestError(f"{tracks_path}:{bad}: track {tid} frames are not contiguous")
        m = meta[rid]
        tracks.append(Track(
            id=tid, recording=rid, cls=classes[key], frames=frames,
            x=arr[:, 1] - m.x_offset, y=arr[:, 2] - m.y_offset,
            heading=np.radians(arr[:, 3]), speed=np.hypot(arr[:, 6], arr[:, 7]),
            width=float(np.median(arr[:, 4])), length=float(np.median(arr[:, 5])),
        ))
    return TrackRecording(tracks, meta, filtered)


def _nearest_lane(net: RoadNetwork, role: str, x: float, y: float) -> tuple[str | None, float]:
    best, best_d = None, math.inf
    for lane in sorted(net.lanes.values(), key=lambda l: l.id):
        if lane.role != role:
            continue
        d = float(_distance_to_polyline(np.array([[x, y]]), np.asarray(lane.centerline))[0])
        if d < best_d:
            best, best_d = lane.id, d
    return best, best_d


def match_track(net: RoadNetwork, track: Track, gate: float = MATCH_GATE):
    """(path id, None) for a matched track, else (None, reason)."""
    entry, d_in = _nearest_lane(net, "incoming", track.x[0], track.y[0])
    if entry is None or d_in > gate:
        return None, f"start {d_in:.1f} m from the nearest incoming lane"
    exit_, d_out = _nearest_lane(net, "outgoing", track.x[-1], track.y[-1])
    if exit_ is None or d_out > gate:
        return None, f"end {d_out:.1f} m from the nearest outgoing lane"
    for path in net.paths_from(entry):
        if path.lane_sequence[2] == exit_:
            return path.id, None
    return None, f"no path from {entry} to {exit_}"


def tracks_to_scenario(rec: TrackRecording, net: RoadNetwork,
                       gate: float = MATCH_GATE) -> tuple[Scenario, IngestReport]:
    """One spawn event per matched vehicle track, at its first-frame time.

    Every track ends up either in ``report.matched`` or, with a reason, in
    ``report.excluded``.
    """
    report = IngestReport(filtered=dict(rec.filtered))
    events = []
    for track in sorted(rec.tracks, key=lambda t: (t.recording, t.id)):
        m = rec.meta[track.recording]
        if len(track) / m.frame_rate < MIN_TRACK_DURATION:
            report.excluded.append((track.id, f"shorter than {MIN_TRACK_DURATION:g} s"))
            continue
        path_id, reason = match_track(net, track, gate)
        if path_id is None:
            report.excluded.append((track.id, reason))
            continue
        path = net.paths[path_id]
        limit = path.lanes[0].speed_limit
        speed = float(track.speed[0])
        if speed > limit:
            report.speed_clamped.append(track.id)
        time = rec.start_offset(track.recording) + track.frames[0] / m.frame_rate
        events.append((time, track.recording, track.id, SpawnEvent(
            time=float(time), lane=path.lane_sequence[0], path=path_id,
            maneuver=path.maneuver, speed=min(max(speed, 0.0), limit))))
        report.matched.append(track.id)
    events.sort(key=lambda e: e[:3])
    scn = Scenario([e[3] for e in events], duration=float(rec.duration), seed=0,
                   meta={"source": "tracks", "tracks": len(rec.tracks),
                         "matched": len(report.matched), "excluded": len(report.excluded)})
    return scn, report


def recording_density(meta: dict[int, RecordingMeta]) -> dict:
    """Vehicles per second over the listed recordings, from their ``numVehicles`` counts."""
    missing = [k for k, m in meta.items() if m.num_vehicles is None]
    if missing:
        raise IngestError(f"numVehicles missing for recordings {missing}")
    vehicles = sum(m.num_vehicles for m in meta.values())
    seconds = sum(m.duration for m in meta.values())
    return {"vehicles": vehicles, "hours": seconds / 3600.0,
            "veh_per_s": vehicles / seconds, "veh_per_h": vehicles * 3600.0 / seconds}


def track_density(rec: TrackRecording) -> float:
    """Parsed vehicle tracks per second of recording."""
    return len(rec.tracks) / rec.duration


def fixture_dir() -> FsPath:
    """Bundled synthetic recording in the inD column layout (20 vehicle tracks)."""
    return FsPath(__file__).resolve().parent / "data" / "ind_fixture"


def load_fixture() -> TrackRecording:
    d = fixture_dir()
    return parse_tracks(d / "tracks.csv", d / "recordingMeta.csv")
