"""Four-way intersection geometry, paths, Frenet scaling and the path conflict table."""
from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path as FsPath

import numpy as np

ARMS = ("N", "E", "S", "W")
# outward unit vector of each arm, intersection centre at the origin
ARM_DIRECTION = {"N": (0.0, 1.0), "E": (1.0, 0.0), "S": (0.0, -1.0), "W": (-1.0, 0.0)}
MANEUVERS = ("left", "straight", "right")

SAMPLE_STEP = 0.1  # m, resolution of internal lanes and of conflict detection
MERGE_TOLERANCE = 0.5  # m
SEPARATION_DISTANCE = 3.0  # m, lateral offset at which diverging paths stop sharing space
ZONE_CLEARANCE = 3.0  # m, centerline distance below which two bodies can touch


class Relation(str, Enum):
    CROSSING = "crossing"
    MERGING = "merging"
    SAME_LANE_PREFIX = "same_lane_prefix"
    NONE = "none"


@dataclass(frozen=True)
class IntersectionSpec:
    """Dimensions of the synthetic four-way intersection.

    Right-hand traffic with one incoming and one outgoing lane per arm. All
    lengths in metres, speeds in m/s.
    """

    lane_width: float = 3.5
    box_half_size: float = 8.0  # centre to start of the internal lanes
    stop_line_offset: float = 2.0  # stop line sits this far before the internal lane
    approach_length: float = 100.0
    exit_length: float = 40.0
    left_turn_radius: float = 5.0
    speed_limit_major: float = 13.89
    speed_limit_minor: float = 13.89
    left_turn_speed: float = 7.0
    right_turn_speed: float = 5.0
    major_arms: tuple[str, ...] = ("E", "W")
    vehicle_length: float = 5.0
    s_ref: float = 25.0

    def validate(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, float) and not value > 0:
                raise ValueError(f"{f.name} must be positive, got {value}")
        if self.approach_length < self.vehicle_length or self.exit_length < self.vehicle_length:
            raise ValueError("arm lanes must be at least one vehicle length long")
        if self.approach_length <= self.stop_line_offset:
            raise ValueError("approach lane shorter than the stop line offset")
        if self.box_half_size <= self.lane_width / 2:
            raise ValueError("box_half_size must exceed half a lane width")
        if self.left_turn_radius > self.box_half_size + self.lane_width / 2:
            raise ValueError("left_turn_radius too large for the intersection box")
        unknown = set(self.major_arms) - set(ARMS)
        if unknown:
            raise ValueError(f"unknown arms {sorted(unknown)}")

    @classmethod
    def from_dict(cls, data: dict) -> "IntersectionSpec":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown intersection keys: {sorted(extra)}")
        kwargs = dict(data)
        if "major_arms" in kwargs:
            kwargs["major_arms"] = tuple(kwargs["major_arms"])
        for key, value in kwargs.items():
            if key != "major_arms":
                kwargs[key] = float(value)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["major_arms"] = list(self.major_arms)
        return data


def load_intersection_spec(path: str | FsPath) -> IntersectionSpec:
    with open(path) as fh:
        return IntersectionSpec.from_dict(json.load(fh))


@dataclass(frozen=True)
class Lane:
    id: str
    centerline: tuple[tuple[float, float], ...]
    speed_limit: float
    priority: str  # "major" | "minor"
    role: str  # "incoming" | "internal" | "outgoing"
    segment_curvature: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.centerline) < 2:
            raise ValueError(f"lane {self.id}: centerline needs at least two points")
        if self.speed_limit <= 0:
            raise ValueError(f"lane {self.id}: speed limit must be positive")
        pts = np.asarray(self.centerline)
        if np.any(np.hypot(*np.diff(pts, axis=0).T) <= 0):
            raise ValueError(f"lane {self.id}: consecutive points must be distinct")
        if not self.segment_curvature:
            object.__setattr__(self, "segment_curvature", (0.0,) * (len(self.centerline) - 1))

    @property
    def length(self) -> float:
        pts = np.asarray(self.centerline)
        return float(np.hypot(*np.diff(pts, axis=0).T).sum())


class Path:
    """Route through the intersection: incoming -> internal -> outgoing lane.

    Raw arc length starts at 0 at the beginning of the incoming lane. The
    geometry is stored as plain lists so per-vehicle lookups stay cheap in the
    simulation loop.
    """

    def __init__(self, id: str, lanes: tuple[Lane, Lane, Lane], maneuver: str,
                 source: str, target: str, stop_line_offset: float, s_ref: float):
        self.id = id
        self.lanes = lanes
        self.lane_sequence = tuple(lane.id for lane in lanes)
        self.maneuver = maneuver
        self.source = source
        self.target = target
        self.s_ref = s_ref
        for prev, nxt in zip(lanes, lanes[1:]):
            if math.dist(prev.centerline[-1], nxt.centerline[0]) > 1e-6:
                raise ValueError(f"path {id}: lanes {prev.id} and {nxt.id} are not connected")

        xs, ys, curv = [], [], []
        self.lane_offsets = []
        for lane in lanes:
            self.lane_offsets.append(0.0)  # filled below
            pts = lane.centerline if not xs else lane.centerline[1:]
            xs.extend(p[0] for p in pts)
            ys.extend(p[1] for p in pts)
            curv.extend(lane.segment_curvature)
        cum = [0.0]
        headings = []
        for i in range(len(xs) - 1):
            dx, dy = xs[i + 1] - xs[i], ys[i + 1] - ys[i]
            cum.append(cum[-1] + math.hypot(dx, dy))
            headings.append(math.atan2(dy, dx))
        self.xs, self.ys, self.cum = xs, ys, cum
        self.headings = headings
        self.curvature = curv
        self.length = cum[-1]

        offset = 0.0
        for k, lane in enumerate(lanes):
            self.lane_offsets[k] = offset
            offset += lane.length
        self.lane_offsets = tuple(self.lane_offsets)
        self.entry_s_raw = lanes[0].length - stop_line_offset
        self.exit_s_raw = lanes[0].length + lanes[1].length + stop_line_offset
        if not self.entry_s_raw < self.exit_s_raw:
            raise ValueError(f"path {id}: entry must precede exit")

    def __repr__(self) -> str:
        return f"Path({self.id!r}, {self.maneuver})"

    # -- geometry lookups -------------------------------------------------
    def _segment(self, s: float) -> int:
        i = bisect_right(self.cum, s) - 1
        return min(max(i, 0), len(self.headings) - 1)

    def point(self, s: float) -> tuple[float, float]:
        s = min(max(s, 0.0), self.length)
        i = self._segment(s)
        t = (s - self.cum[i]) / (self.cum[i + 1] - self.cum[i])
        return (self.xs[i] + t * (self.xs[i + 1] - self.xs[i]),
                self.ys[i] + t * (self.ys[i + 1] - self.ys[i]))

    def heading(self, s: float) -> float:
        return self.headings[self._segment(s)]

    def curvature_at(self, s: float) -> float:
        return self.curvature[self._segment(s)]

    def lane_index(self, s: float) -> int:
        if s < self.lane_offsets[1]:
            return 0
        if s < self.lane_offsets[2]:
            return 1
        return 2

    def lane_at(self, s: float) -> Lane:
        return self.lanes[self.lane_index(s)]

    def speed_limit_at(self, s: float) -> float:
        return self.lane_at(s).speed_limit

    def project(self, x: float, y: float, s_hint: float) -> float:
        """Arc length of the closest centerline point, searched near ``s_hint``."""
        s = min(max(s_hint, 0.0), self.length)
        for _ in range(3):
            i = self._segment(s)
            x0, y0 = self.xs[i], self.ys[i]
            dx, dy = self.xs[i + 1] - x0, self.ys[i + 1] - y0
            seg = self.cum[i + 1] - self.cum[i]
            t = ((x - x0) * dx + (y - y0) * dy) / (seg * seg)
            s_new = self.cum[i] + t * seg
            if self.cum[i] <= s_new <= self.cum[i + 1]:
                return min(max(s_new, 0.0), self.length)
            s = min(max(s_new, 0.0), self.length)
        return s

    def lateral_offset(self, x: float, y: float, s: float) -> float:
        """Signed distance to the centerline at ``s`` (positive to the left)."""
        px, py = self.point(s)
        h = self.heading(s)
        return -(x - px) * math.sin(h) + (y - py) * math.cos(h)

    def frenet(self, raw_arclen: float) -> float:
        return frenet_position(self, raw_arclen)

    def sample(self, s_start: float, s_end: float, step: float = SAMPLE_STEP) -> np.ndarray:
        n = max(int(math.ceil((s_end - s_start) / step)), 1)
        s = np.linspace(s_start, s_end, n + 1)
        return np.column_stack([np.interp(s, self.cum, self.xs), np.interp(s, self.cum, self.ys)])


def frenet_position(path: Path, raw_arclen: float) -> float:
    """Scaled longitudinal coordinate: -s_ref at the intersection entry, 0 at its exit.

    Inside the intersection the coordinate is rescaled so every path covers
    exactly s_ref; before the entry and after the exit distances are metric.
    Positions past the end of the path clamp to the path end.
    """
    s = min(raw_arclen, path.length)
    entry, exit_ = path.entry_s_raw, path.exit_s_raw
    if s <= entry:
        return s - entry - path.s_ref
    if s >= exit_:
        return s - exit_
    return -path.s_ref + (s - entry) * path.s_ref / (exit_ - entry)


_NAN2 = (math.nan, math.nan)


@dataclass(frozen=True)
class Conflict:
    """Relation of an ordered path pair.

    ``span_*`` hold the first and last conflict point (raw arc length) on each
    path; for merges both equal the merge point, for shared prefixes the point
    where the centerlines separate. ``zone_*`` is the stretch of each path
    lying within ZONE_CLEARANCE of the other centerline, used for clearance.
    """

    relation: Relation
    span_a: tuple[float, float] = _NAN2
    span_b: tuple[float, float] = _NAN2
    zone_a: tuple[float, float] = _NAN2
    zone_b: tuple[float, float] = _NAN2

    def swapped(self) -> "Conflict":
        return Conflict(self.relation, self.span_b, self.span_a, self.zone_b, self.zone_a)


@dataclass
class ConflictTable:
    entries: dict[tuple[str, str], Conflict] = field(default_factory=dict)

    def set(self, a: str, b: str, conflict: Conflict) -> None:
        self.entries[(a, b)] = conflict
        self.entries[(b, a)] = conflict.swapped()

    def get(self, a: str, b: str) -> Conflict:
        try:
            return self.entries[(a, b)]
        except KeyError:
            raise KeyError(f"unknown path pair ({a!r}, {b!r})") from None


@dataclass
class RoadNetwork:
    spec: IntersectionSpec
    lanes: dict[str, Lane]
    paths: dict[str, Path]
    conflicts: ConflictTable

    @property
    def s_ref(self) -> float:
        return self.spec.s_ref

    def incoming_lanes(self) -> list[Lane]:
        return [lane for lane in self.lanes.values() if lane.role == "incoming"]

    def paths_from(self, lane_id: str) -> list[Path]:
        return [p for p in self.paths.values() if p.lane_sequence[0] == lane_id]

    def path_for(self, source: str, maneuver: str) -> Path:
        for p in self.paths.values():
            if p.source == source and p.maneuver == maneuver:
                return p
        raise KeyError(f"no {maneuver} path from arm {source}")

    def is_major(self, arm: str) -> bool:
        return arm in self.spec.major_arms


def conflict_between(table: ConflictTable, a: Path | str, b: Path | str) -> Conflict:
    a_id = a if isinstance(a, str) else a.id
    b_id = b if isinstance(b, str) else b.id
    return table.get(a_id, b_id)


# -- construction ---------------------------------------------------------

def _right_normal(d):
    return (d[1], -d[0])


def _arc(center, radius, theta0, sweep, step=SAMPLE_STEP):
    n = max(int(math.ceil(abs(sweep) * radius / step)), 2)
    return [(center[0] + radius * math.cos(theta0 + sweep * k / n),
             center[1] + radius * math.sin(theta0 + sweep * k / n)) for k in range(n + 1)]


def _line(p0, p1, step=SAMPLE_STEP):
    n = max(int(math.ceil(math.dist(p0, p1) / step)), 1)
    return [(p0[0] + (p1[0] - p0[0]) * k / n, p0[1] + (p1[1] - p0[1]) * k / n) for k in range(n + 1)]


def _maneuver(src: str, dst: str) -> str | None:
    d = tuple(-c for c in ARM_DIRECTION[src])
    r = _right_normal(d)
    u = ARM_DIRECTION[dst]
    if u == d:
        return "straight"
    if u == r:
        return "right"
    if u == (-r[0], -r[1]):
        return "left"
    return None


def _internal_points(spec: IntersectionSpec, src: str, maneuver: str):
    """Internal lane points and per-segment curvature (positive = left)."""
    B, a = spec.box_half_size, spec.lane_width / 2
    u = ARM_DIRECTION[src]
    d = (-u[0], -u[1])
    r = _right_normal(d)
    p0 = (B * u[0] + a * r[0], B * u[1] + a * r[1])
    if maneuver == "straight":
        pts = _line(p0, (p0[0] + 2 * B * d[0], p0[1] + 2 * B * d[1]))
        return pts, [0.0] * (len(pts) - 1)
    if maneuver == "right":
        R = B - a
        c = (p0[0] + R * r[0], p0[1] + R * r[1])
        pts = _arc(c, R, math.atan2(-r[1], -r[0]), -math.pi / 2)
        return pts, [-1.0 / R] * (len(pts) - 1)
    R = spec.left_turn_radius
    lead = B + a - R
    p1 = (p0[0] + lead * d[0], p0[1] + lead * d[1])
    c = (p1[0] - R * r[0], p1[1] - R * r[1])
    arc = _arc(c, R, math.atan2(r[1], r[0]), math.pi / 2)
    p2 = arc[-1]
    p3 = (p2[0] - lead * r[0], p2[1] - lead * r[1])
    pts, curv = [], []
    if lead > 1e-9:
        head = _line(p0, p1)
        pts.extend(head)
        curv.extend([0.0] * (len(head) - 1))
    else:
        pts.append(p0)
    pts.extend(arc[1:])
    curv.extend([1.0 / R] * (len(arc) - 1))
    if lead > 1e-9:
        tail = _line(p2, p3)
        pts.extend(tail[1:])
        curv.extend([0.0] * (len(tail) - 1))
    return pts, curv


def build_four_way(spec: IntersectionSpec | None = None) -> RoadNetwork:
    """Build lanes, the 12 maneuver paths and the conflict table."""
    spec = spec or IntersectionSpec()
    spec.validate()
    B, a = spec.box_half_size, spec.lane_width / 2
    lanes: dict[str, Lane] = {}
    for arm in ARMS:
        u = ARM_DIRECTION[arm]
        prio = "major" if arm in spec.major_arms else "minor"
        limit = spec.speed_limit_major if prio == "major" else spec.speed_limit_minor
        d_in = (-u[0], -u[1])
        r_in = _right_normal(d_in)
        far = B + spec.approach_length
        lanes[f"in_{arm}"] = Lane(
            f"in_{arm}",
            ((far * u[0] + a * r_in[0], far * u[1] + a * r_in[1]),
             (B * u[0] + a * r_in[0], B * u[1] + a * r_in[1])),
            limit, prio, "incoming")
        r_out = _right_normal(u)
        far = B + spec.exit_length
        lanes[f"out_{arm}"] = Lane(
            f"out_{arm}",
            ((B * u[0] + a * r_out[0], B * u[1] + a * r_out[1]),
             (far * u[0] + a * r_out[0], far * u[1] + a * r_out[1])),
            limit, prio, "outgoing")

    paths: dict[str, Path] = {}
    for src in ARMS:
        for dst in ARMS:
            maneuver = _maneuver(src, dst)
            if maneuver is None:
                continue
            pts, curv = _internal_points(spec, src, maneuver)
            incoming = lanes[f"in_{src}"]
            # snap the joints exactly onto the arm lanes
            pts[0] = incoming.centerline[-1]
            pts[-1] = lanes[f"out_{dst}"].centerline[0]
            if maneuver == "straight":
                limit = incoming.speed_limit
            elif maneuver == "left":
                limit = spec.left_turn_speed
            else:
                limit = spec.right_turn_speed
            internal = Lane(f"int_{src}{dst}", tuple(pts), limit, incoming.priority,
                            "internal", tuple(curv))
            lanes[internal.id] = internal
            pid = f"{src}{dst}"
            paths[pid] = Path(pid, (incoming, internal, lanes[f"out_{dst}"]), maneuver,
                              src, dst, spec.stop_line_offset, spec.s_ref)

    table = compute_conflicts(paths, spec)
    return RoadNetwork(spec, lanes, paths, table)


# -- conflict detection ---------------------------------------------------

def _segment_intersections(P: np.ndarray, Q: np.ndarray):
    """All proper or touching intersections between polylines P and Q.

    Returns (t_p, t_q) as fractional segment indices along each polyline.
    """
    p0, p1 = P[:-1, None, :], P[1:, None, :]
    q0, q1 = Q[None, :-1, :], Q[None, 1:, :]
    r = p1 - p0
    s = q1 - q0
    denom = r[..., 0] * s[..., 1] - r[..., 1] * s[..., 0]
    qp = q0 - p0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qp[..., 0] * s[..., 1] - qp[..., 1] * s[..., 0]) / denom
        u = (qp[..., 0] * r[..., 1] - qp[..., 1] * r[..., 0]) / denom
    hit = (np.abs(denom) > 1e-12) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    i, j = np.nonzero(hit)
    return i + t[i, j], j + u[i, j]


def _distance_to_polyline(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    a, b = poly[:-1], poly[1:]
    ab = b - a
    ap = points[:, None, :] - a[None, :, :]
    t = np.clip((ap * ab).sum(-1) / (ab * ab).sum(-1), 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.hypot(*(points[:, None, :] - closest).transpose(2, 0, 1)).min(axis=1)


def _conflict_window(path: Path) -> tuple[float, float]:
    """Raw arc-length window that contains every possible conflict point."""
    return path.lane_offsets[1], path.lane_offsets[2] + 5.0


def compute_conflicts(paths: dict[str, Path], spec: IntersectionSpec) -> ConflictTable:
    table = ConflictTable()
    ids = sorted(paths)
    for i, a_id in enumerate(ids):
        table.set(a_id, a_id, Conflict(Relation.NONE))
        for b_id in ids[i + 1:]:
            table.set(a_id, b_id, _classify(paths[a_id], paths[b_id]))
    return table


def _classify(a: Path, b: Path) -> Conflict:
    if a.lane_sequence[0] == b.lane_sequence[0]:
        # identical prefix; record where the two centerlines separate
        lo, hi = a.lane_offsets[1], a.lane_offsets[2] + 5.0
        sa = _separation(a, b, lo, hi)
        sb = _separation(b, a, lo, hi)
        return Conflict(Relation.SAME_LANE_PREFIX, (sa, sa), (sb, sb), (0.0, sa), (0.0, sb))

    a_lo, a_hi = _conflict_window(a)
    b_lo, b_hi = _conflict_window(b)
    P = a.sample(a_lo, a_hi)
    Q = b.sample(b_lo, b_hi)
    step_p = (a_hi - a_lo) / (len(P) - 1)
    step_q = (b_hi - b_lo) / (len(Q) - 1)

    dist_p = _distance_to_polyline(P, Q)
    dist_q = _distance_to_polyline(Q, P)

    if a.lane_sequence[2] == b.lane_sequence[2]:
        ma = _merge_point(dist_p, a_lo, step_p)
        mb = _merge_point(dist_q, b_lo, step_q)
        return Conflict(Relation.MERGING, (ma, ma), (mb, mb),
                        (_zone(dist_p, a_lo, step_p)[0], ma), (_zone(dist_q, b_lo, step_q)[0], mb))

    tp, tq = _segment_intersections(P, Q)
    if len(tp) == 0:
        return Conflict(Relation.NONE)
    sa = a_lo + tp * step_p
    sb = b_lo + tq * step_q
    return Conflict(Relation.CROSSING, (float(sa.min()), float(sa.max())),
                    (float(sb.min()), float(sb.max())),
                    _zone(dist_p, a_lo, step_p), _zone(dist_q, b_lo, step_q))


def _merge_point(dist: np.ndarray, s0: float, step: float) -> float:
    apart = np.nonzero(dist >= MERGE_TOLERANCE)[0]
    first = 0 if len(apart) == 0 else int(apart[-1]) + 1
    return s0 + min(first, len(dist) - 1) * step


def _zone(dist: np.ndarray, s0: float, step: float) -> tuple[float, float]:
    near = np.nonzero(dist < ZONE_CLEARANCE)[0]
    return s0 + float(near[0]) * step, s0 + float(near[-1]) * step


def _separation(a: Path, b: Path, lo: float, hi: float) -> float:
    P = a.sample(lo, hi)
    step = (hi - lo) / (len(P) - 1)
    dist = _distance_to_polyline(P, b.sample(lo, hi))
    idx = np.nonzero(dist > SEPARATION_DISTANCE)[0]
    return lo + (int(idx[0]) if len(idx) else len(P) - 1) * step
