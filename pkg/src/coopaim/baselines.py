"""Rule-based comparison planners on top of a modified intelligent driver model.

PR: static right of way derived from each vehicle's maneuver, stop signs on
the minor road, gap acceptance against higher-ranked traffic.
FIFO: vehicles are served in the order they enter a control range; a vehicle
may go once every earlier vehicle on a conflicting path has cleared the
shared area, so non-conflicting movements run in parallel.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from .dynamics import A_MAX, A_MIN, STOP_SPEED, VehicleState
from .road_net import Relation, RoadNetwork
from .scene_graph import find_leaders


@dataclass(frozen=True)
class IdmParams:
    T: float = 1.5  # s, desired time headway
    a: float = 3.0  # m/s^2, maximum acceleration
    b: float = 3.0  # m/s^2, comfortable deceleration
    s0: float = 2.0  # m, standstill gap
    delta: float = 4.0
    v_eps: float = 1.0  # m/s, speed scale of the braking law used when the target speed is 0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"IDM parameter {f.name} must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "IdmParams":
        known = {f.name for f in fields(cls)}
        if set(data) - known:
            raise ValueError(f"unknown IDM keys: {sorted(set(data) - known)}")
        return cls(**{k: float(v) for k, v in data.items()})

    def to_dict(self) -> dict:
        return asdict(self)


class Obstacle(NamedTuple):
    """Something to keep distance to: bumper gap (m) and its speed (m/s)."""
    gap: float
    speed: float


def idm_accel(ego: VehicleState, leader: Obstacle | None, params: IdmParams, v_target: float) -> float:
    """IDM acceleration, clamped to the actuator range.

    For ``v_target == 0`` the free-road term becomes a braking law
    ``-b * clamp(v / v_eps, 0, 1)`` instead of dividing by zero. A stop point
    is passed as a stationary obstacle.
    """
    if v_target < 0:
        raise ValueError("target speed must be non-negative")
    p = params
    v = ego.speed
    if v_target > 0:
        free = p.a * (1.0 - (v / v_target) ** p.delta)
    else:
        free = -p.b * min(max(v / p.v_eps, 0.0), 1.0)
    acc = free
    if leader is not None:
        if leader.gap <= 0:
            return A_MIN
        dv = v - leader.speed
        s_star = p.s0 + max(0.0, v * p.T + v * dv / (2.0 * math.sqrt(p.a * p.b)))
        acc = free - p.a * (s_star / leader.gap) ** 2
    return min(max(acc, A_MIN), A_MAX)


def anticipated_speed(net: RoadNetwork, ego: VehicleState, decel: float) -> float:
    """Current lane limit, lowered so upcoming slower lanes can be reached at ``decel``."""
    path = net.paths[ego.path_id]
    front = ego.raw_arclen + 0.5 * ego.length
    k = path.lane_index(ego.raw_arclen)
    v = path.lanes[k].speed_limit
    for j in range(k + 1, len(path.lanes)):
        dist = path.lane_offsets[j] - front
        lim = path.lanes[j].speed_limit
        if dist <= 0:
            v = min(v, lim)
        else:
            v = min(v, math.sqrt(lim * lim + 2.0 * decel * dist))
    return v


def stop_obstacle(ego: VehicleState, s_stop: float) -> Obstacle:
    return Obstacle(s_stop - (ego.raw_arclen + 0.5 * ego.length), 0.0)


def _closer(a: Obstacle | None, b: Obstacle | None) -> Obstacle | None:
    if a is None:
        return b
    if b is None:
        return a
    return a if a.gap <= b.gap else b


# -- shared geometry helpers --------------------------------------------------------

CONFLICTING = (Relation.CROSSING, Relation.MERGING)


def conflicts(net: RoadNetwork, a: str, b: str) -> bool:
    return a != b and net.conflicts.get(a, b).relation in CONFLICTING


def front(v: VehicleState) -> float:
    return v.raw_arclen + 0.5 * v.length


def rear(v: VehicleState) -> float:
    return v.raw_arclen - 0.5 * v.length


def cleared(net: RoadNetwork, v: VehicleState, other_path: str) -> bool:
    """``v`` has left the stretch of its path shared with ``other_path``."""
    return rear(v) > net.conflicts.get(v.path_id, other_path).zone_a[1]


def in_zone(net: RoadNetwork, v: VehicleState, other_path: str) -> bool:
    z = net.conflicts.get(v.path_id, other_path).zone_a
    return front(v) >= z[0] and rear(v) <= z[1]


def travel_time(dist: float, v: float, accel: float, v_max: float) -> float:
    """Time to cover ``dist`` from speed ``v`` accelerating at ``accel`` up to ``v_max``."""
    if dist <= 0:
        return 0.0
    v = min(v, v_max)
    t_acc = (v_max - v) / accel
    d_acc = v * t_acc + 0.5 * accel * t_acc * t_acc
    if dist <= d_acc:
        return (-v + math.sqrt(v * v + 2.0 * accel * dist)) / accel
    return t_acc + (dist - d_acc) / v_max



CRAWL_SPEED = 2.0  # m/s, below this a vehicle's exit time from a shared area is not predicted


def earliest_arrival(net: RoadNetwork, v: VehicleState, other_path: str, accel: float) -> float:
    """Earliest time ``v`` can reach the area shared with ``other_path``, accelerating up to the limit."""
    zone = net.conflicts.get(v.path_id, other_path).zone_a
    vmax = net.paths[v.path_id].speed_limit_at(v.raw_arclen)
    return travel_time(zone[0] - front(v), v.speed, accel, max(vmax, v.speed))


def latest_exit(net: RoadNetwork, v: VehicleState, other_path: str) -> float:
    """Time ``v`` needs to leave the shared area holding its current speed; inf when crawling."""
    zone = net.conflicts.get(v.path_id, other_path).zone_a
    dist = zone[1] - rear(v)
    if dist <= 0:
        return 0.0
    if v.speed < CRAWL_SPEED:
        return math.inf
    return dist / v.speed


def clears_before(net: RoadNetwork, o: VehicleState, v: VehicleState, margin: float, accel: float) -> bool:
    """``o`` has left the area shared with ``v``, or will leave it ``margin`` seconds before ``v`` can arrive."""
    if cleared(net, o, v.path_id):
        return True
    return latest_exit(net, o, v.path_id) + margin < earliest_arrival(net, v, o.path_id, accel)

class RulePlanner:
    """IDM longitudinal control plus a proceed/yield decision per vehicle."""

    name = "rule"

    def __init__(self, net: RoadNetwork, idm: IdmParams | None = None):
        self.net = net
        self.idm = idm or IdmParams()
        self.reset()

    def reset(self) -> None:
        self.committed: set[int] = set()
        self.yielded: set[int] = set()

    def schedule(self, vehicles: list[VehicleState], time: float) -> dict[int, bool]:
        raise NotImplementedError

    def can_stop(self, v: VehicleState, decel: float) -> bool:
        entry = self.net.paths[v.path_id].entry_s_raw
        return entry - front(v) > v.speed * v.speed / (2.0 * decel)

    def update_commitment(self, vehicles: list[VehicleState]) -> None:
        for v in vehicles:
            if v.id in self.committed:
                continue
            if front(v) >= self.net.paths[v.path_id].entry_s_raw:
                self.committed.add(v.id)

    def act(self, env) -> np.ndarray:
        vehicles = env.vehicles
        self.update_commitment(vehicles)
        go = self.schedule(vehicles, env.time)
        leaders = find_leaders(vehicles, self.net)
        out = np.zeros(len(vehicles))
        for i, v in enumerate(vehicles):
            obstacle = None
            if i in leaders:
                j, gap = leaders[i]
                obstacle = Obstacle(gap, vehicles[j].speed)
            if not go[v.id]:
                self.yielded.add(v.id)
                obstacle = _closer(obstacle, stop_obstacle(v, self.net.paths[v.path_id].entry_s_raw))
            obstacle = _closer(obstacle, self.zone_guard(v, vehicles))
            out[i] = idm_accel(v, obstacle, self.idm, anticipated_speed(self.net, v, self.idm.b))
        return out

    def zone_guard(self, v: VehicleState, vehicles: list[VehicleState]) -> Obstacle | None:
        """Stop short of a shared area that another vehicle currently occupies."""
        best = None
        for o in vehicles:
            if o is v or not conflicts(self.net, v.path_id, o.path_id):
                continue
            zone = self.net.conflicts.get(v.path_id, o.path_id).zone_a
            if front(v) >= zone[0] or not in_zone(self.net, o, v.path_id):
                continue
            best = _closer(best, stop_obstacle(v, zone[0]))
        return best


# -- static priority rules --------------------------------------------------------------

MOVEMENT_RANK = {("major", "straight"): 0, ("major", "right"): 1, ("major", "left"): 2,
                 ("minor", "right"): 3, ("minor", "straight"): 4, ("minor", "left"): 5}


@dataclass(frozen=True)
class PriorityParams:
    gap_time: float = 4.0  # s, minimum accepted gap to higher-ranked traffic
    clear_margin: float = 1.0  # s, added to the own clearing time
    clear_accel: float = 2.0  # m/s^2, assumed when estimating the own clearing time
    arrival_accel: float = 3.0  # m/s^2, assumed for the earliest arrival of others
    commit_decel: float = 4.0  # m/s^2, braking beyond which a vehicle counts as committed
    minor_stop: bool = True  # minor approaches carry stop signs


class PriorityPlanner(RulePlanner):
    """Static right of way from the intended movement (not the current lane)."""

    name = "pr"

    def __init__(self, net: RoadNetwork, idm: IdmParams | None = None,
                 params: PriorityParams | None = None):
        self.params = params or PriorityParams()
        super().__init__(net, idm)

    def reset(self) -> None:
        super().reset()
        self.halted: set[int] = set()
        self.last_go: dict[int, bool] = {}

    def queued_behind_yielder(self, vehicles: list[VehicleState]) -> set[int]:
        """Vehicles that cannot reach the intersection before a waiting vehicle ahead of them moves."""
        lanes: dict[str, list[VehicleState]] = {}
        for v in vehicles:
            if v.id not in self.committed:
                lanes.setdefault(self.net.paths[v.path_id].lane_sequence[0], []).append(v)
        out = set()
        for queue in lanes.values():
            queue.sort(key=lambda v: -v.raw_arclen)
            waiting = False
            for v in queue:
                if waiting:
                    out.add(v.id)
                elif not self.last_go.get(v.id, True):
                    waiting = True
        return out

    def rank(self, v: VehicleState) -> tuple:
        path = self.net.paths[v.path_id]
        road = "major" if self.net.is_major(path.source) else "minor"
        return (MOVEMENT_RANK[(road, path.maneuver)],)

    def precedes(self, a: VehicleState, b: VehicleState) -> bool:
        """Right of way of ``a`` over ``b``; same rank resolved by distance to the stop line, then id."""
        ka = self.rank(a) + (self._to_line(a), a.id)
        kb = self.rank(b) + (self._to_line(b), b.id)
        return ka < kb

    def _to_line(self, v: VehicleState) -> float:
        return self.net.paths[v.path_id].entry_s_raw - front(v)

    def arrival_time(self, v: VehicleState, other_path: str) -> float:
        return earliest_arrival(self.net, v, other_path, self.params.arrival_accel)

    def clear_time(self, v: VehicleState, other_path: str) -> float:
        zone = self.net.conflicts.get(v.path_id, other_path).zone_a
        path = self.net.paths[v.path_id]
        vmax = min(lane.speed_limit for lane in path.lanes[:2])
        return travel_time(zone[1] - rear(v), v.speed, self.params.clear_accel, max(vmax, 0.1))

    def update_commitment(self, vehicles: list[VehicleState]) -> None:
        super().update_commitment(vehicles)
        for v in vehicles:
            if v.id not in self.committed and not self.can_stop(v, self.params.commit_decel):
                if not self.must_halt(v):
                    self.committed.add(v.id)
            if v.speed < STOP_SPEED and self._to_line(v) < 3.0:
                self.halted.add(v.id)

    def must_halt(self, v: VehicleState) -> bool:
        path = self.net.paths[v.path_id]
        return (self.params.minor_stop and not self.net.is_major(path.source)
                and v.id not in self.halted and v.id not in self.committed)

    def schedule(self, vehicles: list[VehicleState], time: float) -> dict[int, bool]:
        p = self.params
        go = {}
        blocked = self.queued_behind_yielder(vehicles)
        for v in vehicles:
            if v.id in self.committed:
                go[v.id] = True
                continue
            if self.must_halt(v):
                go[v.id] = False
                continue
            ok = True
            for o in vehicles:
                if o is v or not conflicts(self.net, v.path_id, o.path_id):
                    continue
                if clears_before(self.net, o, v, p.clear_margin, p.arrival_accel):
                    continue
                window = self.clear_time(v, o.path_id) + p.clear_margin
                if o.id in self.committed:
                    # o will not stop for v; only its timing matters
                    if self.arrival_time(o, v.path_id) < window:
                        ok = False
                        break
                    continue
                if o.id not in blocked and self.precedes(o, v):
                    if self.arrival_time(o, v.path_id) < max(p.gap_time, window):
                        ok = False
                        break
            go[v.id] = ok
        self.last_go = go
        return go


# -- conflict-group FIFO --------------------------------------------------------------------

class FifoQueue:
    """Service order of vehicles: (vehicle id, distance to the stop line at enqueue)."""

    def __init__(self):
        self.entries: list[tuple[int, float]] = []
        self._pos: dict[int, int] = {}

    def __contains__(self, vid: int) -> bool:
        return vid in self._pos

    def __len__(self) -> int:
        return len(self.entries)

    def enqueue(self, batch: list[tuple[int, float]]) -> None:
        """Append vehicles arriving in the same step, nearest first."""
        for vid, dist in sorted(batch, key=lambda e: (e[1], e[0])):
            if vid in self._pos:
                continue
            self._pos[vid] = len(self.entries)
            self.entries.append((vid, dist))

    def position(self, vid: int) -> int:
        return self._pos[vid]

    def ahead_of(self, vid: int) -> list[int]:
        return [e[0] for e in self.entries[: self._pos[vid]]]

    def discard(self, keep: set[int]) -> None:
        self.entries = [e for e in self.entries if e[0] in keep]
        self._pos = {vid: k for k, (vid, _) in enumerate(self.entries)}


def fifo_schedule(vehicles: list[VehicleState], queue: FifoQueue, net: RoadNetwork,
                  margin: float = 0.5, accel: float = 3.0) -> dict[int, bool]:
    """Proceed iff every earlier queued vehicle on a conflicting path clears the shared area before us.

    "Clears" follows :func:`clears_before`: already out of the area, or moving
    and out of it ``margin`` seconds before we can get there.
    """
    by_id = {v.id: v for v in vehicles}
    go = {}
    for v in vehicles:
        if v.id not in queue:
            go[v.id] = True
            continue
        ok = True
        for vid in queue.ahead_of(v.id):
            o = by_id.get(vid)
            if o is None or not conflicts(net, v.path_id, o.path_id):
                continue
            if not clears_before(net, o, v, margin, accel):
                ok = False
                break
        go[v.id] = ok
    return go


@dataclass(frozen=True)
class FifoParams:
    control_range: float = 60.0  # m before the stop line where vehicles join the queue
    clear_margin: float = 0.5  # s between a predecessor leaving a shared area and our arrival
    arrival_accel: float = 3.0  # m/s^2, assumed for our own earliest arrival


class FifoPlanner(RulePlanner):
    name = "fifo"

    def __init__(self, net: RoadNetwork, idm: IdmParams | None = None, params: FifoParams | None = None):
        self.params = params or FifoParams()
        super().__init__(net, idm)

    def reset(self) -> None:
        super().reset()
        self.queue = FifoQueue()

    def schedule(self, vehicles: list[VehicleState], time: float) -> dict[int, bool]:
        present = {v.id for v in vehicles}
        self.queue.discard(present)
        arriving = []
        for v in vehicles:
            if v.id in self.queue or v.id in self.committed:
                continue
            dist = self.net.paths[v.path_id].entry_s_raw - front(v)
            if dist <= self.params.control_range:
                arriving.append((v.id, dist))
        self.queue.enqueue(arriving)
        go = fifo_schedule(vehicles, self.queue, self.net, self.params.clear_margin, self.params.arrival_accel)
        for vid in self.committed:
            if vid in go:
                go[vid] = True
        return go
