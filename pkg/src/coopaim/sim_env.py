"""Discrete-time intersection environment: spawning, stepping, collisions, reward."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dynamics import (A_MAX, DT, STOP_SPEED, VEHICLE_LENGTH, V_MAX, VehicleState, place_on_path,
                       step_vehicle)
from .metrics import EpisodeResult, VehicleRecord
from .reward import RewardBreakdown, RewardWeights, collision_pairs, step_reward
from .road_net import MANEUVERS, RoadNetwork
from .scene_graph import SceneGraph, build_graph
from .seeding import substream

SCENARIO_VERSION = 1
DESPAWN_MARGIN = 30.0  # m past the intersection exit
SPAWN_DECEL = 3.0  # m/s^2, braking assumed when checking room for a new vehicle
SPAWN_MIN_GAP = 2.0  # m, standstill gap kept in that check
ARRIVAL_SHIFT = 2.0  # s, minimum gap of the shifted exponential


@dataclass
class EpisodeConfig:
    max_duration: float = 60.0
    dt: float = DT
    spawn_mode: str = "training_curriculum"  # or scenario_replay
    seed: int = 0
    vehicle_cap: int = 20
    min_spawn_gap: float = 10.0
    spawn_probability: float = 0.05
    ramp_progress: float = 1.0
    terminate_on_collision: bool = True
    record_trajectories: bool = False

    def __post_init__(self):
        if not self.dt > 0 or not self.max_duration > 0:
            raise ValueError("dt and max_duration must be positive")
        if self.spawn_mode not in ("training_curriculum", "scenario_replay"):
            raise ValueError(f"unknown spawn mode {self.spawn_mode!r}")


@dataclass(frozen=True)
class SpawnEvent:
    time: float
    lane: str  # incoming lane id
    path: str
    maneuver: str
    speed: float


@dataclass
class Scenario:
    events: list[SpawnEvent]
    duration: float
    seed: int
    rate_major: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        times = [e.time for e in self.events]
        if times != sorted(times):
            raise ValueError("spawn events must be sorted by time")

    def to_json(self) -> str:
        doc = {"version": SCENARIO_VERSION, "duration": self.duration, "seed": self.seed,
               "rate_major": self.rate_major, "meta": self.meta,
               "events": [asdict(e) for e in self.events]}
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        doc = json.loads(text)
        if doc.get("version") != SCENARIO_VERSION:
            raise ValueError(f"unsupported scenario version {doc.get('version')}")
        return cls([SpawnEvent(**e) for e in doc["events"]], doc["duration"], doc["seed"],
                   doc.get("rate_major"), doc.get("meta", {}))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path) as fh:
            return cls.from_json(fh.read())


@dataclass
class StepInfo:
    breakdown: RewardBreakdown
    collisions: list[tuple[int, int]]
    spawned: list[int]
    despawned: list[int]
    timeout: bool


class IntersectionEnv:
    """Joint-agent environment: one acceleration per vehicle per step.

    Vehicles are kept in spawn order, which is also the vertex order of the
    observed graph and the order of the action vector.
    """

    def __init__(self, net: RoadNetwork, config: EpisodeConfig | None = None,
                 scenario: Scenario | None = None, weights: RewardWeights | None = None,
                 observe: bool = True, planner_name: str = "rl"):
        self.net = net
        self.config = config or EpisodeConfig()
        self.weights = weights or RewardWeights()
        self.observe_graphs = observe
        self.planner_name = planner_name
        if self.config.spawn_mode == "scenario_replay" and scenario is None:
            raise ValueError("scenario_replay needs a scenario")
        self.scenario = scenario
        self._lanes = sorted(lane.id for lane in net.incoming_lanes())
        self._paths_by_lane = {lid: {p.maneuver: p for p in net.paths_from(lid)} for lid in self._lanes}
        self.reset()

    # -- episode control ------------------------------------------------------
    def reset(self, seed: int | None = None, ramp_progress: float | None = None) -> SceneGraph | None:
        if seed is not None:
            self.config = replace(self.config, seed=seed)
        if ramp_progress is not None:
            self.config = replace(self.config, ramp_progress=ramp_progress)
        self.rng = substream(self.config.seed, "spawn")
        self.time = 0.0
        self.steps = 0
        self.done = False
        self.vehicles: list[VehicleState] = []
        self.records: dict[int, VehicleRecord] = {}
        self.collisions: list[tuple[float, int, int]] = []
        self.trajectories = [] if self.config.record_trajectories else None
        self._next_id = 0
        self._pending = {lid: [] for lid in self._lanes}
        self._event_cursor = 0
        self.episode_return = 0.0
        self._spawn()
        return self.observe() if self.observe_graphs else None

    def observe(self) -> SceneGraph:
        return build_graph(self.vehicles, self.net)

    def step(self, actions) -> tuple[SceneGraph | None, float, bool, StepInfo]:
        if self.done:
            raise RuntimeError("episode finished; call reset()")
        actions = np.clip(np.asarray(actions, dtype=np.float64).reshape(-1), -A_MAX, A_MAX)
        if actions.size != len(self.vehicles):
            raise ValueError(f"{actions.size} actions for {len(self.vehicles)} vehicles")
        cfg = self.config
        paths = self.net.paths
        moved = [step_vehicle(v, float(a), cfg.dt, paths[v.path_id])
                 for v, a in zip(self.vehicles, actions)]
        self.time = round(self.time + cfg.dt, 10)
        self.steps += 1

        pairs = collision_pairs(moved)
        breakdown = step_reward(actions, moved, self.net, self.weights, pairs)
        self.episode_return += breakdown.total
        for v in moved:
            self._track(v)
        hit = set()
        for a, b in pairs:
            self.collisions.append((self.time, a, b))
            hit.update((a, b))
        for vid in hit:
            self.records[vid].collided = True

        despawned = []
        keep = []
        for v in moved:
            path = paths[v.path_id]
            if v.raw_arclen > path.exit_s_raw + DESPAWN_MARGIN:
                self.records[v.id].cross_time = self.time
                despawned.append(v.id)
            elif v.id in hit and not cfg.terminate_on_collision:
                despawned.append(v.id)
            else:
                keep.append(v)
        self.vehicles = keep

        timeout = self.time >= cfg.max_duration - 1e-9
        self.done = timeout or (bool(pairs) and cfg.terminate_on_collision)
        spawned = [] if self.done else self._spawn()
        graph = self.observe() if self.observe_graphs else None
        return graph, breakdown.total, self.done, StepInfo(breakdown, pairs, spawned, despawned,
                                                           timeout and not pairs)

    def add_vehicle(self, state: VehicleState) -> None:
        """Insert a vehicle directly (tests and scripted setups)."""
        path = self.net.paths[state.path_id]
        self._next_id = max(self._next_id, state.id + 1)
        self.vehicles.append(state)
        self.vehicles.sort(key=lambda v: v.id)
        self._register(state, path)

    # -- bookkeeping ------------------------------------------------------------
    def _register(self, v: VehicleState, path) -> None:
        self.records[v.id] = VehicleRecord(
            id=v.id, path_id=v.path_id, maneuver=path.maneuver, spawn_time=self.time,
            road_priority="major" if self.net.is_major(path.source) else "minor")
        self._track(v)

    def _track(self, v: VehicleState) -> None:
        rec = self.records[v.id]
        rec.min_speed = min(rec.min_speed, v.speed)
        rec.stopped = rec.min_speed < STOP_SPEED
        if v.raw_arclen >= self.net.paths[v.path_id].entry_s_raw:
            rec.reached_entry = True
        if self.trajectories is not None:
            self.trajectories.append((self.time, v.id, v.raw_arclen, v.x, v.y, v.speed))

    # -- spawning ---------------------------------------------------------------
    def lane_has_room(self, lane_id: str, speed: float) -> bool:
        """Room for a vehicle entering ``lane_id`` at ``speed`` behind the last vehicle there.

        Needs at least min_spawn_gap of free lane and enough distance to come
        down to the last vehicle's speed at SPAWN_DECEL.
        """
        rear = math.inf
        lead_speed = 0.0
        for v in self.vehicles:
            if self.net.paths[v.path_id].lane_sequence[0] != lane_id:
                continue
            r = v.raw_arclen - 0.5 * v.length
            if r < rear:
                rear, lead_speed = r, v.speed
        if math.isinf(rear):
            return True
        gap = rear - VEHICLE_LENGTH
        needed = max(self.config.min_spawn_gap,
                     SPAWN_MIN_GAP + max(speed * speed - lead_speed * lead_speed, 0.0) / (2 * SPAWN_DECEL))
        return gap >= needed

    def _place(self, path, speed: float) -> VehicleState:
        vid = self._next_id
        self._next_id += 1
        mode = "rl" if self.planner_name == "rl" else self.planner_name
        state = place_on_path(vid, path, 0.5 * VEHICLE_LENGTH, min(speed, V_MAX),
                              control_mode=mode, spawn_time=self.time)
        self.vehicles.append(state)
        self._register(state, path)
        return state

    def _spawn(self) -> list[int]:
        if self.config.spawn_mode == "training_curriculum":
            return self._spawn_training()
        return self._spawn_scenario()

    def _spawn_training(self) -> list[int]:
        out = []
        for lane_id, maneuver, speed in training_spawner(
                self.net, self._lanes, self.rng, self.config.ramp_progress, self.config.spawn_probability):
            if len(self.vehicles) >= self.config.vehicle_cap:
                break
            if self.lane_has_room(lane_id, speed):
                out.append(self._place(self._paths_by_lane[lane_id][maneuver], speed).id)
        return out

    def _spawn_scenario(self) -> list[int]:
        events = self.scenario.events
        while self._event_cursor < len(events) and events[self._event_cursor].time <= self.time + 1e-9:
            ev = events[self._event_cursor]
            self._pending[ev.lane].append(ev)
            self._event_cursor += 1
        out = []
        for lane_id in self._lanes:
            queue = self._pending[lane_id]
            if not queue or len(self.vehicles) >= self.config.vehicle_cap:
                continue
            ev = queue[0]
            if self.lane_has_room(lane_id, ev.speed):
                queue.pop(0)
                out.append(self._place(self.net.paths[ev.path], ev.speed).id)
        return out

    @property
    def pending_spawns(self) -> int:
        n = sum(len(q) for q in self._pending.values())
        if self.scenario is not None:
            n += len(self.scenario.events) - self._event_cursor
        return n


def training_spawner(net: RoadNetwork, lanes: list[str], rng: np.random.Generator,
                     ramp_progress: float, base_probability: float = 0.05):
    """Candidate spawns for one step: (lane, maneuver, speed) for each lane that fires.

    Draws the same number of random values every call so the stream does not
    depend on which lanes fire.
    """
    p = base_probability * min(max(ramp_progress, 0.0), 1.0)
    out = []
    for lane_id in lanes:
        fire, pick, frac = rng.random(3)
        if fire < p:
            limit = net.lanes[lane_id].speed_limit
            out.append((lane_id, MANEUVERS[int(pick * len(MANEUVERS))], (0.6 + 0.4 * frac) * limit))
    return out


def generate_scenario(net: RoadNetwork, rate_major: float, duration: float, seed: int,
                      shift: float = ARRIVAL_SHIFT) -> Scenario:
    """Seeded spawn schedule with shifted-exponential gaps per incoming lane.

    Minor-road lanes get half the major rate. Gaps are shift + Exp with the
    exponential mean chosen so the mean gap equals 1/rate.
    """
    if not 0 < rate_major < 1.0 / shift:
        raise ValueError(f"rate {rate_major} veh/s infeasible with a {shift} s minimum gap")
    if duration <= 0:
        raise ValueError("duration must be positive")
    events = []
    for lane in sorted(net.incoming_lanes(), key=lambda l: l.id):
        rate = rate_major if lane.priority == "major" else 0.5 * rate_major
        rng = substream(seed, f"arrivals/{lane.id}")
        paths = {p.maneuver: p for p in net.paths_from(lane.id)}
        t = 0.0
        while True:
            t += shift + rng.exponential(1.0 / rate - shift)
            if t >= duration:
                break
            maneuver = MANEUVERS[int(rng.integers(len(MANEUVERS)))]
            speed = float(rng.uniform(0.6, 1.0) * lane.speed_limit)
            events.append(SpawnEvent(round(t, 6), lane.id, paths[maneuver].id, maneuver, speed))
    events.sort(key=lambda e: (e.time, e.lane))
    return Scenario(events, duration, seed, rate_major)


def scenario_suite(net: RoadNetwork, count: int, seed: int, duration: float = 100.0,
                   rate_range: tuple[float, float] = (0.2, 0.4)) -> list[Scenario]:
    """Evaluation suite; the per-scenario major-lane rate is drawn uniformly from ``rate_range``."""
    rng = substream(seed, "suite")
    rates = rng.uniform(*rate_range, size=count)
    seeds = rng.integers(0, 2**31 - 1, size=count)
    return [generate_scenario(net, float(r), duration, int(s)) for r, s in zip(rates, seeds)]


def run_scenario(scn: Scenario, planner, net: RoadNetwork, collect=None,
                 record_trajectories: bool = False, seed: int | None = None) -> EpisodeResult:
    """Run one evaluation episode under ``planner``.

    Collided vehicles are removed and the episode continues, so every spawn
    event gets its chance. A planner exception ends the episode with the
    message stored in ``aborted``.
    """
    cfg = EpisodeConfig(max_duration=scn.duration, spawn_mode="scenario_replay",
                        seed=scn.seed if seed is None else seed, vehicle_cap=20,
                        terminate_on_collision=False, record_trajectories=record_trajectories)
    env = IntersectionEnv(net, cfg, scenario=scn, observe=False, planner_name=planner.name)
    planner.reset()
    aborted = None
    while not env.done:
        try:
            actions = planner.act(env)
        except Exception as exc:  # surfaced in the result instead of crashing a whole suite
            aborted = f"{type(exc).__name__}: {exc}"
            break
        env.step(actions)
    result = EpisodeResult(planner=planner.name, seed=scn.seed, duration=scn.duration,
                           vehicles=[env.records[k] for k in sorted(env.records)],
                           collisions=list(env.collisions), trajectories=env.trajectories,
                           pending_spawns=env.pending_spawns, aborted=aborted)
    if collect is not None:
        collect(result)
    return result
