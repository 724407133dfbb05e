"""Team reward: weighted sum of velocity, action, idle, proximity and collision terms."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .dynamics import A_MAX, STOP_SPEED, VehicleState, check_collision
from .road_net import RoadNetwork
from .scene_graph import distance_matrix

PROXIMITY_THRESHOLD = 3.0  # distance-measure units; the ramp starts here and saturates at 1


@dataclass(frozen=True)
class RewardWeights:
    velocity: float = 0.03
    action: float = 0.01
    idle: float = 0.01
    proximity: float = 0.2
    collision: float = 1.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"reward weight {name} must be non-negative")


@dataclass(frozen=True)
class RewardBreakdown:
    velocity: float
    action: float
    idle: float
    proximity: float
    collision: float
    total: float
    collision_flag: bool

    COMPONENTS = ("velocity", "action", "idle", "proximity", "collision")


def velocity_reward(v: float, v_lim: float) -> float:
    x = v / v_lim
    if x <= 0.8:
        return 1.25 * x
    if x <= 1.0:
        return 1.0
    # keep the component inside [-1, 1] for strong speeding
    return max(6.0 - 5.0 * x, -1.0)


def proximity_from_distance(d_min: float, threshold: float = PROXIMITY_THRESHOLD) -> float:
    if math.isinf(d_min):
        return 0.0
    return min(max((threshold - d_min) / (threshold - 1.0), 0.0), 1.0)


def proximity_penalty(target: VehicleState, others: list[VehicleState]) -> float:
    vehicles = [target] + [o for o in others if o is not target]
    return proximity_from_distance(float(distance_matrix(vehicles)[0].min()) if len(vehicles) > 1
                                   else math.inf)


def collision_pairs(vehicles: list[VehicleState]) -> list[tuple[int, int]]:
    """Colliding pairs as (id, id) with the smaller id first."""
    pairs = []
    for i in range(len(vehicles)):
        for j in range(i + 1, len(vehicles)):
            if check_collision(vehicles[i], vehicles[j]):
                a, b = vehicles[i].id, vehicles[j].id
                pairs.append((min(a, b), max(a, b)))
    return pairs


def step_reward(actions, vehicles: list[VehicleState], net: RoadNetwork,
                weights: RewardWeights = RewardWeights(),
                collisions: list[tuple[int, int]] | None = None) -> RewardBreakdown:
    """Reward of one transition, evaluated on the post-step vehicles.

    ``actions`` are the accelerations applied to ``vehicles`` (same order).
    Pass ``collisions`` when already computed to skip the pairwise test.
    """
    n = len(vehicles)
    if n == 0:
        return RewardBreakdown(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, False)
    actions = np.asarray(actions, dtype=np.float64)
    if actions.shape != (n,):
        raise ValueError(f"{actions.size} actions for {n} vehicles")
    if collisions is None:
        collisions = collision_pairs(vehicles)

    vel = np.mean([velocity_reward(v.speed, net.paths[v.path_id].speed_limit_at(v.raw_arclen))
                   for v in vehicles])
    act = float(np.mean(np.abs(actions)) / A_MAX)
    idle = 1.0 if all(v.speed < STOP_SPEED for v in vehicles) else 0.0
    dmin = distance_matrix(vehicles).min(axis=1)
    prox = float(np.mean([proximity_from_distance(d) for d in dmin]))
    coll = 1.0 if collisions else 0.0
    total = (weights.velocity * vel - weights.action * act - weights.idle * idle
             - weights.proximity * prox - weights.collision * coll)
    return RewardBreakdown(float(vel), act, idle, prox, coll, float(total), bool(collisions))
