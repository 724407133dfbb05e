"""Kinematic bicycle stepping with a path-following lateral controller.

Planners only command longitudinal acceleration; steering comes from the
controller in :func:`lateral_curvature`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .road_net import Path

A_MIN, A_MAX = -5.0, 5.0  # m/s^2
DT = 0.1  # s
V_MAX = 20.0  # m/s, vehicle top speed
WHEELBASE = 2.7  # m
REAR_TO_COG = WHEELBASE / 2
MAX_STEER = 0.7  # rad
VEHICLE_LENGTH = 5.0
VEHICLE_WIDTH = 2.0
STOP_SPEED = 0.3  # m/s

# feedback gains in the arc-length domain, critically damped with 2 m natural length
K_LATERAL = 0.25
K_HEADING = 1.0


@dataclass
class VehicleState:
    id: int
    path_id: str
    raw_arclen: float
    x: float
    y: float
    heading: float
    speed: float
    accel_cmd: float = 0.0
    length: float = VEHICLE_LENGTH
    width: float = VEHICLE_WIDTH
    control_mode: str = "rl"  # rl | idm | fifo | scripted
    spawn_time: float = 0.0
    stopped_flag: bool = False
    steer: float = 0.0

    @property
    def pos(self) -> tuple[float, float]:
        return (self.x, self.y)


def command_range() -> tuple[float, float]:
    return (A_MIN, A_MAX)


def unit_to_accel(u: float) -> float:
    """Map a tanh-range value in [-1, 1] onto the acceleration range."""
    return A_MIN + (u + 1.0) * 0.5 * (A_MAX - A_MIN)


def place_on_path(vid: int, path: Path, raw_arclen: float, speed: float, **kw) -> VehicleState:
    x, y = path.point(raw_arclen)
    return VehicleState(vid, path.id, raw_arclen, x, y, path.heading(raw_arclen), speed, **kw)


def _slip(steer: float) -> float:
    return math.atan(REAR_TO_COG / WHEELBASE * math.tan(steer))


def lateral_curvature(state: VehicleState, path: Path, preview: float) -> float:
    """Curvature command for the centre of gravity.

    Path curvature feedforward at a short preview plus feedback on lateral
    offset and course error. The course includes the slip angle produced by
    the command itself (linearised, slip ~ REAR_TO_COG * curvature), so the
    feedback is solved implicitly instead of lagging one step.
    """
    s = state.raw_arclen
    e = path.lateral_offset(state.x, state.y, s)
    e_heading = (state.heading - path.heading(s) + math.pi) % (2 * math.pi) - math.pi
    kappa = path.curvature_at(s + preview) - K_LATERAL * e - K_HEADING * e_heading
    return kappa / (1.0 + K_HEADING * REAR_TO_COG)


def step_vehicle(state: VehicleState, accel: float, dt: float, path: Path) -> VehicleState:
    """Advance one vehicle by ``dt`` seconds under commanded acceleration."""
    accel = min(max(accel, A_MIN), A_MAX)
    v0 = state.speed
    v1 = v0 + accel * dt
    if v1 <= 0.0:
        ds = v0 * v0 / (-2.0 * accel) if accel < 0 else 0.0
        v1 = 0.0
    elif v1 > V_MAX:
        t_cap = (V_MAX - v0) / accel if accel > 0 else 0.0
        ds = v0 * t_cap + 0.5 * accel * t_cap * t_cap + V_MAX * (dt - t_cap)
        v1 = V_MAX
    else:
        ds = 0.5 * (v0 + v1) * dt

    kappa = lateral_curvature(state, path, 0.5 * ds)
    beta = math.asin(min(max(kappa * REAR_TO_COG, -1.0), 1.0))
    steer = math.atan(math.tan(beta) * WHEELBASE / REAR_TO_COG)
    if abs(steer) > MAX_STEER:
        steer = math.copysign(MAX_STEER, steer)
        beta = _slip(steer)
    kappa = math.sin(beta) / REAR_TO_COG

    chi0 = state.heading + beta
    chi1 = chi0 + kappa * ds
    if abs(kappa) > 1e-9:
        x = state.x + (math.sin(chi1) - math.sin(chi0)) / kappa
        y = state.y - (math.cos(chi1) - math.cos(chi0)) / kappa
    else:
        x = state.x + ds * math.cos(chi0)
        y = state.y + ds * math.sin(chi0)
    heading = (chi1 - beta + math.pi) % (2 * math.pi) - math.pi
    s = path.project(x, y, state.raw_arclen + ds)
    return replace(state, raw_arclen=s, x=x, y=y, heading=heading, speed=v1,
                   accel_cmd=accel, steer=steer,
                   stopped_flag=state.stopped_flag or v1 < STOP_SPEED)


def corners(state: VehicleState) -> list[tuple[float, float]]:
    c, s = math.cos(state.heading), math.sin(state.heading)
    hl, hw = state.length / 2, state.width / 2
    return [(state.x + c * dx - s * dy, state.y + s * dx + c * dy)
            for dx, dy in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))]


def check_collision(a: VehicleState, b: VehicleState) -> bool:
    """Separating-axis test between the two oriented footprints."""
    reach = math.hypot(a.length, a.width) / 2 + math.hypot(b.length, b.width) / 2
    dx, dy = b.x - a.x, b.y - a.y
    if dx * dx + dy * dy > reach * reach:
        return False
    ca, cb = corners(a), corners(b)
    for h in (a.heading, b.heading):
        for ax, ay in ((math.cos(h), math.sin(h)), (-math.sin(h), math.cos(h))):
            pa = [x * ax + y * ay for x, y in ca]
            pb = [x * ax + y * ay for x, y in cb]
            if max(pa) < min(pb) or max(pb) < min(pa):
                return False
    return True
