import math

import pytest
from hypothesis import given, settings, strategies as st

from coopaim.dynamics import (A_MAX, A_MIN, DT, STOP_SPEED, VehicleState, check_collision,
                              command_range, place_on_path, step_vehicle, unit_to_accel)

from oracles import rect_corners, rects_overlap


def test_rest_stays_at_rest(net):
    p = net.paths["WE"]
    v0 = place_on_path(1, p, 30.0, 0.0)
    v1 = step_vehicle(v0, 0.0, DT, p)
    assert (v1.x, v1.y, v1.heading, v1.speed) == pytest.approx((v0.x, v0.y, v0.heading, 0.0), abs=1e-12)
    assert v1.raw_arclen == pytest.approx(v0.raw_arclen, abs=1e-12)


def test_uniform_motion_on_straight_lane(net):
    p = net.paths["WE"]
    v1 = step_vehicle(place_on_path(1, p, 30.0, 10.0), 0.0, 0.1, p)
    assert v1.raw_arclen - 30.0 == pytest.approx(1.0, abs=1e-9)
    assert v1.speed == 10.0


def test_braking_clamps_at_standstill(net):
    p = net.paths["WE"]
    v1 = step_vehicle(place_on_path(1, p, 30.0, 2.0), -5.0, 1.0, p)
    assert v1.speed == 0.0
    # distance covered until standstill: v^2 / (2 |a|)
    assert v1.raw_arclen - 30.0 == pytest.approx(0.4, abs=1e-9)
    assert v1.stopped_flag


def test_command_range_and_unit_mapping():
    assert command_range() == (-5.0, 5.0)
    assert unit_to_accel(-1.0) == -5.0
    assert unit_to_accel(0.0) == 0.0
    assert unit_to_accel(1.0) == 5.0


def test_commanded_acceleration_is_clamped(net):
    p = net.paths["WE"]
    v1 = step_vehicle(place_on_path(1, p, 30.0, 5.0), 50.0, DT, p)
    assert v1.accel_cmd == A_MAX
    assert v1.speed == pytest.approx(5.0 + A_MAX * DT)


def _vs(x, y, h, length=5.0, width=2.0):
    return VehicleState(0, "WE", 0.0, x, y, h, 0.0, length=length, width=width)


def test_collision_examples():
    assert check_collision(_vs(0, 0, 0), _vs(0, 0, 0))
    assert not check_collision(_vs(0, 0, 0), _vs(0, 2.5, 0))
    assert check_collision(_vs(0, 0, 0), _vs(4.9, 0, 0))
    assert not check_collision(_vs(0, 0, 0), _vs(5.1, 0, 0))


pose = st.tuples(st.floats(-6, 6), st.floats(-6, 6), st.floats(-math.pi, math.pi))


@settings(max_examples=1000, deadline=None)
@given(a=pose, b=pose)
def test_collision_matches_separating_axis_oracle(a, b):
    va, vb = _vs(*a), _vs(*b)
    expected = rects_overlap(rect_corners(*a, 5.0, 2.0), rect_corners(*b, 5.0, 2.0))
    assert check_collision(va, vb) == expected
    assert check_collision(vb, va) == expected


@settings(max_examples=60, deadline=None)
@given(pid=st.sampled_from(["NE", "NS", "NW", "EN", "ES", "SW", "WS", "WN"]),
       accel=st.floats(A_MIN, A_MAX), v0=st.floats(0, 20))
def test_speed_never_negative_and_no_teleport(net, pid, accel, v0):
    p = net.paths[pid]
    v = place_on_path(1, p, 20.0, v0)
    for _ in range(30):
        nxt = step_vehicle(v, accel, DT, p)
        assert nxt.speed >= 0.0
        assert abs(nxt.raw_arclen - v.raw_arclen) <= 20.0 * DT + 0.5 * A_MAX * DT ** 2 + 1e-9
        v = nxt


@pytest.mark.parametrize("pid", ["NE", "NW", "ES", "EN", "SW", "SE", "WN", "WS"])
def test_turns_track_centerline_at_internal_limit(net, pid):
    p = net.paths[pid]
    limit = p.lanes[1].speed_limit
    v = place_on_path(1, p, p.entry_s_raw - 10.0, limit)
    worst = 0.0
    while v.raw_arclen < p.exit_s_raw + 10.0:
        v = step_vehicle(v, 0.0, DT, p)
        worst = max(worst, abs(p.lateral_offset(v.x, v.y, v.raw_arclen)))
    assert worst < 0.3


def test_stop_flag_is_sticky(net):
    p = net.paths["WE"]
    v = step_vehicle(place_on_path(1, p, 30.0, 0.2), 0.0, DT, p)
    assert v.speed < STOP_SPEED and v.stopped_flag
    v = step_vehicle(v, 5.0, DT, p)
    assert v.stopped_flag
