import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coopaim.road_net import (ARMS, IntersectionSpec, Relation, build_four_way, conflict_between,
                              frenet_position, load_intersection_spec)

from oracles import polyline_length, polylines_intersect, resample


def test_default_network_has_twelve_paths(net):
    assert len(net.paths) == 12
    assert {p.maneuver for p in net.paths.values()} == {"left", "straight", "right"}
    for arm in ARMS:
        assert sorted(p.maneuver for p in net.paths_from(f"in_{arm}")) == ["left", "right", "straight"]


def test_perpendicular_straights_cross(net):
    assert conflict_between(net.conflicts, "NS", "EW").relation is Relation.CROSSING
    assert conflict_between(net.conflicts, "WE", "SN").relation is Relation.CROSSING


def test_path_with_itself_has_no_conflict(net):
    for pid in net.paths:
        assert net.conflicts.get(pid, pid).relation is Relation.NONE


def test_opposing_left_turns_cross(net):
    # left from E ends at S, left from W ends at N
    assert net.paths["ES"].maneuver == "left" and net.paths["WN"].maneuver == "left"
    assert conflict_between(net.conflicts, "ES", "WN").relation is Relation.CROSSING


def test_shared_incoming_lane_is_same_lane_prefix(net):
    assert conflict_between(net.conflicts, "ES", "EW").relation is Relation.SAME_LANE_PREFIX


def test_right_turn_misses_orthogonal_straight(net):
    # right turn S -> E stays in the south-east corner; E -> W runs north of the centre line
    assert net.paths["SE"].maneuver == "right"
    assert conflict_between(net.conflicts, "SE", "EW").relation is Relation.NONE
    P = resample(list(zip(net.paths["SE"].xs, net.paths["SE"].ys)))
    Q = resample(list(zip(net.paths["EW"].xs, net.paths["EW"].ys)))
    assert not polylines_intersect(P, Q)


def test_unknown_pair_is_an_error(net):
    with pytest.raises(KeyError):
        net.conflicts.get("NS", "XX")


def test_conflict_table_is_symmetric(net):
    for a in net.paths:
        for b in net.paths:
            ab, ba = net.conflicts.get(a, b), net.conflicts.get(b, a)
            assert ab.relation is ba.relation
            assert ab.span_a == ba.span_b or (math.isnan(ab.span_a[0]) and math.isnan(ba.span_b[0]))


def test_frenet_reference_points(net):
    for p in net.paths.values():
        assert frenet_position(p, p.exit_s_raw) == 0.0
        assert frenet_position(p, p.entry_s_raw) == -net.s_ref


def test_frenet_is_metric_before_entry(net):
    # arc length up to the stop line measured on the raw polyline
    for p in net.paths.values():
        pts = np.array(list(zip(p.xs, p.ys)))
        inc = pts[: len(p.lanes[0].centerline)]
        entry_from_polyline = polyline_length(inc[:, 0], inc[:, 1]) - net.spec.stop_line_offset
        assert entry_from_polyline == pytest.approx(p.entry_s_raw, abs=1e-9)
        assert frenet_position(p, p.entry_s_raw - 10.0) == pytest.approx(-net.s_ref - 10.0, abs=1e-12)


def test_frenet_interior_scales_to_reference_length(net):
    p = net.paths["NE"]  # left turn, shorter than s_ref
    mid = 0.5 * (p.entry_s_raw + p.exit_s_raw)
    assert frenet_position(p, mid) == pytest.approx(-net.s_ref / 2, abs=1e-12)


NET = build_four_way()


@settings(max_examples=200, deadline=None)
@given(pid=st.sampled_from(sorted(NET.paths)), a=st.floats(0, 1), b=st.floats(0, 1))
def test_frenet_strictly_monotone(pid, a, b):
    p = NET.paths[pid]
    lo, hi = sorted((a * p.exit_s_raw, b * p.exit_s_raw))
    if hi - lo < 1e-9:
        return
    assert frenet_position(p, lo) < frenet_position(p, hi)


def test_internal_speed_limits(net):
    for p in net.paths.values():
        lim = p.lanes[1].speed_limit
        if p.maneuver == "left":
            assert lim == 7.0
        elif p.maneuver == "right":
            assert lim == 5.0
        else:
            assert lim == p.lanes[0].speed_limit


def test_major_arms(net):
    assert net.is_major("E") and net.is_major("W")
    assert not net.is_major("N") and not net.is_major("S")


def test_spec_rejects_short_arms():
    with pytest.raises(ValueError):
        build_four_way(IntersectionSpec(approach_length=4.0))
    with pytest.raises(ValueError):
        build_four_way(IntersectionSpec(exit_length=3.0))


def test_spec_rejects_non_positive_values():
    with pytest.raises(ValueError):
        build_four_way(IntersectionSpec(lane_width=0.0))


def test_spec_round_trip_through_file(tmp_path):
    spec = IntersectionSpec(approach_length=80.0, major_arms=("N", "S"))
    f = tmp_path / "spec.json"
    f.write_text(json.dumps(spec.to_dict()))
    back = load_intersection_spec(f)
    assert back == spec
    assert build_four_way(back).is_major("N")


def test_spec_rejects_unknown_keys():
    with pytest.raises(ValueError):
        IntersectionSpec.from_dict({"lane_widht": 3.0})
