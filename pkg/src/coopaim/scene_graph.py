"""Graph-structured scene state: one vertex per vehicle, typed directed edges."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import VehicleState
from .road_net import Relation, RoadNetwork

SAME_LANE, CROSSING = 0, 1
EDGE_TYPES = ("same_lane", "crossing")
NUM_EDGE_TYPES = len(EDGE_TYPES)

S_SCALE = 100.0  # m
# standardised footprint of the distance measure
STD_LENGTH, STD_WIDTH = 5.0, 2.0
MIN_DISTANCE = 0.1  # floor of the distance measure before inversion


@dataclass
class SceneGraph:
    vehicle_ids: list[int]
    features: np.ndarray  # (n, 3): s, v, d
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))  # src, type, dst

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64).reshape(-1, 3)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 3)
        n = len(self.vehicle_ids)
        if self.features.shape[0] != n:
            raise ValueError("one feature row per vertex required")
        if len(self.edges) and (self.edges[:, [0, 2]].min() < 0 or self.edges[:, [0, 2]].max() >= n):
            raise ValueError("edge endpoint out of range")

    @property
    def num_nodes(self) -> int:
        return len(self.vehicle_ids)

    def edge_set(self) -> set[tuple[int, str, int]]:
        """Edges keyed by vehicle id, independent of vertex order."""
        ids = self.vehicle_ids
        return {(ids[s], EDGE_TYPES[t], ids[d]) for s, t, d in self.edges.tolist()}

    def permuted(self, perm) -> "SceneGraph":
        """Graph with vertex ``k`` taken from old vertex ``perm[k]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        edges = self.edges.copy()
        if len(edges):
            edges[:, 0] = inv[edges[:, 0]]
            edges[:, 2] = inv[edges[:, 2]]
        return SceneGraph([self.vehicle_ids[k] for k in perm], self.features[perm], edges)

    def to_json(self) -> str:
        return json.dumps({
            "version": 1,
            "vertices": [{"id": vid, "features": row} for vid, row in
                         zip(self.vehicle_ids, self.features.tolist())],
            "edges": [[s, EDGE_TYPES[t], d] for s, t, d in self.edges.tolist()],
        })

    @classmethod
    def from_json(cls, text: str) -> "SceneGraph":
        data = json.loads(text)
        if data.get("version") != 1:
            raise ValueError(f"unsupported graph dump version {data.get('version')}")
        ids = [v["id"] for v in data["vertices"]]
        feats = [v["features"] for v in data["vertices"]]
        edges = [[s, EDGE_TYPES.index(t), d] for s, t, d in data["edges"]]
        return cls(ids, np.array(feats, dtype=np.float64).reshape(-1, 3), edges)


def mahalanobis(src: VehicleState, dst: VehicleState) -> float:
    """Footprint-weighted distance from ``src`` to ``dst``, covariance rotated by src heading."""
    dx, dy = dst.x - src.x, dst.y - src.y
    c, s = math.cos(src.heading), math.sin(src.heading)
    lon = c * dx + s * dy
    lat = -s * dx + c * dy
    return math.sqrt(lon * lon * 4.0 / STD_LENGTH ** 2 + lat * lat * 4.0 / STD_WIDTH ** 2)


def distance_matrix(vehicles: list[VehicleState]) -> np.ndarray:
    """All pairwise distances, row = measuring vehicle; diagonal is +inf."""
    n = len(vehicles)
    if n == 0:
        return np.zeros((0, 0))
    xy = np.array([(v.x, v.y) for v in vehicles])
    h = np.array([v.heading for v in vehicles])
    c, s = np.cos(h)[:, None], np.sin(h)[:, None]
    dx = xy[None, :, 0] - xy[:, None, 0]
    dy = xy[None, :, 1] - xy[:, None, 1]
    lon = c * dx + s * dy
    lat = -s * dx + c * dy
    d = np.sqrt(lon ** 2 * (4.0 / STD_LENGTH ** 2) + lat ** 2 * (4.0 / STD_WIDTH ** 2))
    np.fill_diagonal(d, np.inf)
    return d


def node_features(target: VehicleState, others: list[VehicleState], net: RoadNetwork) -> np.ndarray:
    path = net.paths[target.path_id]
    s = path.frenet(target.raw_arclen) / S_SCALE
    v = target.speed / path.speed_limit_at(target.raw_arclen)
    dmin = min((mahalanobis(target, o) for o in others if o is not target), default=math.inf)
    d = 0.0 if math.isinf(dmin) else 1.0 / max(dmin, MIN_DISTANCE)
    return np.array([s, v, d])


def _feature_matrix(vehicles: list[VehicleState], net: RoadNetwork) -> np.ndarray:
    n = len(vehicles)
    feats = np.zeros((n, 3))
    if n == 0:
        return feats
    for k, veh in enumerate(vehicles):
        path = net.paths[veh.path_id]
        feats[k, 0] = path.frenet(veh.raw_arclen) / S_SCALE
        feats[k, 1] = veh.speed / path.speed_limit_at(veh.raw_arclen)
    dmin = distance_matrix(vehicles).min(axis=1)
    finite = np.isfinite(dmin)
    feats[finite, 2] = 1.0 / np.maximum(dmin[finite], MIN_DISTANCE)
    return feats


def leader_coordinate(net: RoadNetwork, follower: VehicleState, other: VehicleState) -> float | None:
    """Position of ``other`` expressed on the follower's path, if it drives ahead in the same space."""
    if other.path_id == follower.path_id:
        return other.raw_arclen
    c = net.conflicts.get(follower.path_id, other.path_id)
    if c.relation is Relation.SAME_LANE_PREFIX:
        if other.raw_arclen < c.span_b[0] and follower.raw_arclen < c.span_a[0]:
            return other.raw_arclen
        return None
    if c.relation is Relation.MERGING:
        if other.raw_arclen >= c.span_b[0]:
            return other.raw_arclen - c.span_b[0] + c.span_a[0]
    return None


def find_leaders(vehicles: list[VehicleState], net: RoadNetwork) -> dict[int, tuple[int, float]]:
    """Immediate predecessor of each vehicle: index -> (leader index, bumper gap in m)."""
    leaders: dict[int, tuple[int, float]] = {}
    for i, fol in enumerate(vehicles):
        best = None
        for j, oth in enumerate(vehicles):
            if i == j:
                continue
            coord = leader_coordinate(net, fol, oth)
            if coord is None or coord < fol.raw_arclen:
                continue
            if coord == fol.raw_arclen and oth.id > fol.id:
                continue
            gap = coord - fol.raw_arclen - 0.5 * (fol.length + oth.length)
            key = (gap, oth.id)
            if best is None or key < best[0]:
                best = (key, j)
        if best is not None:
            leaders[i] = (best[1], best[0][0])
    return leaders


def passed_conflict(net: RoadNetwork, veh: VehicleState, other_path: str) -> bool:
    c = net.conflicts.get(veh.path_id, other_path)
    if c.relation is Relation.MERGING:
        return veh.raw_arclen >= c.span_a[0]
    return veh.raw_arclen - 0.5 * veh.length > c.span_a[1]


def build_graph(vehicles: list[VehicleState], net: RoadNetwork) -> SceneGraph:
    n = len(vehicles)
    edges: list[tuple[int, int, int]] = []
    for i, (j, _gap) in find_leaders(vehicles, net).items():
        edges.append((j, SAME_LANE, i))
    for i in range(n):
        for j in range(i + 1, n):
            a, b = vehicles[i], vehicles[j]
            if a.path_id == b.path_id:
                continue
            rel = net.conflicts.get(a.path_id, b.path_id).relation
            if rel is not Relation.CROSSING and rel is not Relation.MERGING:
                continue
            if passed_conflict(net, a, b.path_id) or passed_conflict(net, b, a.path_id):
                continue
            edges.append((i, CROSSING, j))
            edges.append((j, CROSSING, i))
    edges.sort()
    return SceneGraph([v.id for v in vehicles], _feature_matrix(vehicles, net),
                      np.array(edges, dtype=np.int64).reshape(-1, 3))
