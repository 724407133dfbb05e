"""Relational graph networks for the actor (per-vehicle acceleration) and critic (graph Q)."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from ..dynamics import A_MAX
from ..scene_graph import NUM_EDGE_TYPES, EDGE_TYPES, SceneGraph
from . import tensor as T
from .tensor import Tensor

HIDDEN = 64
INPUT_WIDTH = {"actor": 3, "critic": 4}
CONV_LAYERS = ("conv_1", "conv_2")
CHECKPOINT_VERSION = 1


def parameter_shapes(kind: str, hidden: int = HIDDEN) -> dict[str, tuple[int, ...]]:
    if kind not in INPUT_WIDTH:
        raise ValueError(f"unknown network kind {kind!r}")
    shapes = {"enc.W": (INPUT_WIDTH[kind], hidden), "enc.b": (hidden,)}
    for layer in CONV_LAYERS:
        for name in EDGE_TYPES:
            shapes[f"{layer}.W_{name}"] = (hidden, hidden)
        shapes[f"{layer}.W_0"] = (hidden, hidden)
        shapes[f"{layer}.bias"] = (hidden,)
    shapes["a_dec.W"] = (hidden, 1)
    shapes["a_dec.b"] = (1,)
    return shapes


class ParameterSet:
    """Named weight arrays of one actor or critic network."""

    def __init__(self, kind: str, arrays: dict[str, np.ndarray], hidden: int):
        shapes = parameter_shapes(kind, hidden)
        if set(arrays) != set(shapes):
            raise ValueError(f"parameter names do not match a {kind} network")
        for name, shape in shapes.items():
            if np.shape(arrays[name]) != shape:
                raise ValueError(f"{name}: shape {np.shape(arrays[name])} != {shape}")
        self.kind = kind
        self.hidden = hidden
        self.arrays = {k: np.array(arrays[k], dtype=np.float64) for k in shapes}

    @classmethod
    def init(cls, kind: str, rng: np.random.Generator, hidden: int = HIDDEN) -> "ParameterSet":
        """Uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        arrays = {}
        for name, shape in parameter_shapes(kind, hidden).items():
            fan_in = shape[0] if len(shape) == 2 else _fan_in_of_bias(name, kind, hidden)
            bound = 1.0 / np.sqrt(fan_in)
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        return cls(kind, arrays, hidden)

    @classmethod
    def zeros(cls, kind: str, hidden: int = HIDDEN) -> "ParameterSet":
        return cls(kind, {k: np.zeros(s) for k, s in parameter_shapes(kind, hidden).items()}, hidden)

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.kind, self.arrays, self.hidden)

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.arrays.items()}

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "hidden": self.hidden,
            "arrays": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                       for k, v in self.arrays.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ParameterSet":
        arrays = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
                  for k, v in data["arrays"].items()}
        return cls(data["kind"], arrays, int(data["hidden"]))


def _fan_in_of_bias(name: str, kind: str, hidden: int) -> int:
    return INPUT_WIDTH[kind] if name.startswith("enc") else hidden


@dataclass
class Relation:
    """Edges of one type ordered by (dst, src), the order segment_max expects."""

    src: np.ndarray
    dst: np.ndarray
    layout: T.SegmentLayout
    scatter: sparse.csr_matrix  # (num_nodes, num_edges) incidence of src


@dataclass
class GraphBatch:
    """Disjoint union of scene graphs, laid out for message passing."""

    features: np.ndarray
    relations: list[Relation]
    graph_index: np.ndarray
    num_graphs: int
    offsets: np.ndarray
    pool: sparse.csr_matrix  # (num_graphs, num_nodes)

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]


def batch_graphs(graphs: list[SceneGraph]) -> GraphBatch:
    sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    feats = np.concatenate([g.features for g in graphs]) if graphs else np.zeros((0, 3))
    graph_index = np.repeat(np.arange(len(graphs)), sizes)
    edge_rows = [g.edges + np.array([off, 0, off]) for g, off in zip(graphs, offsets) if len(g.edges)]
    edges = np.concatenate(edge_rows) if edge_rows else np.zeros((0, 3), dtype=np.int64)
    n = int(offsets[-1])
    relations = []
    for r in range(NUM_EDGE_TYPES):
        sel = edges[edges[:, 1] == r]
        order = np.lexsort((sel[:, 0], sel[:, 2]))
        src, dst = sel[order, 0], sel[order, 2]
        scatter = sparse.csr_matrix((np.ones(len(src)), (src, np.arange(len(src)))), shape=(n, len(src)))
        relations.append(Relation(src, dst, T.SegmentLayout(dst), scatter))
    pool = sparse.csr_matrix((np.ones(n), (graph_index, np.arange(n))), shape=(len(graphs), n))
    return GraphBatch(feats.reshape(-1, 3), relations, graph_index, len(graphs), offsets, pool)


def as_batch(graph) -> GraphBatch:
    if isinstance(graph, GraphBatch):
        return graph
    if isinstance(graph, SceneGraph):
        return batch_graphs([graph])
    return batch_graphs(list(graph))


def _as_tensors(params) -> dict[str, Tensor]:
    if isinstance(params, ParameterSet):
        return params.tensors()
    return params


def _kind(params) -> str | None:
    return params.kind if isinstance(params, ParameterSet) else None


def dense(h: Tensor, W: Tensor, b: Tensor) -> Tensor:
    return T.add(T.matmul(h, W), b)


def rgcn_layer(h: Tensor, batch: GraphBatch, params: dict[str, Tensor], prefix: str) -> Tensor:
    """One relational convolution with element-wise max over typed in-neighbours."""
    h = T.as_tensor(h)
    if h.shape[0] != batch.num_nodes:
        raise ValueError(f"{h.shape[0]} feature rows for {batch.num_nodes} vertices")
    out = dense(h, params[f"{prefix}.W_0"], params[f"{prefix}.bias"])
    for r, name in enumerate(EDGE_TYPES):
        rel = batch.relations[r]
        if len(rel.src) == 0:
            continue
        msg = T.gather_rows(T.matmul(h, params[f"{prefix}.W_{name}"]), rel.src, rel.scatter)
        out = T.add(out, T.segment_max(msg, rel.dst, batch.num_nodes, rel.layout))
    return T.relu(out)


def _trunk(x: Tensor, batch: GraphBatch, p: dict[str, Tensor]) -> Tensor:
    h = T.relu(dense(x, p["enc.W"], p["enc.b"]))
    for layer in CONV_LAYERS:
        h = rgcn_layer(h, batch, p, layer)
    return h


def actor_forward(graph, params) -> Tensor:
    """Acceleration command (m/s^2) per vertex, shape (n,)."""
    if _kind(params) not in (None, "actor"):
        raise ValueError("actor_forward needs actor parameters")
    batch = as_batch(graph)
    p = _as_tensors(params)
    h = _trunk(Tensor(batch.features), batch, p)
    u = T.tanh(dense(h, p["a_dec.W"], p["a_dec.b"]))
    return _flatten(T.scale(u, A_MAX))


def critic_forward(graph, actions, params) -> Tensor:
    """Q value per graph, shape (num_graphs,).

    ``actions`` are accelerations in m/s^2 for every vertex of the batch,
    either a plain array or a Tensor (to differentiate through the actor).
    """
    if _kind(params) not in (None, "critic"):
        raise ValueError("critic_forward needs critic parameters")
    batch = as_batch(graph)
    a = T.as_tensor(actions)
    if a.data.size != batch.num_nodes:
        raise ValueError(f"{a.data.size} actions for {batch.num_nodes} vertices")
    a = _column(a)
    p = _as_tensors(params)
    x = T.concat([Tensor(batch.features), T.scale(a, 1.0 / A_MAX)], axis=1)
    h = _trunk(x, batch, p)
    pooled = T.segment_sum(h, batch.graph_index, batch.num_graphs, batch.pool)
    return _flatten(dense(pooled, p["a_dec.W"], p["a_dec.b"]))


def _flatten(t: Tensor) -> Tensor:
    return _reshape(t, (t.shape[0],))


def _column(t: Tensor) -> Tensor:
    return _reshape(t, (t.data.size, 1))


def _reshape(t: Tensor, shape) -> Tensor:
    old = t.shape
    return T._result(t.data.reshape(shape), (t,), lambda g: (g.reshape(old),))


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(path, networks: dict[str, ParameterSet], meta: dict | None = None) -> None:
    """JSON checkpoint; floats are written with shortest round-trip repr, so reload is exact."""
    doc = {
        "format": "coopaim-checkpoint",
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "networks": {name: ps.to_dict() for name, ps in networks.items()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> tuple[dict[str, ParameterSet], dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "coopaim-checkpoint":
        raise ValueError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    nets = {name: ParameterSet.from_dict(d) for name, d in doc["networks"].items()}
    return nets, doc.get("meta", {})
