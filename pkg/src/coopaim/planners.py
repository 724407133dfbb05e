"""Planner selection: rule baselines or a trained actor."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .baselines import FifoPlanner, IdmParams, PriorityPlanner
from .gnn.network import ParameterSet, actor_forward, load_checkpoint
from .road_net import RoadNetwork
from .scene_graph import build_graph

PLANNERS = ("pr", "fifo", "rl")


class ActorPlanner:
    """Deterministic policy: one forward pass of the actor per step."""

    name = "rl"

    def __init__(self, net: RoadNetwork, actor: ParameterSet):
        if actor.kind != "actor":
            raise ValueError("ActorPlanner needs actor parameters")
        self.net = net
        self.actor = actor

    @classmethod
    def from_checkpoint(cls, net: RoadNetwork, path) -> "ActorPlanner":
        nets, _meta = load_checkpoint(path)
        if "actor" not in nets:
            raise ValueError(f"{path}: checkpoint holds no actor network")
        return cls(net, nets["actor"])

    def reset(self) -> None:
        pass

    def act(self, env) -> np.ndarray:
        if not env.vehicles:
            return np.zeros(0)
        return actor_forward(build_graph(env.vehicles, self.net), self.actor).data


def make_planner(name: str, net: RoadNetwork, checkpoint=None, idm: IdmParams | None = None):
    if name == "pr":
        return PriorityPlanner(net, idm)
    if name == "fifo":
        return FifoPlanner(net, idm)
    if name == "rl":
        if checkpoint is None:
            raise ValueError("the rl planner needs a checkpoint")
        return ActorPlanner.from_checkpoint(net, checkpoint)
    raise ValueError(f"unknown planner {name!r}; choose from {', '.join(PLANNERS)}")


def packaged_checkpoint():
    """Path of the actor checkpoint shipped with the package, or None if absent."""
    p = Path(__file__).resolve().parent / "data" / "best_actor.json"
    return p if p.is_file() else None
