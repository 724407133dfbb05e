"""TD3 over graph-valued states with a joint (per-vehicle) action and team reward."""
from __future__ import annotations

import csv
import json
import math
import os
import threading
from collections import deque
from dataclasses import asdict, dataclass, fields

import numpy as np

from .dynamics import A_MAX, A_MIN
from .gnn.network import GraphBatch, ParameterSet, actor_forward, batch_graphs, critic_forward, save_checkpoint
from .gnn.tensor import Tensor
from .scene_graph import SceneGraph
from .seeding import substream


@dataclass(frozen=True)
class Transition:
    graph: SceneGraph
    action: np.ndarray
    reward: float
    next_graph: SceneGraph
    done: bool

    def __post_init__(self):
        if np.shape(self.action) != (self.graph.num_nodes,):
            raise ValueError("one action per vertex required")


class ReplayBuffer:
    """Fixed-capacity FIFO store with uniform sampling; insert/sample are lock-guarded."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: deque[Transition] = deque(maxlen=capacity)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._items)

    def add(self, t: Transition) -> None:
        with self._lock:
            self._items.append(t)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, len(self._items), size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        with self._lock:
            if not self._items:
                raise ValueError("cannot sample from an empty buffer")
            idx = self.sample_indices(batch_size, rng)
            return [self._items[i] for i in idx]


@dataclass
class Td3Config:
    gamma: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    sigma_explore: float = 0.1 * A_MAX
    sigma_target: float = 0.2 * A_MAX
    target_clip: float = 0.5 * A_MAX
    batch_size: int = 64
    buffer_capacity: int = 100_000
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    hidden: int = 32  # narrower than the network default to fit a single-CPU budget
    total_steps: int = 500_000
    warmup_steps: int = 1000
    validation_interval: int = 5000
    validation_episodes: int = 10
    episode_duration: float = 60.0
    ramp_steps: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be at least 1")
        for name in ("batch_size", "buffer_capacity", "total_steps", "validation_interval", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr_actor <= 0 or self.lr_critic <= 0:
            raise ValueError("learning rates must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "Td3Config":
        known = {f.name: f.type for f in fields(cls)}
        extra = set(data) - set(known)
        if extra:
            raise ValueError(f"unknown training keys: {sorted(extra)}")
        kwargs = {}
        for k, v in data.items():
            default = getattr(cls, k)
            kwargs[k] = int(v) if isinstance(default, int) else float(v)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, params: ParameterSet, lr: float, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            if g is None:
                continue
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            self.params.arrays[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def polyak_update(target: ParameterSet, online: ParameterSet, tau: float) -> None:
    for k, w in online.arrays.items():
        t = target.arrays[k]
        t *= 1.0 - tau
        t += tau * w


def _grads(tensors: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()}


class Td3Agent:
    def __init__(self, config: Td3Config, rng: np.random.Generator | None = None):
        self.config = config
        init = rng if rng is not None else substream(config.seed, "init")
        self.actor = ParameterSet.init("actor", init, config.hidden)
        self.critics = [ParameterSet.init("critic", init, config.hidden) for _ in range(2)]
        self.actor_target = self.actor.copy()
        self.critic_targets = [c.copy() for c in self.critics]
        self.actor_opt = Adam(self.actor, config.lr_actor)
        self.critic_opts = [Adam(c, config.lr_critic) for c in self.critics]
        self.critic_updates = 0
        self.actor_updates = 0

    # -- acting -----------------------------------------------------------------
    def act(self, graph: SceneGraph) -> np.ndarray:
        return actor_forward(graph, self.actor).data.copy()

    def select_action(self, graph: SceneGraph, sigma: float, rng: np.random.Generator) -> np.ndarray:
        return select_action(graph, self.actor, sigma, rng)

    # -- learning ---------------------------------------------------------------
    def targets(self, batch: list[Transition], rng: np.random.Generator,
                next_batch: GraphBatch | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Bootstrapped targets y and the per-critic targets (2, B) behind the minimum."""
        cfg = self.config
        nb = next_batch if next_batch is not None else batch_graphs([t.next_graph for t in batch])
        mu = actor_forward(nb, self.actor_target).data
        noise = np.clip(rng.normal(0.0, cfg.sigma_target, size=mu.shape), -cfg.target_clip, cfg.target_clip)
        a_next = np.clip(mu + noise, A_MIN, A_MAX)
        q = np.stack([critic_forward(nb, a_next, p).data for p in self.critic_targets])
        r = np.array([t.reward for t in batch])
        live = 1.0 - np.array([t.done for t in batch], dtype=np.float64)
        single = r + cfg.gamma * live * q
        y = r + cfg.gamma * live * q.min(axis=0)
        return y, single

    def critic_update(self, batch: list[Transition], rng: np.random.Generator,
                      gb: GraphBatch | None = None) -> list[float]:
        y, _ = self.targets(batch, rng)
        gb = gb if gb is not None else batch_graphs([t.graph for t in batch])
        actions = np.concatenate([t.action for t in batch]) if batch else np.zeros(0)
        losses = []
        for params, opt in zip(self.critics, self.critic_opts):
            tensors = params.tensors(requires_grad=True)
            q = critic_forward(gb, actions, tensors)
            err = q.data - y
            losses.append(float(np.mean(err * err)))
            q.backward(2.0 * err / len(batch))
            opt.step(_grads(tensors))
        self.critic_updates += 1
        return losses

    def actor_update(self, batch: list[Transition], gb: GraphBatch | None = None) -> float:
        """Ascend Q1(s, mu(s)), then move all targets toward the online nets."""
        gb = gb if gb is not None else batch_graphs([t.graph for t in batch])
        tensors = self.actor.tensors(requires_grad=True)
        mu = actor_forward(gb, tensors)
        q = critic_forward(gb, mu, self.critics[0])
        loss = -float(q.data.mean())
        if mu.requires_grad:
            q.backward(np.full(q.shape, -1.0 / len(batch)))
            self.actor_opt.step(_grads(tensors))
        self.actor_updates += 1
        self.update_targets()
        return loss

    def update_targets(self) -> None:
        tau = self.config.tau
        polyak_update(self.actor_target, self.actor, tau)
        for t, c in zip(self.critic_targets, self.critics):
            polyak_update(t, c, tau)

    def train_step(self, batch: list[Transition], rng: np.random.Generator) -> tuple[list[float], float | None]:
        gb = batch_graphs([t.graph for t in batch])
        losses = self.critic_update(batch, rng, gb)
        actor_loss = None
        if self.critic_updates % self.config.policy_delay == 0:
            actor_loss = self.actor_update(batch, gb)
        return losses, actor_loss

    def networks(self) -> dict[str, ParameterSet]:
        return {"actor": self.actor, "critic_1": self.critics[0], "critic_2": self.critics[1],
                "actor_target": self.actor_target, "critic_1_target": self.critic_targets[0],
                "critic_2_target": self.critic_targets[1]}


def select_action(graph: SceneGraph, actor: ParameterSet, sigma: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Actor output plus independent Gaussian noise per vehicle, clipped to the command range."""
    a = actor_forward(graph, actor).data
    if sigma > 0:
        a = a + rng.normal(0.0, sigma, size=a.shape)
    return np.clip(a, A_MIN, A_MAX)


# -- training loop -----------------------------------------------------------------

LOG_COLUMNS = ("kind", "step", "episode", "return", "length", "velocity", "action", "idle",
               "proximity", "collision", "critic_loss", "actor_loss", "val_mean", "val_std", "saved")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def run_validation(env, agent: Td3Agent, seeds: list[int]) -> list[float]:
    returns = []
    for s in seeds:
        graph = env.reset(seed=s, ramp_progress=1.0)
        total, done = 0.0, False
        while not done:
            graph, r, done, _ = env.step(agent.act(graph))
            total += r
        returns.append(total)
    return returns


def train(env_factory, config: Td3Config, out_dir, header: dict | None = None,
          progress=None) -> dict:
    """Train from scratch; writes ``train_log.csv`` and ``best_actor.json`` into ``out_dir``.

    ``env_factory(role)`` returns an environment for role "train" or
    "validation". A checkpoint is written whenever the mean validation return
    beats every earlier one. Log rows are flushed as they are produced, so an
    interrupted run keeps its partial log.
    """
    os.makedirs(out_dir, exist_ok=True)
    cfg = config
    agent = Td3Agent(cfg)
    buffer = ReplayBuffer(cfg.buffer_capacity)
    rng_noise = substream(cfg.seed, "noise")
    rng_batch = substream(cfg.seed, "batch")
    rng_episode = substream(cfg.seed, "episodes")
    val_seeds = [int(s) for s in substream(cfg.seed, "validation").integers(0, 2**31 - 1, cfg.validation_episodes)]
    env = env_factory("train")
    val_env = env_factory("validation")

    log_path = os.path.join(out_dir, "train_log.csv")
    ckpt_path = os.path.join(out_dir, "best_actor.json")
    best = -math.inf
    saved = []
    meta = dict(header or {})
    meta["training"] = cfg.to_dict()

    with open(log_path, "w", newline="") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)

        def log(**row):
            writer.writerow([_fmt(row.get(c)) for c in LOG_COLUMNS])
            fh.flush()

        episode = 0
        graph = env.reset(seed=int(rng_episode.integers(2**31 - 1)), ramp_progress=0.0)
        ep_return, ep_len = 0.0, 0
        comp = np.zeros(5)
        closs, aloss = [], []
        for step in range(cfg.total_steps):
            n = graph.num_nodes
            if step < cfg.warmup_steps:
                action = rng_noise.uniform(A_MIN, A_MAX, size=n)
            else:
                action = select_action(graph, agent.actor, cfg.sigma_explore, rng_noise)
            next_graph, reward, done, info = env.step(action)
            terminal = bool(info.collisions)
            buffer.add(Transition(graph, action, reward, next_graph, terminal))
            b = info.breakdown
            comp += (b.velocity, b.action, b.idle, b.proximity, b.collision)
            ep_return += reward
            ep_len += 1
            graph = next_graph

            if step + 1 >= cfg.warmup_steps and len(buffer) >= cfg.batch_size:
                losses, a_loss = agent.train_step(buffer.sample(cfg.batch_size, rng_batch), rng_noise)
                closs.append(0.5 * (losses[0] + losses[1]))
                if a_loss is not None:
                    aloss.append(a_loss)

            if done:
                log(kind="episode", step=step + 1, episode=episode, **{"return": ep_return},
                    length=ep_len, velocity=comp[0] / ep_len, action=comp[1] / ep_len,
                    idle=comp[2] / ep_len, proximity=comp[3] / ep_len, collision=comp[4],
                    critic_loss=float(np.mean(closs)) if closs else None,
                    actor_loss=float(np.mean(aloss)) if aloss else None)
                episode += 1
                ramp = min(1.0, (step + 1) / cfg.ramp_steps)
                graph = env.reset(seed=int(rng_episode.integers(2**31 - 1)), ramp_progress=ramp)
                ep_return, ep_len = 0.0, 0
                comp[:] = 0
                closs, aloss = [], []

            if (step + 1) % cfg.validation_interval == 0:
                returns = run_validation(val_env, agent, val_seeds)
                mean, std = float(np.mean(returns)), float(np.std(returns))
                is_best = mean > best
                if is_best:
                    best = mean
                    save_checkpoint(ckpt_path, {"actor": agent.actor},
                                    {**meta, "step": step + 1, "validation_return": mean})
                    saved.append((step + 1, mean))
                log(kind="validation", step=step + 1, episode=episode, val_mean=mean, val_std=std,
                    saved=int(is_best))
                if progress is not None:
                    progress(step + 1, mean, std, is_best)

    return {"log": log_path, "checkpoint": ckpt_path if saved else None, "saved": saved,
            "best_validation_return": best, "agent": agent}
