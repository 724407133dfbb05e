"""Run configuration: one JSON file with a section per component, plus build stamps.

Sections (all optional in a user file; missing keys take the defaults)::

    intersection  geometry and speed limits (IntersectionSpec fields)
    reward        reward weights (RewardWeights fields)
    idm           car-following parameters of the rule planners (IdmParams fields)
    episode       vehicle_cap, min_spawn_gap, spawn_probability
    training      TD3 hyperparameters and budget (Td3Config fields except seed)
    evaluation    scenarios, duration, rate_min, rate_max
    seed          master seed
"""
from __future__ import annotations

import copy
import hashlib
import json
import subprocess
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .baselines import IdmParams
from .reward import RewardWeights
from .road_net import IntersectionSpec
from .td3 import Td3Config

SECTIONS = ("intersection", "reward", "idm", "episode", "training", "evaluation")
EPISODE_KEYS = ("vehicle_cap", "min_spawn_gap", "spawn_probability")


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    training = Td3Config().to_dict()
    training.pop("seed")
    return {
        "seed": 0,
        "intersection": IntersectionSpec().to_dict(),
        "reward": asdict(RewardWeights()),
        "idm": IdmParams().to_dict(),
        "episode": {"vehicle_cap": 20, "min_spawn_gap": 10.0, "spawn_probability": 0.05},
        "training": training,
        "evaluation": {"scenarios": 100, "duration": 100.0, "rate_min": 0.2, "rate_max": 0.4},
    }


def default_config_path() -> Path:
    return Path(__file__).resolve().parent / "data" / "default_config.json"


def merge(base: dict, override: dict) -> dict:
    """Section-wise update of ``base``; unknown sections or keys are errors."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key == "seed":
            out["seed"] = int(value)
            continue
        if key not in SECTIONS:
            raise ConfigError(f"unknown config section {key!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"config section {key!r} must be an object")
        unknown = set(value) - set(out[key])
        if unknown:
            raise ConfigError(f"unknown keys in {key!r}: {sorted(unknown)}")
        out[key].update(value)
    return out


def load_config(path=None) -> dict:
    cfg = default_config()
    if path is None:
        return cfg
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    doc.pop("stamp", None)  # snapshots written by a previous run carry their stamp
    return merge(cfg, doc)


def validate(cfg: dict) -> None:
    """Build every component once so bad values fail before any work starts."""
    try:
        IntersectionSpec.from_dict(cfg["intersection"]).validate()
        RewardWeights(**cfg["reward"])
        IdmParams.from_dict(cfg["idm"])
        Td3Config.from_dict({**cfg["training"], "seed": cfg["seed"]})
        ev = cfg["evaluation"]
        if int(ev["scenarios"]) < 1 or float(ev["duration"]) <= 0:
            raise ValueError("evaluation needs at least one scenario of positive duration")
        if not 0 < float(ev["rate_min"]) <= float(ev["rate_max"]):
            raise ValueError("evaluation rates must satisfy 0 < rate_min <= rate_max")
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def config_hash(cfg: dict) -> str:
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def build_id() -> str:
    """``<version>+g<commit>`` when the source lives in a git checkout, else the version."""
    here = Path(__file__).resolve().parent
    try:
        sha = subprocess.run(["git", "rev-parse", "--short=10", "HEAD"], cwd=here,
                             capture_output=True, text=True, timeout=5, check=True).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        sha = ""
    return f"{__version__}+g{sha}" if sha else __version__


def stamp(cfg: dict) -> dict:
    return {"build": build_id(), "config_hash": config_hash(cfg), "seed": cfg["seed"]}
