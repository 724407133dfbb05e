"""Command line: train, eval, compare, ingest, validate-model.

Settings resolve as defaults < ``--config`` file < ``COOPAIM_*`` environment
variables < flags. Exit codes: 0 success, 2 usage or configuration error,
3 file input/output error, 4 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as C
from .baselines import IdmParams
from .gnn.network import actor_forward, critic_forward, load_checkpoint
from .ingest import IngestError, parse_tracks, recording_density, tracks_to_scenario
from .metrics import (SUMMARY_COLUMNS, EpisodeResult, collision_table, group_table, median_flow,
                      stop_ratio, summary_row, write_csv, write_json)
from .planners import PLANNERS, make_planner
from .reward import RewardWeights
from .road_net import IntersectionSpec, build_four_way
from .seeding import substream
from .sim_env import EpisodeConfig, IntersectionEnv, Scenario, run_scenario, scenario_suite
from .td3 import Td3Config, train

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_RUNTIME = 0, 2, 3, 4
ENV_PREFIX = "COOPAIM_"
COMMANDS = ("train", "eval", "compare", "ingest", "validate-model")


class RuntimeFailure(RuntimeError):
    pass


@dataclass
class RunConfig:
    command: str
    cfg: dict
    planners: list[str]
    out: Path
    checkpoint: Path | None = None
    tracks: Path | None = None
    meta: Path | None = None
    emit_distribution: bool = False
    quiet: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.cfg["seed"]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coopaim", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config file (see coopaim.config for the schema)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--planner", action="append", choices=PLANNERS,
                   help="planner to run; repeat for several (compare default: pr, fifo[, rl])")
    p.add_argument("--scenarios", type=int, help="number of evaluation scenarios")
    p.add_argument("--duration", type=float, help="scenario length in seconds")
    p.add_argument("--steps", type=int, help="training budget in environment steps")
    p.add_argument("--checkpoint", help="actor checkpoint for the rl planner")
    p.add_argument("--out", help="output directory")
    p.add_argument("--emit-distribution", action="store_true",
                   help="also write per-run flow rates and per-vehicle records")
    p.add_argument("--tracks", help="tracks CSV to ingest")
    p.add_argument("--meta", help="recording meta CSV (default: recordingMeta.csv next to --tracks)")
    p.add_argument("--quiet", action="store_true")
    return p


def _env(name: str):
    v = os.environ.get(ENV_PREFIX + name)
    return v if v not in (None, "") else None


def resolve(args: argparse.Namespace) -> RunConfig:
    """Merge config file, environment and flags into one validated RunConfig."""
    cfg_path = args.config or _env("CONFIG")
    if cfg_path is not None and not Path(cfg_path).is_file():
        raise FileNotFoundError(f"config file not found: {cfg_path}")
    cfg = C.load_config(cfg_path)

    def pick(flag, env_name, cast):
        if flag is not None:
            return flag
        raw = _env(env_name)
        if raw is None:
            return None
        try:
            return cast(raw)
        except ValueError:
            raise C.ConfigError(f"{ENV_PREFIX}{env_name}: bad value {raw!r}") from None

    seed = pick(args.seed, "SEED", int)
    if seed is not None:
        cfg["seed"] = seed
    n = pick(args.scenarios, "SCENARIOS", int)
    if n is not None:
        cfg["evaluation"]["scenarios"] = n
    dur = pick(args.duration, "DURATION", float)
    if dur is not None:
        cfg["evaluation"]["duration"] = dur
    steps = pick(args.steps, "STEPS", int)
    if steps is not None:
        cfg["training"]["total_steps"] = steps
    C.validate(cfg)

    planners = args.planner
    if planners is None and _env("PLANNER"):
        planners = [s.strip() for s in _env("PLANNER").split(",") if s.strip()]
    for name in planners or []:
        if name not in PLANNERS:
            raise C.ConfigError(f"unknown planner {name!r}; choose from {', '.join(PLANNERS)}")
    checkpoint = pick(args.checkpoint, "CHECKPOINT", str)
    if planners is None:
        if args.command == "eval":
            planners = ["rl"] if checkpoint else ["pr"]
        else:
            planners = ["pr", "fifo"] + (["rl"] if checkpoint else [])
    if "rl" in planners and checkpoint is None:
        raise C.ConfigError("the rl planner needs --checkpoint")
    if checkpoint is not None and not Path(checkpoint).is_file():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    if args.command == "validate-model" and checkpoint is None:
        raise C.ConfigError("validate-model needs --checkpoint")

    tracks = pick(args.tracks, "TRACKS", str)
    meta = args.meta
    if args.command == "ingest":
        if tracks is None:
            raise C.ConfigError("ingest needs --tracks")
        meta = meta or str(Path(tracks).with_name("recordingMeta.csv"))
        for f in (tracks, meta):
            if not Path(f).is_file():
                raise FileNotFoundError(f"input not found: {f}")

    out = pick(args.out, "OUT", str) or os.path.join("runs", args.command.replace("-", "_"))
    return RunConfig(args.command, cfg, list(planners), Path(out),
                     Path(checkpoint) if checkpoint else None,
                     Path(tracks) if tracks else None, Path(meta) if meta else None,
                     args.emit_distribution, args.quiet)


# -- commands --------------------------------------------------------------------

def _say(rc: RunConfig, msg: str) -> None:
    if not rc.quiet:
        print(msg, flush=True)


def _network(cfg):
    return build_four_way(IntersectionSpec.from_dict(cfg["intersection"]))


def _header_lines(rc: RunConfig) -> list[str]:
    s = C.stamp(rc.cfg)
    return [f"build={s['build']} config_hash={s['config_hash']} seed={s['seed']}"]


def _write_snapshot(rc: RunConfig) -> None:
    doc = dict(rc.cfg)
    doc["stamp"] = C.stamp(rc.cfg)
    write_json(rc.out / "config.json", doc)


def _episode_config(cfg: dict, seed: int) -> EpisodeConfig:
    return EpisodeConfig(max_duration=float(cfg["training"]["episode_duration"]), seed=seed,
                         **{k: cfg["episode"][k] for k in C.EPISODE_KEYS})


def cmd_train(rc: RunConfig) -> int:
    cfg = rc.cfg
    tc = Td3Config.from_dict({**cfg["training"], "seed": cfg["seed"]})
    net = _network(cfg)
    weights = RewardWeights(**cfg["reward"])

    def factory(role):
        return IntersectionEnv(net, _episode_config(cfg, cfg["seed"]), weights=weights)

    t0 = time.time()

    def progress(step, mean, std, best):
        _say(rc, f"step {step}: validation return {mean:.3f} +- {std:.3f}"
                 f"{' (saved)' if best else ''} [{time.time() - t0:.0f} s]")

    _write_snapshot(rc)
    result = train(factory, tc, rc.out, header={"stamp": C.stamp(cfg)}, progress=progress)
    if result["checkpoint"] is None:
        raise RuntimeFailure("training finished without a validation round; no checkpoint written")
    _say(rc, f"best checkpoint {result['checkpoint']} (validation return {result['best_validation_return']:.3f})")
    return EXIT_OK


def _suite(rc: RunConfig, net) -> list[Scenario]:
    ev = rc.cfg["evaluation"]
    return scenario_suite(net, int(ev["scenarios"]), seed=rc.seed, duration=float(ev["duration"]),
                          rate_range=(float(ev["rate_min"]), float(ev["rate_max"])))


def _run_planners(rc: RunConfig, net, scenarios: list[Scenario]) -> list[EpisodeResult]:
    idm = IdmParams.from_dict(rc.cfg["idm"])
    results = []
    for name in rc.planners:
        planner = make_planner(name, net, rc.checkpoint, idm)
        t0 = time.time()
        batch = [run_scenario(s, planner, net) for s in scenarios]
        aborted = [r for r in batch if r.aborted]
        if aborted:
            raise RuntimeFailure(f"{name}: episode (seed {aborted[0].seed}) aborted: {aborted[0].aborted}")
        _say(rc, f"{name}: {len(batch)} scenarios, median flow {median_flow(batch):.3f} veh/s "
                 f"[{time.time() - t0:.0f} s]")
        results.extend(batch)
    return results


VEHICLE_COLUMNS = ("planner", "seed", "id", "path_id", "road_priority", "maneuver", "spawn_time",
                   "cross_time", "min_speed", "stopped", "reached_entry", "collided")


def write_bundle(rc: RunConfig, results: list[EpisodeResult]) -> dict:
    """Metric tables: per-episode summary (flow distribution), stop ratios by road and by
    maneuver, collision summary, and a JSON overview."""
    head = _header_lines(rc)
    rows = [summary_row(r) for r in results]
    write_csv(rc.out / "episodes.csv", rows, SUMMARY_COLUMNS, head)
    write_csv(rc.out / "stops_by_road.csv", group_table(results, "road_priority"),
              ("planner", "group", "count", "stop_ratio"), head)
    write_csv(rc.out / "stops_by_maneuver.csv", group_table(results, "maneuver"),
              ("planner", "group", "count", "stop_ratio"), head)
    write_csv(rc.out / "collisions.csv", collision_table(results),
              ("planner", "episodes", "vehicles", "collision_rate_percent"), head)
    if rc.emit_distribution:
        write_csv(rc.out / "flow_distribution.csv",
                  [{"planner": r.planner, "seed": r.seed, "flow_rate": row["flow_rate"]}
                   for r, row in zip(results, rows)], ("planner", "seed", "flow_rate"), head)
        vrows = [{"planner": r.planner, "seed": r.seed, **{k: getattr(v, k) for k in VEHICLE_COLUMNS[2:]}}
                 for r in results for v in r.vehicles]
        write_csv(rc.out / "vehicles.csv", vrows, VEHICLE_COLUMNS, head)
    overview = {"stamp": C.stamp(rc.cfg), "planners": {}}
    for name in rc.planners:
        sel = [r for r in results if r.planner == name]
        overview["planners"][name] = {
            "episodes": len(sel),
            "median_flow_rate": median_flow(sel),
            "stop_ratio": {k: v[1] for k, v in stop_ratio(sel, "road_priority").items()},
            "stop_ratio_all": stop_ratio(sel, "all").get("all", (0, 0.0))[1],
            "collision_rate_percent": collision_table(sel)[0]["collision_rate_percent"] if sel else 0.0,
            "pending_spawns": sum(r.pending_spawns for r in sel),
        }
    write_json(rc.out / "summary.json", overview)
    return overview


def cmd_compare(rc: RunConfig) -> int:
    net = _network(rc.cfg)
    _write_snapshot(rc)
    write_bundle(rc, _run_planners(rc, net, _suite(rc, net)))
    _say(rc, f"tables written to {rc.out}")
    return EXIT_OK


def cmd_ingest(rc: RunConfig) -> int:
    net = _network(rc.cfg)
    rec = parse_tracks(rc.tracks, rc.meta)
    scn, report = tracks_to_scenario(rec, net)
    _write_snapshot(rc)
    scn.save(rc.out / "scenario.json")
    doc = {"stamp": C.stamp(rc.cfg), "tracks": str(rc.tracks), **report.to_dict(),
           "duration_s": rec.duration, "track_density_veh_per_s": len(rec.tracks) / rec.duration}
    try:
        doc["recording_density"] = recording_density(rec.meta)
    except IngestError:
        doc["recording_density"] = None
    write_json(rc.out / "ingest_report.json", doc)
    _say(rc, f"{len(report.matched)} tracks matched, {len(report.excluded)} excluded, "
             f"{sum(report.filtered.values())} non-vehicle tracks filtered")
    if rc.planners:
        write_bundle(rc, _run_planners(rc, net, [scn]))
    return EXIT_OK


def cmd_validate_model(rc: RunConfig) -> int:
    """Load a checkpoint and check shapes, finiteness and vertex-order equivariance."""
    try:
        nets, meta = load_checkpoint(rc.checkpoint)
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise RuntimeFailure(f"{rc.checkpoint}: invalid checkpoint ({exc})") from None
    net = _network(rc.cfg)
    rng = substream(rc.seed, "validate-model")
    env = IntersectionEnv(net, _episode_config(rc.cfg, rc.seed), observe=True)
    graph = env.reset(seed=int(rng.integers(2**31 - 1)), ramp_progress=1.0)
    for _ in range(300):
        graph, _, done, _ = env.step(np.zeros(graph.num_nodes))
        if done or graph.num_nodes >= 4:
            break
    perm = rng.permutation(graph.num_nodes)
    checks = {}
    for name, params in sorted(nets.items()):
        if params.kind == "actor":
            a = actor_forward(graph, params).data
            b = actor_forward(graph.permuted(perm), params).data
            ok = bool(np.all(np.isfinite(a)) and np.allclose(b, a[perm], atol=1e-9, rtol=0))
        else:
            acts = rng.uniform(-5, 5, graph.num_nodes)
            a = critic_forward(graph, acts, params).data
            b = critic_forward(graph.permuted(perm), acts[perm], params).data
            ok = bool(np.all(np.isfinite(a)) and np.allclose(a, b, atol=1e-9, rtol=0))
        checks[name] = {"kind": params.kind, "hidden": params.hidden, "ok": ok}
    os.makedirs(rc.out, exist_ok=True)
    write_json(rc.out / "model_check.json", {"stamp": C.stamp(rc.cfg), "checkpoint": str(rc.checkpoint),
                                             "meta": meta, "vertices": graph.num_nodes, "checks": checks})
    for name, c in checks.items():
        _say(rc, f"{name} ({c['kind']}, hidden {c['hidden']}): {'ok' if c['ok'] else 'FAILED'}")
    if not all(c["ok"] for c in checks.values()):
        raise RuntimeFailure("model check failed")
    return EXIT_OK


HANDLERS = {"train": cmd_train, "eval": cmd_compare, "compare": cmd_compare,
            "ingest": cmd_ingest, "validate-model": cmd_validate_model}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        rc = resolve(args)
        rc.out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[rc.command](rc)
    except C.ConfigError as exc:
        print(f"coopaim: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, IngestError) as exc:
        print(f"coopaim: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (RuntimeFailure, ValueError, FloatingPointError) as exc:
        print(f"coopaim: run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
