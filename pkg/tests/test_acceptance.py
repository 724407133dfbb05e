"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line summary; conftest prints them after the run.
Criteria 4 to 7 share one 100-scenario evaluation suite (master seed 2024),
run once per planner.
"""
import json
import math

import numpy as np
import pytest

from coopaim import cli
from coopaim.baselines import FifoPlanner, PriorityPlanner
from coopaim.config import default_config
from coopaim.dynamics import A_MAX, A_MIN, VehicleState
from coopaim.gnn import ParameterSet, Tensor, actor_forward, critic_forward
from coopaim.gnn.network import HIDDEN
from coopaim.ingest import fixture_dir, load_fixture, parse_meta, recording_density, tracks_to_scenario
from coopaim.metrics import collision_rate, median_flow, stop_ratio
from coopaim.planners import ActorPlanner, packaged_checkpoint
from coopaim.reward import velocity_reward
from coopaim.scene_graph import SceneGraph, mahalanobis
from coopaim.sim_env import run_scenario, scenario_suite
from coopaim.td3 import ReplayBuffer, Td3Agent, Td3Config, Transition, polyak_update

from oracles import (central_difference, classify_oracle, mahalanobis_generic, random_graph_parts,
                     relative_error)
from test_baselines import fifo_against_oracle

SUITE_SEED = 2024
FD_HIDDEN = 4  # width used for the finite-difference sweep (every weight is perturbed)


def _record(record_property, criterion, summary):
    record_property("criterion", criterion)
    record_property("summary", summary)


def _grad(t):
    """Accumulated gradient; weights a graph never touches have none."""
    return t.grad if t.grad is not None else np.zeros_like(t.data)


# -- shared evaluation suite ------------------------------------------------------------

@pytest.fixture(scope="module")
def suite(net):
    return scenario_suite(net, 100, seed=SUITE_SEED, duration=100.0, rate_range=(0.2, 0.4))


@pytest.fixture(scope="module")
def pr_results(net, suite):
    return [run_scenario(s, PriorityPlanner(net), net) for s in suite]


@pytest.fixture(scope="module")
def fifo_results(net, suite):
    return [run_scenario(s, FifoPlanner(net), net) for s in suite]


@pytest.fixture(scope="module")
def rl_results(net, suite):
    ck = packaged_checkpoint()
    if ck is None:
        pytest.fail("no packaged actor checkpoint")
    planner = ActorPlanner.from_checkpoint(net, ck)
    return [run_scenario(s, planner, net) for s in suite]


def _overall_stop(results):
    return stop_ratio(results, "all")["all"][1]


# -- 1 ---------------------------------------------------------------------------------

def _fd_graph(rng, k):
    n = int(rng.integers(1, 9))
    feats, _ = random_graph_parts(rng, n)
    kind = k % 3
    if kind == 0:  # isolated vertices
        edges = []
    elif kind == 1:  # one same-lane chain
        order = rng.permutation(n)
        edges = [(int(order[i]), 0, int(order[i + 1])) for i in range(n - 1)]
    else:  # mixed edge types
        _, edges = random_graph_parts(rng, n, p_edge=0.35)
    return SceneGraph(list(range(n)), feats, edges)


def test_criterion_01_gradients_match_finite_differences(record_property):
    rng = np.random.default_rng(101)
    worst = 0.0
    for k in range(100):
        g = _fd_graph(rng, k)
        actor = ParameterSet.init("actor", rng, FD_HIDDEN)
        critic = ParameterSet.init("critic", rng, FD_HIDDEN)
        w = rng.normal(size=g.num_nodes)
        acts = rng.uniform(A_MIN, A_MAX, g.num_nodes)

        ta = actor.tensors(requires_grad=True)
        actor_forward(g, ta).backward(w)
        names = sorted(ta)
        fd = central_difference(lambda: float(actor_forward(g, actor).data @ w),
                                [actor.arrays[n] for n in names], 1e-5)
        err_a = relative_error([_grad(ta[n]) for n in names], fd)

        tc = critic.tensors(requires_grad=True)
        a_in = Tensor(acts.copy(), requires_grad=True)
        critic_forward(g, a_in, tc).backward(np.ones(1))
        names = sorted(tc)
        fd = central_difference(lambda: float(critic_forward(g, acts, critic).data[0]),
                                [critic.arrays[n] for n in names] + [acts], 1e-5)
        err_c = relative_error([_grad(tc[n]) for n in names] + [_grad(a_in)], fd)
        worst = max(worst, err_a, err_c)
    _record(record_property, 1, f"max relative gradient error {worst:.2e} over 100 graphs (< 1e-4)")
    assert worst < 1e-4


# -- 2 ---------------------------------------------------------------------------------

def test_criterion_02_equivariance_and_invariance(record_property):
    rng = np.random.default_rng(202)
    actor = ParameterSet.init("actor", rng, HIDDEN)
    critic = ParameterSet.init("critic", rng, HIDDEN)
    worst_a = worst_q = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 13))
        feats, edges = random_graph_parts(rng, n, p_edge=float(rng.uniform(0, 0.6)))
        g = SceneGraph(list(range(n)), feats, edges)
        perm = rng.permutation(n)
        gp = g.permuted(perm)
        a = actor_forward(g, actor).data
        worst_a = max(worst_a, float(np.max(np.abs(actor_forward(gp, actor).data - a[perm]))))
        acts = rng.uniform(A_MIN, A_MAX, n)
        q = critic_forward(g, acts, critic).data
        qp = critic_forward(gp, acts[perm], critic).data
        worst_q = max(worst_q, float(np.max(np.abs(qp - q))))
    _record(record_property, 2, f"actor deviation {worst_a:.1e}, critic deviation {worst_q:.1e} "
                                f"over 1000 graphs (<= 1e-9)")
    assert worst_a <= 1e-9 and worst_q <= 1e-9


# -- 3 ---------------------------------------------------------------------------------

def test_criterion_03_reward_exactness(record_property):
    jumps = []
    for x in (0.8, 1.0):
        lo = velocity_reward(math.nextafter(x, -math.inf), 1.0)
        hi = velocity_reward(math.nextafter(x, math.inf), 1.0)
        at = velocity_reward(x, 1.0)
        jumps.append(max(abs(lo - at), abs(hi - at)))
    w = default_config()["reward"]
    weights = (w["velocity"], w["action"], w["idle"], w["proximity"], w["collision"])
    _record(record_property, 3, f"jumps at 0.8/1.0: {jumps[0]:.1e}/{jumps[1]:.1e}; default weights {weights}")
    assert max(jumps) <= 1e-12
    assert weights == (0.03, 0.01, 0.01, 0.2, 1.0)


# -- 4 to 7 ----------------------------------------------------------------------------

def test_criterion_04_priority_rules_are_collision_free(record_property, pr_results):
    n_coll = sum(len(r.collisions) for r in pr_results)
    vehicles = sum(len(r.vehicles) for r in pr_results)
    _record(record_property, 4, f"PR: {n_coll} collisions, {vehicles} vehicles, 100 scenarios")
    assert all(r.aborted is None for r in pr_results)
    assert n_coll == 0


def test_criterion_05_fifo_flow_beats_priority_rules(record_property, pr_results, fifo_results):
    pr, fifo = median_flow(pr_results), median_flow(fifo_results)
    gain = fifo / pr - 1.0
    _record(record_property, 5, f"median flow FIFO {fifo:.3f} vs PR {pr:.3f} veh/s (+{100 * gain:.1f}%, >= 5%)")
    assert gain >= 0.05


def test_criterion_06_priority_stop_structure(record_property, pr_results):
    s = stop_ratio(pr_results, "road_priority")
    minor, major = s["minor"][1], s["major"][1]
    _record(record_property, 6, f"PR stop ratio minor {minor:.3f} (>= 0.8), major {major:.3f} (<= 0.3)")
    assert minor >= 0.8 and major <= 0.3


def test_criterion_07_trained_policy_gates(record_property, rl_results, pr_results, fifo_results):
    rl_flow, fifo_flow = median_flow(rl_results), median_flow(fifo_results)
    rl_stop, pr_stop, fifo_stop = (_overall_stop(x) for x in (rl_results, pr_results, fifo_results))
    coll = collision_rate(rl_results)
    _record(record_property, 7,
            f"RL median flow {rl_flow:.3f} vs FIFO {fifo_flow:.3f}; stop ratio RL {rl_stop:.3f} "
            f"vs PR {pr_stop:.3f} / FIFO {fifo_stop:.3f}; collisions {coll:.2f}% (<= 1%)")
    assert all(r.aborted is None for r in rl_results)
    assert rl_flow >= fifo_flow
    assert rl_stop < pr_stop and rl_stop < fifo_stop
    assert coll <= 1.0


# -- 8 ---------------------------------------------------------------------------------

def test_criterion_08_td3_mechanics(record_property):
    rng = np.random.default_rng(808)

    def graph(n):
        feats, edges = random_graph_parts(rng, n)
        return SceneGraph(list(range(n)), feats, edges)

    agent = Td3Agent(Td3Config(hidden=8, policy_delay=2, seed=3))
    buf = ReplayBuffer(500)
    for _ in range(200):
        n, m = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        buf.add(Transition(graph(n), rng.uniform(A_MIN, A_MAX, n), float(rng.normal()), graph(m),
                           bool(rng.random() < 0.2)))

    terminal_ok = twin_ok = True
    for _ in range(20):
        batch = buf.sample(32, rng)
        y, single = agent.targets(batch, rng)
        done = np.array([t.done for t in batch])
        r = np.array([t.reward for t in batch])
        terminal_ok &= bool(np.all(y[done] == r[done]))
        twin_ok &= bool(np.all(y <= single[0]) and np.all(y <= single[1]))

    target = ParameterSet.init("critic", rng, 8)
    online = ParameterSet.init("critic", rng, 8)
    before = {k: v.copy() for k, v in target.arrays.items()}
    polyak_update(target, online, 0.005)
    polyak_err = max(float(np.max(np.abs(target.arrays[k] - (0.995 * before[k] + 0.005 * online.arrays[k]))))
                     for k in before)

    actor_steps = []
    for step in range(1, 9):
        _, a_loss = agent.train_step(buf.sample(16, rng), rng)
        if a_loss is not None:
            actor_steps.append(step)
    _record(record_property, 8, f"terminal y=r {terminal_ok}; Polyak error {polyak_err:.1e}; "
                                f"actor updates at critic updates {actor_steps}; twin min {twin_ok}")
    assert terminal_ok and twin_ok
    assert polyak_err <= 1e-12
    assert actor_steps == [2, 4, 6, 8]


# -- 9 ---------------------------------------------------------------------------------

def test_criterion_09_determinism(record_property, tmp_path):
    ck = packaged_checkpoint()
    args = ["compare", "--scenarios", "3", "--duration", "40", "--seed", "17", "--quiet",
            "--emit-distribution"]
    if ck is not None:
        args += ["--planner", "pr", "--planner", "fifo", "--planner", "rl", "--checkpoint", str(ck)]
    a, b = tmp_path / "cmp_a", tmp_path / "cmp_b"
    assert cli.main(args + ["--out", str(a)]) == 0
    assert cli.main(args + ["--out", str(b)]) == 0
    csvs = sorted(p.name for p in a.glob("*.csv"))
    same_csv = all((a / n).read_bytes() == (b / n).read_bytes() for n in csvs)

    t1, t2 = tmp_path / "train_a", tmp_path / "train_b"
    assert cli.main(["train", "--steps", "5000", "--quiet", "--out", str(t1)]) == 0
    assert cli.main(["train", "--config", str(t1 / "config.json"), "--quiet", "--out", str(t2)]) == 0
    log_a, log_b = (t1 / "train_log.csv").read_bytes(), (t2 / "train_log.csv").read_bytes()
    rows = log_a.decode().count("\n")
    _record(record_property, 9, f"{len(csvs)} compare CSVs identical: {same_csv}; "
                                f"5k-step log ({rows} lines) identical: {log_a == log_b}")
    assert len(csvs) >= 6 and same_csv
    assert log_a == log_b


# -- 10 --------------------------------------------------------------------------------

def test_criterion_10_ingest_round_trip(record_property, net, tmp_path):
    rec = load_fixture()
    scn, report = tracks_to_scenario(rec, net)
    accounted = len(report.matched) + len(report.excluded)
    again, _ = tracks_to_scenario(load_fixture(), net)
    deterministic = scn.to_json() == again.to_json()

    out = tmp_path / "ingest"
    code = cli.main(["ingest", "--tracks", str(fixture_dir() / "tracks.csv"), "--quiet", "--out", str(out)])
    bundle = {"episodes.csv", "stops_by_road.csv", "stops_by_maneuver.csv", "collisions.csv",
              "summary.json", "scenario.json", "ingest_report.json"}
    present = {p.name for p in out.iterdir()} if out.exists() else set()
    planners = set(json.loads((out / "summary.json").read_text())["planners"]) if code == 0 else set()

    meta = tmp_path / "meta.csv"
    meta.write_text(f"recordingId,frameRate,duration,numVehicles\n1,25,{3.08 * 3600},2446\n")
    density = recording_density(parse_meta(meta))["veh_per_s"]
    _record(record_property, 10, f"{len(rec.tracks)} tracks, {accounted} accounted for, deterministic "
                                 f"{deterministic}, replay planners {sorted(planners)}; density "
                                 f"{density:.4f} veh/s")
    assert accounted == len(rec.tracks) == 20
    assert deterministic
    assert code == 0 and bundle <= present and planners == {"pr", "fifo"}
    assert density == pytest.approx(0.221, abs=5e-4)


# -- 11 --------------------------------------------------------------------------------

def test_criterion_11_oracle_equivalence(record_property, net):
    pairs = [(a, b) for a in net.paths for b in net.paths if a != b]
    agree = sum(net.conflicts.get(a, b).relation.value == classify_oracle(net, a, b) for a, b in pairs)

    rng = np.random.default_rng(1111)
    fifo_ok = 0
    for _ in range(200):
        go, want = fifo_against_oracle(net, rng)
        fifo_ok += go == want

    worst = 0.0
    for _ in range(10_000):
        x1, y1, x2, y2 = rng.uniform(-60, 60, 4)
        h1, h2 = rng.uniform(-math.pi, math.pi, 2)
        a = VehicleState(0, "WE", 0.0, x1, y1, h1, 0.0)
        b = VehicleState(1, "WE", 0.0, x2, y2, h2, 0.0)
        fast = mahalanobis(a, b)
        ref = mahalanobis_generic((x1, y1), h1, (x2, y2))
        worst = max(worst, abs(fast - ref) / max(ref, 1.0))
    _record(record_property, 11, f"conflict classes {agree}/{len(pairs)}; FIFO {fifo_ok}/200; "
                                 f"distance max relative deviation {worst:.1e} over 1e4 pairs")
    assert agree == len(pairs)
    assert fifo_ok == 200
    assert worst <= 1e-12
