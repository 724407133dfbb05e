import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coopaim.dynamics import A_MAX
from coopaim.gnn import (ParameterSet, Tensor, actor_forward, batch_graphs, critic_forward,
                         load_checkpoint, parameter_shapes, rgcn_layer, save_checkpoint)
from coopaim.gnn import tensor as T
from coopaim.scene_graph import EDGE_TYPES, SceneGraph

from oracles import central_difference, random_graph_parts, relative_error, rgcn_reference


def _graph(rng, n, p_edge=0.4):
    feats, edges = random_graph_parts(rng, n, p_edge)
    return SceneGraph(list(range(100, 100 + n)), feats, edges)


def _grad(t):
    """Accumulated gradient; weights a graph never touches have none."""
    return t.grad if t.grad is not None else np.zeros_like(t.data)


def _layer_params(rng, width):
    arrays = {f"L.W_{name}": rng.normal(size=(width, width)) for name in EDGE_TYPES}
    arrays["L.W_0"] = rng.normal(size=(width, width))
    arrays["L.bias"] = rng.normal(size=width)
    return arrays


@pytest.mark.parametrize("seed", range(5))
def test_rgcn_layer_matches_loop_reference(seed):
    rng = np.random.default_rng(seed)
    n, width = 6, 4
    g = _graph(rng, n)
    h = rng.normal(size=(n, width))
    arrays = _layer_params(rng, width)
    out = rgcn_layer(Tensor(h), batch_graphs([g]), {k: Tensor(v) for k, v in arrays.items()}, "L")
    ref = rgcn_reference(h, g.edges.tolist(), arrays["L.W_0"], arrays["L.bias"],
                         [arrays[f"L.W_{name}"] for name in EDGE_TYPES])
    np.testing.assert_allclose(out.data, ref, rtol=1e-12, atol=1e-12)


def test_rgcn_hand_example():
    # two vertices, a single same-lane edge 0 -> 1, identity weights of width 1
    g = SceneGraph([1, 2], np.zeros((2, 3)), [[0, 0, 1]])
    p = {"L.W_0": Tensor([[1.0]]), "L.bias": Tensor([0.5]),
         "L.W_same_lane": Tensor([[2.0]]), "L.W_crossing": Tensor([[-3.0]])}
    out = rgcn_layer(Tensor([[1.0], [-1.0]]), batch_graphs([g]), p, "L")
    # vertex 0: 1 + 0.5; vertex 1: -1 + 0.5 + 2 * 1
    np.testing.assert_allclose(out.data, [[1.5], [1.5]])


def test_isolated_vertex_gets_self_term_only():
    g = SceneGraph([1], np.zeros((1, 3)))
    p = {"L.W_0": Tensor([[2.0]]), "L.bias": Tensor([-1.0]),
         "L.W_same_lane": Tensor([[5.0]]), "L.W_crossing": Tensor([[5.0]])}
    out = rgcn_layer(Tensor([[3.0]]), batch_graphs([g]), p, "L")
    assert out.data[0, 0] == 5.0


def test_zero_weights_give_zero_outputs():
    rng = np.random.default_rng(0)
    g = _graph(rng, 5)
    assert np.all(actor_forward(g, ParameterSet.zeros("actor")).data == 0.0)
    assert np.all(critic_forward(g, np.ones(5), ParameterSet.zeros("critic")).data == 0.0)


def test_parameter_shapes():
    s = parameter_shapes("critic", hidden=16)
    assert s["enc.W"] == (4, 16) and s["conv_2.W_crossing"] == (16, 16) and s["a_dec.W"] == (16, 1)
    assert parameter_shapes("actor", hidden=16)["enc.W"] == (3, 16)
    with pytest.raises(ValueError):
        parameter_shapes("policy")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 8))
def test_actor_bounded_and_equivariant(seed, n):
    rng = np.random.default_rng(seed)
    g = _graph(rng, n)
    actor = ParameterSet.init("actor", rng, hidden=16)
    critic = ParameterSet.init("critic", rng, hidden=16)
    a = actor_forward(g, actor).data
    assert a.shape == (n,) and np.all(np.abs(a) <= A_MAX)
    perm = rng.permutation(n)
    gp = g.permuted(perm)
    np.testing.assert_allclose(actor_forward(gp, actor).data, a[perm], rtol=0, atol=1e-12)
    q = critic_forward(g, a, critic).data
    qp = critic_forward(gp, a[perm], critic).data
    assert q.shape == (1,)
    np.testing.assert_allclose(qp, q, rtol=1e-12, atol=1e-12)


def test_batch_equals_separate_graphs():
    rng = np.random.default_rng(4)
    graphs = [_graph(rng, n) for n in (1, 3, 5, 2)]
    actor = ParameterSet.init("actor", rng, hidden=16)
    critic = ParameterSet.init("critic", rng, hidden=16)
    batched = actor_forward(graphs, actor).data
    single = np.concatenate([actor_forward(g, actor).data for g in graphs])
    np.testing.assert_allclose(batched, single, atol=1e-14)
    q = critic_forward(graphs, batched, critic).data
    np.testing.assert_allclose(q, [critic_forward(g, actor_forward(g, actor).data, critic).data[0]
                                   for g in graphs], atol=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_gradients_match_central_differences(seed):
    rng = np.random.default_rng(seed)
    g = _graph(rng, int(rng.integers(1, 7)))
    actor = ParameterSet.init("actor", rng, hidden=6)
    critic = ParameterSet.init("critic", rng, hidden=6)
    w = rng.normal(size=g.num_nodes)
    acts = rng.uniform(-A_MAX, A_MAX, g.num_nodes)

    ta = actor.tensors(requires_grad=True)
    out = actor_forward(g, ta)
    out.backward(w)
    names = sorted(ta)
    fd = central_difference(lambda: float(actor_forward(g, actor).data @ w),
                            [actor.arrays[k] for k in names], 1e-5)
    assert relative_error([_grad(ta[k]) for k in names], fd) < 1e-4

    tc = critic.tensors(requires_grad=True)
    ta_in = Tensor(acts.copy(), requires_grad=True)
    critic_forward(g, ta_in, tc).backward(np.ones(1))
    names = sorted(tc)
    fd = central_difference(lambda: float(critic_forward(g, acts, critic).data[0]),
                            [critic.arrays[k] for k in names] + [acts], 1e-5)
    assert relative_error([_grad(tc[k]) for k in names] + [_grad(ta_in)], fd) < 1e-4


def test_max_tie_routes_gradient_to_first_neighbour():
    # vertices 0 and 1 both send identical messages to vertex 2
    x = Tensor(np.array([[1.0], [1.0], [0.0]]), requires_grad=True)
    g = SceneGraph([1, 2, 3], np.zeros((3, 3)), [[0, 1, 2], [1, 1, 2]])
    p = {"L.W_0": Tensor([[0.0]]), "L.bias": Tensor([1.0]),
         "L.W_same_lane": Tensor([[1.0]]), "L.W_crossing": Tensor([[1.0]])}
    out = rgcn_layer(x, batch_graphs([g]), p, "L")
    out.backward(np.array([[0.0], [0.0], [1.0]]))
    np.testing.assert_array_equal(x.grad, [[1.0], [0.0], [0.0]])


def test_second_backward_needs_new_forward():
    a = Tensor(np.ones(3), requires_grad=True)
    y = T.sum_all(T.scale(a, 2.0))
    y.backward()
    np.testing.assert_array_equal(a.grad, [2.0, 2.0, 2.0])
    with pytest.raises(RuntimeError):
        y.backward()


def test_no_tape_without_grad():
    y = T.sum_all(T.scale(Tensor(np.ones(3)), 2.0))
    with pytest.raises(RuntimeError):
        y.backward()


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(9)
    nets = {"actor": ParameterSet.init("actor", rng, hidden=8),
            "critic_1": ParameterSet.init("critic", rng, hidden=8)}
    path = tmp_path / "ck.json"
    save_checkpoint(path, nets, {"step": 12})
    back, meta = load_checkpoint(path)
    assert meta == {"step": 12}
    for name, ps in nets.items():
        assert back[name].kind == ps.kind and back[name].hidden == ps.hidden
        for k, arr in ps.arrays.items():
            assert back[name].arrays[k].tobytes() == arr.tobytes()
    g = _graph(rng, 4)
    assert actor_forward(g, back["actor"]).data.tobytes() == actor_forward(g, nets["actor"]).data.tobytes()


def test_checkpoint_rejects_foreign_files(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_checkpoint(p)


def test_parameter_set_validates_shapes():
    with pytest.raises(ValueError):
        ParameterSet("actor", {"enc.W": np.zeros((3, 4))}, 4)
