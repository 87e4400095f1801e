import math

import numpy as np
import pytest

from gnfbc import autodiff as ad
from gnfbc.errors import DimensionError, FormatError, GnfbcError
from gnfbc.graph import build_graph
from gnfbc.models import (
    KINDS,
    LayerSpec,
    ModelStack,
    apply_correction,
    build_stack,
    forward_agnostic,
    forward_aware,
    forward_gnfbc,
    gat_attention,
    init_params,
    layer_specs,
    load_weights,
    residual,
    save_weights,
)

import oracles
from conftest import random_pairs


def dims_for(kind):
    return [4, 3] if kind == "sgc" else [4, 5, 3]


def dense_params(stack):
    return [{k: v.data for k, v in layer.items()} for layer in stack.params]


@pytest.mark.parametrize("kind", KINDS)
def test_layer_matches_dense_oracle(kind, rng):
    pairs = random_pairs(rng, 9, 0.35) + []
    g = build_graph(pairs, 11)  # nodes 9 and 10 isolated
    a = oracles.dense_adjacency(11, pairs)
    spec = LayerSpec(kind, 4, 3)
    params = init_params(spec, rng)
    if kind == "gat":
        params["att"].data[...] = rng.uniform(-1, 1, (6, 1))
    h = rng.uniform(-1, 1, (11, 4))
    dp = {k: v.data for k, v in params.items()}
    act = kind != "sgc"
    got = forward_aware(spec, params, ad.constant(h), g).data
    assert np.allclose(got, oracles.layer(kind, dp, h, a, act), atol=1e-13)
    got = forward_agnostic(spec, params, ad.constant(h)).data
    assert np.allclose(got, oracles.layer(kind, dp, h, np.zeros_like(a), act), atol=1e-13)


@pytest.mark.parametrize("kind", KINDS)
def test_identity_adjacency_equivalence(kind, rng):
    g = build_graph([], 7)
    spec = LayerSpec(kind, 3, 4)
    params = init_params(spec, rng)
    h = ad.constant(rng.standard_normal((7, 3)))
    assert np.array_equal(forward_aware(spec, params, h, g).data, forward_agnostic(spec, params, h).data)


def test_sage_k2_example():
    g = build_graph([(0, 1)], 2)
    spec = LayerSpec("sage", 1, 1, activation="none")
    params = {"w_self": ad.parameter([[1.0]]), "w_neigh": ad.parameter([[1.0]])}
    assert forward_aware(spec, params, ad.constant([[1.0], [3.0]]), g).data.tolist() == [[4.0], [4.0]]


def test_gcn_edgeless_is_act_hw(rng):
    spec = LayerSpec("gcn", 3, 2)
    params = init_params(spec, rng)
    h = rng.standard_normal((4, 3))
    out = forward_aware(spec, params, ad.constant(h), build_graph([], 4)).data
    assert np.array_equal(out, np.maximum(h @ params["w"].data, 0))


def test_gat_zero_attention_is_mean(rng):
    pairs = [(0, 1), (0, 2), (2, 3)]
    g = build_graph(pairs, 5)
    spec = LayerSpec("gat", 3, 2, activation="none")
    params = init_params(spec, rng)
    params["att"].data[...] = 0.0
    h = rng.standard_normal((5, 3))
    a = oracles.dense_adjacency(5, pairs) + np.eye(5)
    mean = a / a.sum(axis=1, keepdims=True)
    out = forward_aware(spec, params, ad.constant(h), g).data
    assert np.allclose(out, mean @ h @ params["w"].data, atol=1e-14)


def test_gat_attention_examples():
    spec = LayerSpec("gat", 1, 1)
    # node 0: self + one neighbor, scores ln 2 and 0
    g = build_graph([(0, 1)], 3)
    params = {"att": ad.parameter([[0.0], [math.log(2.0)]])}
    alpha = gat_attention(spec, params, ad.constant([[1.0], [0.0], [5.0]]), g).data[:, 0]
    s = g.with_self_loops
    rows = s.row_ids()
    assert alpha[(rows == 0) & (s.indices == 0)][0] == pytest.approx(2 / 3, abs=1e-15)
    assert alpha[(rows == 0) & (s.indices == 1)][0] == pytest.approx(1 / 3, abs=1e-15)
    assert alpha[rows == 2].tolist() == [1.0]  # isolated node


def test_gat_attention_uniform_and_normalized(rng):
    g = build_graph([(0, 1), (0, 2)], 3)
    spec = LayerSpec("gat", 2, 2)
    params = {"att": ad.parameter(np.zeros((4, 1)))}
    alpha = gat_attention(spec, params, ad.constant(rng.standard_normal((3, 2))), g).data[:, 0]
    s = g.with_self_loops
    assert np.allclose(alpha[s.row_ids() == 0], 1 / 3)
    params["att"].data[...] = rng.uniform(-3, 3, (4, 1))
    big = build_graph(random_pairs(rng, 12, 0.4), 12)
    alpha = gat_attention(spec, params, ad.constant(rng.standard_normal((12, 2))), big).data[:, 0]
    sums = np.add.reduceat(alpha, big.with_self_loops.indptr[:-1])
    assert np.allclose(sums, 1.0, atol=1e-12)
    assert np.all((alpha >= 0) & (alpha <= 1))


def test_gat_agnostic_identity_weights():
    spec = LayerSpec("gat", 2, 2, activation="none")
    params = {"w": ad.parameter(np.eye(2)), "att": ad.parameter(np.ones((4, 1)))}
    h = np.array([[1.0, -2.0], [0.5, 3.0]])
    assert np.array_equal(forward_agnostic(spec, params, ad.constant(h)).data, h)


def test_residual_and_correction_examples():
    assert residual(ad.constant([[0.8]]), ad.constant([[0.5]])).item() == pytest.approx(0.3)
    same = ad.constant([[1.0, 2.0]])
    assert not residual(same, same).data.any()
    out = apply_correction(ad.constant([[0.8]]), ad.constant([[0.5]]), [0.4])
    assert out.item() == pytest.approx(0.68, abs=1e-15)


def test_correction_limits_and_convexity(rng):
    a = ad.constant(rng.standard_normal((6, 3)))
    b = ad.constant(rng.standard_normal((6, 3)))
    assert np.array_equal(apply_correction(a, b, np.zeros(6)).data, a.data)
    assert np.array_equal(apply_correction(a, b, np.ones(6)).data, b.data)
    out = apply_correction(a, b, rng.random(6)).data
    lo, hi = np.minimum(a.data, b.data), np.maximum(a.data, b.data)
    assert np.all((out >= lo - 1e-15) & (out <= hi + 1e-15))


def test_correction_length_mismatch():
    with pytest.raises(DimensionError):
        apply_correction(ad.constant(np.ones((3, 1))), ad.constant(np.ones((3, 1))), [0.1, 0.2])


@pytest.mark.parametrize("kind", ["gcn", "sgc", "sage", "gat"])
def test_gnfbc_limits(kind, rng):
    g = build_graph(random_pairs(rng, 10, 0.3), 10)
    stack = build_stack(kind, dims_for(kind), rng)
    x = rng.standard_normal((10, 4))
    assert np.max(np.abs(forward_gnfbc(stack, x, g, np.zeros(10)).data - stack.forward(x, g, "aware").data)) <= 1e-12
    assert np.max(np.abs(forward_gnfbc(stack, x, g, np.ones(10)).data - stack.forward(x, g, "agnostic").data)) <= 1e-12
    edgeless = build_graph([], 10)
    out = forward_gnfbc(stack, x, edgeless, rng.random(10)).data
    assert np.allclose(out, stack.forward(x, edgeless, "agnostic").data, atol=1e-15)


@pytest.mark.parametrize("kind", ["gcn", "sgc", "sage", "gat"])
def test_gnfbc_matches_straight_line_oracle(kind, rng):
    pairs = random_pairs(rng, 8, 0.35)
    g = build_graph(pairs, 8)
    stack = build_stack(kind, dims_for(kind), rng)
    x = rng.standard_normal((8, 4))
    beta = rng.random(8)
    ref = oracles.gnfbc_probs(kind, dense_params(stack), x, oracles.dense_adjacency(8, pairs), beta)
    assert np.max(np.abs(forward_gnfbc(stack, x, g, beta).data - ref)) <= 1e-12


def test_two_layer_gcn_on_path_seed0(path3):
    stack = build_stack("gcn", [2, 4, 2], np.random.default_rng(0))
    x = np.array([[0.0, 1.0], [1.0, 0.0], [2.0, -1.0]])
    beta = np.array([0.2, 0.5, 0.9])
    ref = oracles.gnfbc_probs("gcn", dense_params(stack), x, oracles.dense_adjacency(3, [(0, 1), (1, 2)]), beta)
    assert np.max(np.abs(forward_gnfbc(stack, x, path3, beta).data - ref)) <= 1e-12


def test_agnostic_gcn_is_mlp(rng):
    stack = build_stack("gcn", [3, 5, 2], rng)
    x = rng.standard_normal((6, 3))
    w0, w1 = (p["w"].data for p in stack.params)
    mlp = oracles.softmax(np.maximum(x @ w0, 0) @ w1)
    assert np.allclose(stack.forward(x, None, "agnostic").data, mlp, atol=1e-15)


def test_single_parameter_copy(rng):
    g = build_graph(random_pairs(rng, 6, 0.5), 6)
    stack = build_stack("sage", [3, 4, 2], rng)
    with ad.Tape() as tape:
        loss = ad.sum_all(stack.logits(rng.standard_normal((6, 3)), g, "gnfbc", rng.random(6)))
    leaves = {id(v) for node in tape.nodes for v in node.inputs if v.requires_grad and v.tape_id is None}
    assert leaves == {id(p) for p in stack.parameters()}
    tape.backward(loss)


@pytest.mark.parametrize("kind", ["gcn", "sgc", "sage", "gat"])
def test_shared_transform_costs_no_extra_matmul(kind, rng):
    g = build_graph(random_pairs(rng, 6, 0.5), 6)
    stack = build_stack(kind, dims_for(kind), rng)
    x = rng.standard_normal((6, 4))
    counts = {}
    for path in ("aware", "gnfbc"):
        with ad.Tape() as tape:
            stack.logits(x, g, path, np.full(6, 0.5))
        counts[path] = tape.op_counts()["matmul"]
    assert counts["aware"] == counts["gnfbc"]


@pytest.mark.parametrize("kind", ["gcn", "sgc", "sage", "gat"])
def test_permutation_equivariance(kind, rng):
    g = build_graph(random_pairs(rng, 9, 0.35), 9)
    stack = build_stack(kind, dims_for(kind), rng)
    x = rng.standard_normal((9, 4))
    beta = rng.random(9)
    perm = rng.permutation(9)
    gp = g.permute(perm)
    for path in ("aware", "agnostic", "gnfbc"):
        out = stack.forward(x, g, path, beta).data
        outp = stack.forward(x[perm], gp, path, beta[perm]).data
        assert np.allclose(outp, out[perm], atol=1e-13)


def test_layer_spec_validation():
    with pytest.raises(GnfbcError):
        LayerSpec("mlp", 2, 2)
    with pytest.raises(GnfbcError):
        LayerSpec("gcn", 2, 0)
    with pytest.raises(GnfbcError):
        LayerSpec("sgc", 2, 2, hops=0)
    with pytest.raises(GnfbcError):
        layer_specs("sgc", [4, 8, 2])
    with pytest.raises(DimensionError):
        ModelStack([LayerSpec("gcn", 2, 3), LayerSpec("gcn", 4, 2)], [{}, {}])


def test_last_layer_has_no_activation():
    specs = layer_specs("gcn", [4, 8, 8, 2])
    assert [s.activation for s in specs] == ["relu", "relu", "none"]


def test_forward_dimension_errors(rng):
    stack = build_stack("gcn", [3, 2], rng)
    g = build_graph([], 4)
    with pytest.raises(DimensionError):
        stack.forward(np.ones((4, 5)), g)
    with pytest.raises(DimensionError):
        forward_gnfbc(stack, np.ones((4, 3)), g, np.ones(3))


# -- weights file -----------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["gcn", "sgc", "sage", "gat"])
def test_weights_roundtrip_bit_exact(kind, rng, tmp_path):
    stack = build_stack(kind, dims_for(kind), rng)
    path = tmp_path / "w.gnfbc"
    save_weights(path, stack, "aware")
    loaded, header = load_weights(path)
    assert header["layer_count"] == len(stack.layers)
    assert loaded.layers == stack.layers
    for (n1, a), (n2, b) in zip(stack.named_tensors(), loaded.named_tensors()):
        assert n1 == n2 and a.data.tobytes() == b.data.tobytes()
    save_weights(tmp_path / "again.gnfbc", loaded, "aware")
    assert (tmp_path / "again.gnfbc").read_bytes() == path.read_bytes()


def test_weights_header_layout(rng, tmp_path):
    stack = build_stack("gcn", [3, 4, 2], rng)
    path = tmp_path / "w.gnfbc"
    save_weights(path, stack)
    raw = path.read_bytes()
    assert raw.startswith(b"GNFBC1")
    n_values = sum(p.data.size for _, p in stack.named_tensors())
    assert len(raw) == 6 + 4 + int.from_bytes(raw[6:10], "little") + 8 * n_values
    tail = np.frombuffer(raw[-8 * 8:], dtype="<f8")
    assert np.array_equal(tail, stack.params[1]["w"].data.ravel())


def test_weights_corruption(rng, tmp_path):
    stack = build_stack("gcn", [3, 4, 2], rng)
    path = tmp_path / "w.gnfbc"
    save_weights(path, stack)
    raw = path.read_bytes()
    cases = {
        "magic": b"XXXXX1" + raw[6:],
        "truncated": raw[:-8],
        "trailing": raw + b"\0" * 8,
        "header": raw[:10] + b"{" * (len(raw) - 10),
    }
    for name, blob in cases.items():
        bad = tmp_path / f"{name}.gnfbc"
        bad.write_bytes(blob)
        with pytest.raises(FormatError):
            load_weights(bad)
