import json

import numpy as np
import pytest

from gnfbc.diagnostics import (
    CorrelationModel,
    adjusted_correlation,
    autocorrelated_error,
    bias_estimate,
    estimate_rho_global,
    gat_rho_from_attention,
    load_rho_file,
    multiclass_bias,
)
from gnfbc.errors import FormatError, GnfbcError
from gnfbc.graph import build_graph

import oracles
from conftest import random_pairs


@pytest.fixture
def k2():
    return build_graph([(0, 1)], 2)


def dense_rho(g, rho):
    out = np.zeros((g.n_nodes, g.n_nodes))
    out[g.adjacency.row_ids(), g.indices] = rho
    return out


def test_error_single_edge(k2):
    corr = CorrelationModel(k2, [0.5, 0.5])
    eps = autocorrelated_error([0.5, 0.5], [1.0, 0.0], corr)
    assert eps.tolist() == [0.25, 0.75]


def test_error_zero_rho_and_perfect(k2, rng):
    yhat = rng.random(2)
    assert np.array_equal(autocorrelated_error(yhat, [1.0, 0.0], CorrelationModel(k2, [0.0, 0.0])), yhat)
    y = np.array([1.0, 0.0])
    assert np.array_equal(autocorrelated_error(y, y, CorrelationModel(k2, [0.7, -0.3])), y)


def test_bias_two_node_example(k2):
    r = bias_estimate([0.5, 0.5], [1.0, 0.0], CorrelationModel(k2, [0.5, 0.5]))
    assert np.allclose(r.per_node, [-0.25, -0.25], atol=1e-15)
    assert abs(r.total - (-0.5)) <= 1e-12


def test_bias_zero_cases(rng):
    g = build_graph(random_pairs(rng, 10, 0.3), 10)
    yhat, y = rng.random(10), rng.integers(0, 2, 10).astype(float)
    assert bias_estimate(yhat, y, CorrelationModel(g, np.zeros(len(g.indices)))).total == 0.0
    rho = rng.uniform(-0.2, 0.2, len(g.indices))
    assert bias_estimate(y, y, CorrelationModel(g, rho)).total == 0.0


def test_bias_matches_oracle(rng):
    for _ in range(20):
        g = build_graph(random_pairs(rng, 12, 0.3), 12)
        rho = rng.uniform(-0.3, 0.3, len(g.indices))
        yhat, y = rng.random(12), rng.integers(0, 2, 12).astype(float)
        corr = CorrelationModel(g, rho, sigma2=0.7)
        try:
            got = bias_estimate(yhat, y, corr).total
        except GnfbcError:
            continue
        assert got == pytest.approx(oracles.bias(dense_rho(g, rho), yhat, y, 0.7), abs=1e-10)


def test_bias_singular_names_node():
    g = build_graph([(0, 1), (1, 2)], 3)
    corr = CorrelationModel(g, [0.1, 0.8, 0.8, 0.1])
    with pytest.raises(GnfbcError, match="node 1"):
        bias_estimate([0.5] * 3, [1.0, 0.0, 1.0], corr)


def test_bias_continuity(k2):
    base = bias_estimate([0.3, 0.6], [1.0, 0.0], CorrelationModel(k2, [0.4, 0.2])).total
    for delta in (1e-4, 1e-6, 1e-8):
        moved = bias_estimate([0.3, 0.6], [1.0, 0.0], CorrelationModel(k2, [0.4 + delta, 0.2])).total
        assert abs(moved - base) < 100 * delta


def test_multiclass_sums_columns(k2):
    probs = np.array([[0.7, 0.3], [0.4, 0.6]])
    corr = CorrelationModel(k2, [0.3, 0.3])
    r = multiclass_bias(probs, [0, 1], corr)
    cols = [bias_estimate(probs[:, c], np.array([0, 1]) == c, corr).total for c in range(2)]
    assert r.total == pytest.approx(sum(cols), abs=1e-15)
    blob = json.loads(r.to_json())
    assert {"total", "per_node", "sigma2", "kappa", "params"} <= set(blob)


def test_adjusted_correlation():
    assert adjusted_correlation(0.5, 0.0) == 0.5
    assert adjusted_correlation(0.5, 1.0) == 0.0
    assert adjusted_correlation(0.5, 0.2) == pytest.approx(0.4)
    g1, g2 = 0.3, -0.4
    twice = adjusted_correlation(adjusted_correlation(0.7, g1), g2)
    assert twice == pytest.approx(adjusted_correlation(0.7, 1 - (1 - g1) * (1 - g2)), abs=1e-15)


def test_gat_rho_example(path3):
    s = path3.with_self_loops
    counts = np.diff(s.indptr)
    alpha = 1.0 / counts[s.row_ids()]
    corr = gat_rho_from_attention(path3, alpha, 0.6)
    rho_mid = corr.rho[path3.indptr[1] : path3.indptr[2]]
    assert np.allclose(rho_mid, 0.2, atol=1e-15)
    assert corr.rho_sq[1] == pytest.approx(0.08, abs=1e-15)


def test_gat_rho_zero_kappa_gives_zero_bias(path3, rng):
    alpha = rng.random(path3.with_self_loops.nnz)
    corr = gat_rho_from_attention(path3, alpha, 0.0)
    assert not corr.rho.any()
    assert bias_estimate(rng.random(3), [1.0, 0.0, 1.0], corr).total == 0.0


def test_gat_rho_errors(path3):
    alpha = np.ones(path3.with_self_loops.nnz)
    with pytest.raises(GnfbcError, match="smaller kappa"):
        gat_rho_from_attention(path3, alpha, 1.0)
    with pytest.raises(GnfbcError):
        gat_rho_from_attention(path3, alpha, -0.1)


def test_gat_rho_then_bias_matches_substitution(rng):
    g = build_graph(random_pairs(rng, 8, 0.3), 8)
    alpha = rng.random(len(g.indices)) * 0.3
    kappa = 0.5
    yhat, y = rng.random(8), rng.integers(0, 2, 8).astype(float)
    got = bias_estimate(yhat, y, gat_rho_from_attention(g, alpha, kappa)).total
    assert got == pytest.approx(oracles.bias(dense_rho(g, kappa * alpha), yhat, y), abs=1e-12)


def test_global_rho_examples():
    tri = build_graph([(0, 1), (1, 2), (0, 2)], 3)
    assert np.all(estimate_rho_global(tri, [0, 0, 0]).rho == 0.9)
    assert np.allclose(estimate_rho_global(tri, [0, 0, 1]).rho, -1 / 3)
    sq = build_graph([(0, 1), (1, 2), (2, 3), (3, 0)], 4)
    assert np.all(estimate_rho_global(sq, [0, 0, 1, 1]).rho == 0.0)
    with pytest.raises(GnfbcError):
        estimate_rho_global(build_graph([], 2), [0, 1])


def test_rho_file(tmp_path, path3):
    f = tmp_path / "rho.txt"
    f.write_text("# u v rho\n0 1 0.25\n1 2 -0.5\n")
    corr = load_rho_file(f, path3)
    assert corr.rho.tolist() == [0.25, 0.0, -0.5, 0.0]
    f.write_text("0 2 0.1\n")
    with pytest.raises(FormatError, match="not an edge"):
        load_rho_file(f, path3)
    f.write_text("0 1\n")
    with pytest.raises(FormatError, match=":1:"):
        load_rho_file(f, path3)


def test_correlation_model_validation(k2):
    with pytest.raises(GnfbcError):
        CorrelationModel(k2, [0.1])
    with pytest.raises(GnfbcError):
        CorrelationModel(k2, [0.1, 0.1], sigma2=0.0)
