from fractions import Fraction

import numpy as np
import pytest

from tcmv.errors import ConfigError
from tcmv.fixtures import multiplicative, named_fixtures, random_tree, regime_lattice, symmetric_walk
from tcmv.market_tree import (ContinuousModelSpec, accumulate, build_binomial, build_from_config,
                              build_multiplicative, doob_decompose, from_arrays)

import oracles


def explicit(prices_children):
    nodes = [{"id": nid, "price": s, "children": list(kids), "probs": list(p)}
             for nid, s, kids, p in prices_children]
    return {"kind": "explicit-tree", "horizon": 1, "nodes": nodes}


def test_minimal_explicit_tree():
    cfg = explicit([("r", 1.0, ["u", "d"], [0.5, 0.5]), ("u", 2.0, [], []), ("d", 0.0, [], [])])
    tree = build_from_config(cfg)
    assert tree.n_nodes == 3
    assert tree.horizon == 1
    assert tree.label(1, 0) == "u"


def test_probabilities_must_sum_to_one():
    cfg = explicit([("r", 1.0, ["u", "d"], [0.5, 0.6]), ("u", 2.0, [], []), ("d", 0.0, [], [])])
    with pytest.raises(ConfigError, match="probabilities sum"):
        build_from_config(cfg)


def test_orphan_and_declared_horizon_rejected():
    cfg = explicit([("r", 1.0, ["u"], [1.0]), ("u", 2.0, [], []), ("x", 3.0, [], [])])
    with pytest.raises(ConfigError, match="orphan"):
        build_from_config(cfg)
    cfg = explicit([("r", 1.0, ["u"], [1.0]), ("u", 2.0, [], [])])
    cfg["horizon"] = 2
    with pytest.raises(ConfigError, match="horizon"):
        build_from_config(cfg)


@pytest.mark.parametrize("recombining,count", [(False, 7), (True, 6)])
def test_two_step_multiplicative_node_count(recombining, count):
    cfg = {"kind": "binomial", "horizon": 2, "recombining": recombining,
           "spec": {"model": "multiplicative", "s0": 4.0, "u": 2.0, "d": 0.5, "p_up": 0.6}}
    tree = build_from_config(cfg)
    assert tree.n_nodes == count
    expected = [1.0, 4.0, 16.0] if recombining else [1.0, 4.0, 4.0, 16.0]
    assert sorted(tree.prices[2]) == expected


def test_recombining_prices():
    tree = build_multiplicative(4.0, 2.0, 0.5, 0.6, 2, recombining=True)
    assert list(tree.prices[2]) == [1.0, 4.0, 16.0]
    assert tree.expand().n_nodes == 7


def test_zero_drift_binomial_is_log_symmetric():
    spec = ContinuousModelSpec(kind="geometric-brownian", mu=0.0, sigma=0.2, s0=1.0, t_real=1.0)
    tree = build_binomial(spec, 1)
    u, d = np.exp(0.2), np.exp(-0.2)
    p = tree.probs[0][0]
    assert p[0] == pytest.approx((1 - d) / (u - d), abs=1e-15)
    assert np.log(tree.prices[1]).sum() == pytest.approx(0.0, abs=1e-15)


def test_binomial_conditional_mean_and_scaling():
    spec = ContinuousModelSpec(kind="geometric-brownian", mu=0.1, sigma=0.2, s0=1.0, t_real=1.0)
    tree = build_binomial(spec, 4)
    assert tree.sizes[-1] == 5
    dt = 0.25
    doob = doob_decompose(tree)
    rel_var = []
    for k in range(4):
        S = tree.prices[k]
        np.testing.assert_allclose(doob.deltaA[k], S * np.expm1(0.1 * dt), rtol=0, atol=1e-12)
        rel_var.append(doob.condvar[k] / S ** 2)
    flat = np.concatenate(rel_var)
    assert np.ptp(flat) < 1e-12


def test_coarse_step_rejected():
    spec = ContinuousModelSpec(kind="geometric-brownian", mu=10.0, sigma=0.01, s0=1.0, t_real=1.0)
    with pytest.raises(ConfigError, match="too coarse"):
        build_binomial(spec, 1)


def test_doob_examples():
    d = doob_decompose(symmetric_walk(3))
    for k in range(3):
        assert np.all(d.deltaA[k] == 0)
        assert np.array_equal(d.deltaM[k], d.deltaS[k])
    d = doob_decompose(from_arrays([[4.0], [8.0, 2.0]], [[[0, 1]]], [[[0.6, 0.4]]]))
    assert d.deltaA[0][0] == pytest.approx(1.6, abs=1e-15)
    np.testing.assert_allclose(d.deltaM[0][0], [2.4, -3.6], atol=1e-15)
    det = from_arrays([[1.0], [2.0], [3.5]], [[[0]], [[0]]], [[[1.0]], [[1.0]]])
    d = doob_decompose(det)
    assert all(np.all(m == 0) for m in d.deltaM)
    assert d.deltaA[0][0] == 1.0 and d.deltaA[1][0] == 1.5


@pytest.mark.parametrize("name,tree", list(named_fixtures().items()))
def test_doob_invariants_and_reconstruction(name, tree):
    d = doob_decompose(tree)
    res = d.residuals()
    assert res["martingale"] <= 1e-12 * max(1.0, max(np.max(np.abs(p)) for p in tree.prices))
    assert res["reconstruction"] <= 1e-12
    T = tree.horizon
    A = accumulate(tree, [d.deltaA[k] for k in range(T)], start=tree.prices[0][0])
    S = accumulate(tree, [d.deltaA[k][:, None] + d.deltaM[k] for k in range(T)],
                   start=tree.prices[0][0])
    assert A is not None or tree.recombining
    for k in range(T + 1):
        np.testing.assert_allclose(S[k], tree.prices[k], rtol=0, atol=1e-12 * max(1, np.max(np.abs(tree.prices[k]))))


def test_doob_against_exact_fractions():
    tree = random_tree(np.random.default_rng(3), max_levels=3, max_branches=3)
    levels = oracles.to_nodes(tree)
    d = doob_decompose(tree)
    for k in range(tree.horizon):
        for i, node in enumerate(levels[k]):
            dA, cv = oracles.doob(node)
            assert float(dA) == pytest.approx(d.deltaA[k][i], abs=1e-12 * max(1, abs(node.S)))
            assert float(cv) == pytest.approx(d.condvar[k][i], rel=1e-10, abs=1e-12)


def test_subtree_and_expand():
    lat = regime_lattice(4)
    tree = lat.expand()
    assert not tree.recombining
    # two price moves times two regimes per step
    assert tree.sizes[-1] == 4 ** 4
    sub = tree.subtree(tree.node_id(2, 1))
    assert sub.horizon == 2
    assert sub.meta["origin_level"] == 2
    for d_, keep in enumerate(sub.meta["origin_index"]):
        np.testing.assert_array_equal(sub.prices[d_], tree.prices[2 + d_][keep])
    with pytest.raises(ConfigError):
        build_binomial(ContinuousModelSpec(kind="geometric-brownian", mu=0.1, sigma=0.2, s0=1.0,
                                           t_real=1.0), 30).expand(max_nodes=1000)


def test_multiplicative_fixture_is_a_tree():
    t = multiplicative(2)
    assert not t.recombining and t.n_nodes == 7
    assert [Fraction(float(s)) for s in t.prices[2]] == [16, 4, 4, 1]


def test_regime_spec_validation():
    with pytest.raises(ConfigError):
        ContinuousModelSpec(kind="geometric-brownian", mu=0.1, sigma=-0.2, s0=1.0, t_real=1.0)
    with pytest.raises(ConfigError):
        ContinuousModelSpec(kind="regime-switching-drift", sigma=0.2, s0=1.0, t_real=1.0,
                            drifts=(0.1, 0.0), transition=((0.5, 0.6), (0.5, 0.5)))
