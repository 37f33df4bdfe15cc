from fractions import Fraction

import numpy as np
import pytest

from tcmv.config import load_config
from tcmv.decomposition import fs_of_mvt
from tcmv.errors import SCViolation
from tcmv.evaluation import (criterion, lmve_value_formula, mmm_density, z_decomposition_residual,
                             z_via_mmm, z_via_mmm_paths)
from tcmv.fixtures import multiplicative, named_fixtures, one_step_skew, sc_violation, symmetric_walk
from tcmv.market_tree import PredictableProcess, build_from_config, doob_decompose
from tcmv.mv_structure import compute_lambda, compute_mvt
from tcmv.solvers import solve_lmve_recursion

import oracles

FIXTURES = named_fixtures()
CONFIGS = __import__("pathlib").Path(__file__).resolve().parents[1] / "configs"


def zeros(tree):
    return PredictableProcess([np.zeros(n) for n in tree.sizes[:-1]])


def test_zero_strategy_criterion_is_wealth():
    tree = FIXTURES["regime"]
    for k in range(tree.horizon + 1):
        assert criterion(tree, zeros(tree), (k, 0), 2.5, 3.0) == 2.5


def test_one_period_criterion():
    tree = one_step_skew()
    lam = 5 / 27
    u = criterion(tree, PredictableProcess([np.array([lam])]), 0, 1.0, 1.0)
    # x + lambda dA - lambda^2 condvar / 2 = x + dA^2 / (2 condvar)
    assert u == pytest.approx(1.0 + 4 / 27, abs=1e-15)


def test_criterion_by_label():
    tree = build_from_config(load_config(CONFIGS / "explicit_tree.json"))
    r = solve_lmve_recursion(tree, 1.0, 0.0)
    k, i = 1, 0
    assert criterion(tree, r.strategy, tree.label(k, i), 0.0, 1.0) == pytest.approx(
        criterion(tree, r.strategy, (k, i), 0.0, 1.0), abs=0)


def test_mmm_zero_lambda():
    tree = symmetric_walk(3)
    m = mmm_density(tree, compute_lambda(tree))
    assert all(np.all(d == 1.0) for d in m.density)
    assert not m.signed


def test_mmm_one_step_factors():
    tree = one_step_skew()
    m = mmm_density(tree, compute_lambda(tree))
    np.testing.assert_allclose(m.factors[0][0], [5 / 9, 5 / 3], atol=1e-15)
    assert 0.6 * m.factors[0][0][0] + 0.4 * m.factors[0][0][1] == pytest.approx(1.0, abs=1e-15)


def test_mmm_signed_fixture_flagged():
    tree = FIXTURES["signed-mmm"]
    m = mmm_density(tree, compute_lambda(tree))
    assert m.signed and m.warnings
    assert min(float(d.min()) for d in m.density) < 0


def test_mmm_requires_sc():
    tree = sc_violation()
    with pytest.raises(SCViolation):
        mmm_density(tree, compute_lambda(tree))


@pytest.mark.parametrize("name,tree", list(FIXTURES.items()))
def test_mmm_invariants(name, tree):
    sc = compute_lambda(tree)
    m = mmm_density(tree, sc)
    assert m.density[0][0] == 1.0
    assert m.martingale_residual < 1e-12
    assert m.price_martingale_residual < 1e-10 * max(1.0, max(np.max(np.abs(p)) for p in tree.prices))


def exact_q_expectation(node, gamma):
    """(1/gamma) E[density ratio (K_T - K_t) | node] by enumeration with Fractions."""
    total = Fraction(0)
    for q, path in oracles.paths_from(node):
        dens = Fraction(1)
        K = Fraction(0)
        for i, n in enumerate(path[:-1]):
            dA, _ = oracles.doob(n)
            dM = path[i + 1].S - n.S - dA
            dens *= 1 - oracles.lam(n) * dM
            K += oracles.lam(n) * dA
        total += q * dens * K
    return total / gamma


@pytest.mark.parametrize("name", ["one-step-skew", "multiplicative-2", "signed-mmm", "random-a",
                                  "trinomial-skew"])
def test_z_via_mmm_against_enumeration(name):
    tree = FIXTURES[name]
    gamma = 1.5
    sc = compute_lambda(tree)
    lm = solve_lmve_recursion(tree, gamma, 0.0, sc)
    m = mmm_density(tree, sc)
    assert z_via_mmm(tree, lm, m, sc).max_residual < 1e-10
    mvt = compute_mvt(tree, sc)
    assert z_via_mmm_paths(tree, lm, m, mvt.K) < 1e-10
    levels = oracles.to_nodes(tree)
    for k, lv in enumerate(levels):
        for i, node in enumerate(lv):
            ref = float(exact_q_expectation(node, Fraction(3, 2)))
            assert lm.Z[k][i] == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_z_deterministic_mvt_closed_form():
    tree = multiplicative(3)
    sc = compute_lambda(tree)
    mvt = compute_mvt(tree, sc)
    lm = solve_lmve_recursion(tree, 2.0, 0.0, sc)
    for k in range(tree.horizon + 1):
        np.testing.assert_allclose(lm.Z[k], (mvt.K_T_per_leaf[0] - mvt.K[k]) / 2.0, atol=1e-14)


@pytest.mark.parametrize("name,tree", list(FIXTURES.items()))
def test_value_formula_and_z_decomposition(name, tree):
    gamma, x = 1.5, 0.7
    sc = compute_lambda(tree)
    mvt = compute_mvt(tree, sc)
    fs = fs_of_mvt(tree, mvt, sc=sc)
    lm = solve_lmve_recursion(tree, gamma, x, sc)
    formula = lmve_value_formula(tree, sc, fs, mvt, gamma, x)
    for a, b in zip(formula.levels, lm.U.levels):
        assert np.max(np.abs(a - b)) < 1e-9
    rng = np.random.default_rng(2)
    theta = PredictableProcess([rng.normal(size=n) for n in tree.sizes[:-1]])
    assert z_decomposition_residual(tree, doob_decompose(tree), theta) < 1e-10
