import math

import numpy as np
import pytest

from tcmv.convergence import ConvergenceConfig, fit_rate, jump_diagnostics, run_convergence
from tcmv.errors import ConfigError, UnsupportedSpec
from tcmv.fixtures import REGIME_SPEC
from tcmv.market_tree import ContinuousModelSpec, build_binomial
from tcmv.mv_structure import compute_lambda, compute_mvt

GBM = ContinuousModelSpec(kind="geometric-brownian", mu=0.1, sigma=0.2, s0=1.0, t_real=1.0)
ZERO = ContinuousModelSpec(kind="geometric-brownian", mu=0.0, sigma=0.3, s0=2.0, t_real=1.0)
RATES = ContinuousModelSpec(kind="regime-switching-drift", sigma=0.3, s0=1.0, t_real=1.0,
                            drifts=(0.3, -0.1), rates=((-1.0, 1.0), (2.0, -2.0)))


@pytest.mark.parametrize("n_list", [(16, 8), (16, 24), (), (0, 4)])
def test_config_validation(n_list):
    with pytest.raises(ConfigError):
        ConvergenceConfig(GBM, n_list, 2.0)


def test_regime_without_rates_unsupported():
    with pytest.raises(UnsupportedSpec):
        ConvergenceConfig(REGIME_SPEC, (4, 8), 1.0)


def test_zero_drift_all_errors_vanish():
    # the lattice drift is zero up to rounding of p u + (1 - p) d - 1
    table = run_convergence(ConvergenceConfig(ZERO, (4, 16, 64), 2.0))
    for col in ("lambda_error", "K_error", "theta_error", "xi_error", "max_jump"):
        assert np.all(table.column(col) < 1e-12), col
    jd = jump_diagnostics([build_binomial(ZERO, n) for n in (4, 16)])
    assert all(r["max_jump"] < 1e-24 for r in jd["levels"])


def test_gbm_small_study():
    gamma = 2.0
    table = run_convergence(ConvergenceConfig(GBM, (16, 64, 256), gamma, threads=2))
    assert table.theta_reference == "closed-form"
    th, lam = table.column("theta_error"), table.column("lambda_error")
    assert np.all(np.diff(th) < 0)
    np.testing.assert_allclose(th, lam / gamma, rtol=1e-12, atol=0)
    assert np.all(table.column("xi_error") < 1e-12)
    assert np.all(table.column("identity_residual") < 1e-10)
    inv = table.column("root_invested")
    assert np.all(np.abs(np.diff(np.abs(inv - 1.25))) >= 0)
    assert abs(inv[-1] - 1.25) < abs(inv[0] - 1.25) + 1e-15
    # first-order jump size (mu/sigma)^2 dt
    for r in table.rows:
        approx = (0.1 / 0.2) ** 2 / r["n"]
        assert r["max_jump"] == pytest.approx(approx, rel=0.05)
        assert r["sup_K_T"] <= (0.1 / 0.2) ** 2 * 1.05
    mass = table.column("discretization_martingale_mass")
    assert np.all(mass > 0) and np.all(np.diff(mass) < 0)
    assert math.isfinite(table.rates["theta_error"])


def test_threads_do_not_change_results():
    a = run_convergence(ConvergenceConfig(GBM, (8, 32), 2.0, threads=1))
    b = run_convergence(ConvergenceConfig(GBM, (8, 32), 2.0, threads=3))
    for ra, rb in zip(a.rows, b.rows):
        for key in ra:
            if key != "seconds":
                assert ra[key] == rb[key]


def test_regime_self_convergence():
    table = run_convergence(ConvergenceConfig(RATES, (8, 32, 128, 512), 2.0))
    assert table.theta_reference == "self" and table.flags
    th = table.column("theta_error")
    assert th[-1] == 0.0
    assert np.all(np.diff(th[:-1]) < 0)
    assert np.all(np.diff(table.column("max_jump")) < 0)
    # independent regime move: the hedging part vanishes at every level
    assert np.all(table.column("xi_error") < 1e-12)


def test_jump_diagnostics_brute_force():
    trees = [build_binomial(GBM, n) for n in (16, 64, 256)]
    jd = jump_diagnostics(trees)
    assert jd["b_below_one"] and jd["n0"] == 16
    for tree, row in zip(trees, jd["levels"]):
        mvt = compute_mvt(tree, compute_lambda(tree))
        assert row["max_jump"] == max(float(np.max(d)) for d in mvt.deltaK)
    assert jd["levels"][-1]["max_jump"] < jd["levels"][0]["max_jump"]


def test_fit_rate():
    n = np.array([10.0, 100.0, 1000.0])
    slope, r2 = fit_rate(n, 3.0 * n ** -1.5)
    assert slope == pytest.approx(-1.5) and r2 == pytest.approx(1.0)
    assert math.isnan(fit_rate(n, np.zeros(3))[0])
