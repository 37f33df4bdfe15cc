"""Discretisation study: lattice quantities against their continuous-time limits.

Errors use the discrete L2(M) surrogate: a predictable process on the lattice
is weighted node by node with (probability of reaching the node) x (one-step
conditional variance of dS).
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .decomposition import fs_of_mvt
from .errors import ConfigError, UnsupportedSpec
from .market_tree import ContinuousModelSpec, EventTree, build_binomial
from .mv_structure import compute_lambda, compute_mvt, forward_moments
from .solvers import lmve_backward

COLUMNS = ("n", "lambda_error", "K_error", "theta_error", "xi_error", "max_jump",
           "sup_K_T", "discretization_martingale_mass", "root_invested", "identity_residual",
           "seconds")
ERROR_COLUMNS = ("lambda_error", "K_error", "theta_error", "xi_error", "max_jump",
                 "discretization_martingale_mass")


@dataclass(frozen=True)
class ConvergenceConfig:
    spec: ContinuousModelSpec
    n_list: tuple
    gamma: float
    threads: int = 1

    def __post_init__(self):
        n = list(self.n_list)
        if not n or any(int(v) != v or v < 1 for v in n):
            raise ConfigError("n_list must hold positive integers")
        if any(b <= a for a, b in zip(n, n[1:])):
            raise ConfigError("n_list must be strictly increasing")
        if any(b % a for a, b in zip(n, n[1:])):
            raise ConfigError("n_list must be nested: each entry divides the next")
        if not self.gamma > 0:
            raise ConfigError("gamma must be > 0")
        if self.spec.kind == "regime-switching-drift" and self.spec.rates is None:
            raise UnsupportedSpec(
                "regime convergence needs 'rates': a fixed per-step matrix has no continuous limit")


@dataclass
class ConvergenceTable:
    rows: list
    rates: dict
    r_squared: dict
    theta_reference: str  # "closed-form" or "self" (finest level)
    flags: list = field(default_factory=list)

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)


# ---------------------------------------------------------------------------
# continuous references
# ---------------------------------------------------------------------------


def _growth(a: float, h: float) -> float:
    """(exp(a h) - 1) / a, continuous at a = 0."""
    return h if a == 0.0 else math.expm1(a * h) / a


def integral_variance_ratio(mu: float, sigma: float, h: float) -> float:
    """Var[int_0^h S_u du] / S_0^2 for geometric Brownian motion."""
    s2 = sigma * sigma
    if mu + s2 == 0.0:
        raise ValueError("mu + sigma^2 = 0 not supported")
    second = 2.0 / (mu + s2) * (_growth(2 * mu + s2, h) - _growth(mu, h))
    return max(second - _growth(mu, h) ** 2, 0.0)


def _node_drifts(spec: ContinuousModelSpec, tree: EventTree, k: int) -> np.ndarray:
    drifts = spec.regime_drifts()
    if tree.states is None:
        return np.full(tree.sizes[k], drifts[0])
    return drifts[tree.states[k]]


# ---------------------------------------------------------------------------
# one refinement level
# ---------------------------------------------------------------------------


def _solve_level(spec: ContinuousModelSpec, n: int, gamma: float) -> dict:
    t0 = time.perf_counter()
    tree = build_binomial(spec, n)
    sc = compute_lambda(tree).require()
    mvt = compute_mvt(tree, sc)
    theta, _ = lmve_backward(tree, sc, gamma)
    fs = fs_of_mvt(tree, mvt, "backward", sc)
    doob = sc.doob
    dt = spec.t_real / n
    s2 = spec.sigma ** 2
    reach = tree.reach_prob()

    lam_err = theta_err = xi_err = ident = 0.0
    mass_num = mass_den = 0.0
    ref_inc = []
    for k in range(n):
        S = tree.prices[k]
        mu = _node_drifts(spec, tree, k)
        w = reach[k] * doob.condvar[k]
        lam_ref = mu / (s2 * S)
        lam_err += float(np.sum(w * (sc.lam[k] - lam_ref) ** 2))
        # relative to the size of the position: far out in the lattice theta ~ 1/S is huge
        gap = np.abs(theta[k] - (sc.lam[k] - fs.xi_hat[k]) / gamma)
        ident = max(ident, float(np.max(gap / np.maximum(1.0, np.abs(theta[k])))))
        ref_inc.append(mvt.deltaK[k] - mu * mu / s2 * dt)
        # drift part of the continuous step, measured against the continuous quadratic variation
        for m in np.unique(mu):
            sel = mu == m
            rs = reach[k][sel] * S[sel] ** 2
            mass_num += float(np.sum(rs)) * m * m * integral_variance_ratio(m, spec.sigma, dt)
            mass_den += float(np.sum(rs)) * s2 * _growth(2 * m + s2, dt)
        if spec.kind == "geometric-brownian":
            theta_err += float(np.sum(w * (theta[k] - lam_ref / gamma) ** 2))
            xi_err += float(np.sum(w * fs.xi_hat[k] ** 2))
    m1, m2 = forward_moments(tree, ref_inc)
    row = {
        "n": n,
        "lambda_error": math.sqrt(lam_err),
        "K_error": math.sqrt(max(m2, 0.0)),
        "theta_error": math.sqrt(theta_err),
        "xi_error": math.sqrt(xi_err),
        "max_jump": mvt.max_jump,
        "sup_K_T": mvt.K_T_sup,
        "discretization_martingale_mass": float(mass_num / mass_den),
        "root_invested": float(theta[0][0] * tree.prices[0][0]),
        "identity_residual": ident,
    }
    row["seconds"] = time.perf_counter() - t0
    keep = None
    if spec.kind != "geometric-brownian":
        keep = {"tree": tree, "theta": theta, "xi": fs.xi_hat, "weights": [
            reach[k] * doob.condvar[k] for k in range(n)]}
    return {"row": row, "data": keep}


def _self_error(coarse, fine, n_c, n_f, sigma) -> tuple[float, float]:
    """Errors of coarse theta and xi against the finest level, interpolated in log S per regime."""
    r = n_f // n_c
    tc, tf = coarse["tree"], fine["tree"]
    th_err = xi_err = 0.0
    for k in range(n_c):
        kf = k * r
        lc = np.log(tc.prices[k])
        lf = np.log(tf.prices[kf])
        ref_th = np.empty_like(lc)
        ref_xi = np.empty_like(lc)
        for reg in np.unique(tc.states[k]):
            sel_c = tc.states[k] == reg
            sel_f = tf.states[kf] == reg
            order = np.argsort(lf[sel_f])
            xf = lf[sel_f][order]
            ref_th[sel_c] = np.interp(lc[sel_c], xf, fine["theta"][kf][sel_f][order])
            ref_xi[sel_c] = np.interp(lc[sel_c], xf, fine["xi"][kf][sel_f][order])
        w = coarse["weights"][k]
        th_err += float(np.sum(w * (coarse["theta"][k] - ref_th) ** 2))
        xi_err += float(np.sum(w * (coarse["xi"][k] - ref_xi) ** 2))
    return math.sqrt(th_err), math.sqrt(xi_err)


def fit_rate(n: np.ndarray, err: np.ndarray) -> tuple[float, float]:
    """Least-squares slope of log err against log n and the R^2 of the fit."""
    ok = err > 0
    if ok.sum() < 2:
        return math.nan, math.nan
    x, y = np.log(n[ok]), np.log(err[ok])
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss if ss > 0 else 1.0
    return float(slope), r2


def run_convergence(config: ConvergenceConfig) -> ConvergenceTable:
    n_list = [int(v) for v in config.n_list]
    spec = config.spec
    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            levels = list(pool.map(lambda n: _solve_level(spec, n, config.gamma), n_list))
    else:
        levels = [_solve_level(spec, n, config.gamma) for n in n_list]
    rows = [lv["row"] for lv in levels]
    flags = []
    reference = "closed-form"
    fit_rows = rows[1:]
    if spec.kind != "geometric-brownian":
        reference = "self"
        flags.append("theta_error and xi_error are measured against the finest level")
        finest = levels[-1]["data"]
        for lv in levels:
            th, xi = _self_error(lv["data"], finest, lv["row"]["n"], n_list[-1], spec.sigma)
            lv["row"]["theta_error"], lv["row"]["xi_error"] = th, xi
        # the finest level is its own reference
        fit_rows = rows[1:-1]
    n_arr = np.array([r["n"] for r in fit_rows], dtype=float)
    rates, r2 = {}, {}
    for col in ERROR_COLUMNS:
        rates[col], r2[col] = fit_rate(n_arr, np.array([r[col] for r in fit_rows], dtype=float))
    return ConvergenceTable(rows, rates, r2, reference, flags)


def jump_diagnostics(trees: list[EventTree]) -> dict:
    """Largest MVT jump and largest K_T per lattice, and the first level with jumps below 1."""
    rows = []
    for tree in trees:
        sc = compute_lambda(tree).require()
        mvt = compute_mvt(tree, sc)
        rows.append({"n": tree.horizon, "max_jump": mvt.max_jump, "sup_K_T": mvt.K_T_sup})
    n0 = None
    for i, r in enumerate(rows):
        if all(q["max_jump"] < 1.0 for q in rows[i:]):
            n0 = r["n"]
            break
    return {"levels": rows, "b_below_one": n0 is not None, "n0": n0}
