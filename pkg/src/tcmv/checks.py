"""Residual checks behind ``verify`` and ``selftest``."""

from __future__ import annotations

import math

import numpy as np

from .decomposition import fs_of_mvt, gkw
from .errors import DegenerateMarket, NonConvergence
from .evaluation import (criterion_process, future_gains, lmve_value_formula, mmm_density,
                         total_variance_residual, wealth, z_decomposition_residual, z_via_mmm)
from .market_tree import EventTree, PredictableProcess, accumulate, doob_decompose
from .mv_structure import compute_lambda, compute_mvt
from .solvers import solve_lmve_recursion, solve_mmve, solve_precommitment

EXPAND_LIMIT = 100_000


class _Report:
    def __init__(self):
        self.checks = []

    def add(self, name, residual, tol, note=None):
        residual = float(residual)
        ok = bool(residual <= tol) if math.isfinite(residual) else False
        rec = {"name": name, "residual": residual, "tol": tol, "status": "pass" if ok else "fail"}
        if note:
            rec["note"] = note
        self.checks.append(rec)

    def flag(self, name, ok, note=None):
        rec = {"name": name, "status": "pass" if ok else "fail"}
        if note:
            rec["note"] = note
        self.checks.append(rec)

    def skip(self, name, why):
        self.checks.append({"name": name, "status": "skipped", "note": why})

    def result(self):
        return {"passed": all(c["status"] != "fail" for c in self.checks), "checks": self.checks}


def perturbation_gaps(tree, doob, theta, x, gamma, n, rng):
    """Largest U_{k-1}(theta + delta 1_k) - U_{k-1}(theta) over random one-node perturbations.

    The change is local: only the perturbed node's own step moves, so U at
    that node is re-evaluated from the children's conditional mean and
    variance of future gains.
    """
    Z, v = future_gains(tree, doob, theta)
    _, U = criterion_process(tree, doob, theta, x, gamma)
    V = wealth(tree, doob, theta, x)
    levels = np.array(tree.sizes[:-1], dtype=float)
    worst = -math.inf
    for _ in range(n):
        k = int(rng.choice(len(levels), p=levels / levels.sum()))
        i = int(rng.integers(tree.sizes[k]))
        scale = 1.0 + abs(float(theta[k][i]))
        delta = float(rng.normal()) * scale * 10.0 ** float(rng.uniform(-6, 1))
        th = theta[k][i] + delta
        nc = tree.nchild[k][i]
        p = tree.probs[k][i, :nc]
        ch = tree.children[k][i, :nc]
        g = th * doob.deltaS[k][i, :nc] + Z[k + 1][ch]
        m = float(np.sum(p * g))
        var = float(np.sum(p * (v[k + 1][ch] + (g - m) ** 2)))
        base = float(V[k][i]) if V is not None else float(x)
        new_u = base + m - 0.5 * gamma * var
        worst = max(worst, new_u - float(U[k][i]))
    return worst


def time_consistency_gap(tree, result, max_nodes=60):
    """Largest |theta_sub - theta restricted| over re-solves on interior subtrees (0.0 = bit-exact)."""
    worst = 0.0
    ids = [tree.node_id(k, i) for k in range(1, tree.horizon) for i in range(tree.sizes[k])]
    if len(ids) > max_nodes:
        pick = np.linspace(0, len(ids) - 1, max_nodes).round().astype(int)
        ids = [ids[j] for j in pick]
    for nid in ids:
        sub = tree.subtree(nid)
        r = solve_lmve_recursion(sub, result.gamma, result.x)
        k0 = sub.meta["origin_level"]
        for d, keep in enumerate(sub.meta["origin_index"][:-1]):
            a = r.strategy[d]
            b = result.strategy[k0 + d][keep]
            if not np.array_equal(a, b):
                worst = max(worst, float(np.max(np.abs(a - b))), 1e-300)
    return worst, len(ids)


def precommit_reoptimization_gap(tree, gamma, x, max_nodes=200):
    """Largest |theta_sub(root) - theta~(node)| when the static problem is re-solved at interior nodes.

    Returns (gap, node id attaining it).  A positive gap is the failure of
    Bellman's principle for the static criterion.
    """
    full = solve_precommitment(tree, gamma, x)
    etree = full.tree
    ids = [etree.node_id(k, i) for k in range(1, etree.horizon) for i in range(etree.sizes[k])]
    if len(ids) > max_nodes:
        pick = np.linspace(0, len(ids) - 1, max_nodes).round().astype(int)
        ids = [ids[j] for j in pick]
    worst, where = 0.0, None
    for nid in ids:
        k, i = etree.locate(nid)
        try:
            sub = solve_precommitment(etree.subtree(nid), gamma, x)
        except DegenerateMarket:
            continue
        gap = abs(float(sub.strategy[0][0]) - float(full.strategy[k][i]))
        if gap > worst:
            worst, where = gap, nid
    return worst, where


def verify_tree(tree: EventTree, gamma: float, x: float, seed: int = 0,
                n_perturb: int = 200) -> dict:
    rep = _Report()
    rng = np.random.default_rng(seed)
    doob = doob_decompose(tree)
    pscale = max(1.0, max(float(np.max(np.abs(p))) for p in tree.prices))
    res = doob.residuals()
    rep.add("doob_martingale", res["martingale"] / pscale, 1e-12)
    rep.add("doob_reconstruction", res["reconstruction"] / pscale, 1e-12)
    sc = compute_lambda(tree, doob)
    rep.flag("structure_condition", sc.sc_holds,
             None if sc.sc_holds else f"violating nodes: {sc.violating_nodes[:20]}")
    if not sc.sc_holds:
        rep.skip("solvers", "structure condition fails")
        return rep.result()

    mvt = compute_mvt(tree, sc)
    gap = 0.0
    for k in range(tree.horizon):
        ok = ~doob.degenerate[k]
        direct = np.where(ok, doob.deltaA[k] ** 2 / np.where(ok, doob.condvar[k], 1.0), 0.0)
        gap = max(gap, float(np.max(np.abs(mvt.deltaK[k] - direct) / np.maximum(1.0, direct))))
    rep.add("deltaK_two_formulas", gap, 1e-12)
    rep.add("deltaK_nonnegative", max(0.0, -min(float(np.min(d)) for d in mvt.deltaK)), 0.0)

    fs = fs_of_mvt(tree, mvt, "backward", sc)
    orth = mart = 0.0
    for k in range(tree.horizon):
        sdm = np.sqrt(doob.condvar[k]) + 1e-300
        orth = max(orth, float(np.max(np.abs(tree.expect(k, fs.dL_hat[k] * doob.deltaM[k])) / np.maximum(1.0, sdm))))
        mart = max(mart, float(np.max(np.abs(tree.expect(k, fs.dL_hat[k])))))
    rep.add("fs_orthogonality", orth, 1e-10)
    rep.add("fs_martingale", mart, 1e-10)
    for other in ("via-lmve", "fixed-point"):
        try:
            alt = fs_of_mvt(tree, mvt, other, sc)
        except NonConvergence as exc:
            rep.skip(f"fs_{other}_agrees", str(exc))
            continue
        d = max((alt.xi_hat - fs.xi_hat).max_abs(), abs(alt.K0_hat - fs.K0_hat))
        rep.add(f"fs_{other}_agrees", d, 1e-8)

    lm = solve_lmve_recursion(tree, gamma, x, sc)
    rep.add("lmve_Z_consistency", lm.residuals["Z_recursion_vs_gains"], 1e-10)
    ident = (lm.strategy - (sc.lam - fs.xi_hat) / gamma)
    rel = max(float(np.max(np.abs(a) / np.maximum(1.0, np.abs(b))))
              for a, b in zip(ident.levels, lm.strategy.levels))
    rep.add("lmve_structural_identity", rel, 1e-10)
    mm = solve_mmve(tree, gamma, x, sc)
    rep.add("mmve_first_order_condition", mm.residuals["first_order_condition"] / pscale, 1e-12)
    if mvt.deterministic:
        rep.add("lmve_equals_mmve", (lm.strategy - mm.strategy).max_abs(), 1e-12)
        rep.add("fs_xi_hat_zero", fs.xi_hat.max_abs(), 1e-12)
    else:
        rep.skip("lmve_equals_mmve", "K_T is random")

    mmm = mmm_density(tree, sc)
    rep.add("mmm_martingale", mmm.martingale_residual, 1e-10)
    rep.add("mmm_price_martingale", mmm.price_martingale_residual / pscale, 1e-10)
    z = z_via_mmm(tree, lm, mmm, sc)
    rep.add("z_via_mmm", z.max_residual, 1e-10,
            "discrete analogue" + ("; signed density" if mmm.signed else ""))

    worst = perturbation_gaps(tree, doob, lm.strategy, x, gamma, n_perturb, rng)
    rep.add("lmve_local_optimality", max(worst, 0.0), 1e-12)
    tc, count = time_consistency_gap(tree, lm)
    rep.add("lmve_time_consistency", tc, 0.0, f"{count} subtrees, bit-exact comparison")

    ptree = tree if not tree.recombining else None
    if tree.recombining:
        try:
            ptree = tree.expand(max_nodes=EXPAND_LIMIT)
        except Exception:
            ptree = None
    if ptree is None:
        rep.skip("path_checks", "lattice too large to expand")
        return rep.result()
    if ptree is not tree:
        doob = doob_decompose(ptree)
        sc = compute_lambda(ptree, doob)
        mvt = compute_mvt(ptree, sc)
        fs = fs_of_mvt(ptree, mvt, "backward", sc)
        lm = solve_lmve_recursion(ptree, gamma, x, sc)
        mm = solve_mmve(ptree, gamma, x, sc)
    T = ptree.horizon
    xiS = accumulate(ptree, [fs.xi_hat[k][:, None] * doob.deltaS[k] for k in range(T)])
    rep.add("fs_path_identity",
            float(np.max(np.abs(mvt.K[T] - (fs.K0_hat + xiS[T] + fs.L_hat[T])))), 1e-10)
    formula = lmve_value_formula(ptree, sc, fs, mvt, gamma, x)
    rep.add("lmve_value_formula", max(float(np.max(np.abs(a - b)))
                                      for a, b in zip(formula.levels, lm.U.levels)), 1e-9,
            "U_t(theta_hat) from the FS decomposition of K_T")
    try:
        pc = solve_precommitment(ptree, gamma, x, sc=sc)
        rep.add("precommit_dominance", max(0.0, max(lm.U0, mm.U0) - pc.U0), 1e-12)
    except DegenerateMarket as exc:
        rep.skip("precommit_dominance", str(exc))

    rnd = PredictableProcess([rng.normal(size=n) for n in ptree.sizes[:-1]])
    rep.add("z_decomposition", z_decomposition_residual(ptree, doob, rnd), 1e-10)
    tv = 0.0
    for _ in range(5):
        t = int(rng.integers(0, T))
        h = int(rng.integers(1, T - t + 1))
        tv = max(tv, total_variance_residual(ptree, doob, rnd, x, gamma, t, h))
    rep.add("total_variance_recursion", tv, 1e-10)
    H = rng.normal(size=ptree.sizes[T])
    g = gkw(ptree, doob, H)
    xiM = accumulate(ptree, [g.xi[k][:, None] * doob.deltaM[k] for k in range(T)])
    rep.add("gkw_path_identity", float(np.max(np.abs(H - (g.Y0 + xiM[T] + g.L[T])))), 1e-10)
    return rep.result()


def selftest(gamma: float = 1.5, x: float = 1.0) -> dict:
    from .fixtures import named_fixtures, sc_violation

    out = {}
    for name, tree in named_fixtures().items():
        out[name] = verify_tree(tree, gamma, x)
    viol = compute_lambda(sc_violation())
    out["sc-violation"] = {"passed": not viol.sc_holds and bool(viol.violating_nodes),
                           "checks": [{"name": "violation_detected",
                                       "status": "pass" if not viol.sc_holds else "fail",
                                       "note": f"nodes {viol.violating_nodes}"}]}
    return {"passed": all(r["passed"] for r in out.values()), "fixtures": out}
