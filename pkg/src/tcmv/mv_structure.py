"""Structure condition, the MVT process and jump diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SCViolation
from .market_tree import (AdaptedProcess, DoobDecomposition, EventTree, PredictableProcess,
                          accumulate, doob_decompose, ratio)

DRIFT_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class SCReport:
    tree: EventTree
    doob: DoobDecomposition
    lam: PredictableProcess
    sc_holds: bool
    violating_nodes: list
    residual_eta: PredictableProcess

    @property
    def degenerate(self):
        return self.doob.degenerate

    def require(self):
        if not self.sc_holds:
            raise SCViolation(self.violating_nodes)
        return self


def compute_lambda(tree: EventTree, doob: DoobDecomposition | None = None) -> SCReport:
    """lambda = dA / condvar with 0/0 = 0; flags zero-variance nodes with drift."""
    doob = doob_decompose(tree) if doob is None else doob
    if doob.tree is not tree:
        raise ValueError("Doob decomposition belongs to a different tree")
    lam, eta, bad = [], [], []
    for k in range(tree.horizon):
        dA = doob.deltaA[k]
        deg = doob.degenerate[k]
        tol = DRIFT_ATOL * np.maximum(1.0, np.abs(tree.prices[k]))
        viol = deg & (np.abs(dA) > tol)
        lam.append(ratio(dA, doob.condvar[k], deg))
        eta.append(np.where(viol, dA, 0.0))
        bad.extend(tree.label(k, int(i)) for i in np.flatnonzero(viol))
    return SCReport(tree, doob, PredictableProcess(lam), not bad, bad, PredictableProcess(eta))


@dataclass(frozen=True, eq=False)
class MVTReport:
    """MVT process data.

    ``K`` and ``K_T_per_leaf`` are ``None`` on a recombining lattice whose
    path sums depend on the route; the moment and bound fields are always
    available because they are computed by node recursions.
    """

    deltaK: PredictableProcess
    K: AdaptedProcess | None
    K_T_per_leaf: np.ndarray | None
    max_jump: float
    bmo_like_bound: float
    K_T_sup: float
    K_T_inf: float
    K_T_mean: float
    K_T_second_moment: float
    future_mean: AdaptedProcess  # E[K_T - K_k | node]

    @property
    def deterministic(self) -> bool:
        return self.K_T_sup - self.K_T_inf <= 1e-12 * max(1.0, abs(self.K_T_sup))


def compute_mvt(tree: EventTree, sc: SCReport) -> MVTReport:
    sc.require()
    doob = sc.doob
    dK = PredictableProcess([sc.lam[k] * doob.deltaA[k] for k in range(tree.horizon)])
    K = accumulate(tree, dK.levels)
    leaves = None if K is None else K[tree.horizon]

    T = tree.horizon
    future = [None] * (T + 1)
    future[T] = np.zeros(tree.sizes[T])
    hi = np.zeros(tree.sizes[T])
    lo = np.zeros(tree.sizes[T])
    for k in range(T - 1, -1, -1):
        future[k] = dK[k] + tree.expect_next(k, future[k + 1])
        ok = tree.valid(k)
        hi = dK[k] + np.max(np.where(ok, tree.edge(k, hi), -np.inf), axis=1)
        lo = dK[k] + np.min(np.where(ok, tree.edge(k, lo), np.inf), axis=1)

    m1, m2 = forward_moments(tree, dK.levels)
    return MVTReport(
        deltaK=dK,
        K=K,
        K_T_per_leaf=leaves,
        max_jump=dK.max_abs(),
        bmo_like_bound=max(float(np.max(f)) for f in future),
        K_T_sup=float(hi[0]),
        K_T_inf=float(lo[0]),
        K_T_mean=m1,
        K_T_second_moment=m2,
        future_mean=AdaptedProcess(future),
    )


def forward_moments(tree: EventTree, increments) -> tuple[float, float]:
    """E[X_T] and E[X_T^2] for the path sum X of per-node or per-edge increments.

    Works on recombining lattices: each node carries the probability mass
    reaching it together with the first two partial moments of X.
    """
    m0 = np.ones(1)
    m1 = np.zeros(1)
    m2 = np.zeros(1)
    for k in range(tree.horizon):
        inc = np.asarray(increments[k], dtype=float)
        inc = np.broadcast_to(inc[:, None] if inc.ndim == 1 else inc, tree.children[k].shape)
        ok = tree.valid(k)
        p = tree.probs[k]
        w0 = p * m0[:, None]
        w1 = p * (m1[:, None] + inc * m0[:, None])
        w2 = p * (m2[:, None] + 2.0 * inc * m1[:, None] + inc * inc * m0[:, None])
        n = tree.sizes[k + 1]
        idx = tree.children[k][ok]
        m0, m1, m2 = (np.bincount(idx, weights=w[ok], minlength=n) for w in (w0, w1, w2))
    return float(np.sum(m1)), float(np.sum(m2))
