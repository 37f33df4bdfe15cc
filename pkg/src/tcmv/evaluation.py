"""Conditional mean-variance criteria, expected future gains and the MMM check."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .market_tree import (AdaptedProcess, DoobDecomposition, EventTree, PredictableProcess,
                          accumulate, doob_decompose)
from .mv_structure import SCReport


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


def future_gains(tree: EventTree, doob: DoobDecomposition, theta: PredictableProcess):
    """Conditional mean Z and variance v of sum_{i>k} theta_i dS_i at every node.

    v uses the stable form v = sum p (v_child + (theta dS + Z_child - Z)^2).
    """
    T = tree.horizon
    Z = [None] * (T + 1)
    v = [None] * (T + 1)
    Z[T] = np.zeros(tree.sizes[T])
    v[T] = np.zeros(tree.sizes[T])
    for k in range(T - 1, -1, -1):
        g = theta[k][:, None] * doob.deltaS[k] + tree.edge(k, Z[k + 1])
        z = tree.expect(k, g)
        dev = g - z[:, None]
        v[k] = tree.expect(k, tree.edge(k, v[k + 1]) + dev * dev)
        Z[k] = z
    return AdaptedProcess(Z), AdaptedProcess(v)


def wealth(tree: EventTree, doob: DoobDecomposition, theta: PredictableProcess, x: float):
    """V_k = x + sum_{i<=k} theta dS, or None if it is not a node function."""
    return accumulate(tree, [theta[k][:, None] * doob.deltaS[k] for k in range(tree.horizon)],
                      start=x)


def criterion_process(tree: EventTree, doob: DoobDecomposition, theta: PredictableProcess,
                      x: float, gamma: float):
    """(Z, U) with U_k = E[V_T | node] - gamma/2 Var[V_T | node].

    On a lattice where wealth depends on the route, U is reported for wealth
    x at the node (the variance part does not depend on the current wealth).
    """
    Z, v = future_gains(tree, doob, theta)
    V = wealth(tree, doob, theta, x)
    base = V.levels if V is not None else [np.full(n, float(x)) for n in tree.sizes]
    U = AdaptedProcess([b + z - 0.5 * gamma * vv for b, z, vv in zip(base, Z.levels, v.levels)])
    return Z, U


def _resolve_node(tree: EventTree, node) -> tuple[int, int]:
    if isinstance(node, tuple):
        return int(node[0]), int(node[1])
    if isinstance(node, str) and tree.labels is not None:
        for k, lv in enumerate(tree.labels):
            if node in lv:
                return k, list(lv).index(node)
        raise KeyError(f"unknown node {node!r}")
    return tree.locate(int(node))


def criterion(tree: EventTree, theta: PredictableProcess, node, x: float, gamma: float,
              doob: DoobDecomposition | None = None) -> float:
    """U_t(theta) at one node: exact conditional mean and variance of V_T."""
    doob = doob_decompose(tree) if doob is None else doob
    k, i = _resolve_node(tree, node)
    _, U = criterion_process(tree, doob, theta, x, gamma)
    return float(U[k][i])


# ---------------------------------------------------------------------------
# minimal martingale measure
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MMMDensity:
    """Density 1 at the root, multiplied by 1 - lambda dM along each edge.

    ``density`` is the node process on trees; on recombining lattices the
    product depends on the route and only ``factors`` is kept.
    """

    factors: tuple
    density: AdaptedProcess | None
    signed: bool
    martingale_residual: float
    price_martingale_residual: float
    warnings: list = field(default_factory=list)


def mmm_density(tree: EventTree, sc: SCReport) -> MMMDensity:
    sc.require()
    doob = sc.doob
    factors, mart, smart = [], 0.0, 0.0
    for k in range(tree.horizon):
        f = 1.0 - sc.lam[k][:, None] * doob.deltaM[k]
        factors.append(f)
        mart = max(mart, float(np.max(np.abs(tree.expect(k, f) - 1.0))))
        smart = max(smart, float(np.max(np.abs(tree.expect(k, f * doob.deltaS[k])))))
    density = None
    if not tree.recombining:
        dens = [np.ones(1)]
        for k in range(tree.horizon):
            ok = tree.valid(k)
            nxt = np.empty(tree.sizes[k + 1])
            nxt[tree.children[k][ok]] = (dens[k][:, None] * factors[k])[ok]
            dens.append(nxt)
            # martingale property of the node process itself
            m = tree.expect(k, tree.edge(k, nxt)) - dens[k]
            mart = max(mart, float(np.max(np.abs(m))))
        density = AdaptedProcess(dens)
        signed = any(bool(np.any(d < 0)) for d in dens)
    else:
        signed = any(bool(np.any((f < 0) & (tree.probs[k] > 0))) for k, f in enumerate(factors))
    warnings = []
    if signed:
        warnings.append("minimal martingale density takes negative values (signed measure)")
    return MMMDensity(tuple(factors), density, signed, mart, smart, warnings)


@dataclass(frozen=True)
class ZMMMReport:
    max_residual: float
    signed: bool
    label: str = "discrete analogue of the MMM representation of Z"


def z_via_mmm(tree: EventTree, lmve_result, mmm: MMMDensity, sc: SCReport) -> ZMMMReport:
    """Compare Z(theta_hat) with (1/gamma) E_Q[K_T - K_t | node].

    E_Q[K_T - K_t] is computed by R = dK + E[(1 - lambda dM) R_child], which
    is the density-weighted conditional expectation written as a recursion.
    """
    doob = sc.doob
    T = tree.horizon
    R = np.zeros(tree.sizes[T])
    res = float(np.max(np.abs(lmve_result.Z[T])))
    for k in range(T - 1, -1, -1):
        dK = sc.lam[k] * doob.deltaA[k]
        R = dK + tree.expect(k, mmm.factors[k] * tree.edge(k, R))
        res = max(res, float(np.max(np.abs(lmve_result.Z[k] - R / lmve_result.gamma))))
    return ZMMMReport(res, mmm.signed)


def z_via_mmm_paths(tree: EventTree, lmve_result, mmm: MMMDensity, K: AdaptedProcess) -> float:
    """Same comparison using the node density and path values of K (trees only)."""
    if mmm.density is None or K is None:
        raise ValueError("path form needs a non-recombining tree")
    T = tree.horizon
    dens = mmm.density
    # E[D_T (K_T - K_t) | node] / D_t by repeated conditioning of D_T K_T and D_T
    DK = dens[T] * K[T]
    D = dens[T].copy()
    res = float(np.max(np.abs(lmve_result.Z[T])))
    for k in range(T - 1, -1, -1):
        DK = tree.expect_next(k, DK)
        D = tree.expect_next(k, D)
        with np.errstate(divide="ignore", invalid="ignore"):
            rhs = (DK - D * K[k]) / dens[k]
        ok = dens[k] != 0
        if np.any(ok):
            res = max(res, float(np.max(np.abs(lmve_result.Z[k][ok] - rhs[ok] / lmve_result.gamma))))
    return res


# ---------------------------------------------------------------------------
# identity checks used by verify / selftest
# ---------------------------------------------------------------------------


def bracket(tree: EventTree, dL: tuple):
    """Predictable quadratic variation increments E[dL^2 | node]."""
    return PredictableProcess([tree.expect(k, dL[k] * dL[k]) for k in range(tree.horizon)])


def lmve_value_formula(tree: EventTree, sc: SCReport, fs, mvt, gamma: float, x: float):
    """U_t(theta_hat) from the FS data of K_T:

    x + (K0_hat + sum_{i<=t} lambda dM + L_hat_t) / gamma
      - E[K_T - K_t + <L_hat>_T - <L_hat>_t | F_t] / (2 gamma).
    Needs path sums, so only on trees.
    """
    if fs.L_hat is None:
        raise ValueError("formula needs a non-recombining tree")
    doob = sc.doob
    T = tree.horizon
    lamM = accumulate(tree, [sc.lam[k][:, None] * doob.deltaM[k] for k in range(T)])
    dB = bracket(tree, fs.dL_hat)
    F = np.zeros(tree.sizes[T])
    out = [None] * (T + 1)
    for k in range(T, -1, -1):
        if k < T:
            F = mvt.deltaK[k] + dB[k] + tree.expect_next(k, F)
        out[k] = x + (fs.K0_hat + lamM[k] + fs.L_hat[k]) / gamma - F / (2.0 * gamma)
    return AdaptedProcess(out)


def z_decomposition_residual(tree: EventTree, doob: DoobDecomposition,
                             theta: PredictableProcess) -> float:
    """Check Z = Y0 + sum xi dM + L - sum theta dA path-wise for GKW of sum theta dA."""
    from .decomposition import gkw

    T = tree.horizon
    gains_A = accumulate(tree, [theta[k] * doob.deltaA[k] for k in range(T)])
    if gains_A is None:
        raise ValueError("needs a non-recombining tree")
    Z, _ = future_gains(tree, doob, theta)
    g = gkw(tree, doob, gains_A[T])
    xiM = accumulate(tree, [g.xi[k][:, None] * doob.deltaM[k] for k in range(T)])
    res = 0.0
    for k in range(T + 1):
        rhs = g.Y0 + xiM[k] + g.L[k] - gains_A[k]
        res = max(res, float(np.max(np.abs(Z[k] - rhs))))
    return res


def total_variance_residual(tree: EventTree, doob: DoobDecomposition, theta: PredictableProcess,
                            x: float, gamma: float, t: int, h: int) -> float:
    """U_t = E[U_{t+h} | F_t] - gamma/2 Var[E[V_T | F_{t+h}] | F_t] at every node of level t."""
    if not 0 <= t < t + h <= tree.horizon:
        raise ValueError("need 0 <= t < t + h <= T")
    V = wealth(tree, doob, theta, x)
    if V is None:
        raise ValueError("needs a non-recombining tree")
    Z, U = criterion_process(tree, doob, theta, x, gamma)
    m = V[t + h] + Z[t + h]
    EU, Em, Em2 = U[t + h], m, m * m
    for k in range(t + h - 1, t - 1, -1):
        EU = tree.expect_next(k, EU)
        Em = tree.expect_next(k, Em)
        Em2 = tree.expect_next(k, Em2)
    rhs = EU - 0.5 * gamma * (Em2 - Em * Em)
    return float(np.max(np.abs(U[t] - rhs)))
