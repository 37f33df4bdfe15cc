"""GKW and Föllmer-Schweizer decompositions on event trees, and the fixed-point map.

All recursions run backward one level at a time.  Targets that are sums of
predictable increments (the MVT process, gains of a strategy against the
drift) are handled by Markov recursions, so they also work on recombining
lattices; a general terminal payoff needs a genuine tree only when it is
path-dependent, which callers take care of by passing leaf values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonConvergence
from .market_tree import (AdaptedProcess, DoobDecomposition, EventTree, PredictableProcess,
                          accumulate, ratio)
from .mv_structure import MVTReport, SCReport, compute_lambda, compute_mvt

FS_METHODS = ("via-lmve", "fixed-point", "backward")


@dataclass(frozen=True, eq=False)
class GKWDecomposition:
    """H = Y0 + sum xi dM + L_T.

    ``dL`` holds the per-edge increments of L; ``L`` is their path sum and is
    ``None`` on lattices where that sum depends on the route.
    """

    Y0: float
    xi: PredictableProcess
    L: AdaptedProcess | None
    Y: AdaptedProcess
    dL: tuple


@dataclass(frozen=True, eq=False)
class FSDecomposition:
    """K_T = K0_hat + sum xi_hat dS + L_hat_T."""

    K0_hat: float
    xi_hat: PredictableProcess
    L_hat: AdaptedProcess | None
    dL_hat: tuple
    W: AdaptedProcess  # K0_hat + int xi_hat dS + L_hat - K, zero at the leaves
    method: str
    report: "ContractionReport | None" = None


@dataclass(frozen=True, eq=False)
class ContractionReport:
    iterates: list
    sup_diffs: list
    weighted_diffs: list
    measured_ratio: float
    theoretical_modulus_valid: bool
    beta: float
    max_jump: float
    converged: bool
    warnings: list = field(default_factory=list)

    @property
    def n_iter(self) -> int:
        return len(self.sup_diffs)


# ---------------------------------------------------------------------------
# GKW
# ---------------------------------------------------------------------------


def gkw(tree: EventTree, doob: DoobDecomposition, target) -> GKWDecomposition:
    """GKW decomposition of a terminal payoff given per leaf."""
    T = tree.horizon
    H = np.asarray(target, dtype=float)
    if H.shape != (tree.sizes[T],):
        raise ValueError(f"target must have one value per leaf ({tree.sizes[T]})")
    Y = [None] * (T + 1)
    Y[T] = H
    xi, dL = [None] * T, [None] * T
    for k in range(T - 1, -1, -1):
        yc = tree.edge(k, Y[k + 1])
        y = tree.expect(k, yc)
        dev = yc - y[:, None]
        x = ratio(tree.expect(k, doob.deltaM[k] * dev), doob.condvar[k], doob.degenerate[k])
        Y[k] = y
        xi[k] = x
        dL[k] = dev - x[:, None] * doob.deltaM[k]
    return GKWDecomposition(float(Y[0][0]), PredictableProcess(xi), accumulate(tree, dL),
                            AdaptedProcess(Y), tuple(dL))


def gkw_additive(tree: EventTree, doob: DoobDecomposition, increments):
    """GKW integrand of sum_k c_k for predictable c, plus R_k = E[sum_{i>k} c_i | F_k].

    Because the already-known part of the sum is constant given the node, only
    the conditional expectation of the remaining increments enters.
    """
    T = tree.horizon
    R = [None] * (T + 1)
    R[T] = np.zeros(tree.sizes[T])
    xi = [None] * T
    for k in range(T - 1, -1, -1):
        rc = tree.edge(k, R[k + 1])
        xi[k] = ratio(tree.expect(k, doob.deltaM[k] * rc), doob.condvar[k], doob.degenerate[k])
        R[k] = increments[k] + tree.expect(k, rc)
    return PredictableProcess(xi), AdaptedProcess(R)


# ---------------------------------------------------------------------------
# FS decomposition of K_T
# ---------------------------------------------------------------------------


def fs_from_integrand(tree: EventTree, doob: DoobDecomposition, deltaK: PredictableProcess,
                      xi_hat: PredictableProcess, method: str, report=None) -> FSDecomposition:
    """Complete a candidate FS integrand to K0_hat and L_hat.

    W_k = K0_hat + sum_{i<=k} xi_hat dS + L_hat_k - K_k solves
    W = dK + E[W_child] - xi_hat dA with W_T = 0, and
    dL_hat = dK + W_child - W - xi_hat dS on every edge.
    """
    T = tree.horizon
    W = [None] * (T + 1)
    W[T] = np.zeros(tree.sizes[T])
    dL = [None] * T
    for k in range(T - 1, -1, -1):
        wc = tree.edge(k, W[k + 1])
        w = deltaK[k] + tree.expect(k, wc) - xi_hat[k] * doob.deltaA[k]
        W[k] = w
        dL[k] = (deltaK[k][:, None] + wc - w[:, None]) - xi_hat[k][:, None] * doob.deltaS[k]
    return FSDecomposition(float(W[0][0]), xi_hat, accumulate(tree, dL), tuple(dL),
                           AdaptedProcess(W), method, report)


def _fs_backward(tree, doob, deltaK):
    T = tree.horizon
    W = np.zeros(tree.sizes[T])
    xi = [None] * T
    for k in range(T - 1, -1, -1):
        wc = tree.edge(k, W)
        xi[k] = ratio(tree.expect(k, wc * doob.deltaM[k]), doob.condvar[k], doob.degenerate[k])
        W = deltaK[k] + tree.expect(k, wc) - xi[k] * doob.deltaA[k]
    return PredictableProcess(xi)


def fs_of_mvt(tree: EventTree, mvt: MVTReport | None = None, method: str = "backward",
              sc: SCReport | None = None, cap: int = 200, tol: float = 1e-10) -> FSDecomposition:
    """FS decomposition of K_T.

    ``backward`` solves the orthogonality conditions level by level;
    ``via-lmve`` reads xi_hat = lambda - theta_hat off the LMVE recursion at
    gamma = 1; ``fixed-point`` iterates xi <- GKW integrand of
    K_T - sum xi dA.
    """
    if method not in FS_METHODS:
        raise ValueError(f"unknown FS method {method!r}; choose from {FS_METHODS}")
    sc = compute_lambda(tree) if sc is None else sc
    sc.require()
    mvt = compute_mvt(tree, sc) if mvt is None else mvt
    doob = sc.doob
    dK = mvt.deltaK
    report = None
    if method == "backward":
        xi_hat = _fs_backward(tree, doob, dK)
    elif method == "via-lmve":
        from .solvers import lmve_backward

        theta, _ = lmve_backward(tree, sc, 1.0)
        xi_hat = sc.lam - theta
    else:
        xi_hat, report = _iterate(
            tree, sc, mvt,
            step=lambda xi: gkw_additive(
                tree, doob, [dK[k] - xi[k] * doob.deltaA[k] for k in range(tree.horizon)])[0],
            start=PredictableProcess([np.zeros(n) for n in tree.sizes[:-1]]),
            cap=cap, tol=tol, beta=None,
        )
    return fs_from_integrand(tree, doob, dK, xi_hat, method, report)


# ---------------------------------------------------------------------------
# fixed-point map
# ---------------------------------------------------------------------------


def default_beta(max_jump: float) -> float:
    """Midpoint of (1, 1/b) for b < 1; no weighting when b >= 1."""
    if max_jump >= 1.0:
        return 0.0
    if max_jump <= 0.0:
        return 1.5
    return 0.5 * (1.0 + 1.0 / max_jump)


def step_weights(tree: EventTree, deltaK: PredictableProcess, beta: float) -> list[np.ndarray]:
    """Per-node weights of the beta-weighted L2(M) norm.

    The reach probability is inflated along each path by 1/(1 - beta dK), the
    discrete analogue of dividing by the stochastic exponential of -beta K.
    """
    mass = np.ones(1)
    out = []
    for k in range(tree.horizon):
        w = mass / (1.0 - beta * deltaK[k])
        out.append(w)
        ok = tree.valid(k)
        contrib = tree.probs[k] * w[:, None]
        mass = np.bincount(tree.children[k][ok], weights=contrib[ok], minlength=tree.sizes[k + 1])
    return out


def weighted_norm(doob: DoobDecomposition, weights, theta) -> float:
    total = 0.0
    for k, w in enumerate(weights):
        total += float(np.sum(w * theta[k] * theta[k] * doob.condvar[k]))
    return total ** 0.5


def _iterate(tree, sc, mvt, step, start, cap, tol, beta):
    b = mvt.max_jump
    valid = b < 1.0
    beta = default_beta(b) if beta is None else float(beta)
    warnings = []
    if not valid:
        warnings.append(f"max jump b={b!r} >= 1: no contraction guarantee, unweighted norm used")
    if beta * b >= 1.0:
        raise ValueError(f"beta={beta!r} too large for max jump {b!r}")
    weights = step_weights(tree, mvt.deltaK, beta)
    doob = sc.doob
    cur = start
    iterates, sups, wds = [start], [], []
    converged = False
    for _ in range(cap):
        nxt = step(cur)
        diff = nxt - cur
        sups.append(diff.max_abs())
        wds.append(weighted_norm(doob, weights, diff))
        iterates.append(nxt)
        cur = nxt
        if wds[-1] < tol:
            converged = True
            break
    ratios = [wds[i + 1] / wds[i] for i in range(len(wds) - 1) if wds[i] > 1e-14]
    measured = max(ratios) if ratios else 0.0
    report = ContractionReport(iterates, sups, wds, measured, valid, beta, b, converged, warnings)
    if not converged:
        raise NonConvergence(
            f"fixed-point iteration did not reach tol={tol!r} in {cap} steps "
            f"(last difference {wds[-1]!r}, measured ratio {measured!r})")
    return cur, report


def fixed_point_iterate(tree: EventTree, gamma: float, start: PredictableProcess | None = None,
                        cap: int = 200, tol: float = 1e-10, *, sc: SCReport | None = None,
                        beta: float | None = None):
    """Iterate J(theta) = lambda/gamma - xi(theta) to its fixed point.

    xi(theta) is the GKW integrand of sum theta dA.  On a finite tree the map
    only looks forward in time, so it settles after at most T + 1 steps; the
    weighted norm makes the decay geometric when the jumps of K stay below 1.
    """
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    sc = compute_lambda(tree) if sc is None else sc
    sc.require()
    mvt = compute_mvt(tree, sc)
    doob = sc.doob
    lam_g = sc.lam / gamma
    if start is None:
        start = PredictableProcess([np.zeros(n) for n in tree.sizes[:-1]])

    def step(theta):
        xi, _ = gkw_additive(tree, doob, [theta[k] * doob.deltaA[k] for k in range(tree.horizon)])
        return lam_g - xi

    return _iterate(tree, sc, mvt, step, start, cap, tol, beta)
