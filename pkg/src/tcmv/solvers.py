"""LMVE, MMVE and pre-commitment strategies on event trees."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateMarket, UnsupportedSpec
from .evaluation import criterion_process
from .market_tree import AdaptedProcess, EventTree, PredictableProcess, ratio
from .mv_structure import SCReport, compute_lambda, compute_mvt

DEGENERACY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class StrategyResult:
    """A strategy with its evaluation.

    ``tree`` is the tree the strategy lives on; pre-commitment strategies are
    path-dependent, so for a recombining input it is the expanded tree.
    """

    strategy: PredictableProcess
    kind: str
    gamma: float
    x: float
    Z: AdaptedProcess
    U0: float
    U: AdaptedProcess
    tree: EventTree
    residuals: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class AuxiliarySolution:
    phi_tilde: PredictableProcess
    value: float
    mean_gain: float
    defect: float
    tree: EventTree
    ell: AdaptedProcess  # value function coefficient: v_k = ell_k (1 - G_k)^2


def _check_gamma(gamma):
    if not (isinstance(gamma, (int, float)) and np.isfinite(gamma) and gamma > 0):
        raise ConfigError(f"gamma must be a finite number > 0, got {gamma!r}")


def _result(tree, sc, theta, kind, gamma, x, residuals=None, warnings=None):
    Z, U = criterion_process(tree, sc.doob, theta, x, gamma)
    return StrategyResult(theta, kind, float(gamma), float(x), Z, U.root, U, tree,
                          residuals or {}, warnings or [])


# ---------------------------------------------------------------------------
# LMVE
# ---------------------------------------------------------------------------


def lmve_backward(tree: EventTree, sc: SCReport, gamma: float):
    """theta_hat = lambda/gamma - Cov[dM, Z_child] / condvar, Z = theta dA + E[Z_child]."""
    doob = sc.doob
    T = tree.horizon
    Z = [None] * (T + 1)
    Z[T] = np.zeros(tree.sizes[T])
    theta = [None] * T
    for k in range(T - 1, -1, -1):
        zc = tree.edge(k, Z[k + 1])
        hedge = ratio(tree.expect(k, doob.deltaM[k] * zc), doob.condvar[k], doob.degenerate[k])
        th = sc.lam[k] / gamma - hedge
        theta[k] = th
        Z[k] = th * doob.deltaA[k] + tree.expect(k, zc)
    return PredictableProcess(theta), AdaptedProcess(Z)


def solve_lmve_recursion(tree: EventTree, gamma: float, x: float,
                         sc: SCReport | None = None) -> StrategyResult:
    _check_gamma(gamma)
    sc = compute_lambda(tree) if sc is None else sc
    sc.require()
    theta, Z = lmve_backward(tree, sc, gamma)
    res = _result(tree, sc, theta, "lmve", gamma, x)
    res.residuals["Z_recursion_vs_gains"] = float(max(
        np.max(np.abs(a - b)) for a, b in zip(Z.levels, res.Z.levels)))
    return res


# ---------------------------------------------------------------------------
# MMVE
# ---------------------------------------------------------------------------


def solve_mmve(tree: EventTree, gamma: float, x: float,
               sc: SCReport | None = None) -> StrategyResult:
    """phi_hat = lambda/gamma; checks the one-step first-order condition."""
    _check_gamma(gamma)
    sc = compute_lambda(tree) if sc is None else sc
    sc.require()
    phi = sc.lam / gamma
    doob = sc.doob
    foc = 0.0
    for k in range(tree.horizon):
        # d/dphi of phi dA - gamma/2 phi^2 condvar
        r = np.abs(doob.deltaA[k] - gamma * phi[k] * doob.condvar[k])
        foc = max(foc, float(np.max(r)))
    return _result(tree, sc, phi, "mmve", gamma, x, {"first_order_condition": foc})


# ---------------------------------------------------------------------------
# auxiliary problem and pre-commitment
# ---------------------------------------------------------------------------


def solve_auxiliary(tree: EventTree, max_nodes: int = 2_000_000) -> AuxiliarySolution:
    """Minimise E[(1 - int theta dS)^2] by dynamic programming.

    With G the running gain, the value at a node is ell (1 - G)^2 and the
    minimiser is beta (1 - G), beta = E[ell' dS] / E[ell' dS^2] (0/0 = 0).
    The optimum depends on G, hence on the path: lattices are expanded.
    """
    try:
        tree = tree.expand(max_nodes=max_nodes)
    except ConfigError:
        raise UnsupportedSpec(
            "the static optimum is path-dependent and the lattice is too large to unfold "
            f"(more than {max_nodes} path prefixes); use a shorter horizon") from None
    T = tree.horizon
    ell = [None] * (T + 1)
    ell[T] = np.ones(tree.sizes[T])
    beta = [None] * T
    for k in range(T - 1, -1, -1):
        lc = tree.edge(k, ell[k + 1])
        ds = tree.edge(k, tree.prices[k + 1]) - tree.prices[k][:, None]
        a = tree.expect(k, lc * ds)
        q = tree.expect(k, lc * ds * ds)
        scale = np.max(np.where(tree.valid(k), np.abs(ds), 0.0), axis=1)
        deg = q <= (1e-10 * scale) ** 2 * tree.expect(k, lc)
        b = ratio(a, q, deg)
        beta[k] = b
        ell[k] = tree.expect(k, lc) - b * a

    # forward pass for the path-dependent strategy and its mean gain
    G = np.zeros(1)
    phi = []
    for k in range(T):
        ph = beta[k] * (1.0 - G)
        phi.append(ph)
        ds = tree.edge(k, tree.prices[k + 1]) - tree.prices[k][:, None]
        nxt = np.empty(tree.sizes[k + 1])
        nxt[tree.children[k][tree.valid(k)]] = (G[:, None] + ph[:, None] * ds)[tree.valid(k)]
        G = nxt
    phi = PredictableProcess(phi)
    mean_gain = float(_expect_leaves(tree, G))
    value = float(ell[0][0])
    return AuxiliarySolution(phi, value, mean_gain, 1.0 - mean_gain, tree, AdaptedProcess(ell))


def _expect_leaves(tree, leaf_values):
    v = np.asarray(leaf_values, dtype=float)
    for k in range(tree.horizon - 1, -1, -1):
        v = tree.expect_next(k, v)
    return v[0]


def solve_precommitment(tree: EventTree, gamma: float, x: float, target_mean: float | None = None,
                        sc: SCReport | None = None) -> StrategyResult:
    """Static mean-variance optimum from the auxiliary problem.

    Without ``target_mean``: theta = phi / (gamma * E[1 - phi.S_T]).
    With it, the Markowitz strategy with E[V_T] = m: theta = (m - x) / E[phi.S_T] * phi.
    """
    _check_gamma(gamma)
    sc = compute_lambda(tree) if sc is None else sc
    sc.require()
    aux = solve_auxiliary(tree)
    if abs(aux.defect) <= DEGENERACY_TOL or aux.value <= DEGENERACY_TOL:
        raise DegenerateMarket(
            f"auxiliary problem is degenerate (defect={aux.defect!r}, value={aux.value!r}); "
            "the static mean-variance problem has no solution")
    if target_mean is None:
        theta = aux.phi_tilde / (gamma * aux.defect)
    else:
        if not target_mean > x:
            raise ConfigError(f"target mean must exceed x (m={target_mean!r}, x={x!r})")
        if abs(aux.mean_gain) <= DEGENERACY_TOL:
            raise DegenerateMarket("E[phi.S_T] = 0: no strategy reaches the target mean")
        theta = aux.phi_tilde * ((target_mean - x) / aux.mean_gain)
    etree = aux.tree
    esc = sc if etree is tree else compute_lambda(etree)
    res = _result(etree, esc, theta, "precommit", gamma, x,
                  {"auxiliary_value": aux.value, "auxiliary_defect": aux.defect,
                   "defect_minus_value": abs(aux.defect - aux.value)})
    if target_mean is not None:
        mean_T = x + res.Z.root
        res.residuals["target_mean"] = abs(mean_T - target_mean)
    return res


def precommit_deterministic_mvt(tree: EventTree, gamma: float,
                                sc: SCReport | None = None) -> PredictableProcess:
    """Closed-form pre-commitment strategy when K_T is deterministic.

    With lt = lambda/(1 + dK) and dKt = dK/(1 + dK),
    theta_k = (1/gamma) / prod(1 - dKt) * prod_{i<k}(1 - lt_i dS_i) * lt_k.
    """
    _check_gamma(gamma)
    etree = tree.expand()
    sc = compute_lambda(etree) if (sc is None or sc.tree is not etree) else sc
    mvt = compute_mvt(etree, sc)
    if not mvt.deterministic:
        raise UnsupportedSpec("closed form needs a deterministic mean-variance tradeoff")
    doob = sc.doob
    T = etree.horizon
    lt = [sc.lam[k] / (1.0 + mvt.deltaK[k]) for k in range(T)]
    prod = np.ones(1)
    expo = np.ones(1)
    pieces = []
    for k in range(T):
        pieces.append(prod * lt[k])
        ok = etree.valid(k)
        idx = etree.children[k][ok]
        nxt = np.empty(etree.sizes[k + 1])
        nxt[idx] = (prod[:, None] * (1.0 - lt[k][:, None] * doob.deltaS[k]))[ok]
        e = np.empty(etree.sizes[k + 1])
        e[idx] = np.broadcast_to((expo * (1.0 - mvt.deltaK[k] / (1.0 + mvt.deltaK[k])))[:, None],
                                 ok.shape)[ok]
        prod, expo = nxt, e
    if np.ptp(expo) > 1e-12 * max(1.0, float(np.max(np.abs(expo)))):
        raise UnsupportedSpec("stochastic exponential of -K~ is not deterministic")
    scale = 1.0 / (gamma * float(expo[0]))
    return PredictableProcess([p * scale for p in pieces])


__all__ = [
    "StrategyResult", "AuxiliarySolution", "solve_lmve_recursion", "solve_mmve",
    "solve_auxiliary", "solve_precommitment", "precommit_deterministic_mvt", "lmve_backward",
]
