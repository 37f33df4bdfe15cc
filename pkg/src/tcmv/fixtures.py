"""Built-in fixture markets used by ``selftest`` and the test-suite."""

from __future__ import annotations

import numpy as np

from .market_tree import ContinuousModelSpec, EventTree, build_binomial, build_multiplicative, from_arrays

REGIME_SPEC = ContinuousModelSpec(
    kind="regime-switching-drift", sigma=0.3, s0=1.0, t_real=1.0,
    drifts=(0.3, -0.1),
    transition=((0.8, 0.2), (0.3, 0.7)),
    transition_down=((0.5, 0.5), (0.1, 0.9)),
)


def one_step_symmetric() -> EventTree:
    return from_arrays([[1.0], [2.0, 0.0]], [[[0, 1]]], [[[0.5, 0.5]]])


def one_step_skew() -> EventTree:
    return from_arrays([[4.0], [8.0, 2.0]], [[[0, 1]]], [[[0.6, 0.4]]])


def symmetric_walk(steps: int = 3, s0: float = 10.0) -> EventTree:
    prices, children, probs = [np.array([s0])], [], []
    for k in range(steps):
        cur = prices[-1]
        prices.append(np.repeat(cur, 2) + np.tile([1.0, -1.0], len(cur)))
        children.append([[2 * i, 2 * i + 1] for i in range(len(cur))])
        probs.append([[0.5, 0.5]] * len(cur))
    return from_arrays(prices, children, probs)


def multiplicative(steps: int = 2) -> EventTree:
    return build_multiplicative(4.0, 2.0, 0.5, 0.6, steps, recombining=False)


def regime_lattice(n_steps: int = 4) -> EventTree:
    return build_binomial(REGIME_SPEC, n_steps)


def regime_tree(n_steps: int = 4) -> EventTree:
    return regime_lattice(n_steps).expand()


def trinomial_skew(steps: int = 3) -> EventTree:
    """Trinomial tree whose branch probabilities depend on the node, so K_T is random."""
    prices, children, probs = [np.array([5.0])], [], []
    for k in range(steps):
        cur = prices[-1]
        nxt, ch, pr = [], [], []
        for i, s in enumerate(cur):
            ch.append([3 * i, 3 * i + 1, 3 * i + 2])
            nxt.extend([s * 1.2, s * 1.02, s * 0.85])
            pr.append([0.35, 0.4, 0.25] if s >= 5.0 else [0.2, 0.5, 0.3])
        prices.append(np.array(nxt))
        children.append(ch)
        probs.append(pr)
    return from_arrays(prices, children, probs)


def signed_mmm() -> EventTree:
    """First step has lambda dM > 1 on its up edge, so the MMM density turns negative."""
    prices = [[1.0], [3.0, 1.1], [4.5, 2.4, 1.65, 0.88]]
    children = [[[0, 1]], [[0, 1], [2, 3]]]
    probs = [[[0.5, 0.5]], [[0.5, 0.5], [0.3, 0.7]]]
    return from_arrays(prices, children, probs)


def sc_violation() -> EventTree:
    prices = [[1.0], [2.0, 0.0], [3.0, 1.0, -1.0]]
    children = [[[0, 1]], [[0], [1, 2]]]
    probs = [[[0.5, 0.5]], [[1.0], [0.5, 0.5]]]
    return from_arrays(prices, children, probs)


def random_tree(rng: np.random.Generator, max_levels: int = 6, max_branches: int = 4,
                max_sharpe: float = 1.5, max_nodes: int = 20_000) -> EventTree:
    """Random tree with up to ``max_levels`` steps and ``max_branches`` children.

    Each node draws a zero-mean martingale increment and adds a drift of at
    most ``max_sharpe`` conditional standard deviations, so dK <= max_sharpe^2.
    Single-child nodes keep their price, which keeps the structure condition.
    """
    T = int(rng.integers(1, max_levels + 1))
    prices, children, probs = [np.array([float(rng.uniform(5.0, 20.0))])], [], []
    for k in range(T):
        cur = prices[-1]
        nxt, ch, pr = [], [], []
        budget = max(1, max_nodes // max(1, len(cur)))
        for s in cur:
            b = int(rng.integers(1, min(max_branches, budget) + 1))
            start = len(nxt)
            ch.append(list(range(start, start + b)))
            if b == 1:
                nxt.append(s)
                pr.append([1.0])
                continue
            p = rng.uniform(0.2, 1.0, size=b)
            p = p / p.sum()
            m = rng.normal(size=b)
            m = m - p @ m
            sd = float(np.sqrt(p @ (m * m)))
            m = m / sd * (0.1 * abs(s) + 0.5)
            c = rng.uniform(-max_sharpe, max_sharpe)
            nxt.extend(s + m + c * (0.1 * abs(s) + 0.5))
            pr.append(list(p))
        # sum-to-one within rounding; renormalise the last entry exactly
        for row in pr:
            row[-1] = 1.0 - sum(row[:-1])
        prices.append(np.array(nxt))
        children.append(ch)
        probs.append(pr)
    return from_arrays(prices, children, probs)


def named_fixtures() -> dict[str, EventTree]:
    """Fixtures on which the structure condition holds."""
    rng = np.random.default_rng(20240611)
    return {
        "one-step-symmetric": one_step_symmetric(),
        "one-step-skew": one_step_skew(),
        "symmetric-walk": symmetric_walk(),
        "multiplicative-2": multiplicative(2),
        "multiplicative-4": multiplicative(4),
        "regime": regime_tree(),
        "trinomial-skew": trinomial_skew(),
        "signed-mmm": signed_mmm(),
        "random-a": random_tree(rng, max_levels=4, max_branches=3),
        "random-b": random_tree(rng, max_levels=5, max_branches=3, max_sharpe=0.7),
    }
