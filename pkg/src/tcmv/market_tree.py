"""Finite event-tree markets: storage, builders and the Doob decomposition.

A tree is stored level by level.  Level ``k`` holds ``n_k`` nodes; every
non-terminal node has a row in ``children[k]`` (indices into level ``k+1``)
and the matching row of ``probs[k]``.  Rows are padded to a common width with
zero-probability entries, so all conditional expectations reduce to a
probability-weighted sum over a fixed number of columns.

Recombining lattices share children between parents.  Everything that is a
function of the node state (lambda, the LMVE strategy, FS integrands) is
computed exactly on such lattices; quantities that accumulate along a path
(K, wealth, the orthogonal martingale) only exist as node functions when the
path sum does not depend on the route, see :func:`accumulate`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError

PROB_TOL = 1e-12
# a node counts as zero-variance when its conditional sd is below this times max|dS|
ZERO_VAR_RTOL = 1e-10


# ---------------------------------------------------------------------------
# node processes
# ---------------------------------------------------------------------------


class _Process:
    """Real value per node, stored as one array per level."""

    __slots__ = ("levels",)

    def __init__(self, levels: Sequence[np.ndarray]):
        self.levels = tuple(np.asarray(v, dtype=float) for v in levels)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, k):
        return self.levels[k]

    def __iter__(self):
        return iter(self.levels)

    def _map(self, fn, other=None):
        if other is None:
            return type(self)([fn(a) for a in self.levels])
        if isinstance(other, _Process):
            if type(other) is not type(self) or len(other) != len(self):
                raise TypeError("processes live on different node sets")
            return type(self)([fn(a, b) for a, b in zip(self.levels, other.levels)])
        return type(self)([fn(a, other) for a in self.levels])

    def __add__(self, other):
        return self._map(np.add, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self._map(np.subtract, other)

    def __rsub__(self, other):
        return self._map(lambda a, b: b - a, other)

    def __mul__(self, other):
        return self._map(np.multiply, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._map(np.divide, other)

    def __neg__(self):
        return self._map(np.negative)

    @property
    def root(self) -> float:
        return float(self.levels[0][0])

    def flat(self) -> np.ndarray:
        return np.concatenate(self.levels) if self.levels else np.empty(0)

    def max_abs(self) -> float:
        return max((float(np.max(np.abs(a))) for a in self.levels if a.size), default=0.0)

    def copy(self):
        return type(self)([a.copy() for a in self.levels])

    def __repr__(self):
        sizes = [a.size for a in self.levels]
        return f"{type(self).__name__}(levels={len(sizes)}, nodes={sum(sizes)})"


class PredictableProcess(_Process):
    """One value per non-terminal node; the value at level k-1 acts on step k."""


class AdaptedProcess(_Process):
    """One value per node."""


# ---------------------------------------------------------------------------
# the tree
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EventTree:
    prices: tuple
    children: tuple
    probs: tuple
    nchild: tuple
    recombining: bool = False
    times: np.ndarray | None = None
    labels: tuple | None = None
    states: tuple | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        _validate(self)

    # -- shape -------------------------------------------------------------

    @property
    def horizon(self) -> int:
        return len(self.children)

    @property
    def sizes(self) -> list[int]:
        return [len(p) for p in self.prices]

    @property
    def n_nodes(self) -> int:
        return sum(self.sizes)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    def node_id(self, level: int, index: int) -> int:
        return int(self.offsets[level] + index)

    def locate(self, node_id: int) -> tuple[int, int]:
        offs = self.offsets
        k = int(np.searchsorted(offs, node_id, side="right") - 1)
        if k < 0 or k > self.horizon or node_id >= offs[-1]:
            raise IndexError(f"node id {node_id} out of range")
        return k, int(node_id - offs[k])

    def label(self, level: int, index: int) -> str:
        if self.labels is not None:
            return str(self.labels[level][index])
        return str(self.node_id(level, index))

    def valid(self, k: int) -> np.ndarray:
        width = self.children[k].shape[1]
        return np.arange(width)[None, :] < self.nchild[k][:, None]

    # -- expectations ----------------------------------------------------------

    def edge(self, k: int, values_next: np.ndarray) -> np.ndarray:
        """Child values of every node at level k, shape (n_k, width)."""
        return np.asarray(values_next)[self.children[k]]

    def expect(self, k: int, edge_values: np.ndarray) -> np.ndarray:
        """Probability-weighted sum over the children, in fixed column order."""
        p = self.probs[k]
        acc = p[:, 0] * edge_values[:, 0]
        for j in range(1, p.shape[1]):
            acc = acc + p[:, j] * edge_values[:, j]
        return acc

    def expect_next(self, k: int, values_next: np.ndarray) -> np.ndarray:
        return self.expect(k, self.edge(k, values_next))

    def reach_prob(self) -> list[np.ndarray]:
        out = [np.ones(1)]
        for k in range(self.horizon):
            nxt = np.zeros(self.sizes[k + 1])
            w = self.probs[k] * out[k][:, None]
            np.add.at(nxt, self.children[k][self.valid(k)], w[self.valid(k)])
            out.append(nxt)
        return out

    def dt(self) -> np.ndarray:
        if self.times is None:
            return np.ones(self.horizon)
        return np.diff(self.times)

    # -- restructuring ---------------------------------------------------------

    def subtree(self, node_id: int) -> "EventTree":
        """Everything reachable from ``node_id``, re-rooted; child order kept.

        ``meta["origin_index"][d]`` lists the indices at level ``origin_level + d``
        of the parent tree, in the order of the subtree's level ``d``.
        """
        k0, i0 = self.locate(node_id)
        keep = [np.array([i0])]
        for k in range(k0, self.horizon):
            rows = keep[-1]
            mask = self.valid(k)[rows]
            nxt = np.unique(self.children[k][rows][mask])
            keep.append(nxt)
        prices, children, probs, nchild = [], [], [], []
        labels = [] if self.labels is not None else None
        states = [] if self.states is not None else None
        for depth, rows in enumerate(keep):
            k = k0 + depth
            prices.append(self.prices[k][rows])
            if labels is not None:
                labels.append([self.labels[k][i] for i in rows])
            if states is not None:
                states.append(self.states[k][rows])
            if k < self.horizon:
                remap = np.full(self.sizes[k + 1], -1, dtype=np.intp)
                remap[keep[depth + 1]] = np.arange(len(keep[depth + 1]))
                ch = self.children[k][rows]
                ok = self.valid(k)[rows]
                new = np.where(ok, remap[ch], 0)
                # padding columns must still point at a real child
                new = np.where(ok, new, new[:, :1])
                children.append(new)
                probs.append(np.array(self.probs[k][rows]))
                nchild.append(self.nchild[k][rows])
        times = None if self.times is None else self.times[k0:] - self.times[k0]
        return EventTree(
            tuple(prices), tuple(children), tuple(probs), tuple(nchild),
            recombining=self.recombining,
            times=times,
            labels=None if labels is None else tuple(labels),
            states=None if states is None else tuple(states),
            meta=dict(self.meta, origin_level=k0, origin_index=tuple(keep)),
        )

    def expand(self, max_nodes: int = 2_000_000) -> "EventTree":
        """Unfold a recombining lattice into a tree (one node per path prefix)."""
        if not self.recombining:
            return self
        origin = [np.array([0])]
        children, probs, nchild = [], [], []
        total = 1
        for k in range(self.horizon):
            src = origin[-1]
            nc = self.nchild[k][src]
            width = self.children[k].shape[1]
            count = int(nc.sum())
            total += count
            if total > max_nodes:
                raise ConfigError(f"expanding the lattice exceeds {max_nodes} nodes")
            starts = np.concatenate([[0], np.cumsum(nc)[:-1]])
            cols = np.arange(width)[None, :]
            idx = np.where(cols < nc[:, None], starts[:, None] + cols, starts[:, None])
            children.append(idx)
            probs.append(np.array(self.probs[k][src]))
            nchild.append(nc)
            ok = self.valid(k)[src]
            origin.append(self.children[k][src][ok])
        prices = tuple(self.prices[k][o] for k, o in enumerate(origin))
        states = None
        if self.states is not None:
            states = tuple(self.states[k][o] for k, o in enumerate(origin))
        return EventTree(
            prices, tuple(children), tuple(probs), tuple(nchild),
            recombining=False, times=self.times, states=states,
            meta=dict(self.meta, expanded_from_lattice=True),
        )


def _validate(tree: EventTree) -> None:
    T = len(tree.children)
    if T < 1:
        raise ConfigError("a tree needs at least one step")
    if len(tree.prices) != T + 1 or len(tree.probs) != T or len(tree.nchild) != T:
        raise ConfigError("inconsistent number of levels")
    if len(tree.prices[0]) != 1:
        raise ConfigError("level 0 must hold exactly one root node")
    for k, p in enumerate(tree.prices):
        if not np.all(np.isfinite(p)):
            raise ConfigError(f"non-finite price at level {k}")
    for k in range(T):
        ch, pr, nc = tree.children[k], tree.probs[k], tree.nchild[k]
        n = len(tree.prices[k])
        if ch.shape != pr.shape or ch.shape[0] != n or nc.shape != (n,):
            raise ConfigError(f"level {k}: child table has the wrong shape")
        if np.any(nc < 1):
            raise ConfigError(f"level {k}: non-terminal node without children")
        valid = np.arange(ch.shape[1])[None, :] < nc[:, None]
        if np.any(pr < 0) or np.any(pr[~valid] != 0):
            raise ConfigError(f"level {k}: negative or misplaced branch probability")
        s = pr.sum(axis=1)
        if np.any(np.abs(s - 1.0) > PROB_TOL):
            bad = int(np.argmax(np.abs(s - 1.0)))
            raise ConfigError(f"probabilities sum != 1 at level {k} node {bad} (sum={s[bad]!r})")
        m = len(tree.prices[k + 1])
        if np.any(ch < 0) or np.any(ch >= m):
            raise ConfigError(f"level {k}: child index out of range")
        parents = np.bincount(ch[valid], minlength=m)
        if np.any(parents == 0):
            raise ConfigError(f"orphan node at level {k + 1} (index {int(np.argmin(parents))})")
        if not tree.recombining and np.any(parents != 1):
            raise ConfigError(f"level {k + 1}: node with several parents in a non-recombining tree")


# ---------------------------------------------------------------------------
# path sums
# ---------------------------------------------------------------------------


def accumulate(tree: EventTree, edge_increments, start: float = 0.0, rtol: float = 1e-12):
    """Running sum along paths, as an :class:`AdaptedProcess`.

    ``edge_increments[k]`` has the child-table shape of level k (or is a
    per-node array, broadcast over children).  On a recombining lattice the
    result is returned only if every route into a node gives the same sum;
    otherwise ``None``.
    """
    vals = [np.array([float(start)])]
    for k in range(tree.horizon):
        inc = np.asarray(edge_increments[k], dtype=float)
        if inc.ndim == 1:
            inc = inc[:, None]
        cand = vals[k][:, None] + np.broadcast_to(inc, tree.children[k].shape)
        ok = tree.valid(k)
        idx = tree.children[k][ok]
        c = cand[ok]
        m = tree.sizes[k + 1]
        if tree.recombining:
            hi = np.full(m, -np.inf)
            lo = np.full(m, np.inf)
            np.maximum.at(hi, idx, c)
            np.minimum.at(lo, idx, c)
            scale = np.maximum(1.0, np.abs(hi))
            if np.any(hi - lo > rtol * scale):
                return None
            vals.append(hi)
        else:
            nxt = np.empty(m)
            nxt[idx] = c
            vals.append(nxt)
    return AdaptedProcess(vals)


# ---------------------------------------------------------------------------
# continuous-model specifications and builders
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContinuousModelSpec:
    """Geometric Brownian motion, optionally with a regime-dependent drift.

    For ``regime-switching-drift`` the regime moves once per lattice step,
    either with the fixed per-step matrix ``transition`` (``transition_down``
    after a down move, if given) or with ``expm(rates * dt)``.
    """

    kind: str
    sigma: float
    s0: float
    t_real: float
    mu: float = 0.0
    drifts: tuple = ()
    transition: tuple | None = None
    transition_down: tuple | None = None
    rates: tuple | None = None
    initial_regime: int = 0

    def __post_init__(self):
        if self.kind not in ("geometric-brownian", "regime-switching-drift"):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if not (self.sigma > 0 and self.s0 > 0 and self.t_real > 0):
            raise ConfigError("need sigma > 0, s0 > 0 and t_real > 0")
        if self.kind == "regime-switching-drift":
            R = len(self.drifts)
            if R < 1:
                raise ConfigError("regime model needs at least one drift")
            if (self.transition is None) == (self.rates is None):
                raise ConfigError("give exactly one of 'transition' or 'rates'")
            if self.transition_down is not None and self.transition is None:
                raise ConfigError("'transition_down' requires 'transition'")
            for name in ("transition", "transition_down"):
                mat = getattr(self, name)
                if mat is None:
                    continue
                a = np.asarray(mat, dtype=float)
                if a.shape != (R, R) or np.any(a < 0):
                    raise ConfigError(f"{name} must be a non-negative {R}x{R} matrix")
                if np.any(np.abs(a.sum(axis=1) - 1.0) > PROB_TOL):
                    raise ConfigError(f"{name} rows must sum to 1")
            if self.rates is not None:
                q = np.asarray(self.rates, dtype=float)
                off = q - np.diag(np.diag(q))
                if q.shape != (R, R) or np.any(off < 0) or np.any(np.abs(q.sum(axis=1)) > 1e-12):
                    raise ConfigError("rates must be a generator matrix (rows sum to 0)")
            if not 0 <= self.initial_regime < R:
                raise ConfigError("initial_regime out of range")

    @property
    def n_regimes(self) -> int:
        return len(self.drifts) if self.kind == "regime-switching-drift" else 1

    def regime_drifts(self) -> np.ndarray:
        if self.kind == "geometric-brownian":
            return np.array([self.mu])
        return np.asarray(self.drifts, dtype=float)

    def step_matrices(self, dt: float) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "geometric-brownian":
            one = np.ones((1, 1))
            return one, one
        if self.rates is not None:
            from scipy.linalg import expm

            P = expm(np.asarray(self.rates, dtype=float) * dt)
            P = np.clip(P, 0.0, None)
            P = P / P.sum(axis=1, keepdims=True)
            return P, P
        up = np.asarray(self.transition, dtype=float)
        down = up if self.transition_down is None else np.asarray(self.transition_down, dtype=float)
        return up, down


def _up_probability(mu: float, sigma: float, dt: float) -> tuple[float, float, float]:
    u = math.exp(sigma * math.sqrt(dt))
    d = math.exp(-sigma * math.sqrt(dt))
    p = (math.exp(mu * dt) - d) / (u - d)
    if not 0.0 < p < 1.0:
        raise ConfigError(f"time step too coarse for drift (p_up={p!r})")
    return u, d, p


def _lattice_prices(s0: float, sigma: float, dt: float, k: int) -> np.ndarray:
    j = np.arange(k + 1)
    return s0 * np.exp(sigma * math.sqrt(dt) * (2 * j - k))


def build_binomial(spec: ContinuousModelSpec, n_steps: int, recombining: bool = True) -> EventTree:
    """Multiplicative lattice with u = exp(sigma sqrt(dt)), d = 1/u.

    Geometric Brownian specs give a binomial lattice indexed by the number of
    up moves; regime specs add the regime to the node state, so a node has
    ``2 R`` children (up/down times next regime).
    """
    if n_steps < 1:
        raise ConfigError("n_steps must be >= 1")
    dt = spec.t_real / n_steps
    drifts = spec.regime_drifts()
    R = len(drifts)
    ups = [_up_probability(m, spec.sigma, dt) for m in drifts]
    p_up = np.array([p for _, _, p in ups])
    P_up, P_down = spec.step_matrices(dt)
    times = np.linspace(0.0, spec.t_real, n_steps + 1)
    if R == 1:
        tree = _gbm_lattice(spec.s0, spec.sigma, dt, float(p_up[0]), n_steps, times)
    else:
        tree = _regime_lattice(spec, dt, p_up, P_up, P_down, n_steps, times)
    tree.meta.update(model=spec.kind, dt=dt, sigma=spec.sigma, drifts=drifts.tolist(), p_up=p_up.tolist())
    return tree if recombining else tree.expand(max_nodes=10_000_000)


def _gbm_lattice(s0, sigma, dt, p, n, times) -> EventTree:
    prices, children, probs, nchild = [], [], [], []
    row = np.array([p, 1.0 - p])
    for k in range(n + 1):
        prices.append(_lattice_prices(s0, sigma, dt, k))
        if k < n:
            j = np.arange(k + 1)
            children.append(np.stack([j + 1, j], axis=1))
            probs.append(np.broadcast_to(row, (k + 1, 2)))
            nchild.append(np.full(k + 1, 2))
    return EventTree(tuple(prices), tuple(children), tuple(probs), tuple(nchild),
                     recombining=True, times=times)


def _regime_lattice(spec, dt, p_up, P_up, P_down, n, times) -> EventTree:
    R = len(p_up)
    # raw node index j*R + r at level k >= 1; level 0 holds the initial regime
    raw_prices, raw_states, raw_children, raw_probs = [], [], [], []
    r_idx = np.arange(R)
    for k in range(n + 1):
        base = _lattice_prices(spec.s0, spec.sigma, dt, k)
        if k == 0:
            raw_prices.append(base)
            raw_states.append(np.array([spec.initial_regime]))
            js = np.array([0])
            rs = np.array([spec.initial_regime])
        else:
            raw_prices.append(np.repeat(base, R))
            raw_states.append(np.tile(r_idx, k + 1))
            js = np.repeat(np.arange(k + 1), R)
            rs = np.tile(r_idx, k + 1)
        if k < n:
            up_child = (js[:, None] + 1) * R + r_idx[None, :]
            down_child = js[:, None] * R + r_idx[None, :]
            up_p = p_up[rs][:, None] * P_up[rs]
            down_p = (1.0 - p_up[rs])[:, None] * P_down[rs]
            raw_children.append(np.concatenate([up_child, down_child], axis=1))
            raw_probs.append(np.concatenate([up_p, down_p], axis=1))
    return _prune(raw_prices, raw_children, raw_probs, raw_states, times)


def _prune(prices, children, probs, states, times) -> EventTree:
    """Drop structurally unreachable nodes and zero-probability branches."""
    T = len(children)
    keep = [np.array([0])]
    new_children, new_probs, new_nchild = [], [], []
    for k in range(T):
        rows = keep[-1]
        ch = children[k][rows]
        pr = probs[k][rows]
        live = pr > 0
        reach = np.unique(ch[live])
        remap = np.full(len(prices[k + 1]), -1, dtype=np.intp)
        remap[reach] = np.arange(len(reach))
        # compact live branches to the left, keeping their order
        order = np.argsort(~live, axis=1, kind="stable")
        ch = np.take_along_axis(ch, order, axis=1)
        pr = np.take_along_axis(pr, order, axis=1)
        nc = live.sum(axis=1)
        ok = np.arange(ch.shape[1])[None, :] < nc[:, None]
        mapped = np.where(ok, remap[ch], 0)
        mapped = np.where(ok, mapped, mapped[:, :1])
        new_children.append(mapped)
        new_probs.append(np.where(ok, pr, 0.0))
        new_nchild.append(nc)
        keep.append(reach)
    return EventTree(
        tuple(p[r] for p, r in zip(prices, keep)),
        tuple(new_children), tuple(new_probs), tuple(new_nchild),
        recombining=True, times=times,
        states=tuple(s[r] for s, r in zip(states, keep)),
    )


def build_multiplicative(s0: float, u: float, d: float, p_up: float, n_steps: int,
                         recombining: bool = False) -> EventTree:
    """i.i.d. multiplicative tree with explicit up/down factors."""
    if n_steps < 1:
        raise ConfigError("n_steps must be >= 1")
    if not (0.0 <= p_up <= 1.0):
        raise ConfigError("p_up must lie in [0, 1]")
    prices, children, probs, nchild = [], [], [], []
    row = np.array([p_up, 1.0 - p_up])
    for k in range(n_steps + 1):
        j = np.arange(k + 1)
        prices.append(s0 * np.power(float(u), j) * np.power(float(d), k - j))
        if k < n_steps:
            children.append(np.stack([j + 1, j], axis=1))
            probs.append(np.broadcast_to(row, (k + 1, 2)))
            nchild.append(np.full(k + 1, 2))
    tree = EventTree(tuple(prices), tuple(children), tuple(probs), tuple(nchild), recombining=True)
    tree.meta.update(model="multiplicative", u=u, d=d, p_up=p_up)
    return tree if recombining else tree.expand()


def build_explicit(nodes: list[dict]) -> EventTree:
    """Tree from a node list: ``{"id", "price", "children": [...], "probs": [...]}``.

    The first node is the root.  Levels are inferred from the parent links.
    """
    if not nodes:
        raise ConfigError("empty node list")
    by_id = {}
    for n in nodes:
        nid = str(n["id"])
        if nid in by_id:
            raise ConfigError(f"duplicate node id {nid!r}")
        by_id[nid] = n
    root = str(nodes[0]["id"])
    levels = [[root]]
    seen = {root}
    while True:
        nxt = []
        for nid in levels[-1]:
            node = by_id[nid]
            kids = [str(c) for c in node.get("children", [])]
            probs = node.get("probs", [])
            if len(kids) != len(probs):
                raise ConfigError(f"node {nid!r}: children and probs differ in length")
            for c in kids:
                if c not in by_id:
                    raise ConfigError(f"node {nid!r}: unknown child {c!r}")
                if c in seen:
                    raise ConfigError(f"node {c!r} has more than one parent")
                seen.add(c)
                nxt.append(c)
        if not nxt:
            break
        levels.append(nxt)
    orphans = set(by_id) - seen
    if orphans:
        raise ConfigError(f"orphan nodes: {sorted(orphans)}")
    T = len(levels) - 1
    if T < 1:
        raise ConfigError("a tree needs at least one step")
    for k in range(T):
        for nid in levels[k]:
            if not by_id[nid].get("children"):
                raise ConfigError(f"leaf {nid!r} at level {k} before the horizon {T}")
    index = [{nid: i for i, nid in enumerate(lv)} for lv in levels]
    prices = tuple(np.array([float(by_id[n]["price"]) for n in lv]) for lv in levels)
    children, probs, nchild = [], [], []
    for k in range(T):
        width = max(len(by_id[n]["children"]) for n in levels[k])
        ch = np.zeros((len(levels[k]), width), dtype=np.intp)
        pr = np.zeros((len(levels[k]), width))
        nc = np.zeros(len(levels[k]), dtype=np.intp)
        for i, n in enumerate(levels[k]):
            kids = [index[k + 1][str(c)] for c in by_id[n]["children"]]
            ch[i, : len(kids)] = kids
            ch[i, len(kids):] = kids[0]
            pr[i, : len(kids)] = [float(p) for p in by_id[n]["probs"]]
            nc[i] = len(kids)
        children.append(ch)
        probs.append(pr)
        nchild.append(nc)
    return EventTree(prices, tuple(children), tuple(probs), tuple(nchild),
                     recombining=False, labels=tuple(levels))


def from_arrays(prices, children, probs, recombining=False, **kw) -> EventTree:
    """Build from ragged per-node child lists (convenient for tests)."""
    ch_out, pr_out, nc_out = [], [], []
    for k in range(len(children)):
        width = max(len(c) for c in children[k])
        n = len(children[k])
        ch = np.zeros((n, width), dtype=np.intp)
        pr = np.zeros((n, width))
        nc = np.zeros(n, dtype=np.intp)
        for i, (c, p) in enumerate(zip(children[k], probs[k])):
            ch[i, : len(c)] = c
            ch[i, len(c):] = c[0]
            pr[i, : len(p)] = p
            nc[i] = len(c)
        ch_out.append(ch)
        pr_out.append(pr)
        nc_out.append(nc)
    return EventTree(tuple(np.asarray(p, dtype=float) for p in prices), tuple(ch_out),
                     tuple(pr_out), tuple(nc_out), recombining=recombining, **kw)


# ---------------------------------------------------------------------------
# Doob decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DoobDecomposition:
    """``deltaA`` per non-terminal node, ``deltaM`` per edge (child-table shape)."""

    tree: EventTree
    deltaA: PredictableProcess
    deltaM: tuple
    deltaS: tuple
    condvar: PredictableProcess
    scale: PredictableProcess  # largest |dS| over the children, for relative tolerances
    degenerate: tuple  # bool per node: conditional variance is zero up to rounding

    def residuals(self) -> dict[str, float]:
        mart, recon = 0.0, 0.0
        for k in range(self.tree.horizon):
            ok = self.tree.valid(k)
            m = self.tree.expect(k, self.deltaM[k])
            mart = max(mart, float(np.max(np.abs(m))))
            r = np.abs(self.deltaA[k][:, None] + self.deltaM[k] - self.deltaS[k])[ok]
            recon = max(recon, float(r.max()))
        return {"martingale": mart, "reconstruction": recon}


def doob_decompose(tree: EventTree) -> DoobDecomposition:
    dA, dM, dS, cv, sc = [], [], [], [], []
    for k in range(tree.horizon):
        ds = tree.edge(k, tree.prices[k + 1]) - tree.prices[k][:, None]
        a = tree.expect(k, ds)
        m = ds - a[:, None]
        dA.append(a)
        dM.append(m)
        dS.append(ds)
        cv.append(tree.expect(k, m * m))
        sc.append(np.max(np.where(tree.valid(k), np.abs(ds), 0.0), axis=1))
    degenerate = tuple(np.sqrt(c) <= ZERO_VAR_RTOL * s for c, s in zip(cv, sc))
    return DoobDecomposition(tree, PredictableProcess(dA), tuple(dM), tuple(dS),
                             PredictableProcess(cv), PredictableProcess(sc), degenerate)


def ratio(num: np.ndarray, condvar: np.ndarray, degenerate: np.ndarray) -> np.ndarray:
    """num / condvar with 0/0 = 0 on degenerate nodes."""
    safe = np.where(degenerate, 1.0, condvar)
    return np.where(degenerate, 0.0, num / safe)


def build_from_config(config: dict) -> EventTree:
    """EventTree from a validated config document (see :mod:`tcmv.config`)."""
    from .config import spec_from_config, validate_config

    validate_config(config)
    kind = config["kind"]
    T = config["horizon"]
    if kind == "explicit-tree":
        if config.get("recombining", False):
            raise ConfigError("explicit trees are stored non-recombining; drop 'recombining'")
        tree = build_explicit(config["nodes"])
        if tree.horizon != T:
            raise ConfigError(f"declared horizon {T} but the node list has depth {tree.horizon}")
        if tree.n_nodes != len(config["nodes"]):
            raise ConfigError("node count differs from the declared node list")
        return tree
    recombining = config.get("recombining", True)
    sp = config["spec"]
    if sp["model"] == "multiplicative":
        return build_multiplicative(sp["s0"], sp["u"], sp["d"], sp["p_up"], T, recombining)
    return build_binomial(spec_from_config(config), T, recombining)
