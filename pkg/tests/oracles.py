"""Brute-force reference computations on small trees.

Everything here walks explicit paths with exact rational arithmetic and
never touches the level-wise arrays of the library beyond reading the raw
prices, children and probabilities once.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np


class Node:
    __slots__ = ("S", "kids", "level", "index")

    def __init__(self, S, level, index):
        self.S = S
        self.kids = []  # (p, Node)
        self.level = level
        self.index = index


def to_nodes(tree, exact=True):
    """Nested node objects; prices and probabilities converted exactly to Fractions."""
    conv = Fraction if exact else float
    levels = [[Node(conv(float(s)), k, i) for i, s in enumerate(tree.prices[k])]
              for k in range(tree.horizon + 1)]
    for k in range(tree.horizon):
        for i, node in enumerate(levels[k]):
            for j in range(int(tree.nchild[k][i])):
                c = int(tree.children[k][i, j])
                node.kids.append((conv(float(tree.probs[k][i, j])), levels[k + 1][c]))
    # exact probabilities may miss 1 by a rounding unit; renormalise
    if exact:
        for lv in levels[:-1]:
            for node in lv:
                tot = sum(p for p, _ in node.kids)
                node.kids = [(p / tot, c) for p, c in node.kids]
    return levels


def paths_from(node):
    """All (probability, [nodes along the path]) below ``node``, node included."""
    if not node.kids:
        return [(Fraction(1), [node])]
    out = []
    for p, c in node.kids:
        for q, path in paths_from(c):
            out.append((p * q, [node] + path))
    return out


def doob(node):
    dA = sum(p * (c.S - node.S) for p, c in node.kids)
    cv = sum(p * (c.S - node.S - dA) ** 2 for p, c in node.kids)
    return dA, cv


def lam(node):
    dA, cv = doob(node)
    return Fraction(0) if cv == 0 else dA / cv


def mvt_paths(root):
    """K_T per root-to-leaf path."""
    out = []
    for p, path in paths_from(root):
        K = sum(lam(n) * doob(n)[0] for n in path[:-1])
        out.append((p, path, K))
    return out


def lmve(levels, gamma):
    """theta_hat per node from its defining covariance condition, by path enumeration."""
    gamma = Fraction(gamma)
    theta = {}
    for k in range(len(levels) - 2, -1, -1):
        for node in levels[k]:
            dA, cv = doob(node)
            cov = Fraction(0)
            for p, c in node.kids:
                dM = c.S - node.S - dA
                fut = sum(q * sum(theta[id(n)] * doob(n)[0] for n in path[:-1])
                          for q, path in paths_from(c))
                cov += p * dM * fut
            theta[id(node)] = lam(node) / gamma - (Fraction(0) if cv == 0 else cov / cv)
    return theta


def fs_of_K(levels):
    """xi_hat per node and K0_hat from xi_k = Cov(dM_k, K_T - sum_{i>k} xi dA) / condvar."""
    xi = {}
    for k in range(len(levels) - 2, -1, -1):
        for node in levels[k]:
            dA, cv = doob(node)
            acc = Fraction(0)
            for p, c in node.kids:
                dM = c.S - node.S - dA
                for q, path in paths_from(c):
                    rest = sum(lam(n) * doob(n)[0] - xi[id(n)] * doob(n)[0] for n in path[:-1])
                    acc += p * q * dM * rest
            xi[id(node)] = Fraction(0) if cv == 0 else acc / cv
    root = levels[0][0]
    K0 = sum(q * sum(lam(n) * doob(n)[0] - xi[id(n)] * doob(n)[0] for n in path[:-1])
             for q, path in paths_from(root))
    return xi, K0


def gkw_xi(levels, H):
    """GKW integrand of leaf payoff H (dict leaf index -> value) by enumeration."""
    out = {}
    for k in range(len(levels) - 1):
        for node in levels[k]:
            dA, cv = doob(node)
            acc = Fraction(0)
            for p, c in node.kids:
                dM = c.S - node.S - dA
                acc += p * dM * sum(q * H[path[-1].index] for q, path in paths_from(c))
            out[id(node)] = Fraction(0) if cv == 0 else acc / cv
    return out


def criterion_at(node, theta, gamma, wealth=Fraction(0)):
    """E[V_T] - gamma/2 Var[V_T] from ``node`` for a node-indexed strategy dict."""
    vals = []
    for q, path in paths_from(node):
        g = sum(theta[id(n)] * (path[i + 1].S - n.S) for i, n in enumerate(path[:-1]))
        vals.append((q, wealth + g))
    m = sum(q * v for q, v in vals)
    var = sum(q * (v - m) ** 2 for q, v in vals)
    return m - Fraction(gamma) / 2 * var


def gain_design(levels):
    """Leaf probabilities and the matrix of dS per (leaf, node on its path)."""
    nodes = [n for lv in levels[:-1] for n in lv]
    col = {id(n): j for j, n in enumerate(nodes)}
    leaves = paths_from(levels[0][0])
    X = np.zeros((len(leaves), len(nodes)))
    w = np.zeros(len(leaves))
    for r, (q, path) in enumerate(leaves):
        w[r] = float(q)
        for i, n in enumerate(path[:-1]):
            X[r, col[id(n)]] = float(path[i + 1].S - n.S)
    return nodes, w, X


def static_mean_variance(levels, gamma):
    """Maximiser of E[G] - gamma/2 Var[G] over node-dependent strategies (least squares)."""
    nodes, w, X = gain_design(levels)
    a = w @ X
    Xc = X - a[None, :]
    C = Xc.T @ (w[:, None] * Xc)
    theta = np.linalg.pinv(C, rcond=1e-13) @ a / gamma
    return {id(n): theta[j] for j, n in enumerate(nodes)}


def auxiliary_value(levels):
    """min E[(1 - G)^2] over node-dependent strategies."""
    nodes, w, X = gain_design(levels)
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(sw[:, None] * X, sw, rcond=None)
    r = 1.0 - X @ coef
    return float(w @ (r * r)), {id(n): coef[j] for j, n in enumerate(nodes)}
