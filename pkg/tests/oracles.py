"""Independent reference computations used as test oracles."""

import math
from itertools import product

import numpy as np


def bond_graph(open_, lo, hi):
    """Edge list of the diagonal-bond lattice restricted to rows [lo, hi)."""
    edges = []
    length = open_.shape[0]
    for u in range(length):
        for v in range(lo, hi):
            if open_[u, v]:
                if (u + v) % 2 == 0:
                    edges.append(((u, v), (u + 1, v + 1), u))
                else:
                    edges.append(((u, v + 1), (u + 1, v), u))
    return edges


def crossing_paths(open_, lo, hi):
    """Every vertex-simple path from column 0 to column L that touches each end column once.

    Returns a list of (entry_bond_index, edge_bitmask).
    """
    length = open_.shape[0]
    edges = bond_graph(open_, lo, hi)
    adj = {}
    for k, (a, b, _) in enumerate(edges):
        adj.setdefault(a, []).append((b, k))
        adj.setdefault(b, []).append((a, k))
    out = []

    def walk(v, seen, mask, first):
        for w, k in adj.get(v, ()):
            if w in seen or w[0] == 0:
                continue
            m = mask | (1 << k)
            f = k if first is None else first
            if w[0] == length:
                out.append((f, m))
                continue
            seen.add(w)
            walk(w, seen, m, f)
            seen.discard(w)

    for j in range(lo, hi + 1):
        walk((0, j), {(0, j)}, 0, None)
    return out, edges


def max_disjoint_crossings(open_, lo=0, hi=None):
    """Exhaustive search for the largest pairwise edge-disjoint family of crossings."""
    open_ = np.asarray(open_, dtype=bool)
    hi = open_.shape[1] if hi is None else hi
    if open_.shape[0] == 0:
        return 0
    paths, edges = crossing_paths(open_, lo, hi)
    entry = sorted({k for k, (_, _, u) in enumerate(edges) if u == 0})
    by_entry = {e: [m for f, m in paths if f == e] for e in entry}
    best = 0

    def search(i, used, count):
        nonlocal best
        best = max(best, count)
        if i == len(entry) or count + len(entry) - i <= best:
            return
        for m in by_entry[entry[i]]:
            if not m & used:
                search(i + 1, used | m, count + 1)
        search(i + 1, used, count)

    search(0, 0, 0)
    return best


def all_patterns(shape):
    size = shape[0] * shape[1]
    for bits in product((False, True), repeat=size):
        yield np.array(bits).reshape(shape)


def tdma_root_bisection(tol=1e-15):
    """Largest root of y^3 + 23y^2 + 29y - 1 in (0, 1) by bisection."""
    f = lambda y: y**3 + 23 * y**2 + 29 * y - 1
    lo, hi = 0.0, 1.0
    assert f(lo) < 0 < f(hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def k_alpha_partial(alpha, terms=200_000):
    """sum_i (12 i^2 + 24 i + 13) i^-alpha by partial sums plus an integral tail bound.

    Returns (lower, upper) enclosing the infinite sum.
    """
    i = np.arange(1, terms + 1, dtype=float)
    head = float(np.sum((12 * i**2 + 24 * i + 13) * i**-alpha))
    # terms are decreasing for alpha > 3, so the tail lies between the integrals from N+1 and N
    def tail(x):
        return 12 * x ** (3 - alpha) / (alpha - 3) + 24 * x ** (2 - alpha) / (alpha - 2) + 13 * x ** (1 - alpha) / (alpha - 1)

    return head + tail(terms + 1.0), head + tail(float(terms))
