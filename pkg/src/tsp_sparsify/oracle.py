"""Exact tours at desk scale and candidate-edge labelling.

Three independent exact solvers cross-check each other: exhaustive
enumeration (n <= 10), the Held-Karp bitmask DP (n <= 20) and a best-first
branch and bound on the 1-tree bound (any n, within a node budget).
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import _kernels as K
from .candidates import CandidateGraph, _as_matrix, upper_bound_tour

__all__ = [
    "Tour",
    "EdgeLabels",
    "OracleError",
    "canonical_order",
    "tour_edges",
    "brute_force",
    "held_karp",
    "branch_and_bound",
    "heuristic_tour",
    "label_edges",
    "write_tour",
    "read_tour",
]

BRUTE_MAX = 10
HELD_KARP_MAX = 20


class OracleError(ValueError):
    pass


def canonical_order(order) -> np.ndarray:
    """Rotate to start at city 0 and orient so that order[1] < order[-1]."""
    order = np.asarray(order, dtype=np.int64)
    k = int(np.flatnonzero(order == 0)[0])
    out = np.roll(order, -k)
    if len(out) > 2 and out[1] > out[-1]:
        out = np.concatenate([out[:1], out[1:][::-1]])
    return out


def tour_edges(order) -> set[tuple[int, int]]:
    order = [int(v) for v in order]
    n = len(order)
    return {(min(order[k], order[(k + 1) % n]), max(order[k], order[(k + 1) % n])) for k in range(n)}


@dataclass(frozen=True, eq=False)
class Tour:
    """A Hamiltonian cycle. ``lower_bound`` is set by branch and bound."""

    order: np.ndarray
    length: int
    proven_optimal: bool
    lower_bound: float | None = None

    def __post_init__(self):
        order = canonical_order(self.order)
        if sorted(order.tolist()) != list(range(len(order))):
            raise OracleError("tour order is not a permutation")
        order.setflags(write=False)
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "length", int(self.length))

    @classmethod
    def from_order(cls, dm, order, proven_optimal: bool, lower_bound: float | None = None) -> "Tour":
        d = np.asarray(dm)
        order = np.asarray(order, dtype=np.int64)
        return cls(order, int(K.tour_length(d.astype(np.int64), order)), proven_optimal, lower_bound)

    @property
    def n(self) -> int:
        return len(self.order)

    def edges(self) -> set[tuple[int, int]]:
        return tour_edges(self.order)

    def check(self, dm) -> None:
        d = np.asarray(dm)
        if d.shape[0] != self.n:
            raise OracleError(f"tour has {self.n} cities, matrix has {d.shape[0]}")
        if int(K.tour_length(d.astype(np.int64), np.asarray(self.order))) != self.length:
            raise OracleError("stored length does not match the matrix")


def _int_matrix(source) -> np.ndarray:
    d = np.asarray(_as_matrix(source))
    if not np.issubdtype(d.dtype, np.integer):
        if not np.all(d == np.round(d)):
            raise OracleError("exact oracles need an integer distance matrix")
    return np.ascontiguousarray(d, dtype=np.int64)


# --------------------------------------------------------------------------
# exhaustive enumeration


@njit(cache=True)
def _brute(d):
    n = d.shape[0]
    p = np.arange(1, n)
    m = n - 1
    best = np.iinfo(np.int64).max
    best_p = p.copy()
    while True:
        # each cycle once: the orientation whose second city is smaller
        if p[0] < p[m - 1]:
            s = d[0, p[0]] + d[p[m - 1], 0]
            for k in range(m - 1):
                s += d[p[k], p[k + 1]]
            if s < best:
                best = s
                best_p[:] = p
        # next lexicographic permutation
        i = m - 2
        while i >= 0 and p[i] >= p[i + 1]:
            i -= 1
        if i < 0:
            break
        j = m - 1
        while p[j] <= p[i]:
            j -= 1
        p[i], p[j] = p[j], p[i]
        p[i + 1:] = p[i + 1:][::-1].copy()
    return best, best_p


def brute_force(dm) -> Tour:
    """Exhaustive search over (n-1)!/2 tours; ties go to the lexicographically
    smallest order starting at city 0."""
    d = _int_matrix(dm)
    n = d.shape[0]
    if not 3 <= n <= BRUTE_MAX:
        raise OracleError(f"brute_force needs 3 <= n <= {BRUTE_MAX}, got {n}")
    if n == 3:
        return Tour.from_order(d, [0, 1, 2], True)
    best, p = _brute(d)
    return Tour(np.concatenate([[0], p]), best, True)


def held_karp(dm) -> Tour:
    """Bitmask dynamic programme anchored at city 0."""
    d = _int_matrix(dm)
    n = d.shape[0]
    if not 3 <= n <= HELD_KARP_MAX:
        raise OracleError(f"held_karp needs 3 <= n <= {HELD_KARP_MAX}, got {n}")
    best, order = K.held_karp_dp(d)
    return Tour(order, best, True)


# --------------------------------------------------------------------------
# branch and bound


def heuristic_tour(dm, starts: int = 10, kicks: int = 0, seed: int = 0) -> np.ndarray:
    """Multi-start nearest neighbour + 2-opt/Or-opt, then optional iterated
    local search with double-bridge kicks."""
    d = _int_matrix(dm)
    n = d.shape[0]
    allowed = np.ones((n, n), dtype=np.bool_)
    best = upper_bound_tour(d, starts)
    best_len = K.tour_length(d, best)
    if n >= 8 and kicks > 0:
        rng = np.random.Generator(np.random.PCG64(seed))
        for _ in range(kicks):
            a, b, c = np.sort(rng.choice(np.arange(1, n), size=3, replace=False))
            t = K.double_bridge(best, int(a), int(b), int(c))
            t, _ = K.improve_cycle(d, t, allowed, 1 << 30)
            length = K.tour_length(d, t)
            if length < best_len:
                best, best_len = t, length
    return best


def _cycle_from_degrees(n: int, parent: np.ndarray, order: np.ndarray, special: int, s1: int, s2: int) -> np.ndarray:
    adj: list[list[int]] = [[] for _ in range(n)]
    for v in order[1:]:
        p = int(parent[v])
        adj[int(v)].append(p)
        adj[p].append(int(v))
    for s in (s1, s2):
        adj[special].append(s)
        adj[s].append(special)
    out = [0]
    prev, cur = -1, 0
    for _ in range(n - 1):
        a, b = adj[cur]
        nxt = a if a != prev else b
        out.append(nxt)
        prev, cur = cur, nxt
    return np.array(out, dtype=np.int64)


class _Search:
    def __init__(self, d: np.ndarray, special: int):
        self.d = d
        self.df = d.astype(np.float64)
        self.special = special
        n = self.n = d.shape[0]
        # the root needs a long, patient ascent; children start from its pi
        self.root_iter, self.root_patience = 50 * n, max(20, n // 2)
        self.node_iter, self.node_patience = max(30, n), 10
        self.ub = math.inf
        self.best: np.ndarray | None = None
        self.parent = np.empty(n, np.int64)
        self.order = np.empty(n - 1, np.int64)
        self.degree = np.empty(n, np.int64)

    def offer(self, order: np.ndarray) -> None:
        length = int(K.tour_length(self.d, order))
        if length < self.ub:
            self.ub = length
            self.best = order.copy()

    def evaluate(self, fixed: np.ndarray, pi0: np.ndarray, root: bool):
        """Ascent under constraints; returns (bound, pi, tree-is-tour) or None."""
        ub = self.ub if math.isfinite(self.ub) else 1e300
        iters, patience = (self.root_iter, self.root_patience) if root else (self.node_iter, self.node_patience)
        ok, pi, bound, _, _, _ = K.ascent(
            self.df, pi0, fixed, self.special, iters, 1, 0.01, patience, float(ub), 2.0,
        )
        if not ok:
            return None
        ok, _, s1, s2 = K.one_tree(self.df, pi, fixed, self.special, self.parent, self.order, self.degree)
        if not ok:
            return None
        if np.all(self.degree == 2):
            self.offer(_cycle_from_degrees(self.n, self.parent, self.order, self.special, s1, s2))
            return bound, pi, True
        return bound, pi, False

    def prunable(self, bound: float) -> bool:
        return math.ceil(bound - 1e-6) >= self.ub

    def branch_vertex(self, fixed: np.ndarray, s1: int, s2: int):
        """Vertex of highest 1-tree degree (> 2, smallest index on ties) and
        its two heaviest free tree edges."""
        nbrs: list[list[int]] = [[] for _ in range(self.n)]
        for v in self.order[1:]:
            p = int(self.parent[v])
            nbrs[int(v)].append(p)
            nbrs[p].append(int(v))
        for u in (s1, s2):
            nbrs[self.special].append(u)
            nbrs[u].append(self.special)
        v = int(np.argmax(self.degree))
        free = [u for u in nbrs[v] if fixed[v, u] == 0]
        free.sort(key=lambda u: (-self.d[v, u], u))
        return v, free[0], free[1]


def _propagate(fixed: np.ndarray, n: int) -> bool:
    """Close forced-edge implications in place (the diagonal must be -1).

    Rules: a vertex with two forced edges loses its other edges; a vertex
    with only two allowed edges has both forced; a forced path that does not
    span all cities may not be closed into a cycle. Returns False when the
    constraints admit no tour.
    """
    while True:
        forced = fixed == 1
        forced_deg = forced.sum(axis=1)
        allowed_deg = (fixed != -1).sum(axis=1)
        if np.any(forced_deg > 2) or np.any(allowed_deg < 2):
            return False
        full = np.flatnonzero((forced_deg == 2) & (allowed_deg > 2))
        if len(full):
            for v in full:
                free = np.flatnonzero(fixed[v] == 0)
                fixed[v, free] = -1
                fixed[free, v] = -1
            continue
        tight = np.flatnonzero((allowed_deg == 2) & (forced_deg < 2))
        if len(tight):
            for v in tight:
                nb = np.flatnonzero(fixed[v] == 0)
                fixed[v, nb] = 1
                fixed[nb, v] = 1
            continue
        # walk forced paths from their endpoints
        seen = np.zeros(n, bool)
        changed = False
        for s in np.flatnonzero(forced_deg == 1):
            if seen[s]:
                continue
            prev, cur, size = -1, int(s), 1
            seen[cur] = True
            while size <= n:
                nxt = [int(u) for u in np.flatnonzero(forced[cur]) if u != prev]
                if not nxt:
                    break
                prev, cur = cur, nxt[0]
                seen[cur] = True
                size += 1
            if size < n and fixed[s, cur] == 0:
                fixed[s, cur] = fixed[cur, s] = -1
                changed = True
        # any forced vertex not on a path lies on a forced cycle
        on_cycle = (forced_deg == 2) & ~seen
        if np.any(on_cycle) and on_cycle.sum() < n:
            return False
        if not changed:
            return True


def branch_and_bound(dm, budget: int = 1_000_000, special: int = 0, kicks: int | None = None,
                     seed: int = 0) -> Tour:
    """Best-first branch and bound on the 1-tree bound.

    The upper bound comes from :func:`heuristic_tour`. At the root, edges whose
    alpha-value proves they cannot improve on it are removed. Each node runs a
    warm-started ascent under its forced/forbidden constraints and branches on
    a vertex of 1-tree degree above 2: exclude e1 | include e1, exclude e2 |
    include both. ``budget`` counts evaluated search nodes; ``budget=0``
    returns the heuristic tour unproven.
    """
    d = _int_matrix(dm)
    n = d.shape[0]
    if n < 3:
        raise OracleError(f"branch_and_bound needs n >= 3, got {n}")
    if kicks is None:
        kicks = 4 * n
    start = heuristic_tour(d, kicks=kicks, seed=seed)
    if budget <= 0:
        return Tour.from_order(d, start, False)
    if n <= 4:
        return held_karp(d)
    s = _Search(d, special)
    s.offer(start)

    fixed = np.zeros((n, n), np.int8)
    np.fill_diagonal(fixed, -1)
    used = 1
    res = s.evaluate(fixed, np.zeros(n), True)
    root_bound = res[0]
    if res[2] or s.prunable(root_bound):
        return Tour.from_order(d, s.best, True, lower_bound=root_bound)

    # alpha-based elimination at the root
    pi = res[1]
    _, _, s1, s2 = K.one_tree(s.df, pi, fixed, special, s.parent, s.order, s.degree)
    w = s.df + (pi[:, None] + pi[None, :])
    alpha = K.alpha_matrix(w, s.parent, s.order, special, s1, s2)
    kill = (root_bound + alpha > s.ub - 1 + 1e-6)
    np.fill_diagonal(kill, False)
    fixed[kill] = -1
    if not _propagate(fixed, n):
        return Tour.from_order(d, s.best, True, lower_bound=root_bound)

    heap: list = []
    counter = 0

    def expand(node_fixed, node_pi, root):
        nonlocal counter, used
        used += 1
        r = s.evaluate(node_fixed, node_pi, root)
        if r is None:
            return
        bound, npi, is_tour = r
        if is_tour or s.prunable(bound):
            return
        _, _, a1, a2 = K.one_tree(s.df, npi, node_fixed, special, s.parent, s.order, s.degree)
        v, e1, e2 = s.branch_vertex(node_fixed, int(a1), int(a2))
        counter += 1
        heapq.heappush(heap, (bound, counter, node_fixed, npi, v, e1, e2))

    expand(fixed, pi, True)
    while heap:
        if used >= budget:
            return Tour.from_order(d, s.best, False, lower_bound=max(root_bound, heap[0][0]))
        bound, _, node_fixed, npi, v, e1, e2 = heapq.heappop(heap)
        if s.prunable(bound):
            continue
        children = []
        c = node_fixed.copy()
        c[v, e1] = c[e1, v] = -1
        children.append(c)
        c = node_fixed.copy()
        c[v, e1] = c[e1, v] = 1
        c[v, e2] = c[e2, v] = -1
        children.append(c)
        c = node_fixed.copy()
        c[v, e1] = c[e1, v] = 1
        c[v, e2] = c[e2, v] = 1
        children.append(c)
        for c in children:
            if _propagate(c, n):
                expand(c, npi, False)
    return Tour.from_order(d, s.best, True, lower_bound=root_bound)


# --------------------------------------------------------------------------
# labels and tour files


@dataclass(frozen=True, eq=False)
class EdgeLabels:
    """``y[k]`` = 1 iff candidate edge k lies on the tour."""

    y: np.ndarray
    positives: int
    total: int
    n: int

    @property
    def coverage(self) -> float:
        return self.positives / self.n


def label_edges(g: CandidateGraph, t: Tour, allow_unproven: bool = False) -> EdgeLabels:
    if g.n != t.n:
        raise OracleError(f"graph has n={g.n}, tour has n={t.n}")
    if not t.proven_optimal and not allow_unproven:
        raise OracleError("refusing to label against an unproven tour")
    te = t.edges()
    y = np.fromiter(((int(a), int(b)) in te for a, b in g.edges), dtype=np.int8, count=g.edge_count)
    pos = int(y.sum())
    return EdgeLabels(y=y, positives=pos, total=g.edge_count, n=g.n)


def write_tour(t: Tour) -> str:
    """``n``, then the 1-based permutation one id per line, then ``-1``."""
    return "\n".join([str(t.n), *(str(int(v) + 1) for v in t.order), "-1"]) + "\n"


def read_tour(text: str, dm=None, proven_optimal: bool = False) -> Tour:
    """Parse a tour file. Without ``dm`` the length is recorded as 0."""
    tokens = text.split()
    try:
        n = int(tokens[0])
        ids = [int(x) for x in tokens[1:n + 1]]
        if len(ids) != n or tokens[n + 1] != "-1":
            raise OracleError("tour file must list n ids followed by -1")
    except (IndexError, ValueError):
        raise OracleError("malformed tour file") from None
    order = np.array(ids, dtype=np.int64) - 1
    if dm is None:
        return Tour(order, 0, proven_optimal)
    return Tour.from_order(dm, order, proven_optimal)
