"""Stage-1 base candidate graphs.

* alpha-nearest: minimum 1-trees, subgradient ascent on the Held-Karp bound
  (Polyak steps toward a local-search tour length) and alpha-values, keeping
  the k lowest-alpha edges per node;
* a POPMUSIC-style generator: overlapping subpaths of several starting tours
  are re-optimised and every edge of the resulting tours is kept;
* their union, with per-edge provenance flags.
"""
from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .instances import TspInstance

__all__ = [
    "Provenance",
    "CandidateGraph",
    "GraphFormatError",
    "OneTree",
    "AscentConfig",
    "AscentResult",
    "PopmusicConfig",
    "minimum_one_tree",
    "upper_bound_tour",
    "subgradient_ascent",
    "alpha_values",
    "alpha_nearest_candidates",
    "popmusic_tours",
    "popmusic_candidates",
    "union_candidates",
    "write_candidate_file",
    "read_candidate_file",
]


class Provenance(enum.IntFlag):
    NONE = 0
    FROM_ALPHA = 1
    FROM_POPMUSIC = 2


class GraphFormatError(ValueError):
    pass


def _as_matrix(source) -> np.ndarray:
    if isinstance(source, TspInstance):
        return source.distance_matrix()
    dm = np.asarray(source)
    if dm.ndim != 2 or dm.shape[0] != dm.shape[1]:
        raise ValueError("distance matrix must be square")
    return dm


@dataclass(frozen=True, eq=False)
class CandidateGraph:
    """Undirected sparse graph stored as canonical (i < j) edges sorted
    lexicographically, with provenance flags and optional alpha per edge
    (NaN when absent)."""

    n: int
    edges: np.ndarray
    flags: np.ndarray
    alpha: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_edges(cls, n: int, pairs, flags=None, alpha=None) -> "CandidateGraph":
        """Build from arbitrary (i, j) pairs; duplicates merge with OR-ed flags
        and the first non-NaN alpha."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        m = len(pairs)
        fl = np.zeros(m, np.uint8) if flags is None else np.broadcast_to(np.asarray(flags, np.uint8), (m,))
        al = np.full(m, np.nan) if alpha is None else np.broadcast_to(np.asarray(alpha, np.float64), (m,))
        if m and (pairs.min() < 0 or pairs.max() >= n):
            raise ValueError("edge endpoint out of range")
        if np.any(pairs[:, 0] == pairs[:, 1]):
            raise ValueError("self-loops are not allowed")
        lo = np.minimum(pairs[:, 0], pairs[:, 1])
        hi = np.maximum(pairs[:, 0], pairs[:, 1])
        merged: dict[tuple[int, int], list] = {}
        for a, b, f, x in zip(lo.tolist(), hi.tolist(), fl.tolist(), al.tolist()):
            slot = merged.get((a, b))
            if slot is None:
                merged[(a, b)] = [f, x]
            else:
                slot[0] |= f
                if math.isnan(slot[1]):
                    slot[1] = x
        keys = sorted(merged)
        edges = np.array(keys, dtype=np.int64).reshape(-1, 2)
        return cls(
            n,
            edges,
            np.array([merged[k][0] for k in keys], dtype=np.uint8),
            np.array([merged[k][1] for k in keys], dtype=np.float64),
        )

    @classmethod
    def empty(cls, n: int) -> "CandidateGraph":
        return cls.from_edges(n, np.zeros((0, 2), np.int64))

    def __post_init__(self):
        for name in ("edges", "flags", "alpha"):
            arr = getattr(self, name)
            arr = np.array(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @property
    def edges_per_n(self) -> float:
        """Undirected edge count divided by the city count."""
        return self.edge_count / self.n

    @property
    def candidates_per_n(self) -> float:
        """Mean candidate-list length, i.e. 2|E|/n."""
        return 2.0 * self.edge_count / self.n

    def index(self) -> dict[tuple[int, int], int]:
        if "index" not in self._cache:
            self._cache["index"] = {(int(a), int(b)): k for k, (a, b) in enumerate(self.edges)}
        return self._cache["index"]

    def edge_id(self, i: int, j: int) -> int:
        key = (i, j) if i < j else (j, i)
        try:
            return self.index()[key]
        except KeyError:
            raise KeyError(f"edge ({i}, {j}) not in graph") from None

    def __contains__(self, e) -> bool:
        i, j = e
        return ((i, j) if i < j else (j, i)) in self.index()

    def edge_set(self) -> set[tuple[int, int]]:
        return set(self.index())

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)

    def incident(self) -> list[list[int]]:
        """Edge ids incident to each node."""
        if "incident" not in self._cache:
            inc: list[list[int]] = [[] for _ in range(self.n)]
            for k, (a, b) in enumerate(self.edges.tolist()):
                inc[a].append(k)
                inc[b].append(k)
            self._cache["incident"] = inc
        return self._cache["incident"]

    def adjacency(self) -> list[list[tuple[int, int, float]]]:
        """Per node, sorted (neighbour, flags, alpha) triples."""
        adj: list[list[tuple[int, int, float]]] = [[] for _ in range(self.n)]
        for (a, b), f, x in zip(self.edges.tolist(), self.flags.tolist(), self.alpha.tolist()):
            adj[a].append((b, f, x))
            adj[b].append((a, f, x))
        for lst in adj:
            lst.sort()
        return adj

    def adjacency_matrix(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=bool)
        if self.edge_count:
            a[self.edges[:, 0], self.edges[:, 1]] = True
            a[self.edges[:, 1], self.edges[:, 0]] = True
        return a

    def subgraph(self, keep: np.ndarray) -> "CandidateGraph":
        keep = np.asarray(keep, dtype=bool)
        return CandidateGraph(self.n, self.edges[keep], self.flags[keep], self.alpha[keep])

    def check(self, union_mode: bool = False) -> None:
        """Assert the structural invariants; raises AssertionError."""
        e = self.edges
        assert e.shape == (self.edge_count, 2)
        assert len(self.flags) == len(e) == len(self.alpha)
        if len(e):
            assert np.all(e[:, 0] < e[:, 1]), "edges must be canonical (i < j), no self-loops"
            assert e.min() >= 0 and e.max() < self.n
            order = np.lexsort((e[:, 1], e[:, 0]))
            assert np.array_equal(order, np.arange(len(e))), "edges must be sorted"
            assert len({tuple(x) for x in e.tolist()}) == len(e), "duplicate edge"
        assert np.all(self.flags <= 3)
        if union_mode:
            assert np.all(self.flags > 0), "union edges need at least one provenance flag"
        assert np.all(np.isnan(self.alpha) | (self.alpha >= 0))
        # undirected consistency of the derived adjacency
        adj = self.adjacency()
        for i, lst in enumerate(adj):
            for j, f, _ in lst:
                assert any(k == i and g == f for k, g, _ in adj[j])

    # ------------------------------------------------------------------
    # graph dump: self-describing delimited text

    def dumps(self) -> str:
        out = io.StringIO()
        out.write(f"#candidate-graph v1 n={self.n} edges={self.edge_count}\n")
        out.write("i,j,from_alpha,from_popmusic,alpha\n")
        for (a, b), f, x in zip(self.edges.tolist(), self.flags.tolist(), self.alpha.tolist()):
            xs = "" if math.isnan(x) else repr(x)
            out.write(f"{a},{b},{f & 1},{(f >> 1) & 1},{xs}\n")
        return out.getvalue()

    @classmethod
    def loads(cls, text: str) -> "CandidateGraph":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#candidate-graph v1"):
            raise GraphFormatError("not a candidate-graph v1 dump")
        meta = dict(tok.split("=", 1) for tok in lines[0].split()[2:])
        try:
            n, m = int(meta["n"]), int(meta["edges"])
        except (KeyError, ValueError):
            raise GraphFormatError("graph dump header must carry n= and edges=") from None
        if len(lines) < 2 or lines[1].strip() != "i,j,from_alpha,from_popmusic,alpha":
            raise GraphFormatError("missing column header")
        rows = [ln for ln in lines[2:] if ln.strip()]
        if len(rows) != m:
            raise GraphFormatError(f"header announces {m} edges, found {len(rows)}")
        pairs, flags, alpha = [], [], []
        for ln in rows:
            parts = ln.split(",")
            if len(parts) != 5:
                raise GraphFormatError(f"malformed edge row {ln!r}")
            a, b, fa, fp = (int(p) for p in parts[:4])
            pairs.append((a, b))
            flags.append(fa | (fp << 1))
            alpha.append(float(parts[4]) if parts[4] else math.nan)
        g = cls.from_edges(n, np.array(pairs, dtype=np.int64).reshape(-1, 2), flags, alpha)
        if g.edge_count != m:
            raise GraphFormatError("duplicate edges in dump")
        return g


# --------------------------------------------------------------------------
# 1-trees and the Held-Karp ascent


@dataclass(frozen=True, eq=False)
class OneTree:
    """A minimum 1-tree under node penalties ``pi``.

    ``total_length`` is the Held-Karp bound w(pi) = L(T_pi) - 2 sum(pi), evaluated
    as sum(d_e) + sum(pi_v (deg_v - 2)) so a 1-tree that is a tour gives its
    exact length;
    ``penalized_length`` is L(T_pi) itself.
    """

    edges: list[tuple[int, int]]
    total_length: float
    penalized_length: float
    degrees: np.ndarray
    pi: np.ndarray
    special: int
    parent: np.ndarray
    order: np.ndarray
    special_neighbors: tuple[int, int]

    @property
    def n(self) -> int:
        return len(self.degrees)

    def is_tour(self) -> bool:
        return bool(np.all(self.degrees == 2))


def _no_fixed(n: int) -> np.ndarray:
    return np.zeros((n, n), dtype=np.int8)


def minimum_one_tree(dm, pi=None, special: int = 0) -> OneTree:
    """Minimum 1-tree under d_ij + pi_i + pi_j: an MST over all nodes but
    ``special`` plus the two cheapest edges at ``special``. Edge ties follow
    the lexicographic order of (min endpoint, max endpoint)."""
    d = np.asarray(_as_matrix(dm), dtype=np.float64)
    n = d.shape[0]
    if n < 3:
        raise ValueError(f"a 1-tree needs n >= 3, got {n}")
    pi = np.zeros(n) if pi is None else np.asarray(pi, dtype=np.float64)
    if pi.shape != (n,):
        raise ValueError("pi must have one entry per node")
    if not 0 <= special < n:
        raise ValueError("special node out of range")
    parent = np.empty(n, np.int64)
    order = np.empty(n - 1, np.int64)
    degree = np.empty(n, np.int64)
    ok, length, s1, s2 = K.one_tree(d, pi, _no_fixed(n), special, parent, order, degree)
    assert ok
    edges = [tuple(sorted((int(v), int(parent[v])))) for v in order[1:]]
    edges += [tuple(sorted((special, int(s1)))), tuple(sorted((special, int(s2))))]
    # w(pi) = sum d_e + sum pi_v (deg_v - 2): no cancellation, exact on tours
    bound = math.fsum(float(d[a, b]) for a, b in edges) + float(np.dot(pi, degree - 2))
    return OneTree(
        edges=edges,
        total_length=bound,
        penalized_length=float(length),
        degrees=degree.copy(),
        pi=pi.copy(),
        special=special,
        parent=parent.copy(),
        order=order.copy(),
        special_neighbors=(int(s1), int(s2)),
    )


@dataclass(frozen=True)
class AscentConfig:
    """Held-Karp ascent schedule.

    ``step="polyak"`` (default) moves pi by ``lam (U - w) / |g|^2`` where U is
    the length of a multi-start 2-opt/Or-opt tour; lam starts at ``lam0`` and
    halves after ``patience`` (default max(20, n/2)) iterations without
    improvement. It runs at most 50n updates and stops once the bound is
    within 1 of U.

    ``step="fixed"`` starts at ``t0_factor * L(T_0) / n`` and halves after
    ``2 * period`` iterations without improvement, for at most max(50, n)
    updates.

    Either way the ascent stops when the 1-tree is a tour.
    """

    max_iter: int | None = None
    step: str = "polyak"
    lam0: float = 2.0
    patience: int | None = None
    upper_bound_starts: int = 10
    t0_factor: float = 0.01
    period: int = 5
    special: int = 0

    def __post_init__(self):
        if self.step not in ("polyak", "fixed"):
            raise ValueError(f"unknown ascent step rule {self.step!r}")

    def iterations(self, n: int) -> int:
        if self.max_iter is not None:
            return self.max_iter
        return 50 * n if self.step == "polyak" else max(50, n)


@dataclass(frozen=True, eq=False)
class AscentResult:
    pi: np.ndarray
    bound: float
    history: np.ndarray
    iterations: int
    tree: OneTree


def upper_bound_tour(dm, starts: int = 10) -> np.ndarray:
    """Best of nearest neighbour + 2-opt/Or-opt from cities 0..starts-1."""
    d = np.ascontiguousarray(_as_matrix(dm), dtype=np.int64)
    n = d.shape[0]
    allowed = np.ones((n, n), dtype=np.bool_)
    best, best_len = None, None
    for s in range(max(1, min(starts, n))):
        t, _ = K.nearest_neighbor_tour(d, s, allowed)
        t, _ = K.improve_cycle(d, t, allowed, 1 << 30)
        length = K.tour_length(d, t)
        if best_len is None or length < best_len:
            best, best_len = t, length
    return best


def subgradient_ascent(dm, cfg: AscentConfig | None = None) -> AscentResult:
    cfg = cfg or AscentConfig()
    d = np.asarray(_as_matrix(dm), dtype=np.float64)
    n = d.shape[0]
    if n < 3:
        raise ValueError(f"ascent needs n >= 3, got {n}")
    if cfg.step == "polyak":
        ub = float(K.tour_length(d.astype(np.int64), upper_bound_tour(d, cfg.upper_bound_starts)))
        patience = max(20, n // 2) if cfg.patience is None else cfg.patience
        args = (1, 0.0, patience, ub, cfg.lam0)
    else:
        args = (0, cfg.t0_factor, 2 * cfg.period, 0.0, 0.0)
    ok, pi, bound, its, _, hist = K.ascent(d, np.zeros(n), _no_fixed(n), cfg.special, cfg.iterations(n), *args)
    tree = minimum_one_tree(d, pi, cfg.special)
    return AscentResult(pi=pi, bound=tree.total_length, history=hist.copy(), iterations=int(its), tree=tree)


def alpha_values(dm, tree: OneTree) -> np.ndarray:
    """Full symmetric alpha matrix for a minimum 1-tree (zero diagonal)."""
    d = np.asarray(_as_matrix(dm), dtype=np.float64)
    n = d.shape[0]
    if tree.n != n:
        raise ValueError(f"tree is for n={tree.n}, matrix has n={n}")
    w = d + (tree.pi[:, None] + tree.pi[None, :])
    check = minimum_one_tree(d, tree.pi, tree.special)
    if not math.isclose(check.penalized_length, tree.penalized_length, rel_tol=1e-9, abs_tol=1e-9):
        raise ValueError("tree is not a minimum 1-tree for this matrix")
    s1, s2 = tree.special_neighbors
    return K.alpha_matrix(w, tree.parent, tree.order, tree.special, s1, s2)


def alpha_nearest_candidates(source, k: int = 5, cfg: AscentConfig | None = None,
                             ascent: AscentResult | None = None) -> CandidateGraph:
    """Keep each node's ``k`` lowest-alpha edges (ties: shorter, then lower
    index) and symmetrise. A precomputed ``ascent`` may be supplied."""
    dm = _as_matrix(source)
    n = dm.shape[0]
    if n <= k:
        raise ValueError(f"alpha-nearest with k={k} needs n > k, got n={n}")
    if ascent is None:
        ascent = subgradient_ascent(dm, cfg)
    alpha = alpha_values(dm, ascent.tree)
    pairs = []
    idx = np.arange(n)
    for i in range(n):
        others = idx[idx != i]
        order = np.lexsort((others, dm[i, others], alpha[i, others]))
        for j in others[order[:k]]:
            pairs.append((i, int(j)))
    pairs = np.array(pairs, dtype=np.int64)
    vals = alpha[pairs[:, 0], pairs[:, 1]]
    return CandidateGraph.from_edges(n, pairs, Provenance.FROM_ALPHA, vals)


# --------------------------------------------------------------------------
# POPMUSIC-style generator


@dataclass(frozen=True)
class PopmusicConfig:
    """``r`` cities per subpath, consecutive subpaths overlap by r/2;
    ``starts`` nearest-neighbour tours from distinct seeded start cities."""

    r: int = 12
    starts: int = 5
    optimize: bool = True
    seed: int = 0
    max_passes: int = 1000


def _optimize_subpaths(d: np.ndarray, tour: np.ndarray, r: int, max_passes: int) -> np.ndarray:
    n = len(tour)
    r = min(r, n)
    step = max(1, r // 2)
    offsets = np.arange(r)
    tour = tour.copy()
    for _ in range(max_passes):
        improved = False
        for p in range(0, n, step):
            idx = (p + offsets) % n
            path, moves = K.improve_path(d, tour[idx], 1 << 30)
            if moves:
                tour[idx] = path
                improved = True
        if not improved:
            break
    return tour


def popmusic_tours(source, cfg: PopmusicConfig | None = None) -> list[np.ndarray]:
    cfg = cfg or PopmusicConfig()
    d = np.ascontiguousarray(_as_matrix(source), dtype=np.int64)
    n = d.shape[0]
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    starts = rng.choice(n, size=min(cfg.starts, n), replace=False)
    allowed = np.ones((n, n), dtype=np.bool_)
    tours = []
    for s in starts:
        tour, _ = K.nearest_neighbor_tour(d, int(s), allowed)
        if cfg.optimize:
            tour = _optimize_subpaths(d, tour, cfg.r, cfg.max_passes)
        tours.append(tour)
    return tours


def popmusic_candidates(source, cfg: PopmusicConfig | None = None) -> CandidateGraph:
    """Union of the edges of every optimised tour, flagged FROM_POPMUSIC."""
    dm = _as_matrix(source)
    n = dm.shape[0]
    pairs = [np.stack([t, np.roll(t, -1)], axis=1) for t in popmusic_tours(dm, cfg)]
    return CandidateGraph.from_edges(n, np.concatenate(pairs), Provenance.FROM_POPMUSIC)


def union_candidates(a: CandidateGraph, b: CandidateGraph) -> CandidateGraph:
    """Edge-set union; flags OR-merged, alpha taken from ``a`` where present."""
    if a.n != b.n:
        raise ValueError(f"size mismatch: {a.n} vs {b.n}")
    return CandidateGraph.from_edges(
        a.n,
        np.concatenate([a.edges, b.edges]),
        np.concatenate([a.flags, b.flags]),
        np.concatenate([a.alpha, b.alpha]),
    )


# --------------------------------------------------------------------------
# downstream-solver candidate file


def write_candidate_file(g: CandidateGraph, tree: OneTree | None = None) -> str:
    """LKH-style candidate file: ``n``, then per node
    ``id dad count (cand alpha)*`` with 1-based ids, then ``-1``.

    Candidates are listed by increasing alpha; edges without alpha (e.g.
    POPMUSIC-only) are written with alpha 0.
    """
    if tree is not None and tree.n != g.n:
        raise ValueError("tree and graph sizes differ")
    lines = [str(g.n)]
    for i, lst in enumerate(g.adjacency()):
        dad = 0
        if tree is not None and tree.parent[i] >= 0:
            dad = int(tree.parent[i]) + 1
        items = sorted(
            ((0 if math.isnan(x) else int(round(x)), j) for j, _, x in lst)
        )
        fields = [str(i + 1), str(dad), str(len(items))]
        for a, j in items:
            fields += [str(j + 1), str(a)]
        lines.append(" ".join(fields))
    lines.append("-1")
    lines.append("EOF")
    return "\n".join(lines) + "\n"


def read_candidate_file(text: str) -> tuple[CandidateGraph, np.ndarray]:
    """Parse a candidate file back into (graph, dad array with -1 for none)."""
    tokens = text.split()
    try:
        n = int(tokens[0])
        pos = 1
        pairs, alphas = [], []
        dad = np.full(n, -1, dtype=np.int64)
        for _ in range(n):
            node, parent, count = (int(t) for t in tokens[pos:pos + 3])
            pos += 3
            dad[node - 1] = parent - 1
            for _ in range(count):
                j, a = int(tokens[pos]), int(tokens[pos + 1])
                pos += 2
                pairs.append((node - 1, j - 1))
                alphas.append(float(a))
        if tokens[pos] != "-1":
            raise GraphFormatError("candidate file must end with -1")
    except (IndexError, ValueError):
        raise GraphFormatError("malformed candidate file") from None
    g = CandidateGraph.from_edges(n, np.array(pairs, dtype=np.int64).reshape(-1, 2), 0, alphas)
    return g, dad
