"""Per-edge features for learned pruning.

Position  Name              Family                 Definition
--------  ----------------  ---------------------  -----------------------------------
 0        d_ij              distance magnitude     d(i, j)
 1        rank_i            distance ranks         r_i(j) / (N-1)
 2        rank_j            distance ranks         r_j(i) / (N-1)
 3        rank_min          distance ranks         min(r_i(j), r_j(i)) / (N-1)
 4        rank_max          distance ranks         max(r_i(j), r_j(i)) / (N-1)
 5        nn_ratio_i        local normalisation    d_ij / min_u d(i, u)
 6        nn_ratio_j        local normalisation    d_ij / min_u d(j, u)
 7        zscore_i          local normalisation    (d_ij - mu_i) / sigma_i  (0 if sigma_i = 0)
 8        zscore_j          local normalisation    (d_ij - mu_j) / sigma_j  (0 if sigma_j = 0)
 9        mutual_knn        neighbourhood          1[j in kNN(i) and i in kNN(j)]
10        knn_jaccard       neighbourhood          |kNN(i) & kNN(j)| / |kNN(i) | kNN(j)|
11        deg_i             candidate topology     deg(i) in the base graph
12        deg_j             candidate topology     deg(j) in the base graph
13        common_nbrs       candidate topology     |N(i) & N(j)| in the base graph
14        from_alpha        source provenance      1[e in alpha-nearest]   (union mode only)
15        from_popmusic     source provenance      1[e in POPMUSIC]        (union mode only)

Ranks are 1-based (1 = nearest) with ties broken by index; sigma is the
population standard deviation over the N-1 distances from a node.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .candidates import CandidateGraph, Provenance, _as_matrix

__all__ = [
    "FEATURE_NAMES",
    "FEATURE_FAMILIES",
    "FAMILY_NAMES",
    "FEATURE_VERSION",
    "BINARY_POSITIONS",
    "NodeStats",
    "node_stats",
    "edge_features",
    "graph_features",
    "active_mask",
    "Standardizer",
    "fit_standardizer",
    "apply_standardizer",
    "write_feature_dump",
    "read_feature_dump",
]

FEATURE_NAMES = (
    "d_ij",
    "rank_i",
    "rank_j",
    "rank_min",
    "rank_max",
    "nn_ratio_i",
    "nn_ratio_j",
    "zscore_i",
    "zscore_j",
    "mutual_knn",
    "knn_jaccard",
    "deg_i",
    "deg_j",
    "common_nbrs",
    "from_alpha",
    "from_popmusic",
)
FAMILY_NAMES = (
    "distance_magnitude",
    "distance_ranks",
    "local_normalisation",
    "neighbourhood",
    "candidate_topology",
    "source_provenance",
)
FEATURE_FAMILIES = (0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 4, 4, 4, 5, 5)
# bump whenever the order or a definition above changes
FEATURE_VERSION = "edge16-v1"
BINARY_POSITIONS = (9, 14, 15)
PROVENANCE_POSITIONS = (14, 15)
N_FEATURES = len(FEATURE_NAMES)
MODES = ("union", "single")


@dataclass(frozen=True, eq=False)
class NodeStats:
    """Distance statistics of every node, computed once per instance."""

    dm: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    nearest: np.ndarray
    rank: np.ndarray
    knn: np.ndarray
    k: int
    knn_mask: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.mean)


def node_stats(source, k: int = 10) -> NodeStats:
    dm = np.asarray(_as_matrix(source))
    n = dm.shape[0]
    if n < 3:
        raise ValueError(f"node statistics need n >= 3, got {n}")
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must lie in [1, {n - 1}], got {k}")
    d = dm.astype(np.float64)
    off = ~np.eye(n, dtype=bool)
    rows = d[off].reshape(n, n - 1)
    mean = rows.mean(axis=1)
    std = rows.std(axis=1)
    nearest = rows.min(axis=1)
    # the diagonal sorts first, then a stable sort keeps index order on ties
    keyed = d.copy()
    np.fill_diagonal(keyed, -np.inf)
    order = np.argsort(keyed, axis=1, kind="stable")[:, 1:]
    rank = np.zeros((n, n), dtype=np.int64)
    np.put_along_axis(rank, order, np.arange(1, n)[None, :].repeat(n, axis=0), axis=1)
    knn = order[:, :k].copy()
    mask = np.zeros((n, n), dtype=bool)
    np.put_along_axis(mask, knn, True, axis=1)
    return NodeStats(dm=d, mean=mean, std=std, nearest=nearest, rank=rank, knn=knn, k=k, knn_mask=mask)


def active_mask(mode: str) -> np.ndarray:
    """Positions that carry information in ``mode``."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    m = np.ones(N_FEATURES, dtype=bool)
    if mode == "single":
        m[list(PROVENANCE_POSITIONS)] = False
    return m


def _features(i: np.ndarray, j: np.ndarray, g: CandidateGraph, stats: NodeStats, mode: str,
              flags: np.ndarray) -> np.ndarray:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    n = stats.n
    X = np.zeros((len(i), N_FEATURES))
    d = stats.dm[i, j]
    X[:, 0] = d
    ri = stats.rank[i, j] / (n - 1)
    rj = stats.rank[j, i] / (n - 1)
    X[:, 1] = ri
    X[:, 2] = rj
    X[:, 3] = np.minimum(ri, rj)
    X[:, 4] = np.maximum(ri, rj)
    nn_i = np.where(stats.nearest[i] > 0, stats.nearest[i], 1.0)
    nn_j = np.where(stats.nearest[j] > 0, stats.nearest[j], 1.0)
    X[:, 5] = d / nn_i
    X[:, 6] = d / nn_j
    si, sj = stats.std[i], stats.std[j]
    with np.errstate(divide="ignore", invalid="ignore"):
        X[:, 7] = np.where(si > 0, (d - stats.mean[i]) / np.where(si > 0, si, 1.0), 0.0)
        X[:, 8] = np.where(sj > 0, (d - stats.mean[j]) / np.where(sj > 0, sj, 1.0), 0.0)
    km = stats.knn_mask
    X[:, 9] = (km[i, j] & km[j, i]).astype(float)
    inter = (km[i] & km[j]).sum(axis=1)
    union = (km[i] | km[j]).sum(axis=1)
    X[:, 10] = inter / union
    adj = g.adjacency_matrix()
    deg = adj.sum(axis=1)
    X[:, 11] = deg[i]
    X[:, 12] = deg[j]
    X[:, 13] = (adj[i] & adj[j]).sum(axis=1)
    if mode == "union":
        X[:, 14] = (flags & Provenance.FROM_ALPHA) > 0
        X[:, 15] = (flags & Provenance.FROM_POPMUSIC) > 0
    return X


def edge_features(e: tuple[int, int], g: CandidateGraph, stats: NodeStats, mode: str = "union") -> np.ndarray:
    """The 16 features of edge ``e`` = (i, j), in the orientation given."""
    i, j = int(e[0]), int(e[1])
    k = g.edge_id(i, j)
    if stats.n != g.n:
        raise ValueError("stats and graph sizes differ")
    return _features(np.array([i]), np.array([j]), g, stats, mode, g.flags[k:k + 1])[0]


def graph_features(g: CandidateGraph, stats: NodeStats, mode: str = "union") -> np.ndarray:
    """Feature matrix with one row per canonical edge, in ``g.edges`` order."""
    if stats.n != g.n:
        raise ValueError("stats and graph sizes differ")
    return _features(g.edges[:, 0], g.edges[:, 1], g, stats, mode, g.flags)


# --------------------------------------------------------------------------
# standardisation


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray
    mask: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = X.copy()
        out[..., self.mask] = (X[..., self.mask] - self.mean[self.mask]) / self.scale[self.mask]
        return out

    def invert(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=np.float64)
        out = Z.copy()
        out[..., self.mask] = Z[..., self.mask] * self.scale[self.mask] + self.mean[self.mask]
        return out

    @classmethod
    def identity(cls) -> "Standardizer":
        mask = np.ones(N_FEATURES, dtype=bool)
        mask[list(BINARY_POSITIONS)] = False
        return cls(np.zeros(N_FEATURES), np.ones(N_FEATURES), mask)


def fit_standardizer(X: np.ndarray) -> Standardizer:
    """Column mean / population std at every non-binary position; zero-variance
    columns get scale 1."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != N_FEATURES:
        raise ValueError(f"expected an (m, {N_FEATURES}) matrix")
    if X.shape[0] < 2:
        raise ValueError("fitting a standardizer needs at least 2 rows")
    mask = np.ones(N_FEATURES, dtype=bool)
    mask[list(BINARY_POSITIONS)] = False
    mean = np.where(mask, X.mean(axis=0), 0.0)
    std = X.std(axis=0)
    scale = np.where(mask & (std > 0), std, 1.0)
    return Standardizer(mean, scale, mask)


def apply_standardizer(s: Standardizer, X: np.ndarray) -> np.ndarray:
    return s.apply(X)


# --------------------------------------------------------------------------
# dump


DUMP_HEADER = ("instance", "i", "j", "y", *FEATURE_NAMES)


def write_feature_dump(rows) -> str:
    """``rows`` yields (instance id, edges (m,2), labels (m,) or None, X (m,16))."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DUMP_HEADER)
    for inst_id, edges, y, X in rows:
        for k, (a, b) in enumerate(np.asarray(edges).tolist()):
            label = "" if y is None else int(y[k])
            w.writerow([inst_id, a, b, label, *(repr(float(v)) for v in X[k])])
    return buf.getvalue()


def read_feature_dump(text: str):
    """Inverse of :func:`write_feature_dump`: (instance ids, edges, y, X);
    missing labels read as -1."""
    r = csv.reader(io.StringIO(text))
    header = next(r, None)
    if header is None or tuple(header) != DUMP_HEADER:
        raise ValueError("feature dump header does not match this extractor's feature order")
    ids, edges, ys, X = [], [], [], []
    for row in r:
        ids.append(row[0])
        edges.append((int(row[1]), int(row[2])))
        ys.append(int(row[3]) if row[3] != "" else -1)
        X.append([float(v) for v in row[4:]])
    return ids, np.array(edges, dtype=np.int64).reshape(-1, 2), np.array(ys, dtype=np.int64), np.array(X).reshape(-1, N_FEATURES)
