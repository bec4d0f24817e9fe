"""Independent reference implementations used only by the tests.

Nothing here imports the package's algorithms: each function recomputes a
quantity from first principles by a different route than the library.
"""
from __future__ import annotations

import itertools
import math

import mpmath

mpmath.mp.dps = 50

R_EARTH = mpmath.mpf("6378.388")
PI_TSPLIB = mpmath.mpf("3.141592")


# --------------------------------------------------------------------------
# distances at 50 significant digits


def _mp(v) -> mpmath.mpf:
    return mpmath.mpf(str(v))


def _geo_rad(v) -> mpmath.mpf:
    x = _mp(v)
    deg = int(x)  # truncation toward zero
    minutes = x - deg
    return PI_TSPLIB * (deg + 5 * minutes / 3) / 180


def mp_distance(kind: str, a, b) -> int:
    """Distance formula evaluated in 50-digit arithmetic."""
    if kind == "GEO":
        lat_i, lon_i = _geo_rad(a[0]), _geo_rad(a[1])
        lat_j, lon_j = _geo_rad(b[0]), _geo_rad(b[1])
        q1 = mpmath.cos(lon_i - lon_j)
        q2 = mpmath.cos(lat_i - lat_j)
        q3 = mpmath.cos(lat_i + lat_j)
        arg = ((1 + q1) * q2 - (1 - q1) * q3) / 2
        arg = min(mpmath.mpf(1), max(mpmath.mpf(-1), arg))
        return int(mpmath.floor(R_EARTH * mpmath.acos(arg) + 1))
    dx = _mp(a[0]) - _mp(b[0])
    dy = _mp(a[1]) - _mp(b[1])
    if kind == "EUC_2D":
        return int(mpmath.floor(mpmath.sqrt(dx * dx + dy * dy) + mpmath.mpf("0.5")))
    if kind == "MAN_2D":
        return int(mpmath.floor(abs(dx) + abs(dy) + mpmath.mpf("0.5")))
    if kind == "ATT":
        return int(mpmath.ceil(mpmath.sqrt((dx * dx + dy * dy) / 10)))
    raise ValueError(kind)


# --------------------------------------------------------------------------
# 1-trees by Kruskal and by exhaustive enumeration


class _DSU:
    def __init__(self, n):
        self.p = list(range(n))

    def find(self, a):
        while self.p[a] != a:
            self.p[a] = self.p[self.p[a]]
            a = self.p[a]
        return a

    def union(self, a, b):
        a, b = self.find(a), self.find(b)
        if a == b:
            return False
        self.p[a] = b
        return True


def penalised(dm, pi):
    n = len(dm)
    return [[float(dm[i][j]) + pi[i] + pi[j] for j in range(n)] for i in range(n)]


def kruskal_one_tree(dm, pi, special=0, forced=None):
    """Minimum 1-tree length L(T) under penalties, optionally containing the
    edge ``forced``."""
    n = len(dm)
    w = penalised(dm, pi)
    others = [v for v in range(n) if v != special]
    total = 0.0
    if forced is not None and special in forced:
        j = forced[0] if forced[1] == special else forced[1]
        rest = sorted(w[special][u] for u in others if u != j)
        total += w[special][j] + rest[0]
        tree_forced = None
    else:
        total += sum(sorted(w[special][u] for u in others)[:2])
        tree_forced = forced
    dsu = _DSU(n)
    count = 0
    if tree_forced is not None:
        a, b = tree_forced
        dsu.union(a, b)
        total += w[a][b]
        count = 1
    edges = sorted((w[a][b], a, b) for a, b in itertools.combinations(others, 2))
    for wt, a, b in edges:
        if count == n - 2:
            break
        if dsu.union(a, b):
            total += wt
            count += 1
    return total


def forced_alpha(dm, pi, i, j, special=0):
    """alpha(i, j) by definition: forced minimum 1-tree minus minimum 1-tree."""
    return kruskal_one_tree(dm, pi, special, (i, j)) - kruskal_one_tree(dm, pi, special)


def enumerate_one_trees(dm, special=0):
    """Minimum 1-tree length by checking every n-edge subset (tiny n only)."""
    n = len(dm)
    all_edges = list(itertools.combinations(range(n), 2))
    best = math.inf
    for subset in itertools.combinations(all_edges, n):
        at_special = [e for e in subset if special in e]
        if len(at_special) != 2:
            continue
        dsu = _DSU(n)
        ok = True
        for a, b in subset:
            if special in (a, b):
                continue
            if not dsu.union(a, b):
                ok = False
                break
        if not ok:
            continue
        roots = {dsu.find(v) for v in range(n) if v != special}
        if len(roots) != 1:
            continue
        best = min(best, sum(dm[a][b] for a, b in subset))
    return best


# --------------------------------------------------------------------------
# features from raw coordinates (EUC_2D only)


def straight_line_features(coords, edges_all, flags, i, j, k=10):
    """The 16 features of (i, j) from coordinates, one plain loop at a time."""
    n = len(coords)

    def dist(a, b):
        dx = coords[a][0] - coords[b][0]
        dy = coords[a][1] - coords[b][1]
        return math.floor(math.sqrt(dx * dx + dy * dy) + 0.5)

    def ranked(a):
        return sorted((u for u in range(n) if u != a), key=lambda u: (dist(a, u), u))

    def stats(a):
        ds = [dist(a, u) for u in range(n) if u != a]
        mu = sum(ds) / len(ds)
        var = sum((x - mu) ** 2 for x in ds) / len(ds)
        return mu, math.sqrt(var), min(ds)

    d = dist(i, j)
    ri = ranked(i).index(j) + 1
    rj = ranked(j).index(i) + 1
    mu_i, s_i, nn_i = stats(i)
    mu_j, s_j, nn_j = stats(j)
    knn_i, knn_j = set(ranked(i)[:k]), set(ranked(j)[:k])
    nbrs = {v: set() for v in range(n)}
    for a, b in edges_all:
        nbrs[a].add(b)
        nbrs[b].add(a)
    f = flags[(min(i, j), max(i, j))]
    return [
        d,
        ri / (n - 1),
        rj / (n - 1),
        min(ri, rj) / (n - 1),
        max(ri, rj) / (n - 1),
        d / nn_i,
        d / nn_j,
        (d - mu_i) / s_i if s_i > 0 else 0.0,
        (d - mu_j) / s_j if s_j > 0 else 0.0,
        1.0 if (j in knn_i and i in knn_j) else 0.0,
        len(knn_i & knn_j) / len(knn_i | knn_j),
        len(nbrs[i]),
        len(nbrs[j]),
        len(nbrs[i] & nbrs[j]),
        1.0 if f & 1 else 0.0,
        1.0 if f & 2 else 0.0,
    ]


# --------------------------------------------------------------------------
# tours


def brute_tour_length(dm):
    n = len(dm)
    best = math.inf
    for p in itertools.permutations(range(1, n)):
        order = (0,) + p
        best = min(best, sum(dm[order[k]][order[(k + 1) % n]] for k in range(n)))
    return best


def set_difference_coverage(graph_edges, tour):
    n = len(tour)
    te = {frozenset((tour[k], tour[(k + 1) % n])) for k in range(n)}
    ge = {frozenset(e) for e in graph_edges}
    return 1.0 - len(te - ge) / n


def plain_nearest_neighbour(dm, start):
    n = len(dm)
    tour, seen = [start], {start}
    while len(tour) < n:
        cur = tour[-1]
        nxt = min((v for v in range(n) if v not in seen), key=lambda v: (dm[cur][v], v))
        tour.append(nxt)
        seen.add(nxt)
    return tour
