"""Compiled inner loops shared by the candidate, oracle and local-search code.

Conventions: ``d`` is a square distance matrix (float64 for the 1-tree
kernels, int64 for tour kernels); ``fixed`` is an int8 matrix with 0 = free,
1 = forced into the 1-tree, -1 = forbidden.
"""
import numpy as np
from numba import njit

FORCED = -1.0e18
INF = np.inf


@njit(cache=True)
def _sel(d, pi, fixed, i, j):
    f = fixed[i, j]
    if f == 1:
        return FORCED
    if f == -1:
        return INF
    return d[i, j] + (pi[i] + pi[j])


@njit(cache=True)
def _edge_less(w1, a1, b1, w2, a2, b2):
    # total order on edges: weight, then (min endpoint, max endpoint)
    if w1 != w2:
        return w1 < w2
    lo1, hi1 = min(a1, b1), max(a1, b1)
    lo2, hi2 = min(a2, b2), max(a2, b2)
    if lo1 != lo2:
        return lo1 < lo2
    return hi1 < hi2


@njit(cache=True)
def one_tree(d, pi, fixed, special, parent, order, degree):
    """Minimum 1-tree under penalised weights d_ij + (pi_i + pi_j).

    The bracketing keeps the float weights exactly symmetric.

    Fills ``parent`` (tree parent, -1 for the root and the special node),
    ``order`` (Prim insertion order over the n-1 non-special nodes) and
    ``degree``. Returns (feasible, penalised length, s1, s2) where s1, s2 are
    the special node's two neighbours.
    """
    n = d.shape[0]
    key = np.empty(n)
    par = np.empty(n, np.int64)
    in_tree = np.zeros(n, np.bool_)
    root = 1 if special == 0 else 0
    in_tree[special] = True
    in_tree[root] = True
    for v in range(n):
        parent[v] = -1
        degree[v] = 0
        key[v] = INF
        par[v] = -1
        if not in_tree[v]:
            key[v] = _sel(d, pi, fixed, root, v)
            par[v] = root
    order[0] = root
    length = 0.0
    for step in range(1, n - 1):
        best = -1
        for v in range(n):
            if in_tree[v]:
                continue
            if best == -1 or _edge_less(key[v], v, par[v], key[best], best, par[best]):
                best = v
        if key[best] == INF:
            return False, INF, -1, -1
        v = best
        in_tree[v] = True
        order[step] = v
        p = par[v]
        parent[v] = p
        degree[v] += 1
        degree[p] += 1
        length += d[v, p] + (pi[v] + pi[p])
        for u in range(n):
            if in_tree[u]:
                continue
            w = _sel(d, pi, fixed, v, u)
            if w < key[u] or (w == key[u] and v < par[u]):
                key[u] = w
                par[u] = v
    s1 = -1
    s2 = -1
    w1 = INF
    w2 = INF
    for j in range(n):
        if j == special:
            continue
        w = _sel(d, pi, fixed, special, j)
        if s1 == -1 or _edge_less(w, special, j, w1, special, s1):
            s2, w2 = s1, w1
            s1, w1 = j, w
        elif s2 == -1 or _edge_less(w, special, j, w2, special, s2):
            s2, w2 = j, w
    if w1 == INF or w2 == INF:
        return False, INF, -1, -1
    degree[special] = 2
    degree[s1] += 1
    degree[s2] += 1
    length += d[special, s1] + (pi[special] + pi[s1])
    length += d[special, s2] + (pi[special] + pi[s2])
    return True, length, s1, s2


@njit(cache=True)
def ascent(d, pi0, fixed, special, max_iter, mode, t0_factor, patience, upper_bound, lam0):
    """Subgradient ascent on the Held-Karp bound w(pi) = L(T_pi) - 2 sum(pi).

    mode 0: step t0 = t0_factor * L(T_0) / n, halved after ``patience``
            non-improving iterations, stop when t < 1e-6 t0.
    mode 1: Polyak step lam * (upper_bound - w) / |g|^2, lam halved after
            ``patience`` non-improving iterations; stops early once the
            bound exceeds upper_bound - 1 (lengths are integral).

    Returns (feasible, best_pi, best_w, updates, reached_tour, history) where
    history[k] is the best bound seen after k penalty updates.
    """
    n = d.shape[0]
    pi = pi0.copy()
    best_pi = pi0.copy()
    best_w = -INF
    parent = np.empty(n, np.int64)
    order = np.empty(n - 1, np.int64)
    degree = np.empty(n, np.int64)
    history = np.empty(max_iter + 1)
    t0 = 0.0
    t = 0.0
    lam = lam0
    since = 0
    it = 0
    reached_tour = False
    while True:
        ok, length, s1, s2 = one_tree(d, pi, fixed, special, parent, order, degree)
        if not ok:
            return False, best_pi, -INF, it, False, history[:0]
        w = length - 2.0 * pi.sum()
        if w > best_w + 1e-9 * max(1.0, abs(w)):
            since = 0
        else:
            since += 1
        if w > best_w:
            best_w = w
            best_pi[:] = pi
        history[it] = best_w
        gnorm2 = 0.0
        for v in range(n):
            g = degree[v] - 2
            gnorm2 += g * g
        if gnorm2 == 0.0:
            reached_tour = True
            break
        if it >= max_iter:
            break
        if mode == 1 and best_w > upper_bound - 1.0 + 1e-7:
            break
        if mode == 0:
            if it == 0:
                t0 = t0_factor * length / n
                t = t0
            if since >= patience:
                t *= 0.5
                since = 0
            if t < 1e-6 * t0:
                break
            step = t
        else:
            if since >= patience:
                lam *= 0.5
                since = 0
            if lam < 1e-4:
                break
            gap = upper_bound - w
            if gap <= 0.0:
                gap = 1e-3 * max(1.0, abs(w)) / n
            step = lam * gap / gnorm2
        for v in range(n):
            pi[v] += step * (degree[v] - 2)
        it += 1
    return True, best_pi, best_w, it, reached_tour, history[: it + 1]


@njit(cache=True)
def alpha_matrix(w, parent, order, special, s1, s2):
    """alpha(i, j) = w_ij - beta(i, j) via the beta recursion along Prim order.

    ``w`` holds penalised weights; beta(i, j) is the heaviest tree edge on
    the i-j path (or, at the special node, the heavier special edge).
    """
    n = w.shape[0]
    m = order.shape[0]
    beta = np.zeros((n, n))
    for idx in range(1, m):
        v = order[idx]
        p = parent[v]
        wv = w[v, p]
        for jdx in range(idx):
            u = order[jdx]
            if u == p:
                b = wv
            else:
                b = beta[p, u]
                if wv > b:
                    b = wv
            beta[v, u] = b
            beta[u, v] = b
    alpha = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j and i != special and j != special:
                alpha[i, j] = w[i, j] - beta[i, j]
    top = max(w[special, s1], w[special, s2])
    for j in range(n):
        if j != special and j != s1 and j != s2:
            a = w[special, j] - top
            alpha[special, j] = a
            alpha[j, special] = a
    return alpha


# --------------------------------------------------------------------------
# tour improvement


@njit(cache=True)
def tour_length(d, tour):
    n = tour.shape[0]
    s = 0
    for k in range(n):
        s += d[tour[k], tour[(k + 1) % n]]
    return s


@njit(cache=True)
def _reverse(t, i, j):
    while i < j:
        t[i], t[j] = t[j], t[i]
        i += 1
        j -= 1


@njit(cache=True)
def improve_cycle(d, tour, allowed, max_moves):
    """First-improvement 2-opt + Or-opt(1..3) on a cycle.

    A move is taken only if every edge it introduces has ``allowed`` set.
    Scans in index order and repeats full passes until none improves or
    ``max_moves`` is reached. Returns (tour, moves).
    """
    n = tour.shape[0]
    t = tour.copy()
    moves = 0
    if n < 4:
        return t, 0
    improved = True
    while improved and moves < max_moves:
        improved = False
        # 2-opt
        for i in range(n - 1):
            for j in range(i + 2, n):
                if i == 0 and j == n - 1:
                    continue
                a = t[i]
                b = t[i + 1]
                c = t[j]
                e = t[(j + 1) % n]
                delta = d[a, c] + d[b, e] - d[a, b] - d[c, e]
                if delta < 0 and allowed[a, c] and allowed[b, e]:
                    _reverse(t, i + 1, j)
                    moves += 1
                    improved = True
                    if moves >= max_moves:
                        return t, moves
        # Or-opt
        for seg in range(1, 4):
            if seg > n - 3:
                break
            i = 0
            while i < n:
                s0 = t[i]
                sl = t[(i + seg - 1) % n]
                prev = t[(i - 1) % n]
                nxt = t[(i + seg) % n]
                gain = d[prev, s0] + d[sl, nxt] - d[prev, nxt]
                done = False
                if gain > 0 and allowed[prev, nxt]:
                    rest = n - seg
                    for k in range(rest - 1):
                        x = t[(i + seg + k) % n]
                        y = t[(i + seg + k + 1) % n]
                        base = d[x, y]
                        fwd = d[x, s0] + d[sl, y] - base
                        rev = d[x, sl] + d[s0, y] - base
                        use_rev = False
                        found = False
                        cost = fwd
                        if fwd < gain and allowed[x, s0] and allowed[sl, y]:
                            found = True
                        if rev < gain and allowed[x, sl] and allowed[s0, y]:
                            if not found or rev < cost:
                                cost = rev
                                use_rev = True
                                found = True
                        if found:
                            nt = np.empty(n, t.dtype)
                            pos = 0
                            for q in range(k + 1):
                                nt[pos] = t[(i + seg + q) % n]
                                pos += 1
                            for q in range(seg):
                                if use_rev:
                                    nt[pos] = t[(i + seg - 1 - q) % n]
                                else:
                                    nt[pos] = t[(i + q) % n]
                                pos += 1
                            for q in range(k + 1, rest):
                                nt[pos] = t[(i + seg + q) % n]
                                pos += 1
                            t[:] = nt
                            moves += 1
                            improved = True
                            done = True
                            break
                if done and moves >= max_moves:
                    return t, moves
                i += 1
    return t, moves


@njit(cache=True)
def _three_opt_move(d, t, allowed):
    """First improving pure 3-opt move whose three new edges are allowed.

    Removes (a,b), (c,e), (f,g) around segments S1 = b..c and S2 = e..f and
    reconnects as S2 S1, S2 rev(S1), rev(S2) S1 or rev(S1) rev(S2). Applies
    the move in place and returns True, or returns False at a local optimum.
    """
    n = t.shape[0]
    for p1 in range(n - 2):
        a = t[p1]
        b = t[p1 + 1]
        for p2 in range(p1 + 1, n - 1):
            c = t[p2]
            e = t[p2 + 1]
            for p3 in range(p2 + 1, n):
                if p1 == 0 and p3 == n - 1:
                    continue
                f = t[p3]
                g = t[(p3 + 1) % n]
                old = d[a, b] + d[c, e] + d[f, g]
                kind = 0
                best = 0
                delta = d[a, e] + d[f, b] + d[c, g] - old
                if delta < best and allowed[a, e] and allowed[f, b] and allowed[c, g]:
                    kind, best = 1, delta
                delta = d[a, e] + d[f, c] + d[b, g] - old
                if delta < best and allowed[a, e] and allowed[f, c] and allowed[b, g]:
                    kind, best = 2, delta
                delta = d[a, f] + d[e, b] + d[c, g] - old
                if delta < best and allowed[a, f] and allowed[e, b] and allowed[c, g]:
                    kind, best = 3, delta
                delta = d[a, c] + d[b, f] + d[e, g] - old
                if delta < best and allowed[a, c] and allowed[b, f] and allowed[e, g]:
                    kind, best = 4, delta
                if kind == 0:
                    continue
                s1 = t[p1 + 1:p2 + 1].copy()
                s2 = t[p2 + 1:p3 + 1].copy()
                if kind == 2:
                    s1 = s1[::-1].copy()
                elif kind == 3:
                    s2 = s2[::-1].copy()
                if kind == 4:
                    t[p1 + 1:p2 + 1] = s1[::-1]
                    t[p2 + 1:p3 + 1] = s2[::-1]
                else:
                    m = s2.shape[0]
                    t[p1 + 1:p1 + 1 + m] = s2
                    t[p1 + 1 + m:p3 + 1] = s1
                return True
    return False


@njit(cache=True)
def improve_cycle_3opt(d, tour, allowed, max_moves):
    """``improve_cycle`` to a local optimum, then one restricted 3-opt move,
    repeated until neither improves or ``max_moves`` is reached."""
    t, moves = improve_cycle(d, tour, allowed, max_moves)
    while moves < max_moves and _three_opt_move(d, t, allowed):
        moves += 1
        t, more = improve_cycle(d, t, allowed, max_moves - moves)
        moves += more
    return t, moves


@njit(cache=True)
def improve_path(d, path, max_moves):
    """2-opt + Or-opt(1..3) on an open path whose two endpoints stay fixed."""
    m = path.shape[0]
    p = path.copy()
    moves = 0
    if m < 4:
        return p, 0
    improved = True
    while improved and moves < max_moves:
        improved = False
        for i in range(m - 3):
            for j in range(i + 2, m - 1):
                a = p[i]
                b = p[i + 1]
                c = p[j]
                e = p[j + 1]
                if d[a, c] + d[b, e] < d[a, b] + d[c, e]:
                    _reverse(p, i + 1, j)
                    moves += 1
                    improved = True
                    if moves >= max_moves:
                        return p, moves
        for seg in range(1, 4):
            i = 1
            while i + seg <= m - 1:
                s0 = p[i]
                sl = p[i + seg - 1]
                prev = p[i - 1]
                nxt = p[i + seg]
                gain = d[prev, s0] + d[sl, nxt] - d[prev, nxt]
                done = False
                if gain > 0:
                    for k in range(m - 1):
                        if i - 1 <= k <= i + seg - 1:
                            continue
                        x = p[k]
                        y = p[k + 1]
                        base = d[x, y]
                        fwd = d[x, s0] + d[sl, y] - base
                        rev = d[x, sl] + d[s0, y] - base
                        use_rev = rev < fwd
                        cost = rev if use_rev else fwd
                        if cost < gain:
                            nt = np.empty(m, p.dtype)
                            pos = 0
                            for q in range(m):
                                if i <= q < i + seg:
                                    continue
                                nt[pos] = p[q]
                                pos += 1
                                if q == k:
                                    for r in range(seg):
                                        if use_rev:
                                            nt[pos] = p[i + seg - 1 - r]
                                        else:
                                            nt[pos] = p[i + r]
                                        pos += 1
                            p[:] = nt
                            moves += 1
                            improved = True
                            done = True
                            break
                if done and moves >= max_moves:
                    return p, moves
                i += 1
    return p, moves


@njit(cache=True)
def nearest_neighbor_tour(d, start, allowed):
    """Nearest-neighbour construction preferring ``allowed`` edges.

    When the current city has no unvisited allowed neighbour the globally
    nearest unvisited city is taken and counted as a fallback; a closing edge
    outside ``allowed`` counts as one too. Ties go to the smaller index.
    Returns (tour, fallbacks).
    """
    n = d.shape[0]
    tour = np.empty(n, np.int64)
    visited = np.zeros(n, np.bool_)
    cur = start
    tour[0] = cur
    visited[cur] = True
    fallbacks = 0
    for k in range(1, n):
        best = -1
        for j in range(n):
            if not visited[j] and allowed[cur, j]:
                if best == -1 or d[cur, j] < d[cur, best]:
                    best = j
        if best == -1:
            fallbacks += 1
            for j in range(n):
                if not visited[j]:
                    if best == -1 or d[cur, j] < d[cur, best]:
                        best = j
        tour[k] = best
        visited[best] = True
        cur = best
    if n > 2 and not allowed[cur, start]:
        fallbacks += 1
    return tour, fallbacks


@njit(cache=True)
def double_bridge(tour, a, b, c):
    n = tour.shape[0]
    out = np.empty(n, tour.dtype)
    pos = 0
    for q in range(a):
        out[pos] = tour[q]
        pos += 1
    for q in range(c, n):
        out[pos] = tour[q]
        pos += 1
    for q in range(b, c):
        out[pos] = tour[q]
        pos += 1
    for q in range(a, b):
        out[pos] = tour[q]
        pos += 1
    return out


# --------------------------------------------------------------------------
# exact dynamic programme


@njit(cache=True)
def held_karp_dp(d):
    """Bitmask DP over subsets of cities 1..n-1 (city 0 is the anchor)."""
    n = d.shape[0]
    m = n - 1
    full = (1 << m) - 1
    big = np.iinfo(np.int64).max // 4
    cost = np.full((1 << m, m), big, np.int64)
    back = np.full((1 << m, m), -1, np.int8)
    for j in range(m):
        cost[1 << j, j] = d[0, j + 1]
    for mask in range(1, full + 1):
        for j in range(m):
            if not (mask >> j) & 1:
                continue
            c = cost[mask, j]
            if c >= big:
                continue
            for k in range(m):
                if (mask >> k) & 1:
                    continue
                nm = mask | (1 << k)
                nc = c + d[j + 1, k + 1]
                if nc < cost[nm, k]:
                    cost[nm, k] = nc
                    back[nm, k] = j
    best = big
    last = -1
    for j in range(m):
        c = cost[full, j] + d[j + 1, 0]
        if c < best:
            best = c
            last = j
    tour = np.empty(n, np.int64)
    tour[0] = 0
    mask = full
    j = last
    for pos in range(n - 1, 0, -1):
        tour[pos] = j + 1
        pj = back[mask, j]
        mask = mask ^ (1 << j)
        j = pj
    return best, tour
