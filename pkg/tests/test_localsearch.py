import numpy as np
import pytest

from tsp_sparsify.candidates import CandidateGraph, alpha_nearest_candidates, popmusic_candidates, union_candidates
from tsp_sparsify.instances import generate_instance
from tsp_sparsify.localsearch import (MAX_STARTS, construct_tour, gap, solve, start_cities, three_opt_improve,
                                      two_opt_improve)
from tsp_sparsify.oracle import Tour, held_karp


def complete(n):
    return CandidateGraph.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


@pytest.mark.parametrize("seed", range(5))
def test_solve_on_complete_graph_is_near_optimal(seed):
    inst = generate_instance("uniform", "EUC_2D", 14, seed)
    opt = held_karp(inst.distance_matrix()).length
    r = solve(inst, complete(14), seed=seed, opt_length=opt)
    assert r.gap_percent is not None and 0 <= r.gap_percent < 15
    assert not r.fell_back_to_full_graph and r.fallbacks == 0
    r.tour.check(inst.distance_matrix())


def test_improvement_keeps_tour_inside_graph():
    inst = generate_instance("clustered", "EUC_2D", 60, 2)
    g = union_candidates(alpha_nearest_candidates(inst), popmusic_candidates(inst))
    t0, fb = construct_tour(inst, g, seed=1)
    t1, moves = two_opt_improve(t0, inst, g)
    assert t1.length <= t0.length
    new_edges = t1.edges() - t0.edges()
    assert new_edges <= g.edge_set()
    assert moves >= 0 and fb >= 0


def test_sparse_graph_counts_fallbacks():
    inst = generate_instance("uniform", "EUC_2D", 20, 0)
    g = CandidateGraph.from_edges(20, [(0, 1), (1, 2)])
    t, fb = construct_tour(inst, g, seed=0)
    assert sorted(t.order.tolist()) == list(range(20))
    assert fb > 0
    r = solve(inst, g, seed=0)
    assert r.fell_back_to_full_graph and r.gap_percent is None


def test_solve_is_deterministic():
    inst = generate_instance("corridor", "ATT", 40, 5)
    g = alpha_nearest_candidates(inst)
    a, b = solve(inst, g, seed=3), solve(inst, g, seed=3)
    assert np.array_equal(a.tour.order, b.tour.order) and a.moves_applied == b.moves_applied


def test_budget_limits_moves():
    inst = generate_instance("uniform", "EUC_2D", 50, 1)
    r = solve(inst, complete(50), seed=0, budget=2)
    assert r.moves_applied <= 2


def test_gap_and_size_checks():
    dm = generate_instance("uniform", "EUC_2D", 6, 0).distance_matrix()
    t = Tour.from_order(dm, range(6), False)
    assert gap(t, t.length) == 0.0
    assert gap(t, t.length // 2) > 0
    with pytest.raises(ValueError):
        gap(t, 0)
    with pytest.raises(ValueError):
        solve(dm, complete(7))


def test_start_cities_are_distinct_and_capped():
    assert sorted(start_cities(10, 4, 50)) == list(range(10))
    cs = start_cities(100, 4, MAX_STARTS)
    assert len(cs) == MAX_STARTS == len(set(cs))
    assert start_cities(100, 4, 5) == cs[:5]
    assert start_cities(100, 4, 0) == cs[:1]


def test_multi_start_keeps_the_best_run():
    inst = generate_instance("outlier_mixture", "MAN_2D", 30, 8)
    g = alpha_nearest_candidates(inst, k=3)
    lengths = []
    for c in start_cities(30, 5, 6):
        t, _ = construct_tour(inst, g, start=c)
        lengths.append(two_opt_improve(t, inst, g)[0].length)
    assert solve(inst, g, seed=5, starts=6, moves="2opt").tour.length == min(lengths)
    one = solve(inst, g, seed=5, starts=1, moves="2opt").tour.length
    assert one == lengths[0]
    with pytest.raises(ValueError):
        construct_tour(inst, g, start=30)


def improving_3opt_moves(dm, order, allowed):
    """Every improving pure 3-opt reconnection with all new edges allowed."""
    t, n, found = list(order), len(order), []
    for p1 in range(n - 2):
        for p2 in range(p1 + 1, n - 1):
            for p3 in range(p2 + 1, n):
                if p1 == 0 and p3 == n - 1:
                    continue
                s1, s2, rest = t[p1 + 1:p2 + 1], t[p2 + 1:p3 + 1], t[p3 + 1:]
                for mid in (s2 + s1, s2 + s1[::-1], s2[::-1] + s1, s1[::-1] + s2[::-1]):
                    cand = t[:p1 + 1] + mid + rest
                    new = {frozenset(e) for e in zip(cand, cand[1:] + cand[:1])}
                    old = {frozenset(e) for e in zip(t, t[1:] + t[:1])}
                    cost = sum(dm[a, b] for a, b in zip(cand, cand[1:] + cand[:1]))
                    if cost < sum(dm[a, b] for a, b in zip(t, t[1:] + t[:1])) and \
                            all(allowed[tuple(e)] for e in new - old):
                        found.append(cand)
    return found


@pytest.mark.parametrize("seed", range(4))
def test_three_opt_reaches_a_restricted_local_optimum(seed):
    inst = generate_instance(["corridor", "outlier_mixture"][seed % 2], "EUC_2D", 14, seed)
    dm = inst.distance_matrix()
    g = alpha_nearest_candidates(inst, k=3)
    allowed = g.adjacency_matrix()
    t0, _ = construct_tour(inst, g, start=0)
    t2, _ = two_opt_improve(t0, inst, g)
    t3, moves = three_opt_improve(t0, inst, g)
    assert t3.length <= t2.length <= t0.length
    assert t3.edges() - t0.edges() <= g.edge_set()
    assert moves >= 0
    assert improving_3opt_moves(dm, t3.order.tolist(), allowed) == []


def test_three_opt_closes_gaps_two_opt_cannot():
    worse = 0
    for seed in range(20):
        inst = generate_instance("corridor", "ATT", 13, seed)
        g = alpha_nearest_candidates(inst, k=3)
        a = solve(inst, g, seed=seed, moves="2opt").tour.length
        b = solve(inst, g, seed=seed, moves="3opt").tour.length
        assert b <= a
        worse += b < a
    assert worse > 0
    with pytest.raises(ValueError):
        solve(inst, g, moves="4opt")


def test_non_candidate_closing_edge_counts_as_fallback():
    inst = generate_instance("uniform", "EUC_2D", 5, 0)
    path = CandidateGraph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
    t, fb = construct_tour(inst, path, start=0)
    assert t.order.tolist() == [0, 1, 2, 3, 4] and fb == 1
    cycle = CandidateGraph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)])
    assert construct_tour(inst, cycle, start=0)[1] == 0
