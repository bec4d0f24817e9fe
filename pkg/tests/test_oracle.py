import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tsp_sparsify.candidates import CandidateGraph
from tsp_sparsify.instances import generate_instance
from tsp_sparsify.oracle import (
    OracleError,
    Tour,
    branch_and_bound,
    brute_force,
    canonical_order,
    held_karp,
    heuristic_tour,
    label_edges,
    read_tour,
    tour_edges,
    write_tour,
)

from oracles import brute_tour_length, set_difference_coverage

FAMILIES = ["uniform", "clustered", "grid_jitter", "outlier_mixture", "corridor"]
TYPES = ["EUC_2D", "MAN_2D", "ATT", "GEO"]


def inst(k, n):
    return generate_instance(FAMILIES[k % 5], TYPES[(k // 5) % 4], n, 1000 + k)


@pytest.mark.parametrize("k", range(12))
def test_brute_force_matches_permutation_oracle(k):
    dm = inst(k, 5 + k % 4).distance_matrix()
    t = brute_force(dm)
    assert t.length == brute_tour_length(dm.tolist())
    assert t.proven_optimal
    t.check(dm)


@pytest.mark.parametrize("k", range(12))
def test_held_karp_matches_brute(k):
    dm = inst(k, 5 + k % 5).distance_matrix()
    assert held_karp(dm).length == brute_force(dm).length


@pytest.mark.parametrize("k", range(8))
def test_branch_and_bound_matches_held_karp(k):
    dm = inst(k, 10 + k % 7).distance_matrix()
    bb = branch_and_bound(dm)
    assert bb.proven_optimal
    assert bb.length == held_karp(dm).length
    assert bb.lower_bound is not None and bb.lower_bound <= bb.length + 1e-6


def test_branch_and_bound_zero_budget_is_unproven():
    dm = inst(3, 14).distance_matrix()
    t = branch_and_bound(dm, budget=0)
    assert not t.proven_optimal
    assert t.length >= held_karp(dm).length


def test_branch_and_bound_tiny_instances():
    for n in (3, 4, 5):
        dm = inst(n, n).distance_matrix()
        t = branch_and_bound(dm)
        assert t.proven_optimal and t.length == brute_force(dm).length


def test_brute_force_tie_break_is_lexicographic():
    dm = np.ones((6, 6), dtype=np.int64) - np.eye(6, dtype=np.int64)
    assert brute_force(dm).order.tolist() == [0, 1, 2, 3, 4, 5]


def test_oracle_size_limits():
    dm = inst(0, 11).distance_matrix()
    with pytest.raises(OracleError):
        brute_force(dm)
    with pytest.raises(OracleError):
        held_karp(inst(0, 21).distance_matrix())
    with pytest.raises(OracleError):
        held_karp(np.full((4, 4), 0.5))


def test_heuristic_tour_is_permutation():
    dm = inst(2, 40).distance_matrix()
    t = heuristic_tour(dm, kicks=20, seed=3)
    assert sorted(t.tolist()) == list(range(40))
    assert np.array_equal(t, heuristic_tour(dm, kicks=20, seed=3))


perms = st.integers(3, 12).flatmap(lambda n: st.permutations(list(range(n))))


@settings(max_examples=80, deadline=None)
@given(perms)
def test_canonical_order_properties(p):
    c = canonical_order(p)
    assert c[0] == 0
    assert len(c) < 3 or c[1] < c[-1]
    assert tour_edges(c) == tour_edges(p)
    assert np.array_equal(canonical_order(c), c)
    assert np.array_equal(canonical_order(p[::-1]), c)


def test_tour_validation():
    with pytest.raises(OracleError):
        Tour(np.array([0, 1, 1]), 0, False)
    dm = inst(0, 6).distance_matrix()
    t = Tour.from_order(dm, [0, 2, 1, 3, 4, 5], False)
    with pytest.raises(OracleError):
        Tour(t.order, t.length + 1, False).check(dm)


def test_label_edges_against_set_difference():
    dm = inst(7, 12).distance_matrix()
    t = held_karp(dm)
    rng = np.random.default_rng(0)
    all_pairs = [(i, j) for i in range(12) for j in range(i + 1, 12)]
    for _ in range(20):
        pick = rng.choice(len(all_pairs), size=25, replace=False)
        g = CandidateGraph.from_edges(12, [all_pairs[k] for k in pick])
        lab = label_edges(g, t)
        assert lab.coverage == pytest.approx(set_difference_coverage(g.edge_set(), t.order.tolist()))
        assert lab.total == g.edge_count
        for (a, b), y in zip(g.edges.tolist(), lab.y.tolist()):
            assert y == ((a, b) in t.edges())


def test_label_edges_refuses_unproven():
    dm = inst(1, 10).distance_matrix()
    t = Tour.from_order(dm, list(range(10)), False)
    g = CandidateGraph.from_edges(10, [(0, 1)])
    with pytest.raises(OracleError):
        label_edges(g, t)
    assert label_edges(g, t, allow_unproven=True).positives == 1
    with pytest.raises(OracleError):
        label_edges(CandidateGraph.from_edges(9, [(0, 1)]), t)


def test_tour_file_round_trip():
    dm = inst(4, 9).distance_matrix()
    t = held_karp(dm)
    text = write_tour(t)
    assert text.splitlines()[0] == "9" and text.splitlines()[-1] == "-1"
    back = read_tour(text, dm, proven_optimal=True)
    assert np.array_equal(back.order, t.order) and back.length == t.length
    assert read_tour(text).length == 0


@pytest.mark.parametrize("text", ["", "3\n1\n2\n-1\n", "3\n1\n2\n3\n", "3\n1\n1\n2\n-1\n", "x"])
def test_tour_file_errors(text):
    with pytest.raises(OracleError):
        read_tour(text)
