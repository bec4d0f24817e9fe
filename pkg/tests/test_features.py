import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tsp_sparsify.candidates import alpha_nearest_candidates, popmusic_candidates, union_candidates
from tsp_sparsify.features import (
    BINARY_POSITIONS,
    FAMILY_NAMES,
    FEATURE_FAMILIES,
    FEATURE_NAMES,
    active_mask,
    edge_features,
    fit_standardizer,
    graph_features,
    node_stats,
    read_feature_dump,
    write_feature_dump,
)
from tsp_sparsify.instances import generate_instance

from oracles import straight_line_features


@pytest.fixture(scope="module")
def union_graph():
    inst = generate_instance("clustered", "EUC_2D", 30, 17)
    g = union_candidates(alpha_nearest_candidates(inst), popmusic_candidates(inst))
    return inst, g


def test_layout_is_fixed():
    assert len(FEATURE_NAMES) == 16 == len(FEATURE_FAMILIES)
    assert FEATURE_FAMILIES.count(5) == 2 and FAMILY_NAMES[5] == "source_provenance"
    assert [FEATURE_NAMES[k] for k in BINARY_POSITIONS] == ["mutual_knn", "from_alpha", "from_popmusic"]


def test_features_match_straight_line_recomputation(union_graph):
    inst, g = union_graph
    stats = node_stats(inst, k=10)
    X = graph_features(g, stats)
    coords = inst.coords.tolist()
    flags = {tuple(e): f for e, f in zip(g.edges.tolist(), g.flags.tolist())}
    edges = [tuple(e) for e in g.edges.tolist()]
    for row, (i, j) in zip(X, edges):
        want = straight_line_features(coords, edges, flags, i, j, k=10)
        np.testing.assert_allclose(row, want, rtol=1e-12, atol=1e-12)


def test_orientation_swaps_endpoint_features(union_graph):
    inst, g = union_graph
    stats = node_stats(inst)
    swap = [0, 2, 1, 3, 4, 6, 5, 8, 7, 9, 10, 12, 11, 13, 14, 15]
    for i, j in g.edges[:20].tolist():
        a = edge_features((i, j), g, stats)
        b = edge_features((j, i), g, stats)
        np.testing.assert_allclose(a[swap], b)


def test_single_mode_zeroes_provenance(union_graph):
    inst, g = union_graph
    X = graph_features(g, node_stats(inst), mode="single")
    assert np.all(X[:, 14:] == 0)
    assert not active_mask("single")[14] and active_mask("union").all()
    with pytest.raises(ValueError):
        active_mask("both")


def test_scale_invariance(union_graph):
    inst, g = union_graph
    dm = inst.distance_matrix()
    a = graph_features(g, node_stats(dm))
    b = graph_features(g, node_stats(dm * 3))
    np.testing.assert_allclose(b[:, 0], 3 * a[:, 0])
    np.testing.assert_allclose(b[:, 1:], a[:, 1:], atol=1e-12)


def test_rank_tie_break_by_index():
    dm = np.ones((5, 5), dtype=np.int64) - np.eye(5, dtype=np.int64)
    s = node_stats(dm, k=2)
    assert s.rank[0, 1:].tolist() == [1, 2, 3, 4]
    assert s.rank[3].tolist() == [1, 2, 3, 0, 4]
    assert np.all(s.std == 0)


def test_node_stats_validation():
    dm = generate_instance("uniform", "EUC_2D", 6, 0).distance_matrix()
    with pytest.raises(ValueError):
        node_stats(dm, k=6)


matrices = st.integers(8, 40).flatmap(
    lambda m: st.lists(st.lists(st.floats(-1e3, 1e3), min_size=16, max_size=16), min_size=m, max_size=m)
)


@settings(max_examples=50, deadline=None)
@given(matrices)
def test_standardizer_properties(rows):
    X = np.array(rows)
    X[:, list(BINARY_POSITIONS)] = (X[:, list(BINARY_POSITIONS)] > 0).astype(float)
    s = fit_standardizer(X)
    Z = s.apply(X)
    np.testing.assert_array_equal(Z[:, list(BINARY_POSITIONS)], X[:, list(BINARY_POSITIONS)])
    np.testing.assert_allclose(s.invert(Z), X, rtol=1e-9, atol=1e-6)
    cont = s.mask & (X.std(axis=0) > 1e-6 * (1 + np.abs(X).max(axis=0)))
    np.testing.assert_allclose(Z[:, cont].mean(axis=0), 0, atol=1e-6)
    np.testing.assert_allclose(Z[:, cont].std(axis=0), 1, atol=1e-6)


def test_standardizer_constant_column_and_min_rows():
    X = np.ones((5, 16))
    s = fit_standardizer(X)
    assert np.all(s.scale == 1)
    with pytest.raises(ValueError):
        fit_standardizer(np.ones((1, 16)))


def test_feature_dump_round_trip(union_graph):
    inst, g = union_graph
    X = graph_features(g, node_stats(inst))
    y = np.zeros(g.edge_count, dtype=int)
    y[:3] = 1
    text = write_feature_dump([(inst.name, g.edges, y, X), ("other", g.edges[:2], None, X[:2])])
    ids, edges, ys, X2 = read_feature_dump(text)
    assert ids[0] == inst.name and ids[-1] == "other"
    assert np.array_equal(edges[: g.edge_count], g.edges)
    assert ys[:3].tolist() == [1, 1, 1] and ys[-1] == -1
    np.testing.assert_array_equal(X2[: g.edge_count], X)
    with pytest.raises(ValueError):
        read_feature_dump(text.replace("d_ij", "dist", 1))
