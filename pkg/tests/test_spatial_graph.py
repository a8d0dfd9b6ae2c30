import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relate3d.oracles import brute_force_knn, brute_force_radius, pairwise_distances
from relate3d.spatial_graph import (
    GraphStrategy, RelationGraph, build_spatial_index, graph_degree_stats, knn_graph, radius_graph,
)

LINE = [(0, 0, 0), (1, 0, 0), (2, 0, 0)]


def rows(g):
    return [list(r) for r in g.neighbors]


def test_empty_index():
    idx = build_spatial_index([])
    assert len(idx) == 0
    assert knn_graph([], 3).num_nodes == 0
    assert radius_graph([], 1.0).num_nodes == 0


def test_single_point_has_no_neighbors():
    idx = build_spatial_index([(1.0, 2.0, 3.0)])
    assert idx.knn(0, 5) == []
    assert idx.within(0, 100.0) == []
    assert knn_graph([(1.0, 2.0, 3.0)], 4).num_edges == 0


def test_index_queries_match_sort(rng):
    c = rng.uniform(-30, 30, size=(200, 3))
    idx = build_spatial_index(c)
    d = pairwise_distances(c)
    for i in range(0, 200, 7):
        order = sorted((d[i, j], j) for j in range(200) if j != i)
        assert idx.knn(i, 10) == [j for _, j in order[:10]]


def test_knn_line_tie_goes_to_lower_index():
    assert rows(knn_graph(LINE, 1)) == [[1], [0], [1]]


def test_knn_clamps_to_fully_connected():
    g = knn_graph(LINE, 10)
    assert rows(g) == [[1, 2], [0, 2], [0, 1]]
    assert g.num_edges == 3 * 2


def test_radius_line():
    g = radius_graph(LINE, 1.5)
    assert rows(g) == [[1], [0, 2], [1]]
    assert graph_degree_stats(g)["mean"] == pytest.approx(4 / 3)
    assert radius_graph(LINE, 0.5).num_edges == 0


def test_degree_stats():
    assert graph_degree_stats(RelationGraph.empty(0)) == {"min": 0, "max": 0, "mean": 0.0}
    c = np.random.default_rng(0).normal(size=(30, 3))
    stats = graph_degree_stats(knn_graph(c, 7))
    assert stats["min"] == stats["max"] == 7


def test_knn_is_not_symmetric_in_general():
    g = knn_graph([(0, 0, 0), (1, 0, 0), (3, 0, 0)], 1)
    assert rows(g) == [[1], [0], [1]]
    assert (2, 1) in g.edges and (1, 2) not in g.edges
    assert not g.is_symmetric()


def test_graph_validation():
    with pytest.raises(ValueError, match="self-loop"):
        RelationGraph(2, ((0,), ()))
    with pytest.raises(ValueError, match="out of range"):
        RelationGraph(2, ((5,), ()))
    with pytest.raises(ValueError):
        RelationGraph(3, ((1,), (0,)))
    with pytest.raises(ValueError):
        knn_graph(LINE, 0)
    with pytest.raises(ValueError):
        radius_graph(LINE, 0.0)
    with pytest.raises(ValueError):
        GraphStrategy("star")


def test_json_round_trip(rng):
    g = knn_graph(rng.normal(size=(12, 3)), 4)
    back = RelationGraph.from_json(json.dumps(g.to_json()))
    assert back == g


def test_permute_relabels_edges(rng):
    c = rng.normal(size=(15, 3))
    perm = rng.permutation(15)
    assert knn_graph(c, 4).permute(perm) == knn_graph(c[perm], 4)
    assert radius_graph(c, 1.0).permute(perm) == radius_graph(c[perm], 1.0)


point_clouds = st.integers(0, 60).flatmap(
    lambda n: st.lists(st.tuples(*[st.integers(-20, 20)] * 3), min_size=n, max_size=n))


@settings(max_examples=150, deadline=None)
@given(point_clouds, st.sampled_from([1, 2, 4, 16, 32]), st.sampled_from([1.0, 2.0, 6.0]))
def test_matches_brute_force_on_integer_grids(points, k, r):
    # integer coordinates produce many exact distance ties
    c = np.array(points, dtype=float).reshape(-1, 3)
    assert rows(knn_graph(c, k)) == brute_force_knn(c, k)
    assert rows(radius_graph(c, r)) == brute_force_radius(c, r)


def test_matches_brute_force_random(rng):
    for _ in range(100):
        n = int(rng.integers(0, 200))
        c = rng.uniform(-30, 30, size=(n, 3)) * np.array([1.0, 1.0, 0.1])
        d = pairwise_distances(c)
        for k in (1, 4, 16, 32):
            g = knn_graph(c, k)
            assert rows(g) == brute_force_knn(c, k, d)
            assert all(len(row) == min(k, n - 1) for row in g.neighbors)
        for r in (2.0, 6.0, 10.0):
            g = radius_graph(c, r)
            assert rows(g) == brute_force_radius(c, r, d)
            assert g.is_symmetric()


def test_neighbor_lists_sorted_and_deterministic(rng):
    c = rng.normal(size=(40, 3)) * 5
    g1, g2 = knn_graph(c, 8), knn_graph(c.copy(), 8)
    assert g1 == g2
    assert all(list(row) == sorted(row) for row in g1.neighbors)


def test_translation_invariance(rng):
    c = rng.uniform(-20, 20, size=(80, 3))
    t = np.array([3.0, -2.0, 0.5])
    assert knn_graph(c, 6) == knn_graph(c + t, 6)
    assert radius_graph(c, 6.0) == radius_graph(c + t, 6.0)


def test_graph_uses_height(rng):
    c = [(0, 0, 0), (0, 0, 5), (1.5, 0, 0)]
    assert rows(knn_graph(c, 1))[0] == [2]
    assert radius_graph(c, 2.0).neighbors[0] == (2,)
