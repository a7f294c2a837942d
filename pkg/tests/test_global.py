import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manirecon.data import ReconstructionParams
from manirecon.errors import InputError
from manirecon.global_recon import (
    DistanceMatrix,
    ProximityGraph,
    brute_force_chains,
    build_graph,
    chain_distances,
    evaluate_matrix,
    nodes_needing_charts,
    oracle_weights,
    params_hash,
    select_nodes,
    sup_matrix,
    triangle_slack,
)
from manirecon.scenarios import small_torus_bundle


def random_graph(seed, n, density, cap):
    rng = np.random.default_rng(seed)
    w = np.where(rng.random((n, n)) < density, rng.random((n, n)), np.inf)
    w = np.minimum(w, w.T)
    np.fill_diagonal(w, 0.0)
    nodes = np.arange(n)
    return ProximityGraph(nodes, w, np.full((n, n), np.nan), 0.1, cap, 1.0)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 9), st.floats(0.1, 0.9), st.integers(0, 5))
def test_relaxation_equals_brute_force(seed, n, density, cap):
    g = random_graph(seed, n, density, cap)
    m = chain_distances(g)
    np.testing.assert_array_equal(m.values, brute_force_chains(g))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12), st.integers(0, 4))
def test_chain_witnesses_realize_values_within_the_hop_cap(seed, n, cap):
    g = random_graph(seed, n, 0.4, cap)
    m = chain_distances(g)
    np.testing.assert_array_equal(m.values, m.values.T)
    for a in range(n):
        for b in range(n):
            if a == b or not math.isfinite(m.values[a, b]):
                continue
            path = m.chain(a, b)
            assert path[0] == a and path[-1] == b
            assert len(path) - 1 <= cap + 1
            total = sum(g.weights[u, v] for u, v in zip(path, path[1:]))
            assert total == pytest.approx(m.values[a, b], rel=1e-12, abs=1e-15)


def test_hop_cap_limits_chain_length():
    # path graph 0-1-2-3 with unit weights
    n = 4
    w = np.full((n, n), np.inf)
    for a in range(n - 1):
        w[a, a + 1] = w[a + 1, a] = 1.0
    np.fill_diagonal(w, 0.0)
    g = ProximityGraph(np.arange(n), w, np.full((n, n), np.nan), 0.1, 1, 1.0)
    m = chain_distances(g)
    assert m.values[0, 2] == 2.0
    assert math.isinf(m.values[0, 3])
    assert chain_distances(g, hop_cap=2).values[0, 3] == 3.0
    assert m.unreachable == [(0, 3)]
    with pytest.raises(InputError):
        chain_distances(g, hop_cap=-1)


def test_brute_force_size_limit():
    with pytest.raises(InputError):
        brute_force_chains(random_graph(0, 13, 0.5, 2))


def test_csv_round_trip_and_format():
    g = random_graph(4, 6, 0.5, 2)
    m = chain_distances(g)
    text = m.to_csv()
    assert text.splitlines()[0] == "i,j,value"
    assert len(text.splitlines()) == 1 + 36
    again = DistanceMatrix.from_csv(text, m.sidecar())
    np.testing.assert_array_equal(again.values, m.values)
    assert again.to_csv() == text
    with pytest.raises(InputError):
        DistanceMatrix.from_csv("a,b\n1,2\n")


def test_triangle_slack_of_chain_metric_is_zero():
    m = chain_distances(random_graph(8, 10, 0.6, 20))
    assert triangle_slack(m.values) <= 1e-15


@pytest.fixture(scope="module")
def torus_bundle():
    return small_torus_bundle("none", seed=0)


def test_select_nodes_is_data_only_and_separated(torus_bundle):
    nodes = select_nodes(torus_bundle.stripped(), 25)
    again = select_nodes(torus_bundle, 25)
    np.testing.assert_array_equal(nodes, again)
    assert len(set(nodes.tolist())) == 25
    sup = sup_matrix(torus_bundle, nodes)
    np.fill_diagonal(sup, np.inf)
    # farthest-point sampling: every chosen node is far from the earlier ones
    assert sup.min() > 0
    spaced = select_nodes(torus_bundle, 10_000, spacing=0.05)
    sup = sup_matrix(torus_bundle, spaced)
    np.fill_diagonal(sup, np.inf)
    assert sup.min() > 0.05


def test_graph_without_close_pairs_has_no_edges(torus_bundle):
    nodes = select_nodes(torus_bundle, 8)
    g = build_graph(torus_bundle, nodes=nodes)
    assert g.edges() == []
    assert len(nodes_needing_charts(torus_bundle, nodes)) == 0
    assert all(gap["reason"] == "outside_rho0" for gap in g.gaps)
    m = chain_distances(g)
    assert len(m.unreachable) == 28
    rep = evaluate_matrix(m, torus_bundle)
    assert rep.unreachable == 28 and rep.pairs == 0


def test_oracle_weights_give_true_distances_on_edges():
    nodes = np.arange(5)
    w = np.full((5, 5), np.inf)
    w[0, 1] = w[1, 0] = 0.3
    np.fill_diagonal(w, 0.0)
    bundle = small_torus_bundle("none", seed=0)
    g = ProximityGraph(nodes, w, np.full((5, 5), np.nan), 0.1, 2, 1.0)
    o = oracle_weights(g, bundle)
    pts = bundle.provenance.x_points[:2]
    assert o.weights[0, 1] == pytest.approx(bundle.provenance.spec.distance(pts[0], pts[1]))
    assert math.isinf(o.weights[0, 2])


def test_params_hash_is_stable():
    from manirecon.manifolds import GeometryBounds

    a = ReconstructionParams(GeometryBounds(3.0, 0.9, 2), 1e-2, 1e-2)
    b = ReconstructionParams(GeometryBounds(3.0, 0.9, 2), 1e-2, 1e-2)
    assert params_hash(a) == params_hash(b)
    assert params_hash(a) != params_hash(a.with_eps(5e-3))
