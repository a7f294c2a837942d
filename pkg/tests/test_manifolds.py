import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manirecon.errors import InputError, ResourceError
from manirecon.manifolds import (
    FlatTorus,
    GeometryBounds,
    MeshGraph,
    Region,
    Sphere,
    covering_radius_estimate,
    geodesic_distance,
    manifold_from_json,
    sample_net,
    uniform_in_ball,
)


def brute_torus_distance(basis, p, q, window=3):
    # minimum over a generous window of lattice translates
    basis = np.asarray(basis, dtype=float)
    du = np.asarray(q, float) - np.asarray(p, float)
    best = math.inf
    for k in itertools.product(range(-window, window + 1), repeat=len(du)):
        best = min(best, float(np.linalg.norm(basis @ (du + np.array(k)))))
    return best


SKEW = [[1.0, 0.45], [0.0, 0.8]]


@pytest.mark.parametrize("basis", [np.eye(2), 4 * np.eye(2), SKEW])
def test_torus_pairwise_matches_brute_force(basis):
    spec = FlatTorus(basis)
    rng = np.random.default_rng(3)
    P, Q = spec.random_points(rng, 15), spec.random_points(rng, 12)
    D = spec.pairwise(P, Q)
    want = np.array([[brute_torus_distance(basis, p, q) for q in Q] for p in P])
    np.testing.assert_allclose(D, want, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(spec.paired(P[:12], Q), np.diag(want[:12]), rtol=1e-12, atol=1e-14)


def test_unit_torus_diameter_and_injectivity():
    spec = FlatTorus(np.eye(2))
    assert spec.diameter == pytest.approx(math.sqrt(0.5))
    assert spec.injectivity_radius == pytest.approx(0.5)
    assert spec.volume == pytest.approx(1.0)


def test_sphere_distance_known_values():
    spec = Sphere(2.0)
    n, s, e = [0, 0, 2.0], [0, 0, -2.0], [2.0, 0, 0]
    assert geodesic_distance(spec, n, s) == pytest.approx(2 * math.pi)
    assert geodesic_distance(spec, n, e) == pytest.approx(math.pi)
    assert spec.injectivity_radius == pytest.approx(2 * math.pi)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_metric_axioms_on_random_points(seed):
    rng = np.random.default_rng(seed)
    for spec in (FlatTorus(SKEW), Sphere(0.7)):
        P = spec.random_points(rng, 3)
        D = spec.pairwise(P, P)
        assert np.allclose(np.diag(D), 0.0, atol=1e-7)
        np.testing.assert_allclose(D, D.T, atol=1e-12)
        assert D[0, 2] <= D[0, 1] + D[1, 2] + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.45))
def test_exp_log_round_trip(seed, length):
    rng = np.random.default_rng(seed)
    for spec in (FlatTorus(np.eye(2)), Sphere(1.0)):
        x = spec.random_points(rng, 1)
        y = uniform_in_ball(spec, rng, x[0], length, 1)
        v = spec.log_map(x, y)
        np.testing.assert_allclose(np.linalg.norm(v), spec.distance(x, y), rtol=1e-9, atol=1e-12)
        back = spec.exp_map(x, v)
        assert spec.distance(back, y) < 1e-9


def test_geometry_bounds_validation():
    GeometryBounds(2.0, 0.9, 2)
    with pytest.raises(InputError):
        GeometryBounds(0.5, 3.0, 2)
    with pytest.raises(InputError):
        GeometryBounds(2.0, 0.4, 2)
    b = GeometryBounds(2.0, 0.9, 2)
    assert b.admits(Sphere(0.6))
    assert not b.admits(Sphere(2.0))
    assert GeometryBounds.from_json(b.to_json()) == b


def test_manifold_json_round_trip():
    for spec in (FlatTorus(SKEW), Sphere(0.6)):
        again = manifold_from_json(spec.to_json())
        P = spec.random_points(np.random.default_rng(0), 5)
        np.testing.assert_array_equal(again.pairwise(P, P), spec.pairwise(P, P))
    with pytest.raises(InputError):
        manifold_from_json({"kind": "klein_bottle"})


@pytest.mark.parametrize("spec,region", [
    (FlatTorus(np.eye(2)), Region("whole")),
    (FlatTorus(np.eye(2)), Region("ball", np.array([0.3, 0.6]), 0.2)),
    (FlatTorus(np.eye(2)), Region("annulus", np.array([0.3, 0.6]), 0.3, 0.1)),
    (Sphere(0.6), Region("whole")),
    (Sphere(0.6), Region("ball", np.array([0.0, 0.0, 0.6]), 0.9)),
])
def test_sample_net_covers_region(spec, region):
    eps = 0.03
    net = sample_net(spec, region, eps, seed=1)
    assert region.contains(spec, net).all()
    probes = np.random.default_rng(5)
    from manirecon.manifolds import sample_region

    pts = sample_region(spec, probes, region, 3000)
    assert covering_radius_estimate(spec, net, pts) <= eps


def test_sample_net_is_deterministic_and_keeps_seed_points():
    spec = FlatTorus(np.eye(2))
    seed_pt = np.array([[0.25, 0.25]])
    a = sample_net(spec, Region("ball", seed_pt[0], 0.1), 0.02, 7, seed_points=seed_pt)
    b = sample_net(spec, Region("ball", seed_pt[0], 0.1), 0.02, 7, seed_points=seed_pt)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a[0], seed_pt[0])


def test_sample_net_cap_raises_resource_error():
    with pytest.raises(ResourceError):
        sample_net(FlatTorus(np.eye(2)), "whole", 1e-4, 0, cap=1000)


def test_mesh_graph_fallback_distances():
    verts = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    mesh = MeshGraph(verts, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0)])
    assert mesh.distance([0], [2]) == pytest.approx(2.0)
