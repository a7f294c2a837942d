import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manirecon.errors import CapabilityError, InputError
from manirecon.heat_kernel import (
    heat_kernel_log,
    heat_kernel_log_matrix,
    heat_kernel_log_with_info,
    li_yau_envelope,
)
from manirecon.manifolds import FlatTorus, MeshGraph, Sphere


def torus_image_sum_log(side, disp, t, window=30):
    """High-precision method-of-images oracle for a square torus."""
    with mp.workdps(40):
        s = mp.mpf(0)
        for i in range(-window, window + 1):
            for j in range(-window, window + 1):
                r2 = (mp.mpf(disp[0]) + i * side) ** 2 + (mp.mpf(disp[1]) + j * side) ** 2
                s += mp.e ** (-r2 / (4 * mp.mpf(t)))
        return float(mp.log(s / (4 * mp.pi * t)))


@pytest.mark.parametrize("t", [1e-3, 1e-2, 0.1])
def test_torus_kernel_matches_image_sum(t):
    spec = FlatTorus(np.eye(2))
    p, q = np.array([[0.1, 0.2]]), np.array([[0.45, 0.9]])
    disp = spec.log_map(p, q)[0]
    assert heat_kernel_log(spec, p, q, t) == pytest.approx(torus_image_sum_log(1, disp, t), abs=1e-12)


# Legendre-series values computed with mpmath at 80 digits (radius 0.6).
SPHERE_ORACLE = [
    (0.002, 0.5, -7.5435462788742108295),
    (0.001, 1.0, -85.536023998633811473),
    (0.01, 2.5, -53.449185504321937216),
]


@pytest.mark.parametrize("t,angle,want", SPHERE_ORACLE)
def test_sphere_kernel_small_time_oracle(t, angle, want):
    spec = Sphere(0.6)
    p = np.array([[0, 0, 0.6]])
    q = 0.6 * np.array([[math.sin(angle), 0, math.cos(angle)]])
    got, info = heat_kernel_log_with_info(spec, p, q, t)
    assert got == pytest.approx(want, abs=1e-11)
    assert info.rel_error < 1e-12


def test_sphere_kernel_large_time_matches_legendre_series():
    spec = Sphere(1.0)
    P = spec.random_points(np.random.default_rng(0), 3)
    logs = heat_kernel_log_matrix(spec, P, P, 0.5)
    cosines = np.clip(P @ P.T, -1, 1)
    for (i, j), c in np.ndenumerate(cosines):
        with mp.workdps(30):
            s = sum((2 * l + 1) * mp.e ** (-l * (l + 1) * mp.mpf(0.5)) * mp.legendre(l, c) for l in range(40))
            want = float(mp.log(s / (4 * mp.pi)))
        assert logs[i, j] == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("t", [0.0, 1.0, -0.1, 2.0])
def test_time_outside_unit_interval_rejected(t):
    with pytest.raises(InputError):
        heat_kernel_log(FlatTorus(np.eye(2)), [0.1, 0.1], [0.2, 0.2], t)


def test_mesh_has_no_exact_kernel():
    mesh = MeshGraph(np.zeros((2, 2)), [(0, 1, 1.0)])
    with pytest.raises(CapabilityError):
        heat_kernel_log_matrix(mesh, [0], [1], 0.1)


def test_small_time_log_domain_is_finite():
    spec = FlatTorus(np.eye(2))
    P = spec.random_points(np.random.default_rng(1), 20)
    logs = heat_kernel_log_matrix(spec, P, P, 1e-6)
    assert np.all(np.isfinite(logs))
    sphere = Sphere(0.6)
    S = sphere.random_points(np.random.default_rng(1), 6)
    assert np.all(np.isfinite(heat_kernel_log_matrix(sphere, S, S, 1e-4)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1e-3, 1e-2, 0.2]))
def test_kernel_symmetry(seed, t):
    rng = np.random.default_rng(seed)
    for spec in (FlatTorus([[1.0, 0.3], [0.0, 0.9]]), Sphere(0.8)):
        P = spec.random_points(rng, 4)
        K = heat_kernel_log_matrix(spec, P, P, t)
        np.testing.assert_allclose(K, K.T, rtol=1e-12, atol=1e-12)


def test_torus_kernel_mass_is_one():
    # integral over the torus of G(x, ., t) is 1; midpoint rule on a fine grid
    spec = FlatTorus(np.eye(2))
    g = (np.arange(200) + 0.5) / 200
    grid = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    vals = np.exp(heat_kernel_log_matrix(spec, np.array([[0.3, 0.7]]), grid, 0.01))
    assert vals.mean() == pytest.approx(1.0, rel=1e-10)


def test_li_yau_envelope_is_finite_and_monotone_in_eps():
    spec = FlatTorus(np.eye(2))
    rng = np.random.default_rng(2)
    P, Q = spec.random_points(rng, 20), spec.random_points(rng, 20)
    loose = li_yau_envelope(spec, P, Q, [1e-3, 1e-2, 1e-1], eps=1.0)
    tight = li_yau_envelope(spec, P, Q, [1e-3, 1e-2, 1e-1], eps=0.5)
    assert math.isfinite(loose.constant) and loose.constant >= 1
    assert loose.constant <= tight.constant
    with pytest.raises(InputError):
        li_yau_envelope(spec, P, Q, [1e-2], eps=4.0)
