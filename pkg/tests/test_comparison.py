import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manirecon.comparison import (
    check_first_variation_bound,
    first_variation_terms,
    hyperbolic_law_of_cosines,
    sample_configurations,
)
from manirecon.errors import CapabilityError, InputError
from manirecon.manifolds import FlatTorus, GeometryBounds, Sphere

sides = st.floats(0.0, 3.0)
angles = st.floats(0.0, math.pi)
lams = st.floats(0.01, 3.0)


def mp_third_side(a, b, angle, lam):
    mpmath.mp.dps = 50
    a, b, angle, lam = (mpmath.mpf(v) for v in (a, b, angle, lam))
    ch = mpmath.cosh(lam * a) * mpmath.cosh(lam * b) - mpmath.sinh(lam * a) * mpmath.sinh(lam * b) * mpmath.cos(angle)
    return float(mpmath.acosh(max(ch, mpmath.mpf(1))) / lam)


@settings(max_examples=200, deadline=None)
@given(sides, sides, angles, lams)
def test_matches_high_precision_formula(a, b, angle, lam):
    got = hyperbolic_law_of_cosines(a, b, angle, lam)
    assert got == pytest.approx(mp_third_side(a, b, angle, lam), rel=1e-10, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(sides, sides, angles, st.floats(0.0, 3.0))
def test_triangle_inequalities_and_monotonicity(a, b, angle, lam):
    c = hyperbolic_law_of_cosines(a, b, angle, lam)
    assert abs(a - b) - 1e-12 <= c <= a + b + 1e-12
    assert hyperbolic_law_of_cosines(a, b, min(angle + 0.1, math.pi), lam) >= c - 1e-12


def test_euclidean_limit():
    a, b, angle = 0.7, 1.3, 1.1
    euclid = math.sqrt(a * a + b * b - 2 * a * b * math.cos(angle))
    assert hyperbolic_law_of_cosines(a, b, angle, 0.0) == pytest.approx(euclid, rel=1e-15)
    assert hyperbolic_law_of_cosines(a, b, angle, 1e-6) == pytest.approx(euclid, rel=1e-10)
    # hyperbolic triangles are fatter
    assert hyperbolic_law_of_cosines(a, b, angle, 1.0) > euclid


def test_small_triangles_keep_relative_precision():
    a = b = 1e-9
    c = hyperbolic_law_of_cosines(a, b, math.pi / 3, 2.0)
    assert c == pytest.approx(1e-9, rel=1e-12)


@pytest.mark.parametrize("args", [(-1, 1, 1, 1), (1, 1, 4.0, 1), (1, 1, 1, -0.5)])
def test_invalid_arguments(args):
    with pytest.raises(InputError):
        hyperbolic_law_of_cosines(*args)


def test_flat_torus_geodesic_configurations_satisfy_first_variation_exactly():
    spec = FlatTorus(np.eye(2))
    bounds = GeometryBounds(8.0, 0.3, 2)
    p, q, x, y = sample_configurations(spec, bounds, 500, 0, exact=True)
    lhs, xy, delta = first_variation_terms(spec, p, q, x, y)
    assert np.all(delta < 1e-12)
    # in flat space the first variation error is xy^2 / (2 |xq|) to leading order
    assert np.all(lhs <= bounds.lam * xy**2 + 1e-12)


def test_first_variation_constant_is_deterministic():
    spec = Sphere(1.0)
    bounds = GeometryBounds(np.pi, 0.5, 2)
    a = check_first_variation_bound(spec, 2000, 7, bounds)
    b = check_first_variation_bound(spec, 2000, 7, bounds)
    assert a.constant == b.constant
    assert a.samples > 200
    assert math.isfinite(a.constant)


def test_first_variation_needs_tangent_vectors():
    class Other:
        pass

    with pytest.raises(CapabilityError):
        first_variation_terms(Other(), None, None, None, None)
