"""Comparison-geometry utilities.

``hyperbolic_law_of_cosines`` solves for the third side of a triangle in the
space form of curvature ``-lambda^2``.  ``check_first_variation_bound`` samples
almost-minimizing configurations on a model manifold and fits the constant in

    | |xy| cos(theta) - (|xq| - |yq|) | <= C (|xy| delta^{1/4} + |xy|^{4/3})

where ``theta`` is the angle at ``x`` between ``y`` and ``q`` and ``delta`` is
the defect ``|pq| + |qx| - |px|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapabilityError, InputError, SamplingError
from .manifolds import FlatTorus, GeometryBounds, Sphere

# Below this, cancellation in |xq| - |yq| dominates the inequality's right side.
XY_FLOOR = 1e-8


def hyperbolic_law_of_cosines(a_side: float, b_side: float, angle: float, lam: float) -> float:
    """Third side ``c`` of a triangle with sides ``a``, ``b`` enclosing ``angle``.

    Uses ``cosh(lam c) - 1 = 2 sinh^2(lam (a - b) / 2) + 2 sinh(lam a) sinh(lam b)
    sin^2(angle / 2)``, which is algebraically identical to the usual form but
    keeps full relative precision when ``lam`` or the triangle is small.
    ``lam = 0`` gives the Euclidean law of cosines.
    """
    if a_side < 0 or b_side < 0:
        raise InputError("triangle sides must be nonnegative")
    if not 0 <= angle <= math.pi:
        raise InputError("angle must lie in [0, pi]")
    if lam < 0:
        raise InputError("lambda must be nonnegative")
    half = math.sin(angle / 2) ** 2
    # curvature corrections are O((lam * side)^2); below 1e-8 they vanish in
    # double precision while sinh products could underflow
    if lam * max(a_side, b_side) < 1e-8:
        return math.sqrt((a_side - b_side) ** 2 + 4 * a_side * b_side * half)
    la, lb = lam * a_side, lam * b_side
    excess = 2 * math.sinh((la - lb) / 2) ** 2 + 2 * math.sinh(la) * math.sinh(lb) * half
    excess = max(excess, 0.0)  # cosh argument clamped at 1
    return math.log1p(excess + math.sqrt(excess * (excess + 2))) / lam


@dataclass
class FirstVariationReport:
    """Empirical constant of the first-variation inequality."""

    constant: float
    samples: int
    quantiles: dict
    scale_bins: list = field(default_factory=list)
    growth_flag: bool = False
    zero_defect_constant: float | None = None


def first_variation_terms(spec, p, q, x, y):
    """Both sides of the inequality for arrays of configurations.

    Returns ``(lhs, xy, delta)`` where ``lhs = ||xy| cos(theta) - (|xq| - |yq|)|``.
    """
    if not isinstance(spec, (FlatTorus, Sphere)):
        raise CapabilityError("first-variation check needs tangent vectors")
    d = spec.paired
    pq, qx, px, xy, yq = d(p, q), d(q, x), d(p, x), d(x, y), d(y, q)
    to_q = spec.log_map(x, q)
    to_y = spec.log_map(x, y)
    unit_q = to_q / np.linalg.norm(to_q, axis=-1, keepdims=True)
    proj = np.sum(to_y * unit_q, axis=-1)
    lhs = np.abs(proj - (qx - yq))
    delta = np.maximum(pq + qx - px, 0.0)
    return lhs, xy, delta


def _random_unit_tangent(spec, rng, x):
    g = rng.standard_normal(x.shape)
    if isinstance(spec, Sphere):
        xh = x / spec.radius
        g -= np.sum(g * xh, axis=-1, keepdims=True) * xh
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def sample_configurations(spec, bounds: GeometryBounds, samples: int, seed: int, *,
                          c2: float = 0.3, max_turn: float = 0.3, exact: bool = False):
    """Random ``(p, q, x, y)`` meeting the hypotheses of the inequality.

    ``q`` lies at distance in ``(1/lam, ...)`` from ``x``; ``p`` continues the
    geodesic past ``q`` after a turn of at most ``max_turn`` radians (zero when
    ``exact``), and ``y`` lies within ``c2^2`` of ``x``.
    """
    rng = np.random.default_rng(seed)
    lam = bounds.lam
    inj = spec.injectivity_radius
    lo1, lo2 = 1.0 / lam, 0.5 / lam
    budget = 0.9 * inj
    if lo1 + lo2 >= budget:
        raise SamplingError("geometry bounds leave no room for admissible configurations")
    m = samples
    x = spec.random_points(rng, m)
    v = _random_unit_tangent(spec, rng, x)
    l1 = lo1 * 1.02 + (budget - lo1 - lo2) * 0.6 * rng.random(m)
    l2 = lo2 * 1.02 + (budget - l1 - lo2 * 1.02) * rng.random(m)
    q = spec.exp_map(x, v * l1[:, None])
    # continue the geodesic: direction at q pointing away from x
    back = spec.log_map(q, x)
    ahead = -back / np.linalg.norm(back, axis=-1, keepdims=True)
    if not exact:
        side = _random_unit_tangent(spec, rng, q)
        side -= np.sum(side * ahead, axis=-1, keepdims=True) * ahead
        side /= np.linalg.norm(side, axis=-1, keepdims=True)
        turn = max_turn * rng.random(m) ** 2
        ahead = np.cos(turn)[:, None] * ahead + np.sin(turn)[:, None] * side
    p = spec.exp_map(q, ahead * l2[:, None])
    # log-uniform scale keeps |xy| well above the roundoff floor of the test
    h = c2**2 * np.exp(np.log(1e-6) * rng.random(m))
    u = _random_unit_tangent(spec, rng, x)
    y = spec.exp_map(x, u * h[:, None])
    return p, q, x, y


def check_first_variation_bound(spec, samples: int, seed: int, params: GeometryBounds, *,
                                c2: float = 0.3, exact: bool = False) -> FirstVariationReport:
    """Fit the first-variation constant from ``samples`` random configurations."""
    p, q, x, y = sample_configurations(spec, params, samples, seed, c2=c2, exact=exact)
    lhs, xy, delta = first_variation_terms(spec, p, q, x, y)
    pq = spec.paired(p, q)
    qx = spec.paired(q, x)
    ok = (pq > 0.5 / params.lam) & (qx > 1.0 / params.lam) & (xy < c2**2) & (xy > XY_FLOOR)
    if ok.sum() < max(10, samples // 10):
        raise SamplingError(f"only {int(ok.sum())} admissible configurations out of {samples}")
    lhs, xy, delta = lhs[ok], xy[ok], delta[ok]
    ratio = lhs / (xy * delta**0.25 + xy ** (4.0 / 3.0))
    bins = []
    edges = np.geomspace(xy.min(), xy.max() * (1 + 1e-12), 6)
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (xy >= lo) & (xy < hi)
        if sel.any():
            bins.append({"xy_lo": float(lo), "xy_hi": float(hi), "max_ratio": float(ratio[sel].max()),
                         "count": int(sel.sum())})
    growth = bool(len(bins) >= 2 and bins[0]["max_ratio"] > 10 * max(b["max_ratio"] for b in bins[1:]))
    zero = None
    small = delta < 1e-12
    if small.any():
        zero = float((lhs[small] / xy[small] ** (4.0 / 3.0)).max())
    return FirstVariationReport(
        constant=float(ratio.max()),
        samples=int(ok.sum()),
        quantiles={str(qq): float(np.quantile(ratio, qq)) for qq in (0.5, 0.9, 0.99)},
        scale_bins=bins,
        growth_flag=growth,
        zero_defect_constant=zero,
    )
