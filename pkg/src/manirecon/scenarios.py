"""Synthetic experiment setups shared by the tests, the CLI and the sweeps.

The windowed chart bundle samples only the parts of ``X`` and ``Y`` that the
chart construction for one center can read: sectors of the two landmark
annuli facing the center, the anchor, and a thin ring of vectors at the step
distance from the center.  This keeps experiments at ``eps1 = 1e-4``
tractable.  ``from_full=True`` builds the same window by filtering full nets,
so the two constructions can be compared point for point.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .data import (
    DataBundle,
    NoiseModel,
    ReconstructionParams,
    bundle_from_points,
    synthesize_bundle,
)
from .errors import InputError
from .local import LocalChart
from .manifolds import FlatTorus, GeometryBounds, Region, sample_net


def chart_rings(params: ReconstructionParams, center_distance: float):
    """Radii of the (base, other) landmark annuli for a center at the given
    distance from the ball center."""
    R = params.R
    return (R / 8, R / 4) if center_distance > R / 2 else (3 * R / 4, R)


def _ring_crossings(center, points, radius, beyond: bool) -> np.ndarray:
    """Where the lines from ``center`` through ``points`` (tangent coordinates
    at the ball center) meet the circle of ``radius``: between the center and
    the point, or past the point when ``beyond``."""
    d = points - center
    a = np.einsum("ij,ij->i", d, d)
    b = 2 * d @ center
    c = center @ center - radius**2
    root = np.sqrt(np.maximum(b * b - 4 * a * c, 0.0))
    t = (-b + root) / (2 * a) if beyond else (-b - root) / (2 * a)
    if not beyond:
        # the crossing nearest to the center along the segment
        t = np.where((t >= 0) & (t <= 1), t, (-b + root) / (2 * a))
    return center + t[:, None] * d


def chart_window_bundle(spec, params: ReconstructionParams, x0, center, *, seed: int = 0,
                        noise: NoiseModel | str = "none", from_full: bool = False,
                        margin: float | None = None, window: bool = True, extra_x=None,
                        cap: int = 2_000_000) -> tuple[DataBundle, int]:
    """Windowed bundle for building the chart of one hidden center.

    Kept landmarks: the anchor ``x0``, the base annulus within ``c3`` of the
    base point facing the center, and the points of the other annulus within
    ``margin`` of the lines from the center through the kept base points.
    Kept vectors: copies of the landmarks, the center, and vectors at distance
    ``s +- 12 eps1`` from the center within ``margin`` of the same lines.
    Window geometry is computed in tangent coordinates at ``x0``, so the
    construction is exact on flat tori.  Returns the bundle and the index of
    the center's vector; the anchor is landmark 0.

    With ``from_full=True, window=False`` the unfiltered full nets are used,
    which is the reference the windowed construction must reproduce.
    ``extra_x`` adds hidden vectors (for example probes near the center).
    """
    x0 = spec.validate_points(x0)[0]
    center = spec.validate_points(center)[0]
    eps0, eps1 = params.eps0, params.eps1
    c_tan = spec.log_map(x0, center)[0]
    D = float(np.linalg.norm(c_tan))
    if D == 0:
        raise InputError("the center must differ from the ball center")
    direction = c_tan / D
    base_r, other_r = chart_rings(params, D)
    outer = D > params.R / 2
    slack = params.annulus_width + 2 * eps1 + 2 * eps0
    margin = 30 * eps1 + 2 * eps0 if margin is None else float(margin)
    s = params.s
    rng = np.random.default_rng(seed)
    seeds = [int(v) for v in rng.integers(0, 2**62, size=4)]

    def annulus(radius):
        return Region("annulus", x0, radius + slack, max(radius - slack, 0.0))

    step_lo, step_hi = max(s - 12 * eps1, 0.0), s + 12 * eps1
    step_region = (Region("annulus", center, step_hi, step_lo) if step_lo > 0
                   else Region("ball", center, step_hi))
    if from_full:
        y_full = sample_net(spec, Region("ball", x0, params.R + slack), eps0, seeds[1], cap=cap)
        x_full = sample_net(spec, "whole", eps0, seeds[2], cap=cap)
        base_net = y_full[annulus(base_r).contains(spec, y_full)]
        other_net = y_full[annulus(other_r).contains(spec, y_full)]
        # the full X also holds copies of every landmark
        x_all = np.concatenate([y_full, x_full])
        step_net = x_all[step_region.contains(spec, x_all)]
    else:
        base_net = sample_net(spec, annulus(base_r), eps0, seeds[0], cap=cap)
        other_net = sample_net(spec, annulus(other_r), eps0, seeds[1], cap=cap)
        step_net = sample_net(spec, step_region, eps0, seeds[2], cap=cap)
    base_point = x0[None] if base_r == 0 else spec.exp_map(x0, base_r * direction)
    base_keep = Region("ball", base_point[0], params.c3 + slack).contains(spec, base_net)
    base_net = base_net[base_keep]

    # lines from the center through the kept base landmarks, finely sampled
    angle = np.arctan2(direction[1], direction[0])
    half = 2 * np.arcsin(min(1.0, (params.c3 + slack) / (2 * base_r)))
    phis = angle + np.linspace(-half, half, int(np.ceil(2 * half * base_r / eps0)) + 2)
    rims = [base_r - slack, base_r, base_r + slack]
    base_curve = np.concatenate([r * np.stack([np.cos(phis), np.sin(phis)], axis=1) for r in rims])
    crossings = _ring_crossings(c_tan, base_curve, other_r, beyond=not outer)
    to_cross = crossings - c_tan
    steps = c_tan + s * to_cross / np.linalg.norm(to_cross, axis=1, keepdims=True)
    tree = cKDTree(np.concatenate([crossings, base_curve]))
    other_net = other_net[tree.query(spec.log_map(x0, other_net))[0] <= margin]
    step_tree = cKDTree(steps)
    step_net = step_net[step_tree.query(spec.log_map(x0, step_net))[0] <= margin]

    if from_full and not window:
        y_pts = np.concatenate([x0[None], y_full])
        x_pts = np.concatenate([y_pts, center[None], x_full])
    else:
        y_pts = np.concatenate([x0[None], base_net, other_net])
        x_pts = np.concatenate([y_pts, center[None], step_net])
    if extra_x is not None:
        x_pts = np.concatenate([x_pts, spec.validate_points(extra_x)])
    if isinstance(noise, str):
        noise = NoiseModel(noise, 0.0 if noise == "none" else eps1, seeds[3])
    bundle = bundle_from_points(spec, params, x_pts, y_pts, noise, ball_center=x0,
                                y_radius=params.R, lazy=len(x_pts) * len(y_pts) > 5_000_000)
    return bundle, len(y_pts)


def true_gram(bundle: DataBundle, chart: LocalChart) -> np.ndarray:
    """Inner products of the true unit directions from the hidden center to the
    chart's ``q`` landmarks."""
    prov = bundle.provenance
    spec = prov.spec
    c = prov.x_points[chart.center_index]
    qs = prov.y_points[list(chart.constellation.q_indices)]
    v = spec.log_map(np.repeat(c[None], len(qs), axis=0), qs)
    v = v / np.linalg.norm(v, axis=1, keepdims=True)
    return v @ v.T


# -- canonical acceptance setups ---------------------------------------------------

# Torus used for the D^a, localization and net checks (|Y| ~ 400, |X| ~ 1.7e3).
def small_torus_setup():
    spec = FlatTorus(0.33 * np.eye(2))
    bounds = GeometryBounds(lam=12.0, R=0.1, n=2)
    return spec, bounds


# Torus used for metric recovery; large enough that eps1 = 1e-2 is in range.
def chart_torus_setup():
    spec = FlatTorus(4.0 * np.eye(2))
    bounds = GeometryBounds(lam=3.0, R=0.9, n=2)
    return spec, bounds


def small_torus_bundle(noise: str = "adversarial_extremes", seed: int = 0,
                       eps: float = 0.01) -> DataBundle:
    spec, bounds = small_torus_setup()
    params = ReconstructionParams(bounds, eps, eps)
    return synthesize_bundle(spec, params, noise, seed, ball_center=np.array([0.165, 0.165]))
