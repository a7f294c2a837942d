"""Model manifolds with exact geodesic distances.

Three kinds are provided:

* :class:`FlatTorus` -- ``R^n / B Z^n`` for an invertible basis ``B`` whose
  columns are the lattice vectors.  Points are stored in lattice (fractional)
  coordinates in ``[0, 1)^n``.
* :class:`Sphere` -- the round sphere ``S^n`` of radius ``r`` embedded in
  ``R^{n+1}``.  Points are ambient vectors of norm ``r``.
* :class:`MeshGraph` -- a weighted graph whose shortest-path metric serves as an
  approximate fallback.  Points are vertex indices.

Tangent vectors of the torus and the sphere are represented in ambient
coordinates, so the Riemannian inner product is the Euclidean dot product.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial import Voronoi, cKDTree

from .errors import CapabilityError, InputError, ResourceError

DEFAULT_NET_CAP = 1_000_000


def _lattice_shifts(window: int, n: int) -> np.ndarray:
    """All integer vectors ``k`` with ``|k|_inf <= window``, origin first."""
    rng = range(-window, window + 1)
    shifts = np.array(list(itertools.product(rng, repeat=n)), dtype=float)
    order = np.argsort(np.abs(shifts).max(axis=1), kind="stable")
    return shifts[order]


class FlatTorus:
    """Flat torus ``R^n / B Z^n``."""

    kind = "flat_torus"

    def __init__(self, basis):
        basis = np.atleast_2d(np.asarray(basis, dtype=float))
        if basis.shape[0] != basis.shape[1]:
            raise InputError("torus basis must be square")
        if not np.all(np.isfinite(basis)):
            raise InputError("torus basis must be finite")
        det = np.linalg.det(basis)
        if abs(det) < 1e-14 * max(1.0, np.abs(basis).max()) ** basis.shape[0]:
            raise InputError("torus basis must be invertible")
        self.basis = basis
        self.dimension = basis.shape[0]
        self.basis_inv = np.linalg.inv(basis)
        self._inv_norm = float(np.linalg.norm(self.basis_inv, 2))
        self._sigma_min = float(np.linalg.svd(basis, compute_uv=False).min())
        self._diam = self._covering_radius()
        self.window = int(math.ceil(self._diam * self._inv_norm)) + 1
        self._shifts = _lattice_shifts(self.window, self.dimension)
        self._shift_vecs = self._shifts @ self.basis.T
        self._shift_sq = np.einsum("ij,ij->i", self._shift_vecs, self._shift_vecs)
        # With orthogonal lattice vectors the squared length separates by
        # coordinate, so rounding each fractional difference is already optimal.
        gram = basis.T @ basis
        self._column_lengths = np.sqrt(np.diag(gram))
        self._orthogonal = bool(np.allclose(gram, np.diag(np.diag(gram)), rtol=0, atol=1e-14 * np.abs(gram).max()))

    # -- geometry bounds -------------------------------------------------
    def _covering_radius(self) -> float:
        n = self.dimension
        if n == 1:
            return abs(float(self.basis[0, 0])) / 2.0
        # The Voronoi cell of the origin is bounded by Voronoi-relevant vectors,
        # all of which lie in a small window for reasonably reduced bases.
        w = max(2, int(math.ceil(self._inv_norm * 0.5 * np.linalg.norm(self.basis, axis=0).sum())))
        w = min(w, 4)
        pts = _lattice_shifts(w, n) @ self.basis.T
        vor = Voronoi(pts)
        region = vor.regions[vor.point_region[0]]
        verts = vor.vertices[[v for v in region if v >= 0]]
        return float(np.sqrt((verts**2).sum(axis=1)).max())

    @property
    def diameter(self) -> float:
        return self._diam

    @property
    def injectivity_radius(self) -> float:
        w = int(math.ceil(self._inv_norm * np.linalg.norm(self.basis, axis=0).min())) + 1
        shifts = _lattice_shifts(w, self.dimension)[1:]
        lengths = np.linalg.norm(shifts @ self.basis.T, axis=1)
        return float(lengths.min()) / 2.0

    @property
    def max_abs_curvature(self) -> float:
        return 0.0

    @property
    def volume(self) -> float:
        return abs(float(np.linalg.det(self.basis)))

    def ball_volume(self, radius: float) -> float:
        """Riemannian volume of a geodesic ball."""
        n = self.dimension
        if radius <= self.injectivity_radius:
            return math.pi ** (n / 2) / math.gamma(n / 2 + 1) * radius**n
        # Past the injectivity radius the ball overlaps itself; count on a grid.
        m = 200 if n == 2 else 60
        g = (np.arange(m) + 0.5) / m
        u = np.stack(np.meshgrid(*([g] * n), indexing="ij"), axis=-1).reshape(-1, n)
        d = self.pairwise(np.zeros((1, n)), u)[0]
        return self.volume * float(np.mean(d <= radius))

    # -- points ----------------------------------------------------------
    @property
    def ambient_dimension(self) -> int:
        return self.dimension

    def validate_points(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if pts.shape[1] != self.dimension:
            raise InputError(
                f"torus points need {self.dimension} coordinates, got {pts.shape[1]}"
            )
        return pts

    def wrap(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        w = u - np.floor(u)
        # floor can return 1.0 for tiny negative inputs
        w[w >= 1.0] = 0.0
        return w

    def to_ambient(self, u) -> np.ndarray:
        return np.asarray(u, dtype=float) @ self.basis.T

    def from_ambient(self, x) -> np.ndarray:
        return self.wrap(np.asarray(x, dtype=float) @ self.basis_inv.T)

    def random_points(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return self.wrap(rng.random((m, self.dimension)))

    # -- metric ----------------------------------------------------------
    def _displacements(self, du: np.ndarray) -> np.ndarray:
        """Minimal-image displacement vectors for fractional differences ``du``."""
        du = du - np.round(du)
        v = du @ self.basis.T
        if self._orthogonal:
            return v
        d2 = (
            np.einsum("...i,...i->...", v, v)[..., None]
            + 2.0 * v @ self._shift_vecs.T
            + self._shift_sq
        )
        best = np.argmin(d2, axis=-1)
        return v + self._shift_vecs[best]

    def log_map(self, x, y) -> np.ndarray:
        x = self.validate_points(x)
        y = self.validate_points(y)
        return self._displacements(y - x)

    def exp_map(self, x, v) -> np.ndarray:
        x = self.validate_points(x)
        v = np.atleast_2d(np.asarray(v, dtype=float))
        return self.wrap(x + v @ self.basis_inv.T)

    def pairwise(self, P, Q, chunk: int = 400_000) -> np.ndarray:
        P = self.validate_points(P)
        Q = self.validate_points(Q)
        out = np.empty((P.shape[0], Q.shape[0]))
        if self._orthogonal:
            # small blocks stay in cache, which is several times faster here
            rows = max(1, 32_768 // max(1, Q.shape[0]))
            for a in range(0, P.shape[0], rows):
                out[a : a + rows] = self._orthogonal_distances(P[a : a + rows, None, :], Q[None, :, :])
            return out
        rows = max(1, chunk // max(1, Q.shape[0] * len(self._shifts)) )
        for a in range(0, P.shape[0], rows):
            du = Q[None, :, :] - P[a : a + rows, None, :]
            disp = self._displacements(du)
            out[a : a + rows] = np.sqrt(np.einsum("...i,...i->...", disp, disp))
        return out

    def _orthogonal_distances(self, P, Q) -> np.ndarray:
        """Distances for broadcastable fractional arrays when the lattice
        vectors are orthogonal (one coordinate at a time, no 3-d temporaries)."""
        acc = None
        for k, length in enumerate(self._column_lengths):
            du = Q[..., k] - P[..., k]
            du -= np.round(du)
            du *= length
            du *= du
            acc = du if acc is None else np.add(acc, du, out=acc)
        return np.sqrt(acc, out=acc)

    def paired(self, P, Q) -> np.ndarray:
        """Distances between corresponding rows of ``P`` and ``Q``."""
        if self._orthogonal:
            return self._orthogonal_distances(self.validate_points(P), self.validate_points(Q))
        disp = self._displacements(self.validate_points(Q) - self.validate_points(P))
        return np.sqrt(np.einsum("...i,...i->...", disp, disp))

    def distance(self, p, q) -> float:
        return float(self.pairwise(p, q)[0, 0])

    def to_json(self) -> dict:
        return {"kind": self.kind, "basis": self.basis.tolist()}


class Sphere:
    """Round sphere of radius ``r`` and dimension ``n`` in ``R^{n+1}``."""

    kind = "sphere"

    def __init__(self, radius: float, n: int = 2):
        if not (radius > 0 and math.isfinite(radius)):
            raise InputError("sphere radius must be positive")
        if int(n) != n or n < 1:
            raise InputError("sphere dimension must be a positive integer")
        self.radius = float(radius)
        self.dimension = int(n)

    @property
    def ambient_dimension(self) -> int:
        return self.dimension + 1

    @property
    def diameter(self) -> float:
        return math.pi * self.radius

    @property
    def injectivity_radius(self) -> float:
        return math.pi * self.radius

    @property
    def max_abs_curvature(self) -> float:
        return 1.0 / self.radius**2

    @property
    def volume(self) -> float:
        n = self.dimension
        return 2 * math.pi ** ((n + 1) / 2) / math.gamma((n + 1) / 2) * self.radius**n

    def ball_volume(self, radius: float) -> float:
        n, r = self.dimension, self.radius
        theta = min(radius / r, math.pi)
        if n == 2:
            return 2 * math.pi * r**2 * (1 - math.cos(theta))
        from scipy import integrate

        area_sn1 = 2 * math.pi ** (n / 2) / math.gamma(n / 2)
        val, _ = integrate.quad(lambda a: math.sin(a) ** (n - 1), 0.0, theta)
        return area_sn1 * r**n * val

    def validate_points(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if pts.shape[1] != self.ambient_dimension:
            raise InputError(
                f"sphere points need {self.ambient_dimension} coordinates, got {pts.shape[1]}"
            )
        return pts

    def project(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.radius * x / np.linalg.norm(x, axis=-1, keepdims=True)

    def random_points(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return self.project(rng.standard_normal((m, self.ambient_dimension)))

    def _angles(self, P, Q) -> np.ndarray:
        a = P / self.radius
        b = Q / self.radius
        diff = np.linalg.norm(a - b, axis=-1)
        summ = np.linalg.norm(a + b, axis=-1)
        return 2.0 * np.arctan2(diff, summ)

    def pairwise(self, P, Q, chunk: int = 2_000_000) -> np.ndarray:
        P = self.validate_points(P)
        Q = self.validate_points(Q)
        out = np.empty((P.shape[0], Q.shape[0]))
        rows = max(1, chunk // max(1, Q.shape[0]))
        for a in range(0, P.shape[0], rows):
            out[a : a + rows] = self.radius * self._angles(
                P[a : a + rows, None, :], Q[None, :, :]
            )
        return out

    def paired(self, P, Q) -> np.ndarray:
        """Distances between corresponding rows of ``P`` and ``Q``."""
        return self.radius * self._angles(self.validate_points(P), self.validate_points(Q))

    def distance(self, p, q) -> float:
        return float(self.pairwise(p, q)[0, 0])

    def log_map(self, x, y) -> np.ndarray:
        x = self.validate_points(x)
        y = self.validate_points(y)
        r = self.radius
        xh = x / r
        yh = y / r
        theta = self._angles(x, y)
        perp = yh - np.sum(yh * xh, axis=-1, keepdims=True) * xh
        nrm = np.linalg.norm(perp, axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(nrm > 0, perp / nrm, 0.0)
        return r * theta[..., None] * unit

    def exp_map(self, x, v) -> np.ndarray:
        x = self.validate_points(x)
        v = np.atleast_2d(np.asarray(v, dtype=float))
        r = self.radius
        nrm = np.linalg.norm(v, axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(nrm > 0, v / nrm, 0.0)
        ang = nrm / r
        return self.project(np.cos(ang) * x + r * np.sin(ang) * unit)

    def to_json(self) -> dict:
        return {"kind": self.kind, "radius": self.radius, "n": self.dimension}


class MeshGraph:
    """Shortest-path metric of a weighted graph (approximate oracle only)."""

    kind = "mesh"

    def __init__(self, vertices, edges, dimension: int = 2):
        self.vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
        m = self.vertices.shape[0]
        edges = [(int(i), int(j), float(w)) for i, j, w in edges]
        weights = {}
        for i, j, w in edges:
            if not (0 <= i < m and 0 <= j < m):
                raise InputError("mesh edge refers to a missing vertex")
            if not w > 0:
                raise InputError("mesh edge weights must be strictly positive")
            key = (min(i, j), max(i, j))
            if key in weights and weights[key] != w:
                raise InputError("mesh edge weights must be symmetric")
            weights[key] = w
        self.edges = [(i, j, w) for (i, j), w in sorted(weights.items())]
        self.dimension = int(dimension)
        rows = [e[0] for e in self.edges] + [e[1] for e in self.edges]
        cols = [e[1] for e in self.edges] + [e[0] for e in self.edges]
        vals = [e[2] for e in self.edges] * 2
        graph = sparse.csr_matrix((vals, (rows, cols)), shape=(m, m))
        self._dist = csgraph.shortest_path(graph, directed=False)

    @property
    def ambient_dimension(self) -> int:
        return 1

    @property
    def diameter(self) -> float:
        finite = self._dist[np.isfinite(self._dist)]
        return float(finite.max())

    def validate_points(self, pts) -> np.ndarray:
        pts = np.atleast_1d(np.asarray(pts)).reshape(-1)
        if np.any(pts != np.round(pts)) or np.any(pts < 0) or np.any(pts >= len(self.vertices)):
            raise InputError("mesh points are vertex indices")
        return pts.astype(int)

    def pairwise(self, P, Q) -> np.ndarray:
        return self._dist[np.ix_(self.validate_points(P), self.validate_points(Q))]

    def paired(self, P, Q) -> np.ndarray:
        return self._dist[self.validate_points(P), self.validate_points(Q)]

    def distance(self, p, q) -> float:
        return float(self.pairwise(p, q)[0, 0])

    def log_map(self, x, y):
        raise CapabilityError("mesh oracle has no tangent vectors")

    def exp_map(self, x, v):
        raise CapabilityError("mesh oracle has no tangent vectors")

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "vertices": self.vertices.tolist(),
            "edges": [[i, j, w] for i, j, w in self.edges],
            "n": self.dimension,
        }


Manifold = FlatTorus | Sphere | MeshGraph


@dataclass(frozen=True)
class GeometryBounds:
    """The a-priori class bounds: ``diam <= lam``, ``inj >= 1/lam``,
    ``|Sec| <= lam^2``, together with the measurement-ball radius ``R``."""

    lam: float
    R: float
    n: int

    def __post_init__(self):
        if not self.lam >= 1:
            raise InputError(f"lambda must be >= 1, got {self.lam}")
        if not self.R > 1.0 / self.lam:
            raise InputError(f"R must exceed 1/lambda = {1.0 / self.lam}, got {self.R}")
        if int(self.n) != self.n or self.n < 2:
            raise InputError(f"dimension must be an integer >= 2, got {self.n}")

    def admits(self, spec: Manifold, tol: float = 1e-12) -> bool:
        """Whether ``spec`` lies in the geometry class bounded by ``lam``."""
        return (
            spec.dimension == self.n
            and spec.diameter <= self.lam * (1 + tol)
            and spec.injectivity_radius * (1 + tol) >= 1.0 / self.lam
            and spec.max_abs_curvature <= self.lam**2 * (1 + tol)
        )

    def to_json(self) -> dict:
        return {"lambda": self.lam, "R": self.R, "n": self.n}

    @classmethod
    def from_json(cls, doc: dict) -> "GeometryBounds":
        return cls(lam=float(doc["lambda"]), R=float(doc["R"]), n=int(doc["n"]))


def manifold_from_json(doc: dict | str) -> Manifold:
    """Build a manifold from its JSON description."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    kind = doc.get("kind")
    if kind == "flat_torus":
        return FlatTorus(doc["basis"])
    if kind == "sphere":
        return Sphere(float(doc["radius"]), int(doc.get("n", 2)))
    if kind == "mesh":
        return MeshGraph(doc["vertices"], doc["edges"], int(doc.get("n", 2)))
    raise InputError(f"unknown manifold kind {kind!r}")


def geodesic_distance(spec: Manifold, p, q) -> float:
    """Exact geodesic distance between two points of ``spec``."""
    return spec.distance(p, q)




# -- nets -------------------------------------------------------------------


@dataclass(frozen=True)
class Region:
    """A sampling region: the whole manifold, a closed ball, the complement of
    an open ball, or a closed annulus ``inner_radius <= d(center, .) <= radius``."""

    kind: str = "whole"
    center: np.ndarray | None = field(default=None, compare=False)
    radius: float = 0.0
    inner_radius: float = 0.0

    def __post_init__(self):
        if self.kind not in ("whole", "ball", "complement", "annulus"):
            raise InputError(f"unknown region kind {self.kind!r}")
        if self.kind != "whole" and (self.center is None or not self.radius > 0):
            raise InputError("ball-type regions need a center and a positive radius")
        if self.kind == "annulus" and not 0 <= self.inner_radius < self.radius:
            raise InputError("annulus needs 0 <= inner_radius < radius")

    def contains(self, spec: Manifold, pts: np.ndarray) -> np.ndarray:
        if self.kind == "whole":
            return np.ones(len(pts), dtype=bool)
        d = spec.pairwise(np.atleast_2d(self.center), pts)[0]
        if self.kind == "ball":
            return d <= self.radius
        if self.kind == "complement":
            return d >= self.radius
        return (d >= self.inner_radius) & (d <= self.radius)

    def volume(self, spec: Manifold) -> float:
        if self.kind == "whole":
            return spec.volume
        ball = spec.ball_volume(self.radius)
        if self.kind == "ball":
            return ball
        if self.kind == "complement":
            return max(spec.volume - ball, 0.0)
        return ball - spec.ball_volume(self.inner_radius)


def uniform_in_ball(spec, rng, center, radius, m) -> np.ndarray:
    """``m`` points uniformly distributed (w.r.t. volume) in a geodesic ball."""
    center = np.atleast_2d(np.asarray(center, dtype=float))
    n = spec.dimension
    if isinstance(spec, FlatTorus):
        dirs = rng.standard_normal((m, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        rad = radius * rng.random(m) ** (1.0 / n)
        return spec.exp_map(center, dirs * rad[:, None])
    if isinstance(spec, Sphere):
        out = []
        need = m
        r = spec.radius
        while need > 0:
            k = max(2 * need, 16)
            rad = radius * rng.random(k) ** (1.0 / n)
            accept = rng.random(k) < np.where(
                rad > 0, (np.sin(rad / r) / (rad / r + 1e-300)) ** (n - 1), 1.0
            )
            rad = rad[accept][:need]
            g = rng.standard_normal((len(rad), n + 1))
            cx = center[0] / r
            g -= (g @ cx)[:, None] * cx[None, :]
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            out.append(spec.exp_map(center, g * rad[:, None]))
            need -= len(rad)
        return np.concatenate(out)[:m]
    raise CapabilityError("uniform ball sampling needs a torus or sphere")


def sample_region(spec, rng, region: Region, m: int) -> np.ndarray:
    """``m`` uniform random points of ``region`` (rejection for complements and
    annuli)."""
    if region.kind == "whole":
        return spec.random_points(rng, m)
    out, need = [], m
    while need > 0:
        if region.kind == "complement":
            pts = spec.random_points(rng, max(2 * need, 64))
        else:
            pts = uniform_in_ball(spec, rng, region.center, region.radius, max(2 * need, 64))
        pts = pts[region.contains(spec, pts)][:need]
        out.append(pts)
        need -= len(pts)
    return np.concatenate(out)[:m]


def _tangent_frame(spec, center: np.ndarray) -> np.ndarray:
    """Orthonormal basis (rows, ambient coordinates) of the tangent space."""
    if isinstance(spec, FlatTorus):
        return np.eye(spec.dimension)
    c = center / spec.radius
    basis = np.linalg.svd(np.eye(len(c)) - np.outer(c, c))[0][:, : spec.dimension]
    return basis.T


def _ring_layout(spec, r_lo: float, r_hi: float, step: float):
    """Ring radii and point counts of a polar net of the annulus [r_lo, r_hi].

    A point at polar radius ``rho`` lies within ``step / 2`` of the nearest ring
    (radially) and the ring points are at most ``step`` apart along the ring, so
    every point of the annulus is within ``step`` of the net.
    """
    # pull the end rings inside by a relative 1e-12 so the points are in the region
    r_lo, r_hi = r_lo * (1 + 1e-12), r_hi * (1 - 1e-12)
    k = max(1, int(math.ceil((r_hi - r_lo) / step)))
    radii = np.linspace(r_lo, r_hi, k + 1)
    if isinstance(spec, Sphere):
        circ = 2 * math.pi * spec.radius * np.sin(radii / spec.radius)
    else:
        circ = 2 * math.pi * radii
    counts = np.maximum(1, np.ceil(np.abs(circ) / step - 1e-12)).astype(np.int64)
    return radii, counts


def _ring_points(spec, center, radii, counts, rng) -> np.ndarray:
    frame = _tangent_frame(spec, center)
    phase = rng.random(len(radii)) * 2 * math.pi
    rho = np.repeat(radii, counts)
    offsets = np.concatenate([np.arange(c) / c for c in counts]) * 2 * math.pi
    ang = np.repeat(phase, counts) + offsets
    dirs = np.cos(ang)[:, None] * frame[0] + np.sin(ang)[:, None] * frame[1]
    return spec.exp_map(np.atleast_2d(center), dirs * rho[:, None])


def _torus_grid(spec: FlatTorus, epsilon: float, rng, jitter: float = 0.25) -> np.ndarray:
    """Jittered fractional grid whose covering radius is at most ``epsilon``.

    Any point is within half a cell diagonal of a node and every sample is within
    ``jitter`` cells of its node per coordinate, so the covering radius is at most
    ``||B|| sqrt(n) (1/2 + jitter) / N``.
    """
    n = spec.dimension
    bnorm = float(np.linalg.norm(spec.basis, 2))
    N = int(math.ceil(bnorm * math.sqrt(n) * (0.5 + jitter) / epsilon * (1 + 1e-12)))
    axes = [np.arange(N)] * n
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n).astype(float)
    pts = (nodes + 0.5 + rng.uniform(-jitter, jitter, nodes.shape)) / N
    return spec.wrap(pts)


def _grid_count(spec: FlatTorus, epsilon: float, jitter: float = 0.25) -> int:
    n = spec.dimension
    bnorm = float(np.linalg.norm(spec.basis, 2))
    return int(math.ceil(bnorm * math.sqrt(n) * (0.5 + jitter) / epsilon * (1 + 1e-12))) ** n


def sample_net(
    spec: Manifold,
    region: Region | str,
    epsilon: float,
    seed: int,
    *,
    cap: int = DEFAULT_NET_CAP,
    seed_points: np.ndarray | None = None,
) -> np.ndarray:
    """An ``epsilon``-net of ``region`` with a provable covering radius.

    Two-dimensional balls, annuli and spheres use polar rings around the region
    center (random phase per ring); whole tori use a jittered lattice grid.
    Complements combine the whole-manifold net with rings just outside the ball.
    Cases without a structured construction (spheres of dimension > 2, tori of
    dimension > 2 restricted to balls) fall back to greedy thinning of random
    points, verified by probing.  ``seed_points`` come first in the output and
    do not count toward coverage.
    """
    if isinstance(region, str):
        region = Region(region)
    if not epsilon > 0:
        raise InputError("epsilon must be positive")
    if isinstance(spec, MeshGraph):
        return _mesh_net(spec, epsilon, seed)
    if region.kind != "whole" and region.radius >= spec.injectivity_radius:
        raise InputError("ball radius must be below the injectivity radius")
    vol = region.volume(spec)
    lower = vol / spec.ball_volume(min(epsilon, spec.injectivity_radius))
    if lower > cap:
        raise ResourceError(
            f"an {epsilon:g}-net needs at least {lower:.3g} points, above the cap {cap}"
        )
    rng = np.random.default_rng(seed)
    step = epsilon * (1 - 1e-9)
    parts = []
    if seed_points is not None:
        parts.append(spec.validate_points(seed_points))

    def rings(r_lo, r_hi):
        radii, counts = _ring_layout(spec, r_lo, r_hi, step)
        if counts.sum() > cap:
            raise ResourceError(f"net of {int(counts.sum())} points exceeds the cap {cap}")
        center = region.center if region.center is not None else _random_pole(spec, rng)
        return _ring_points(spec, np.asarray(center, dtype=float).reshape(-1), radii, counts, rng)

    planar = spec.dimension == 2
    if region.kind == "whole":
        if isinstance(spec, FlatTorus):
            if _grid_count(spec, step) > cap:
                raise ResourceError(f"net of {_grid_count(spec, step)} points exceeds the cap {cap}")
            parts.append(_torus_grid(spec, step, rng))
        elif planar:
            parts.append(rings(0.0, spec.diameter))
        else:
            parts.append(_thinned_net(spec, region, epsilon, rng, cap))
    elif region.kind in ("ball", "annulus") and planar:
        parts.append(rings(region.inner_radius if region.kind == "annulus" else 0.0, region.radius))
    elif region.kind == "complement" and planar:
        whole = sample_net(spec, "whole", epsilon, int(rng.integers(2**63)), cap=cap)
        parts.append(whole[region.contains(spec, whole)])
        outer = min(region.radius + epsilon, spec.diameter)
        if outer > region.radius:
            parts.append(rings(region.radius, outer))
    else:
        parts.append(_thinned_net(spec, region, epsilon, rng, cap))
    out = np.concatenate(parts) if parts else np.empty((0, spec.ambient_dimension))
    if len(out) > cap:
        raise ResourceError(f"net of {len(out)} points exceeds the cap {cap}")
    return out


def _random_pole(spec, rng) -> np.ndarray:
    return spec.random_points(rng, 1)[0]


def _thinned_net(spec, region: Region, epsilon: float, rng, cap: int, probes: int = 20000):
    """Greedy thinning of dense random samples, patched until ``probes`` random
    region points are all covered."""
    vol = region.volume(spec)
    m = int(min(cap * 4, max(1000, 8 * vol / spec.ball_volume(epsilon / 2))))
    kept = _greedy_separated(spec, sample_region(spec, rng, region, m), epsilon / 2)
    while True:
        probe = sample_region(spec, rng, region, probes)
        tree = cKDTree(_embed(spec, kept))
        d, _ = tree.query(_embed(spec, probe))
        missing = probe[d > _chord(spec, epsilon)]
        if len(missing) == 0:
            return kept
        kept = np.concatenate([kept, _greedy_separated(spec, missing, epsilon / 2)])
        if len(kept) > cap:
            raise ResourceError(f"net exceeded the cardinality cap {cap}")


def _embed(spec, pts):
    return spec.to_ambient(pts) if isinstance(spec, FlatTorus) else pts


def _chord(spec, dist: float) -> float:
    """Largest ambient gap guaranteeing geodesic distance below ``dist``.  Only
    used for the thinning fallback, where the torus images are not replicated,
    so it is conservative near the fundamental-domain boundary."""
    if isinstance(spec, Sphere):
        return 2 * spec.radius * math.sin(min(dist / (2 * spec.radius), math.pi / 2))
    return dist


def _greedy_separated(spec, cand: np.ndarray, sep: float) -> np.ndarray:
    """Greedy maximal subset of ``cand`` with pairwise distance >= ``sep``."""
    if len(cand) == 0:
        return cand
    tree = cKDTree(_embed(spec, cand))
    # Euclidean chords never exceed geodesic distance, so this neighbour list
    # is a superset of the geodesic one.
    nbrs = tree.query_ball_point(_embed(spec, cand), sep)
    alive = np.ones(len(cand), dtype=bool)
    keep = []
    for i in range(len(cand)):
        if alive[i]:
            keep.append(i)
            alive[nbrs[i]] = False
    return cand[keep]


def _mesh_net(spec: MeshGraph, epsilon: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(spec.vertices))
    keep = []
    covered = np.zeros(len(spec.vertices), dtype=bool)
    for v in order:
        if not covered[v]:
            keep.append(v)
            covered |= spec._dist[v] < epsilon
    return np.array(sorted(keep))


def covering_radius_estimate(spec, net: np.ndarray, probes: np.ndarray) -> float:
    """Largest distance from a probe point to the net (exact metric)."""
    return float(nearest_in_net(spec, net, probes)[1].max())


def nearest_in_net(spec, net: np.ndarray, pts: np.ndarray, block: int = 2000):
    """Index of and exact distance to the nearest net point for each of ``pts``."""
    best = np.full(len(pts), np.inf)
    arg = np.zeros(len(pts), dtype=int)
    for a in range(0, len(net), block):
        for b in range(0, len(pts), block):
            d = spec.pairwise(pts[b : b + block], net[a : a + block])
            j = d.argmin(axis=1)
            v = d[np.arange(len(j)), j]
            sl = slice(b, b + block)
            better = v < best[sl]
            best[sl][better] = v[better]
            arg[sl][better] = j[better] + a
    return arg, best
