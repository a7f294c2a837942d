"""Noisy distance-vector bundles and the surrogate distances on ``Y``.

A bundle holds ``I`` vectors of length ``J + 1``: entry ``(i, j)`` is a noisy
distance from a hidden point ``x_i`` to the landmark ``y_j``.  Values live in a
*table* which may be dense (an array) or lazy (computed on demand from the
hidden points with counter-based noise, so that large synthetic experiments
never materialize ``I x J`` numbers).  Reconstruction code only ever sees a
:class:`DataView`, which exposes the values, the anchor index and the
parameters and nothing else.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .errors import CapabilityError, InputError
from .manifolds import (
    FlatTorus,
    GeometryBounds,
    Manifold,
    Region,
    manifold_from_json,
    nearest_in_net,
    sample_net,
)

DEFAULT_CONSTANTS: dict[str, float] = {
    # Scale of the epsilon_2-net and the edge threshold: eps2 = C0 * eps1^(1/2).
    "C0": 1.0,
    # Step-length slack: s must exceed 2 * C18 * eps1^(1/2).
    "C18": 0.5,
    # Radius of the candidate ball around the base landmark (None: R/8).
    "c3": None,
    # Half-width of the annuli as a multiple of eps1.
    "annulus_width": 1.0,
    # Tuples tried before a frame error.
    "tuple_budget": 500,
}


@dataclass(frozen=True)
class ReconstructionParams:
    """All tunable quantities of the reconstruction.

    ``work_radius`` is the radius of the ball around the anchor actually used
    by the local reconstruction (at most ``bounds.R``); the annulus radii
    ``R/8, R/4, 3R/4, R`` and the ``rho0`` bound refer to it.
    """

    bounds: GeometryBounds
    eps0: float
    eps1: float
    sigma: float = 0.0
    s_exponent: float = 3 / 8
    rho_exponent: float = 3 / 8
    rho0: float | None = None
    c1_threshold: float = 0.02
    C17: float = 10.0
    neighborhood_exponent: float = 1 / 4
    constants: dict = field(default_factory=dict)
    work_radius: float | None = None

    def __post_init__(self):
        merged = dict(DEFAULT_CONSTANTS)
        unknown = set(self.constants) - set(DEFAULT_CONSTANTS)
        if unknown:
            raise InputError(f"unknown constants {sorted(unknown)}")
        merged.update(self.constants)
        object.__setattr__(self, "constants", merged)
        if self.work_radius is None:
            object.__setattr__(self, "work_radius", float(self.bounds.R))
        if not 0 < self.work_radius <= self.bounds.R:
            raise InputError("work_radius must lie in (0, R]")
        if not 0 < self.eps0 <= self.eps1:
            raise InputError(f"need 0 < eps0 <= eps1, got eps0={self.eps0}, eps1={self.eps1}")
        if self.sigma < 0:
            raise InputError("sigma must be nonnegative")
        cap = min(0.25, self.work_radius / 16)
        if self.rho0 is None:
            object.__setattr__(self, "rho0", 0.9 * cap)
        if not 0 < self.rho0 < cap:
            raise InputError(f"rho0 must lie in (0, {cap:g}), got {self.rho0}")
        if not self.s > 2 * self.constants["C18"] * math.sqrt(self.eps1):
            raise InputError(
                f"step s = {self.s:g} must exceed 2*C18*eps1^(1/2) = "
                f"{2 * self.constants['C18'] * math.sqrt(self.eps1):g}"
            )
        if not self.c1_threshold > 0:
            raise InputError("c1_threshold must be positive")

    # -- derived quantities ---------------------------------------------
    @property
    def R(self) -> float:
        return self.work_radius

    @property
    def s(self) -> float:
        return self.eps1**self.s_exponent

    @property
    def rho(self) -> float:
        return self.eps1**self.rho_exponent

    @property
    def step_radius(self) -> float:
        """Sup-norm radius in which step elements are searched."""
        return self.eps1**self.neighborhood_exponent

    @property
    def eps2(self) -> float:
        return self.constants["C0"] * math.sqrt(self.eps1)

    @property
    def hop_cap(self) -> int:
        return int(math.ceil(1 + self.bounds.lam / self.rho))

    @property
    def edge_threshold(self) -> float:
        return self.rho + self.eps2 + 2 * self.eps1

    @property
    def annulus_width(self) -> float:
        return self.constants["annulus_width"] * self.eps1

    @property
    def c3(self) -> float:
        c3 = self.constants["c3"]
        return self.work_radius / 8 if c3 is None else float(c3)

    def with_eps(self, eps1: float, eps0: float | None = None) -> "ReconstructionParams":
        return replace(self, eps1=eps1, eps0=eps1 if eps0 is None else eps0)

    def to_json(self) -> dict:
        return {
            "bounds": self.bounds.to_json(),
            "eps0": self.eps0,
            "eps1": self.eps1,
            "sigma": self.sigma,
            "s_exponent": self.s_exponent,
            "rho_exponent": self.rho_exponent,
            "rho0": self.rho0,
            "c1_threshold": self.c1_threshold,
            "C17": self.C17,
            "neighborhood_exponent": self.neighborhood_exponent,
            "constants": dict(self.constants),
            "work_radius": self.work_radius,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ReconstructionParams":
        doc = dict(doc)
        doc["bounds"] = GeometryBounds.from_json(doc["bounds"])
        known = {f for f in cls.__dataclass_fields__}
        bad = set(doc) - known
        if bad:
            raise InputError(f"unknown parameter fields {sorted(bad)}")
        return cls(**doc)


# -- counter-based noise ------------------------------------------------------

def _splitmix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = x + np.uint64(0x9E3779B97F4A7C15)
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return x ^ (x >> np.uint64(31))


def entry_uniforms(seed: int, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Deterministic uniforms in ``[0, 1)`` indexed by ``(seed, row, col)``."""
    rows = np.asarray(rows, dtype=np.uint64)
    cols = np.asarray(cols, dtype=np.uint64)
    with np.errstate(over="ignore"):
        key = _splitmix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ _splitmix(rows[:, None] * np.uint64(0x100000001B3)))
        h = _splitmix(key ^ cols[None, :])
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


@dataclass(frozen=True)
class NoiseModel:
    """``none``, ``uniform`` (``e ~ U(-bound, bound)``) or ``adversarial_extremes``
    (``e = +-(bound - ulp)`` with a random sign, the ulp taken at the scale of
    the data).  All models guarantee ``|value - distance| < bound`` in floating
    point and clamp values at 0."""

    kind: str = "none"
    bound: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "uniform", "adversarial_extremes"):
            raise InputError(f"unknown noise model {self.kind!r}")
        if self.kind != "none" and not self.bound > 0:
            raise InputError("noise bound must be positive")

    def apply(self, dist: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        if self.kind == "none":
            return dist.copy()
        u = entry_uniforms(self.seed, rows, cols)
        # a few ulps at the data scale keep |value - distance| below the bound
        # even after the rounding of later sums such as r_i(y_j) + r_i(y_k)
        limit = self.bound - 4 * np.spacing(dist + self.bound)
        if self.kind == "uniform":
            e = np.clip(self.bound * (2 * u - 1), -limit, limit)
        else:
            e = np.where(u < 0.5, -limit, limit)
        out = np.maximum(dist + e, 0.0)
        for _ in range(8):
            bad = np.abs(out - dist) > limit
            if not bad.any():
                break
            out[bad] = np.nextafter(out[bad], dist[bad])
        return out

    def to_json(self) -> dict:
        return {"kind": self.kind, "bound": self.bound, "seed": self.seed}


# -- value tables ---------------------------------------------------------------


class DenseTable:
    """Vectors stored as an ``I x (J+1)`` array."""

    def __init__(self, values):
        values = np.array(values, dtype=float)
        if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] == 0:
            raise InputError("distance vectors must form a nonempty 2-D array")
        if not np.all(np.isfinite(values)):
            raise InputError("distance vectors must be finite")
        values.setflags(write=False)
        self._values = values

    @property
    def shape(self):
        return self._values.shape

    def block(self, rows, cols) -> np.ndarray:
        return self._values[np.ix_(np.atleast_1d(rows), np.atleast_1d(cols))]

    def rows(self, rows) -> np.ndarray:
        return self._values[np.atleast_1d(rows)]

    def column(self, j: int) -> np.ndarray:
        return self._values[:, j]

    def dense(self) -> np.ndarray:
        return self._values


class OracleTable:
    """Vectors computed on demand as ``d(x_i, y_j) + e_ij``.

    Entries are a pure function of ``(points, noise seed, i, j)``, so any
    access pattern yields the same numbers as a materialized table.  Columns
    are cached because the reconstruction reads a few columns many times.
    """

    def __init__(self, spec: Manifold, x_points, y_points, noise: NoiseModel, cache: int = 256):
        self.spec = spec
        self.x_points = spec.validate_points(x_points)
        self.y_points = spec.validate_points(y_points)
        self.noise = noise
        self._cache: dict[int, np.ndarray] = {}
        self._cache_size = cache

    @property
    def shape(self):
        return (len(self.x_points), len(self.y_points))

    def block(self, rows, cols) -> np.ndarray:
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        cols = np.atleast_1d(np.asarray(cols, dtype=np.int64))
        dist = self.spec.pairwise(self.x_points[rows], self.y_points[cols])
        return self.noise.apply(dist, rows, cols)

    def rows(self, rows) -> np.ndarray:
        return self.block(rows, np.arange(self.shape[1]))

    def column(self, j: int) -> np.ndarray:
        j = int(j)
        col = self._cache.get(j)
        if col is None:
            col = self.block(np.arange(self.shape[0]), [j])[:, 0]
            col.setflags(write=False)
            if len(self._cache) >= self._cache_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[j] = col
        return col

    def dense(self) -> np.ndarray:
        return self.rows(np.arange(self.shape[0]))


# -- bundle types -------------------------------------------------------------


@dataclass(frozen=True)
class NetY:
    """Landmark net ``Y`` with anchor ``y0`` close to the ball center ``x0``.

    ``points`` and ``ball_center`` are ground truth and may be ``None`` for
    measured data; reconstruction never reads them."""

    size: int
    anchor_index: int
    ball_radius: float
    points: np.ndarray | None = field(default=None, compare=False)
    ball_center: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if not 0 <= self.anchor_index < self.size:
            raise InputError("anchor index outside the landmark net")
        if self.points is not None and len(self.points) != self.size:
            raise InputError("landmark count does not match the points")


@dataclass(frozen=True)
class Provenance:
    """Hidden truth of a synthetic bundle."""

    spec: Manifold
    x_points: np.ndarray
    y_points: np.ndarray
    noise: NoiseModel
    x_epsilon: float

    def true_distances(self, rows=None, cols=None) -> np.ndarray:
        xs = self.x_points if rows is None else self.x_points[np.atleast_1d(rows)]
        ys = self.y_points if cols is None else self.y_points[np.atleast_1d(cols)]
        return self.spec.pairwise(xs, ys)


class DataBundle:
    """Distance vectors, landmark net and parameters, plus optional hidden truth."""

    def __init__(self, net_y: NetY, table, params: ReconstructionParams,
                 provenance: Provenance | None = None):
        if table.shape[0] == 0:
            raise InputError("a bundle needs at least one vector")
        if table.shape[1] != net_y.size:
            raise InputError(
                f"vectors have {table.shape[1]} entries but the net has {net_y.size} points"
            )
        self.net_y = net_y
        self.table = table
        self.params = params
        self._provenance = provenance

    @property
    def n_vectors(self) -> int:
        return self.table.shape[0]

    @property
    def n_landmarks(self) -> int:
        return self.table.shape[1]

    @property
    def has_provenance(self) -> bool:
        return self._provenance is not None

    @property
    def provenance(self) -> Provenance:
        if self._provenance is None:
            raise CapabilityError("bundle has no provenance (measured or stripped data)")
        return self._provenance

    def view(self) -> "DataView":
        """The data-only face of the bundle handed to reconstruction code."""
        return DataView(self.table, self.net_y.anchor_index, self.params)

    def stripped(self) -> "DataBundle":
        """Copy with materialized values and no ground truth at all."""
        net = NetY(self.net_y.size, self.net_y.anchor_index, self.net_y.ball_radius)
        return DataBundle(net, DenseTable(self.table.dense()), self.params, None)

    def vectors(self) -> np.ndarray:
        return self.table.dense()

    # -- persistence -------------------------------------------------------
    def to_json(self, include_provenance: bool = True) -> str:
        net = {
            "size": self.net_y.size,
            "anchor_index": self.net_y.anchor_index,
            "ball_radius": self.net_y.ball_radius,
            "points": None if self.net_y.points is None else self.net_y.points,
            "ball_center": self.net_y.ball_center,
        }
        doc: dict[str, Any] = {
            "net_y": net,
            "vectors": None if self._stored_lazily(include_provenance) else self.table.dense(),
            "params": self.params.to_json(),
            "provenance": None,
        }
        if include_provenance and self._provenance is not None:
            p = self._provenance
            doc["provenance"] = {
                "spec": p.spec.to_json(),
                "x_points": p.x_points,
                "y_points": p.y_points,
                "noise": p.noise.to_json(),
                "x_epsilon": p.x_epsilon,
            }
        return dumps17(doc)

    def _stored_lazily(self, include_provenance: bool) -> bool:
        # synthetic values are a pure function of the hidden points and the
        # noise seed, so large oracle tables are stored as their recipe
        return (include_provenance and isinstance(self.table, OracleTable)
                and self.table.shape[0] * self.table.shape[1] > 5_000_000)

    @classmethod
    def from_json(cls, text: str) -> "DataBundle":
        doc = json.loads(text)
        try:
            params = ReconstructionParams.from_json(doc["params"])
            n = doc["net_y"]
            pts = None if n.get("points") is None else np.asarray(n["points"], dtype=float)
            center = None if n.get("ball_center") is None else np.asarray(n["ball_center"], dtype=float)
            net = NetY(int(n["size"]), int(n["anchor_index"]), float(n["ball_radius"]), pts, center)
            table = None if doc.get("vectors") is None else DenseTable(doc["vectors"])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"malformed bundle document: {exc}") from exc
        prov = None
        if doc.get("provenance"):
            p = doc["provenance"]
            spec = manifold_from_json(p["spec"])
            nm = p["noise"]
            prov = Provenance(
                spec,
                spec.validate_points(p["x_points"]),
                spec.validate_points(p["y_points"]),
                NoiseModel(nm["kind"], float(nm["bound"]), int(nm["seed"])),
                float(p["x_epsilon"]),
            )
        if table is None:
            if prov is None:
                raise InputError("bundle document has neither vectors nor provenance")
            table = OracleTable(prov.spec, prov.x_points, prov.y_points, prov.noise)
        return cls(net, table, params, prov)


class DataView:
    """Read-only, provenance-free access to a bundle's values."""

    def __init__(self, table, anchor_index: int, params: ReconstructionParams):
        self._table = table
        self.anchor_index = int(anchor_index)
        self.params = params

    @property
    def n_vectors(self) -> int:
        return self._table.shape[0]

    @property
    def n_landmarks(self) -> int:
        return self._table.shape[1]

    def block(self, rows, cols) -> np.ndarray:
        return self._table.block(rows, cols)

    def rows(self, rows) -> np.ndarray:
        return self._table.rows(rows)

    def column(self, j: int) -> np.ndarray:
        return self._table.column(j)

    def value(self, i: int, j: int) -> float:
        return float(self._table.block([i], [j])[0, 0])

    def sup_from(self, i0: int, rows) -> np.ndarray:
        """Sup-norm distances between vector ``i0`` and each vector in ``rows``."""
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        ref = self._table.rows([i0])[0]
        out = np.empty(len(rows))
        step = max(1, 4_000_000 // max(1, self.n_landmarks))
        for a in range(0, len(rows), step):
            blk = self._table.rows(rows[a : a + step])
            out[a : a + step] = np.abs(blk - ref).max(axis=1)
        return out


def as_view(data) -> DataView:
    if isinstance(data, DataView):
        return data
    if isinstance(data, DataBundle):
        return data.view()
    raise InputError("expected a bundle or a data view")


# -- JSON with 17 significant digits ------------------------------------------------


def _fmt(x: float) -> str:
    if not math.isfinite(x):
        raise InputError("cannot serialize non-finite numbers")
    return format(x, ".17g")


def dumps17(obj) -> str:
    """JSON text in which every float carries 17 significant digits."""
    if obj is None or isinstance(obj, (bool, str)):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)) and not isinstance(obj, bool):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(float(obj))
    if isinstance(obj, np.ndarray):
        if obj.ndim == 1:
            return "[" + ",".join(_fmt(float(v)) if obj.dtype.kind == "f" else str(int(v)) for v in obj) + "]"
        return "[" + ",".join(dumps17(row) for row in obj) + "]"
    if isinstance(obj, dict):
        return "{" + ",".join(json.dumps(str(k)) + ":" + dumps17(v) for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(dumps17(v) for v in obj) + "]"
    raise InputError(f"cannot serialize {type(obj).__name__}")


# -- operations ------------------------------------------------------------------


def sup_distance(v1, v2) -> float:
    """Sup-norm distance between two distance vectors."""
    a = np.asarray(v1, dtype=float).ravel()
    b = np.asarray(v2, dtype=float).ravel()
    if a.shape != b.shape:
        raise InputError(f"vector lengths differ: {a.size} vs {b.size}")
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def synthesize_bundle(
    spec: Manifold,
    params: ReconstructionParams,
    noise: NoiseModel | str = "none",
    seed: int = 0,
    *,
    ball_center=None,
    y_radius: float | None = None,
    y_region: Region | None = None,
    x_region: Region | None = None,
    x_epsilon: float | None = None,
    extra_x=None,
    lazy: bool | None = None,
    cap: int = 1_000_000,
) -> DataBundle:
    """Sample nets and noisy distance vectors on a model manifold.

    ``Y`` is an ``eps0``-net of ``B(x0, y_radius)`` (default ``bounds.R``) with
    the anchor ``y0 = x0`` placed first.  ``X`` is an ``x_epsilon``-net of
    ``x_region`` (default: the whole manifold, resolution ``eps0``) preceded by
    copies of the ``Y`` points, which makes ``D^a`` obey its upper bound at any
    resolution.  ``y_region`` and ``x_region`` allow windowed experiments that
    only sample the parts of the nets a computation reads.

    Noise: a :class:`NoiseModel` or one of ``"none"``, ``"uniform"``,
    ``"adversarial_extremes"`` (bound ``eps1``).  Condition (a1) always holds;
    (a2) holds when the noise bound plus the covering radius of ``X`` is below
    ``eps1``.
    """
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**62, size=4)
    if isinstance(noise, str):
        noise = NoiseModel(noise, 0.0 if noise == "none" else params.eps1, int(seeds[0]))
    elif noise.kind != "none" and noise.bound > params.eps1:
        raise InputError("noise bound must not exceed eps1")
    if ball_center is None:
        ball_center = spec.random_points(rng, 1)[0]
    x0 = spec.validate_points(ball_center)[0]
    y_radius = params.bounds.R if y_radius is None else float(y_radius)
    if y_region is None:
        y_region = Region("ball", x0, y_radius)
    y_pts = sample_net(spec, y_region, params.eps0, int(seeds[1]), cap=cap,
                       seed_points=x0[None, :])
    x_eps = params.eps0 if x_epsilon is None else float(x_epsilon)
    x_region = Region("whole") if x_region is None else x_region
    seeds_x = [y_pts] if extra_x is None else [y_pts, spec.validate_points(extra_x)]
    x_pts = sample_net(spec, x_region, x_eps, int(seeds[2]), cap=cap,
                       seed_points=np.concatenate(seeds_x))
    return bundle_from_points(spec, params, x_pts, y_pts, noise, ball_center=x0,
                              y_radius=y_radius, x_epsilon=x_eps, lazy=lazy)


def bundle_from_points(spec: Manifold, params: ReconstructionParams, x_points, y_points,
                       noise: NoiseModel, *, ball_center, y_radius: float,
                       anchor_index: int = 0, x_epsilon: float | None = None,
                       lazy: bool | None = None) -> DataBundle:
    """Bundle over explicit hidden point sets (used for windowed experiments)."""
    x_pts = spec.validate_points(x_points)
    y_pts = spec.validate_points(y_points)
    x0 = spec.validate_points(ball_center)[0]
    if lazy is None:
        lazy = len(x_pts) * len(y_pts) > 5_000_000
    table = OracleTable(spec, x_pts, y_pts, noise)
    if not lazy:
        table = DenseTable(table.dense())
    net = NetY(len(y_pts), anchor_index, float(y_radius), y_pts, x0)
    x_eps = params.eps0 if x_epsilon is None else float(x_epsilon)
    prov = Provenance(spec, x_pts, y_pts, noise, x_eps)
    return DataBundle(net, table, params, prov)


# -- surrogate distances ---------------------------------------------------------


class SurrogateYDistances:
    """Lazy evaluation of ``D^a(y_j, y_k) = min_i (r_i(y_j) + r_i(y_k))``.

    Rows are computed exactly with data-only pruning: entries are nonnegative,
    so a vector whose value at ``y_j`` already exceeds a known upper bound for
    ``D^a(y_j, y_k)`` cannot attain the minimum.  Upper bounds come from the
    vectors closest to ``y_j`` in value.  Computed rows are cached.
    """

    def __init__(self, data, *, seed_rows: int = 8, block: int = 2_000_000):
        self.data = as_view(data)
        self._rows: dict[int, np.ndarray] = {}
        self._seed_rows = seed_rows
        self._block = block

    @property
    def size(self) -> int:
        return self.data.n_landmarks

    def row(self, j: int, cols=None) -> np.ndarray:
        """``D^a(y_j, y_k)`` for ``k`` in ``cols`` (default: all landmarks)."""
        j = int(j)
        full = self._rows.get(j)
        if full is not None:
            return full if cols is None else full[np.asarray(cols)]
        if cols is None:
            vals = self._compute(j, np.arange(self.size))
            vals.setflags(write=False)
            self._rows[j] = vals
            return vals
        return self._compute(j, np.atleast_1d(np.asarray(cols, dtype=np.int64)))

    def pair(self, j: int, k: int) -> float:
        return float(self.row(j, [k])[0])

    def block(self, rows, cols) -> np.ndarray:
        return np.stack([self.row(j, cols) for j in np.atleast_1d(rows)])

    def _compute(self, j: int, cols: np.ndarray) -> np.ndarray:
        col_j = self.data.column(j)
        order = np.argsort(col_j, kind="stable")
        sorted_vals = col_j[order]
        seed = order[: self._seed_rows]
        upper = (col_j[seed][:, None] + self.data.block(seed, cols)).min(axis=0)
        out = np.empty(len(cols))
        # process targets in order of their upper bound, growing the candidate set
        by_bound = np.argsort(upper, kind="stable")
        counts = np.searchsorted(sorted_vals, upper[by_bound], side="left")
        start = 0
        while start < len(by_bound):
            # largest chunk whose candidate block stays within the budget
            size = counts[start:] * np.arange(1, len(by_bound) - start + 1)
            width = max(1, int(np.searchsorted(size, self._block, side="right")))
            chunk = by_bound[start : start + width]
            n_cand = int(counts[start + len(chunk) - 1])
            best = upper[chunk].copy()
            if n_cand:
                cand = order[:n_cand]
                vals = col_j[cand][:, None] + self.data.block(cand, cols[chunk])
                best = np.minimum(best, vals.min(axis=0))
            out[chunk] = best
            start += len(chunk)
        return out

    def matrix(self) -> np.ndarray:
        return np.stack([self.row(j) for j in range(self.size)])


def compute_DaY(bundle) -> np.ndarray:
    """Full symmetric matrix of surrogate distances on ``Y``."""
    view = as_view(bundle)
    vals = view.rows(np.arange(view.n_vectors)) if view.n_vectors * view.n_landmarks <= 50_000_000 else None
    if vals is not None:
        J = view.n_landmarks
        out = np.empty((J, J))
        step = max(1, 20_000_000 // max(1, view.n_vectors * J))
        for a in range(0, J, step):
            out[a : a + step] = (vals[:, a : a + step, None] + vals[:, None, :]).min(axis=0)
        return np.minimum(out, out.T)
    return SurrogateYDistances(view).matrix()


# -- validators -------------------------------------------------------------------


@dataclass
class ConditionReport:
    """Outcome of checking (a1)/(a2) against the hidden truth."""

    passed: bool
    eps1: float
    a1_max_error: float
    a1_violations: list
    a2_probes: int
    a2_max_error: float
    a2_failures: list

    @property
    def a1_margin(self) -> float:
        return self.eps1 - self.a1_max_error

    @property
    def a2_margin(self) -> float:
        return self.eps1 - self.a2_max_error


def check_a1_a2(bundle: DataBundle, probe_count: int, seed: int, *,
                rows=None, probe_region: Region | None = None,
                candidates: int = 16) -> ConditionReport:
    """Check (a1) vector by vector and (a2) on random probe points.

    (a1) compares each vector with the distance function of its own hidden
    point.  (a2) looks, for each probe ``z``, for a vector within ``eps1`` of
    ``d(z, .)`` in sup norm; vectors whose hidden points are nearest to ``z``
    are tried first and the full set only if those fail.  ``rows`` restricts
    (a1) to a subset for very large lazy bundles.
    """
    prov = bundle.provenance
    eps1 = bundle.params.eps1
    view = bundle.view()
    rows = np.arange(bundle.n_vectors) if rows is None else np.atleast_1d(rows)
    a1_viol, a1_max = [], 0.0
    step = max(1, 2_000_000 // bundle.n_landmarks)
    for a in range(0, len(rows), step):
        r = rows[a : a + step]
        err = np.abs(view.rows(r) - prov.true_distances(r))
        a1_max = max(a1_max, float(err.max()))
        bad_i, bad_j = np.nonzero(err >= eps1)
        for i, j in zip(bad_i[:100], bad_j[:100]):
            a1_viol.append({"vector": int(r[i]), "landmark": int(j), "error": float(err[i, j])})
    rng = np.random.default_rng(seed)
    spec = prov.spec
    region = probe_region or Region("whole")
    from .manifolds import sample_region

    probes = sample_region(spec, rng, region, probe_count)
    truth = spec.pairwise(probes, prov.y_points)
    a2_fail, a2_max = [], 0.0
    k = min(candidates, bundle.n_vectors)
    near = _k_nearest(spec, prov.x_points, probes, k)
    for z in range(len(probes)):
        errs = np.abs(view.rows(near[z]) - truth[z]).max(axis=1)
        best = float(errs.min())
        if best >= eps1:
            best = float(_sup_all(view, truth[z]).min())
        a2_max = max(a2_max, best)
        if best >= eps1:
            a2_fail.append({"probe": probes[z].tolist(), "best_sup_error": best})
    passed = not a1_viol and not a2_fail
    return ConditionReport(passed, eps1, a1_max, a1_viol, len(probes), a2_max, a2_fail)


def _sup_all(view: DataView, target: np.ndarray) -> np.ndarray:
    out = np.empty(view.n_vectors)
    step = max(1, 2_000_000 // view.n_landmarks)
    for a in range(0, view.n_vectors, step):
        r = np.arange(a, min(a + step, view.n_vectors))
        out[r] = np.abs(view.rows(r) - target).max(axis=1)
    return out


def _k_nearest(spec, pts: np.ndarray, queries: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` points of ``pts`` nearest to each query (exact)."""
    best_d = np.full((len(queries), k), np.inf)
    best_i = np.zeros((len(queries), k), dtype=np.int64)
    for a in range(0, len(pts), 4000):
        d = spec.pairwise(queries, pts[a : a + 4000])
        idx = np.arange(a, a + d.shape[1])
        alld = np.concatenate([best_d, d], axis=1)
        alli = np.concatenate([best_i, np.broadcast_to(idx, d.shape)], axis=1)
        sel = np.argsort(alld, axis=1, kind="stable")[:, :k]
        best_d = np.take_along_axis(alld, sel, axis=1)
        best_i = np.take_along_axis(alli, sel, axis=1)
    return best_i


def localization_ratios(bundle: DataBundle, rho0: float | None = None) -> np.ndarray:
    """``d(x_l, x_i) / (sup|r_l - r_i| + 3 eps1)^(1/2)`` for all vector pairs with
    sup distance below ``rho0`` (diagnostic of the localization property)."""
    prov = bundle.provenance
    rho0 = bundle.params.rho0 if rho0 is None else rho0
    vals = bundle.vectors()
    eps1 = bundle.params.eps1
    out = []
    for a in range(bundle.n_vectors):
        sup = np.abs(vals[a + 1 :] - vals[a]).max(axis=1)
        near = np.nonzero(sup < rho0)[0] + a + 1
        if len(near):
            d = prov.spec.pairwise(prov.x_points[a : a + 1], prov.x_points[near])[0]
            out.append(d / np.sqrt(np.abs(vals[near] - vals[a]).max(axis=1) + 3 * eps1))
    return np.concatenate(out) if out else np.empty(0)


def epsilon2_net_radius(bundle: DataBundle, probes: int, seed: int) -> float:
    """Largest distance from random probe points to the hidden ``X``."""
    prov = bundle.provenance
    rng = np.random.default_rng(seed)
    pts = prov.spec.random_points(rng, probes)
    return float(nearest_in_net(prov.spec, prov.x_points, pts)[1].max())
