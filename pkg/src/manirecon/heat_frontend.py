"""From heat kernel samples to distance vector data.

Kernel values are kept as logarithms throughout, so very small ``t`` never
underflows.  Distances come from the small-time Gaussian behaviour of the
kernel: ``G ~ (4 pi t)^(-n/2) exp(-d^2 / 4t)``.  The default estimator removes
the Euclidean prefactor before inverting (``normalized``); the bare
``-4t log G`` inversion is available as ``raw``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from io import BytesIO
from pathlib import Path

import numpy as np

from .data import (
    DataBundle,
    DenseTable,
    NetY,
    NoiseModel,
    Provenance,
    ReconstructionParams,
    dumps17,
)
from .errors import InputError, SelectionError
from .heat_kernel import heat_kernel_log_matrix
from .io_utils import atomic_write_bytes, atomic_write_text
from .manifolds import manifold_from_json

SEPARATED = "separated"
FULL = "full"
NOISE_PROFILES = ("worst_case_sign", "uniform")
ESTIMATORS = ("normalized", "raw")


@dataclass
class KernelSampleSet:
    """``log_values[k, j, i] = log G~(y_j, z_i, times[k])``.

    ``case_tag`` is ``separated`` when the sources avoid the landmark ball
    (landmark distances must then be supplied separately) and ``full`` when
    they cover the whole manifold.  ``y_points``, ``z_points`` and ``spec`` are
    hidden truth and may be ``None`` for measured kernels.
    """

    y_indices: np.ndarray
    times: np.ndarray
    log_values: np.ndarray
    sigma: float
    case_tag: str
    dimension: int
    anchor_index: int = 0
    z_points: np.ndarray | None = field(default=None, compare=False)
    y_points: np.ndarray | None = field(default=None, compare=False)
    spec: object = field(default=None, compare=False)

    def __post_init__(self):
        self.y_indices = np.asarray(self.y_indices, dtype=np.int64)
        self.times = np.asarray(self.times, dtype=float)
        self.log_values = np.asarray(self.log_values, dtype=float)
        if self.case_tag not in (SEPARATED, FULL):
            raise InputError(f"unknown source case {self.case_tag!r}")
        _check_times(self.times)
        if self.log_values.shape[:2] != (len(self.times), len(self.y_indices)) or self.log_values.ndim != 3:
            raise InputError("log values must have shape (times, landmarks, sources)")
        if not np.all(np.isfinite(self.log_values)):
            raise InputError("log kernel values must be finite")
        if self.sigma < 0:
            raise InputError("sigma must be nonnegative")
        if not 0 <= self.anchor_index < len(self.y_indices):
            raise InputError("anchor index outside the landmark list")

    @property
    def n_sources(self) -> int:
        return self.log_values.shape[2]

    # -- persistence: JSON document plus a binary .npy sidecar for the values --
    def save(self, path) -> None:
        path = Path(path)
        sidecar = path.with_suffix(".npy")
        doc = {
            "y_indices": self.y_indices,
            "times": self.times,
            "sigma": float(self.sigma),
            "case_tag": self.case_tag,
            "dimension": int(self.dimension),
            "anchor_index": int(self.anchor_index),
            "values_file": sidecar.name,
            "shape": list(self.log_values.shape),
            "hidden": None,
        }
        if self.spec is not None and self.z_points is not None and self.y_points is not None:
            doc["hidden"] = {"spec": self.spec.to_json(), "z_points": self.z_points,
                             "y_points": self.y_points}
        buf = BytesIO()
        np.save(buf, np.ascontiguousarray(self.log_values, dtype="<f8"), allow_pickle=False)
        atomic_write_bytes(sidecar, buf.getvalue())
        atomic_write_text(path, dumps17(doc))

    @classmethod
    def load(cls, path) -> "KernelSampleSet":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
            values = np.load(path.parent / doc["values_file"], allow_pickle=False)
            hidden = doc.get("hidden")
            spec = z = y = None
            if hidden:
                spec = manifold_from_json(hidden["spec"])
                z = spec.validate_points(hidden["z_points"])
                y = spec.validate_points(hidden["y_points"])
            return cls(doc["y_indices"], doc["times"], values, float(doc["sigma"]),
                       doc["case_tag"], int(doc["dimension"]), int(doc.get("anchor_index", 0)),
                       z, y, spec)
        except (KeyError, TypeError, ValueError, OSError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"cannot read kernel samples from {path}: {exc}") from exc


@dataclass
class TSelection:
    t_star: float
    estimator: str
    diagnostics: list

    def __post_init__(self):
        if not 0 < self.t_star < 1:
            raise InputError("selected time must lie in (0, 1)")


@dataclass
class KernelDistances:
    """Estimated ``d(y_j, z_i)`` as a ``(landmarks, sources)`` array."""

    values: np.ndarray
    clamped: np.ndarray
    t_star: float
    estimator: str

    def flags(self) -> list:
        j, i = np.nonzero(self.clamped)
        return [{"landmark": int(a), "source": int(b)} for a, b in zip(j, i)]


def _check_times(times) -> None:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) == 0:
        raise InputError("at least one time value is needed")
    bad = times[~((times > 0) & (times < 1))]
    if len(bad):
        raise InputError(f"kernel times must lie in (0, 1); got {bad[0]!r}")


def _bounded_offsets(base: np.ndarray, offset: np.ndarray, bound: np.ndarray) -> np.ndarray:
    """``base + offset`` nudged toward ``base`` until the realized difference
    is within ``bound`` in floating point."""
    out = base + offset
    for _ in range(64):
        over = np.abs(out - base) > bound
        if not over.any():
            return out
        out[over] = np.nextafter(out[over], base[over])
    raise AssertionError("could not realize the noise bound")


def corrupt_kernel(spec, y_net, z_net, times, sigma: float, noise_profile: str = "worst_case_sign",
                   seed: int = 0, *, y_indices=None, case_tag: str = FULL,
                   anchor_index: int = 0) -> KernelSampleSet:
    """Exact log kernels between ``y_net`` and ``z_net`` plus multiplicative
    noise ``|log G~ - log G| <= sigma / t``.

    ``worst_case_sign`` puts every sample at the bound (less one ulp) with a
    random sign; ``uniform`` draws the log error uniformly inside the bound.
    """
    times = np.asarray(times, dtype=float)
    _check_times(times)
    if noise_profile not in NOISE_PROFILES:
        raise InputError(f"unknown kernel noise profile {noise_profile!r}")
    if not sigma >= 0:
        raise InputError("sigma must be nonnegative")
    y_pts = spec.validate_points(y_net)
    z_pts = spec.validate_points(z_net)
    rng = np.random.default_rng(seed)
    logs = np.empty((len(times), len(y_pts), len(z_pts)))
    for k, t in enumerate(times):
        exact = heat_kernel_log_matrix(spec, y_pts, z_pts, float(t))
        if sigma == 0:
            logs[k] = exact
            continue
        bound = np.full(exact.shape, sigma / t)
        if noise_profile == "worst_case_sign":
            sign = np.where(rng.random(exact.shape) < 0.5, -1.0, 1.0)
            offset = sign * bound * (1 - np.finfo(float).eps)
        else:
            offset = bound * (2 * rng.random(exact.shape) - 1)
        logs[k] = _bounded_offsets(exact, offset, bound)
    idx = np.arange(len(y_pts)) if y_indices is None else np.asarray(y_indices)
    return KernelSampleSet(idx, times, logs, float(sigma), case_tag, spec.dimension,
                           anchor_index, z_pts, y_pts, spec)


def _estimate(log_values: np.ndarray, t: float, dimension: int, estimator: str):
    if estimator == "normalized":
        arg = -4 * t * (log_values + 0.5 * dimension * math.log(4 * math.pi * t))
    elif estimator == "raw":
        arg = np.where(log_values < 0, -4 * t * log_values, 0.0)
    else:
        raise InputError(f"unknown distance estimator {estimator!r}")
    clamped = arg <= 0
    return np.sqrt(np.maximum(arg, 0.0)), clamped


def select_t(samples: KernelSampleSet, spec_hint=None, *, estimator: str = "normalized") -> TSelection:
    """Pick the grid time whose estimates move least against the neighbouring
    grid time, among times ``t <= sigma`` (all times when ``sigma = 0``).

    ``spec_hint`` is accepted for interface symmetry and ignored: the choice
    uses the samples only.
    """
    del spec_hint
    order = np.argsort(samples.times)
    times = samples.times[order]
    eligible = times <= samples.sigma if samples.sigma > 0 else np.ones(len(times), bool)
    if not eligible.any():
        raise SelectionError(
            f"no grid time is <= sigma = {samples.sigma:g}; supply a finer time grid"
        )
    if len(times) < 3:
        raise InputError("time selection needs at least 3 grid times")
    est = [_estimate(samples.log_values[k], float(times[i]), samples.dimension, estimator)[0]
           for i, k in enumerate(order)]
    diagnostics = []
    best, best_spread = None, math.inf
    for i, t in enumerate(times):
        nb = i + 1 if i + 1 < len(times) else i - 1
        spread = float(np.max(np.abs(est[i] - est[nb])))
        diagnostics.append({"t": float(t), "neighbor_t": float(times[nb]),
                            "eligible": bool(eligible[i]), "spread": spread})
        if eligible[i] and spread < best_spread:
            best, best_spread = float(t), spread
    return TSelection(best, estimator, diagnostics)


def distances_from_kernel(samples: KernelSampleSet, t_sel: TSelection | float,
                          estimator: str | None = None) -> KernelDistances:
    """Estimated distances at the selected time; nonpositive squared
    estimates clamp to 0 and are flagged."""
    t_star = t_sel.t_star if isinstance(t_sel, TSelection) else float(t_sel)
    if estimator is None:
        estimator = t_sel.estimator if isinstance(t_sel, TSelection) else "normalized"
    hits = np.nonzero(samples.times == t_star)[0]
    if len(hits) == 0:
        raise InputError(f"time {t_star!r} is not on the sample grid")
    values, clamped = _estimate(samples.log_values[hits[0]], t_star, samples.dimension, estimator)
    return KernelDistances(values, clamped, t_star, estimator)


def assemble_bundle_from_kernel(samples: KernelSampleSet, estimates: KernelDistances,
                                landmark_source: str, params: ReconstructionParams, *,
                                landmark_distances=None) -> DataBundle:
    """Distance vector data from kernel estimates.

    ``landmark_source="given"``: the sources avoid the landmark ball, so the
    vectors are the sources' estimates plus one vector per landmark taken
    from ``landmark_distances`` (a ``J x J`` array).  ``"kernel"``: the
    sources cover the manifold and every vector is kernel derived.
    ``eps1`` becomes ``7 sigma^(1/2)`` (unchanged when ``sigma = 0``).
    """
    if landmark_source not in ("given", "kernel"):
        raise InputError(f"unknown landmark distance source {landmark_source!r}")
    vectors = estimates.values.T
    n_y = len(samples.y_indices)
    if landmark_source == "given":
        if landmark_distances is None:
            raise InputError("landmark_distances (d_hat_Y) is required when sources avoid the landmarks")
        dY = np.asarray(landmark_distances, dtype=float)
        if dY.shape != (n_y, n_y):
            raise InputError(f"landmark_distances must be {n_y} x {n_y}")
        vectors = np.concatenate([vectors, dY])
    if samples.sigma > 0:
        eps1 = 7 * math.sqrt(samples.sigma)
        params = params.with_eps(eps1, min(params.eps0, eps1))
    params = replace(params, sigma=float(samples.sigma))
    prov = None
    center = None
    y_pts = samples.y_points
    if samples.spec is not None and y_pts is not None and samples.z_points is not None:
        x_pts = samples.z_points if landmark_source == "kernel" else np.concatenate([samples.z_points, y_pts])
        prov = Provenance(samples.spec, x_pts, y_pts, NoiseModel("none"), params.eps0)
        center = y_pts[samples.anchor_index]
    net = NetY(n_y, samples.anchor_index, params.R, y_pts, center)
    return DataBundle(net, DenseTable(vectors), params, prov)
