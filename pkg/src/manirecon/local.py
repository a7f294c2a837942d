"""Local charts from distance data: Gram matrix, coordinates and distances.

For a center vector ``r_i0`` the chart searches the landmark net for points
``p`` and ``q`` lying roughly on one geodesic through the hidden center, finds
step vectors whose hidden points sit a distance ``s`` along those geodesics,
and reads off approximate inner products of the geodesic directions.  Every
quantity is computed from the data view only: vector values, the anchor
index, surrogate distances and parameters.

Two layouts are used, chosen by ``r_i0(y0)``:

* ``outer`` (``r_i0(y0) > R/2``): ``p`` in the annulus at ``R/8``, ``q`` in the
  annulus at ``R/4``, and ``q`` lies between the center and ``p``.
* ``inner``: ``q`` in the annulus at ``3R/4`` is chosen first and ``p`` in the
  annulus at ``R`` continues the geodesic past ``q``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import DataView, SurrogateYDistances, as_view
from .errors import (
    AlignmentError,
    DomainError,
    FrameError,
    InputError,
    SelectionError,
    StepSearchError,
)

OUTER = "outer"
INNER = "inner"


@dataclass(frozen=True)
class AnnulusSelector:
    """Landmarks whose surrogate distance to the anchor is within ``width``
    (plus ``2 eps1`` slack) of ``radius``."""

    radius: float
    width: float

    def __post_init__(self):
        if not 0 < self.width < self.radius:
            raise InputError(f"annulus needs 0 < width < radius, got {self.width}, {self.radius}")


@dataclass(frozen=True)
class Constellation:
    """Landmarks of a chart.  ``base_index`` is the landmark the separated set
    is grown from (``p0`` in the outer layout, the nearest ``q`` otherwise)."""

    base_index: int
    p_indices: tuple
    q_indices: tuple
    case_tag: str

    def to_json(self) -> dict:
        return {
            "base_index": self.base_index,
            "p_indices": list(self.p_indices),
            "q_indices": list(self.q_indices),
            "case_tag": self.case_tag,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Constellation":
        return cls(int(doc["base_index"]), tuple(int(v) for v in doc["p_indices"]),
                   tuple(int(v) for v in doc["q_indices"]), str(doc["case_tag"]))


@dataclass
class LocalChart:
    center_index: int
    constellation: Constellation
    step_indices: tuple
    gram: np.ndarray
    gram_inverse: np.ndarray
    s_value: float
    tuples_tried: int = 0

    @property
    def dimension(self) -> int:
        return len(self.step_indices)

    def to_json(self) -> dict:
        return {
            "center": self.center_index,
            "constellation": self.constellation.to_json(),
            "step_indices": list(self.step_indices),
            "gram": self.gram.tolist(),
            "gram_inverse": self.gram_inverse.tolist(),
            "s": self.s_value,
            "tuples_tried": self.tuples_tried,
        }

    @classmethod
    def from_json(cls, doc: dict | str) -> "LocalChart":
        if isinstance(doc, str):
            doc = json.loads(doc)
        return cls(
            center_index=int(doc["center"]),
            constellation=Constellation.from_json(doc["constellation"]),
            step_indices=tuple(int(v) for v in doc["step_indices"]),
            gram=np.asarray(doc["gram"], dtype=float),
            gram_inverse=np.asarray(doc["gram_inverse"], dtype=float),
            s_value=float(doc["s"]),
            tuples_tried=int(doc.get("tuples_tried", 0)),
        )


@dataclass
class ChartFailure:
    """Why a tuple was rejected (kept for diagnostics)."""

    tuple_: tuple
    reason: str
    det: float | None = None


class LocalReconstructor:
    """Shared state for building many charts on one bundle.

    Annuli depend only on the anchor, so they are computed once; surrogate
    distances are cached by :class:`SurrogateYDistances`.
    """

    def __init__(self, data, surrogate: SurrogateYDistances | None = None):
        self.view: DataView = as_view(data)
        self.params = self.view.params
        self.surrogate = surrogate if surrogate is not None else SurrogateYDistances(self.view)
        self._annuli: dict[tuple, np.ndarray] = {}
        self.n = self.params.bounds.n

    # -- primitives ------------------------------------------------------
    def classify_case(self, i0: int) -> str:
        r = self.view.value(i0, self.view.anchor_index)
        return OUTER if r > self.params.R / 2 else INNER

    def annulus_points(self, selector: AnnulusSelector) -> np.ndarray:
        key = (selector.radius, selector.width)
        got = self._annuli.get(key)
        if got is None:
            eps1 = self.params.eps1
            to_anchor = self.surrogate.row(self.view.anchor_index)
            lo = selector.radius - selector.width - 2 * eps1
            hi = selector.radius + selector.width + 2 * eps1
            got = np.nonzero((to_anchor >= lo) & (to_anchor <= hi))[0]
            self._annuli[key] = got
        if len(got) == 0:
            raise SelectionError(
                f"no landmark in the annulus of radius {selector.radius:g} and width {selector.width:g}"
            )
        return got

    def selector(self, fraction: float) -> AnnulusSelector:
        return AnnulusSelector(fraction * self.params.R, self.params.annulus_width)

    def alignment_residuals(self, i0: int, p: int, qs: np.ndarray) -> np.ndarray:
        """``|r_i0(p) - r_i0(q) - D^a(p, q)|`` for each ``q``."""
        row = self.view.block([i0], np.concatenate([[p], qs]))[0]
        return np.abs(row[0] - row[1:] - self.surrogate.row(p, qs))

    def find_aligned(self, i0: int, near: int, far_candidates: np.ndarray, *, near_is_p: bool) -> int:
        """Landmark completing an aligned triple with the center.

        With ``near_is_p`` the fixed landmark is ``p`` and the search runs over
        ``q`` (outer layout); otherwise the fixed landmark is ``q`` and ``p`` is
        searched beyond it (inner layout).  The residual must be below
        ``6 eps1``; ties go to the smallest residual, then the lowest index.
        """
        cands = np.asarray(far_candidates)
        cands = cands[cands != near]
        if len(cands) == 0:
            raise AlignmentError("no candidate landmarks for the alignment test")
        if near_is_p:
            res = self.alignment_residuals(i0, near, cands)
        else:
            row = self.view.block([i0], np.concatenate([[near], cands]))[0]
            res = np.abs(row[1:] - row[0] - self.surrogate.row(near, cands))
        ok = res < 6 * self.params.eps1
        if not ok.any():
            raise AlignmentError(
                f"no landmark aligned with landmark {near} for center {i0} "
                f"(best residual {res.min():.3g})"
            )
        idx = np.nonzero(ok)[0]
        best = idx[np.lexsort((cands[idx], res[idx]))[0]]
        return int(cands[best])

    def find_step_element(self, i0: int, p: int, q: int) -> int:
        """Vector ``l`` near the center at distance about ``s`` towards ``q``."""
        eps1 = self.params.eps1
        s = self.params.s
        col_p = self.view.column(p)
        col_q = self.view.column(q)
        dpq = self.surrogate.pair(p, q)
        along = np.abs(col_p - col_q - dpq)
        step = np.abs(col_q[i0] - col_q - s)
        ok = np.nonzero((along <= 9 * eps1) & (step <= 9 * eps1))[0]
        if len(ok) == 0:
            raise StepSearchError(f"no step vector for center {i0} and landmarks ({p}, {q})")
        order = ok[np.lexsort((ok, along[ok]))]
        limit = self.params.step_radius
        for a in range(0, len(order), 32):
            batch = order[a : a + 32]
            sup = self.view.sup_from(i0, batch)
            hit = np.nonzero(sup <= limit)[0]
            if len(hit):
                return int(batch[hit[0]])
        raise StepSearchError(
            f"step candidates for center {i0} and landmarks ({p}, {q}) all leave the "
            f"sup-norm ball of radius {limit:g}"
        )

    # -- chart -----------------------------------------------------------
    def build_chart(self, i0: int, *, failures: list | None = None) -> LocalChart:
        prm = self.params
        case = self.classify_case(i0)
        if case == OUTER:
            base_ring = self.annulus_points(self.selector(1 / 8))
            other_ring = self.annulus_points(self.selector(1 / 4))
        else:
            base_ring = self.annulus_points(self.selector(3 / 4))
            other_ring = self.annulus_points(self.selector(1.0))
        vals = self.view.block([i0], base_ring)[0]
        base = int(base_ring[np.lexsort((base_ring, vals))[0]])
        near_base = base_ring[self.surrogate.row(base, base_ring) < prm.c3]
        order = _farthest_point_order(self.surrogate, base, near_base, prm.C17 * prm.eps1)

        pairs: dict[int, tuple | Exception] = {}

        def complete(member: int):
            got = pairs.get(member)
            if got is None:
                try:
                    if case == OUTER:
                        p = member
                        q = self.find_aligned(i0, p, other_ring, near_is_p=True)
                    else:
                        q = member
                        p = self.find_aligned(i0, q, other_ring, near_is_p=False)
                    got = (p, q, self.find_step_element(i0, p, q))
                except (AlignmentError, StepSearchError) as exc:
                    got = exc
                pairs[member] = got
            return got

        budget = int(prm.constants["tuple_budget"])
        best_det, best_tuple = -math.inf, None
        tried = 0
        for members in _colex_tuples(order, self.n):
            if tried >= budget:
                break
            tried += 1
            done = [complete(m) for m in members]
            bad = next((d for d in done if isinstance(d, Exception)), None)
            if bad is not None:
                if failures is not None:
                    failures.append(ChartFailure(members, str(bad)))
                continue
            ps = [d[0] for d in done]
            qs = [d[1] for d in done]
            steps = [d[2] for d in done]
            G = self._gram(i0, qs, steps)
            det = float(np.linalg.det(G))
            if det > best_det:
                best_det, best_tuple = det, members
            if det > 0.75 * prm.c1_threshold and np.all(np.abs(G) <= 2):
                cons = Constellation(base, tuple(ps), tuple(qs), case)
                return LocalChart(i0, cons, tuple(steps), G, np.linalg.inv(G), prm.s, tried)
            if failures is not None:
                failures.append(ChartFailure(members, "determinant test", det))
        raise FrameError(
            f"no frame for center {i0} after {tried} tuples (best determinant {best_det:.3g})",
            best_det=None if best_tuple is None else best_det,
            best_tuple=best_tuple,
        )

    def _gram(self, i0: int, qs, steps) -> np.ndarray:
        blk = self.view.block(np.concatenate([[i0], steps]), qs)
        # G[k, m] = (r_i0(q_k) - r_{step m}(q_k)) / s
        G = (blk[0][:, None] - blk[1:].T) / self.params.s
        return 0.5 * (G + G.T)

    # -- coordinates -------------------------------------------------------
    def coordinates(self, chart: LocalChart, rows) -> tuple[np.ndarray, np.ndarray]:
        """Coordinates of the vectors in ``rows`` and a mask of those inside the
        ``rho0`` neighbourhood (coordinates outside it are still returned)."""
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        qs = list(chart.constellation.q_indices)
        center = self.view.block([chart.center_index], qs)[0]
        coords = center - self.view.block(rows, qs)
        inside = self.view.sup_from(chart.center_index, rows) < self.params.rho0
        return coords, inside


def _farthest_point_order(surrogate: SurrogateYDistances, base: int, pool: np.ndarray,
                          separation: float):
    """Greedy farthest-point ordering of ``pool`` starting at ``base``; stops
    once the farthest remaining landmark is closer than ``separation`` to the
    chosen ones.  Generated lazily; ties go to the lowest index."""
    pool = np.asarray(pool)
    if base not in pool:
        pool = np.concatenate([[base], pool])
    mind = np.asarray(surrogate.row(base, pool), dtype=float).copy()
    yield base
    while True:
        j = int(np.argmax(mind))
        if not mind[j] >= separation:
            return
        pick = int(pool[j])
        yield pick
        mind = np.minimum(mind, surrogate.row(pick, pool))


def _colex_tuples(order_iter, n: int):
    """Size-``n`` subsets of a lazily generated sequence in colexicographic
    order: every subset of the first ``m`` items precedes any subset using
    item ``m + 1``."""
    seen = []
    for item in order_iter:
        seen.append(item)
        m = len(seen) - 1
        if m < n - 1:
            continue
        for head in itertools.combinations(range(m), n - 1):
            yield tuple(seen[h] for h in head) + (item,)


# -- module-level operations ----------------------------------------------------


def classify_case(bundle, i0: int) -> str:
    """``outer`` when ``r_i0(y0) > R/2``, otherwise ``inner``."""
    view = as_view(bundle)
    return OUTER if view.value(i0, view.anchor_index) > view.params.R / 2 else INNER


def annulus_points(bundle, surrogate: SurrogateYDistances, selector: AnnulusSelector) -> np.ndarray:
    return LocalReconstructor(bundle, surrogate).annulus_points(selector)


def find_aligned_q(bundle, surrogate, i0: int, p: int, q_annulus: AnnulusSelector) -> int:
    rec = LocalReconstructor(bundle, surrogate)
    return rec.find_aligned(i0, p, rec.annulus_points(q_annulus), near_is_p=True)


def find_step_element(bundle, surrogate, i0: int, p: int, q: int) -> int:
    return LocalReconstructor(bundle, surrogate).find_step_element(i0, p, q)


def build_chart(bundle, surrogate, i0: int) -> LocalChart:
    return LocalReconstructor(bundle, surrogate).build_chart(i0)


def compute_coordinates(chart: LocalChart, bundle, ell: int) -> np.ndarray:
    """Approximate normal coordinates of vector ``ell`` in ``chart``."""
    view = as_view(bundle)
    i0 = chart.center_index
    sup = float(view.sup_from(i0, [ell])[0])
    if not sup < view.params.rho0:
        raise DomainError(
            f"vector {ell} is at sup distance {sup:.3g} from center {i0}, outside rho0 = "
            f"{view.params.rho0:.3g}"
        )
    qs = list(chart.constellation.q_indices)
    blk = view.block([i0, ell], qs)
    return blk[0] - blk[1]


def local_distance_checked(chart: LocalChart, coords) -> tuple[float, bool]:
    """Chart distance and whether the quadratic form had to be clamped at 0."""
    x = np.asarray(coords, dtype=float)
    val = float(x @ chart.gram_inverse @ x)
    if val < 0:
        return 0.0, True
    return math.sqrt(val), False


def local_distance(chart: LocalChart, coords) -> float:
    return local_distance_checked(chart, coords)[0]


def local_distances(chart: LocalChart, coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`local_distance_checked` over rows of ``coords``."""
    q = np.einsum("ij,jk,ik->i", coords, chart.gram_inverse, coords)
    clamped = q < 0
    return np.sqrt(np.maximum(q, 0.0)), clamped
