"""Global distances from local charts by bounded-hop chain minimization.

Vectors whose sup-norm distance is at most ``rho + C0 eps1^(1/2) + 2 eps1``
are joined by an edge weighted with the chart distance.  The global estimate
for a pair is the cheapest chain of at most ``N_max + 1`` edges, where
``N_max = ceil(1 + lam / rho)``.  Chains are found with hop-indexed
min-plus relaxation: after ``h`` rounds the table holds the best chain of at
most ``h + 1`` edges, exactly.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .data import DataBundle, as_view, dumps17, epsilon2_net_radius
from .errors import CapabilityError, InputError, ReconstructionError
from .local import LocalReconstructor, local_distances

log = logging.getLogger(__name__)


@dataclass
class ProximityGraph:
    """Undirected graph on a set of vectors (``nodes`` are vector indices).

    ``weights`` is a dense symmetric matrix with ``inf`` for missing edges;
    ``margins`` holds ``threshold - sup`` for admissible pairs (``nan``
    elsewhere).  ``gaps`` records admissible pairs or centers that produced no
    weight, with the reason.
    """

    nodes: np.ndarray
    weights: np.ndarray
    margins: np.ndarray
    rho: float
    hop_cap: int
    threshold: float
    gaps: list = field(default_factory=list)
    clamped: list = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def edges(self):
        """``(a, b, weight, margin)`` for every edge with ``a < b`` (node positions)."""
        a, b = np.nonzero(np.triu(np.isfinite(self.weights), k=1))
        return [(int(i), int(j), float(self.weights[i, j]), float(self.margins[i, j]))
                for i, j in zip(a, b)]

    def degrees(self) -> np.ndarray:
        fin = np.isfinite(self.weights)
        np.fill_diagonal(fin, False)
        return fin.sum(axis=1)

    def is_connected(self) -> bool:
        from scipy.sparse.csgraph import connected_components

        adj = np.isfinite(self.weights).astype(np.int8)
        return connected_components(adj, directed=False)[0] <= 1


def nodes_needing_charts(data, nodes) -> np.ndarray:
    """Positions of nodes with an admissible neighbour closer than ``rho0``
    in sup norm (the only ones whose chart can produce an edge weight)."""
    view = as_view(data)
    sup = sup_matrix(view, nodes)
    np.fill_diagonal(sup, np.inf)
    near = (sup < view.params.rho0) & (sup <= view.params.edge_threshold)
    return np.nonzero(near.any(axis=1))[0]


def sup_matrix(data, nodes) -> np.ndarray:
    """Pairwise sup-norm distances between the vectors in ``nodes``."""
    view = as_view(data)
    vals = view.rows(np.asarray(nodes, dtype=np.int64))
    return cdist(vals, vals, metric="chebyshev")


def select_nodes(data, count: int, *, start: int | None = None, radius: float | None = None,
                 spacing: float = 0.0, columns: int | None = None) -> np.ndarray:
    """Data-only choice of graph nodes by farthest-point sampling in sup norm.

    Starts from ``start`` (default: the vector closest to the anchor, read off
    the anchor column) and keeps only vectors within ``radius`` of it when
    given.  Stops after ``count`` nodes or when no candidate is ``spacing``
    away from the chosen ones.  ``columns`` limits the sup norm to an evenly
    spaced subset of landmarks, which keeps the pass cheap on large bundles.
    """
    view = as_view(data)
    if count < 1:
        raise InputError("need at least one node")
    if start is None:
        start = int(np.argmin(view.column(view.anchor_index)))
    J = view.n_landmarks
    cols = np.arange(J) if columns is None or columns >= J else np.unique(
        np.linspace(0, J - 1, columns).round().astype(np.int64))
    cand = np.arange(view.n_vectors)
    ref = view.block([start], cols)[0]
    step = max(1, 4_000_000 // len(cols))
    dist = np.empty(len(cand))
    for a in range(0, len(cand), step):
        dist[a : a + step] = np.abs(view.block(cand[a : a + step], cols) - ref).max(axis=1)
    if radius is not None:
        keep = dist <= radius
        cand, dist = cand[keep], dist[keep]
    vals = None
    if len(cand) * len(cols) <= 50_000_000:
        vals = view.block(cand, cols)
    chosen = [int(start)]
    pos = {int(v): i for i, v in enumerate(cand)}
    if start in pos:
        dist[pos[start]] = 0.0
    while len(chosen) < count:
        k = int(np.argmax(dist))
        if dist[k] <= spacing or dist[k] == 0:
            break
        chosen.append(int(cand[k]))
        row = vals[k] if vals is not None else view.block([cand[k]], cols)[0]
        for a in range(0, len(cand), step):
            blk = vals[a : a + step] if vals is not None else view.block(cand[a : a + step], cols)
            np.minimum(dist[a : a + step], np.abs(blk - row).max(axis=1), out=dist[a : a + step])
    return np.array(chosen, dtype=np.int64)


def build_graph(bundle, charts: dict | None = None, *, nodes=None,
                reconstructor: LocalReconstructor | None = None,
                failed: dict | None = None) -> ProximityGraph:
    """Admissible pairs and their chart-distance weights.

    ``charts`` maps node positions to prebuilt charts; missing charts are built
    on demand for nodes with at least one admissible neighbour.  A failed chart
    contributes no outgoing weights and is recorded in ``gaps``; ``failed``
    maps node positions whose chart already failed elsewhere to their error
    category, so they are not retried.  The weight of
    an edge is the smaller of the two one-sided chart distances that exist.
    """
    view = as_view(bundle)
    params = view.params
    nodes = np.arange(view.n_vectors) if nodes is None else np.asarray(nodes, dtype=np.int64)
    if nodes.ndim != 1 or len(nodes) == 0:
        raise InputError("need a nonempty list of nodes")
    rec = reconstructor or LocalReconstructor(view)
    charts = {} if charts is None else dict(charts)
    threshold = params.edge_threshold
    sup = sup_matrix(view, nodes)
    n = len(nodes)
    admissible = sup <= threshold
    np.fill_diagonal(admissible, False)
    margins = np.where(admissible, threshold - sup, np.nan)
    one_sided = np.full((n, n), np.inf)
    gaps: list = []
    clamped: list = []
    for a in range(n):
        nbrs = np.nonzero(admissible[a])[0]
        if len(nbrs) == 0:
            continue
        # coordinates exist only below rho0, so a chart is needed only then
        far = nbrs[sup[a, nbrs] >= params.rho0]
        for b in far:
            gaps.append({"stage": "edge", "node": a, "neighbor": int(b), "reason": "outside_rho0"})
        nbrs = nbrs[sup[a, nbrs] < params.rho0]
        if len(nbrs) == 0:
            continue
        chart = charts.get(a)
        if chart is None and failed and a in failed:
            gaps.append({"stage": "chart", "node": a, "vector": int(nodes[a]),
                         "reason": failed[a], "message": "chart failed in the local stage"})
            continue
        if chart is None:
            try:
                chart = rec.build_chart(int(nodes[a]))
            except ReconstructionError as exc:
                gaps.append({"stage": "chart", "node": a, "vector": int(nodes[a]),
                             "reason": exc.category, "message": str(exc)})
                log.info("no chart for vector %d: %s", nodes[a], exc)
                continue
            charts[a] = chart
        coords, inside = rec.coordinates(chart, nodes[nbrs])
        dist, neg = local_distances(chart, coords)
        for b, ok, dval, cl in zip(nbrs, inside, dist, neg):
            if not ok:
                gaps.append({"stage": "edge", "node": a, "neighbor": int(b),
                             "reason": "outside_rho0"})
                continue
            one_sided[a, b] = dval
            if cl:
                clamped.append({"stage": "edge", "node": a, "neighbor": int(b)})
    weights = np.minimum(one_sided, one_sided.T)
    np.fill_diagonal(weights, 0.0)
    graph = ProximityGraph(nodes, weights, margins, params.rho, params.hop_cap, threshold,
                           gaps, clamped)
    graph.charts = charts
    return graph


def oracle_weights(graph: ProximityGraph, bundle: DataBundle) -> ProximityGraph:
    """Copy of ``graph`` with every edge weight replaced by the true distance
    (synthetic control run; needs provenance)."""
    prov = bundle.provenance
    pts = prov.x_points[graph.nodes]
    true = prov.spec.pairwise(pts, pts)
    w = np.where(np.isfinite(graph.weights), true, np.inf)
    w = np.minimum(w, w.T)
    np.fill_diagonal(w, 0.0)
    return ProximityGraph(graph.nodes, w, graph.margins.copy(), graph.rho, graph.hop_cap,
                          graph.threshold, list(graph.gaps), list(graph.clamped))


@dataclass
class DistanceMatrix:
    """Chain-minimized distances between graph nodes (``inf`` if unreachable)."""

    nodes: np.ndarray
    values: np.ndarray
    hops: np.ndarray
    hop_cap: int
    parents: list = field(default_factory=list, repr=False)
    params_hash: str = ""

    @property
    def unreachable(self) -> list:
        a, b = np.nonzero(np.triu(~np.isfinite(self.values), k=1))
        return [(int(i), int(j)) for i, j in zip(a, b)]

    def hop_histogram(self) -> dict:
        fin = np.isfinite(self.values)
        iu = np.triu_indices(len(self.nodes), k=1)
        h = self.hops[iu][fin[iu]]
        vals, counts = np.unique(h, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, counts)}

    def chain(self, a: int, b: int) -> list:
        """Witness chain of node positions from ``a`` to ``b``."""
        if a == b:
            return [a]
        if not np.isfinite(self.values[a, b]):
            return []
        if self.hops[a, b] < 0:
            return self.chain(b, a)[::-1]
        return _walk_back(self.parents, a, b)

    # -- persistence -------------------------------------------------------
    def to_csv(self) -> str:
        """Long format ``i,j,value`` over all ordered pairs, 17 digits."""
        buf = io.StringIO()
        buf.write("i,j,value\n")
        n = len(self.nodes)
        for a in range(n):
            row = self.values[a]
            buf.write("".join(
                f"{int(self.nodes[a])},{int(self.nodes[b])},{_fmt(row[b])}\n" for b in range(n)
            ))
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {
            "nodes": [int(v) for v in self.nodes],
            "hop_cap": self.hop_cap,
            "unreachable": [[int(self.nodes[a]), int(self.nodes[b])] for a, b in self.unreachable],
            "hop_histogram": {str(k): v for k, v in self.hop_histogram().items()},
            "params_hash": self.params_hash,
        }

    @classmethod
    def from_csv(cls, text: str, sidecar: dict | None = None) -> "DistanceMatrix":
        lines = text.strip().splitlines()
        if not lines or lines[0].strip() != "i,j,value":
            raise InputError("distance matrix CSV needs the header i,j,value")
        rows = [ln.split(",") for ln in lines[1:]]
        order: dict[int, int] = {}
        for r in rows:
            order.setdefault(int(r[0]), len(order))
        n = len(order)
        vals = np.full((n, n), np.inf)
        for r in rows:
            vals[order[int(r[0])], order[int(r[1])]] = float(r[2])
        nodes = np.array(sorted(order, key=order.get), dtype=np.int64)
        hop_cap = int(sidecar["hop_cap"]) if sidecar else 0
        ph = sidecar.get("params_hash", "") if sidecar else ""
        return cls(nodes, vals, np.zeros((n, n), dtype=np.int64), hop_cap, [], ph)


def _fmt(x: float) -> str:
    return "inf" if not math.isfinite(x) else format(float(x), ".17g")


def _walk_back(parents, a, b) -> list:
    """Follow the per-round predecessor tables back from ``(a, b)``.

    ``parents[r - 1][a, t]`` is the last node before ``t`` if round ``r``
    improved ``(a, t)``, else ``-1``; with no improvement left the remaining
    step is a single edge.
    """
    path = [b]
    cur = b
    level = len(parents)
    while True:
        while level > 0 and parents[level - 1][a, cur] < 0:
            level -= 1
        if level == 0:
            break
        cur = int(parents[level - 1][a, cur])
        path.append(cur)
        level -= 1
    if cur != a:
        path.append(a)
    return path[::-1]


def params_hash(params) -> str:
    return hashlib.sha256(dumps17(params.to_json()).encode()).hexdigest()[:16]


def chain_distances(graph: ProximityGraph, *, hop_cap: int | None = None,
                    block: int = 4_000_000) -> DistanceMatrix:
    """Cheapest chains of at most ``hop_cap + 1`` edges between all node pairs.

    Round ``h`` relaxes ``D_h[s, t] = min(D_{h-1}[s, t], min_k D_{h-1}[s, k] +
    W[k, t])``; the per-round predecessor of every improved entry is kept so
    witness chains can be recovered.  The result is symmetrized by taking the
    smaller of the two directions (sums along reversed chains can differ in the
    last bit); ``hops`` is negative where the reversed direction won.
    """
    cap = graph.hop_cap if hop_cap is None else int(hop_cap)
    if cap < 0:
        raise InputError("hop cap must be nonnegative")
    W = graph.weights
    n = len(W)
    D = W.copy()
    hops = np.where(np.isfinite(D), 1, 0).astype(np.int64)
    np.fill_diagonal(hops, 0)
    parents = []
    rows = max(1, block // max(1, n * n))
    for _ in range(cap):
        new = D.copy()
        arg = np.full((n, n), -1, dtype=np.int32 if n < 2**31 else np.int64)
        for a in range(0, n, rows):
            # cand[s, k, t] = D[s, k] + W[k, t]
            cand = D[a : a + rows, :, None] + W[None, :, :]
            k = cand.argmin(axis=1)
            best = np.take_along_axis(cand, k[:, None, :], axis=1)[:, 0, :]
            better = best < new[a : a + rows]
            new[a : a + rows][better] = best[better]
            arg[a : a + rows][better] = k[better]
        improved = arg >= 0
        if not improved.any():
            parents.append(arg)
            break
        hops = np.where(improved, np.take_along_axis(hops, np.maximum(arg, 0), axis=1) + 1, hops)
        parents.append(arg)
        D = new
    Dt = D.T
    use_t = Dt < D
    values = np.where(use_t, Dt, D)
    hop_signed = np.where(use_t, -hops.T, hops)
    np.fill_diagonal(values, 0.0)
    np.fill_diagonal(hop_signed, 0)
    return DistanceMatrix(graph.nodes, values, hop_signed, cap, parents)


def brute_force_chains(graph: ProximityGraph, *, hop_cap: int | None = None,
                       max_nodes: int = 12) -> np.ndarray:
    """Exhaustive search over simple chains with at most ``hop_cap + 1`` edges.

    Chains that revisit a node are never cheaper (weights are nonnegative), so
    simple chains suffice.  Sums are accumulated from the source, as in the
    relaxation, and the two directions are combined the same way.
    """
    n = graph.n_nodes
    if n > max_nodes:
        raise InputError(f"brute force is limited to {max_nodes} nodes, got {n}")
    cap = (graph.hop_cap if hop_cap is None else int(hop_cap)) + 1
    W = graph.weights
    nbrs = [[k for k in range(n) if k != a and np.isfinite(W[a, k])] for a in range(n)]
    best = np.full((n, n), np.inf)
    np.fill_diagonal(best, 0.0)

    def extend(src, node, total, used, visited):
        for k in nbrs[node]:
            if k in visited:
                continue
            t = total + W[node, k]
            if t < best[src, k]:
                best[src, k] = t
            if used + 1 < cap:
                visited.add(k)
                extend(src, k, t, used + 1, visited)
                visited.remove(k)

    for s in range(n):
        extend(s, s, 0.0, 0, {s})
    out = np.minimum(best, best.T)
    np.fill_diagonal(out, 0.0)
    return out


# -- evaluation ------------------------------------------------------------------


@dataclass
class EvaluationReport:
    max_error: float
    mean_error: float
    pairs: int
    unreachable: int
    hop_histogram: dict
    residuals: np.ndarray = field(repr=False)
    triangle_slack: float = 0.0
    net_radius: float | None = None
    net_bound: float | None = None
    net_passed: bool | None = None

    def to_json(self) -> dict:
        return {
            "max_error": self.max_error,
            "mean_error": self.mean_error,
            "pairs": self.pairs,
            "unreachable": self.unreachable,
            "hop_histogram": {str(k): v for k, v in self.hop_histogram.items()},
            "triangle_slack": self.triangle_slack,
            "net_radius": self.net_radius,
            "net_bound": self.net_bound,
            "net_passed": self.net_passed,
        }


def triangle_slack(values: np.ndarray) -> float:
    """Largest ``d(i,k) - d(i,j) - d(j,k)`` over finite triples (0 if metric)."""
    n = len(values)
    worst = 0.0
    for j in range(n):
        via = values[:, j, None] + values[None, j, :]
        with np.errstate(invalid="ignore"):
            diff = values - via
        diff = diff[np.isfinite(diff)]
        if diff.size:
            worst = max(worst, float(diff.max()))
    return worst


def evaluate_matrix(matrix: DistanceMatrix, bundle: DataBundle, *, probes: int = 0,
                    seed: int = 0) -> EvaluationReport:
    """Compare a distance matrix with the hidden truth.

    With ``probes > 0`` also measures how well the hidden points of all
    vectors cover the manifold (largest probe-to-net distance) and compares
    it with ``C0 eps1^(1/2)``.
    """
    if not bundle.has_provenance:
        raise CapabilityError("evaluation needs a bundle with provenance")
    prov = bundle.provenance
    pts = prov.x_points[matrix.nodes]
    true = prov.spec.pairwise(pts, pts)
    iu = np.triu_indices(len(matrix.nodes), k=1)
    est = matrix.values[iu]
    fin = np.isfinite(est)
    res = np.abs(est[fin] - true[iu][fin])
    rep = EvaluationReport(
        max_error=float(res.max()) if res.size else 0.0,
        mean_error=float(res.mean()) if res.size else 0.0,
        pairs=int(fin.sum()),
        unreachable=int((~fin).sum()),
        hop_histogram=matrix.hop_histogram(),
        residuals=res,
        triangle_slack=triangle_slack(matrix.values),
    )
    if probes > 0:
        radius = epsilon2_net_radius(bundle, probes, seed)
        rep.net_radius = radius
        rep.net_bound = bundle.params.eps2
        rep.net_passed = bool(radius <= rep.net_bound)
    return rep


def write_matrix(matrix: DistanceMatrix, csv_path, sidecar_path, writer=None):
    """Persist the CSV and its JSON sidecar (``writer`` does atomic writes)."""
    from .io_utils import atomic_write_text

    write = writer or atomic_write_text
    write(csv_path, matrix.to_csv())
    write(sidecar_path, json.dumps(matrix.sidecar(), indent=2, sort_keys=True) + "\n")
