"""Batch pipeline: configuration, stages, artifacts and run reports.

Stages run in the order ``synth -> [heat2dist] -> recon-local -> recon-global
-> evaluate``.  Each stage reads and writes artifacts in the output directory,
so stages can be run one at a time from the command line.  Artifacts that
depend only on (config, seed) are written deterministically; timings appear
only in ``run.json``.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    DataBundle,
    NoiseModel,
    ReconstructionParams,
    dumps17,
    synthesize_bundle,
)
from .errors import InputError, ReconstructionError
from .global_recon import (
    DistanceMatrix,
    build_graph,
    chain_distances,
    evaluate_matrix,
    nodes_needing_charts,
    params_hash,
    select_nodes,
    write_matrix,
)
from .heat_frontend import (
    FULL,
    SEPARATED,
    KernelSampleSet,
    assemble_bundle_from_kernel,
    corrupt_kernel,
    distances_from_kernel,
    select_t,
)
from .io_utils import atomic_write_text
from .local import LocalChart, LocalReconstructor
from .manifolds import GeometryBounds, Region, manifold_from_json, sample_net

log = logging.getLogger(__name__)

MODES = ("distance_data", "heat_kernel_case_i", "heat_kernel_case_ii")
CONSTANTS_FILE = Path(__file__).with_name("constants.json")

# artifact names
BUNDLE = "bundle.json"
KERNEL = "kernel_samples.json"
T_SELECTION = "t_selection.json"
CHARTS = "charts.json"
MATRIX = "distance_matrix.csv"
MATRIX_SIDECAR = "distance_matrix.json"
GRAPH = "graph.json"
EMBEDDING = "embedding_mds.csv"
EVALUATION = "evaluation.json"
RESIDUALS = "residuals.csv"
RUN = "run.json"
SWEEP_CSV = "sweep.csv"
SWEEP_JSON = "sweep.json"


def load_constants_ledger() -> dict:
    return json.loads(CONSTANTS_FILE.read_text())


# -- configuration -----------------------------------------------------------------


@dataclass
class PipelineConfig:
    manifold: dict
    bounds: dict
    params: dict
    mode: str = "distance_data"
    noise: dict = field(default_factory=lambda: {"kind": "none"})
    seed: int = 0
    output: Path = Path("out")
    ball_center: list | None = None
    x_region: dict | None = None
    nodes: dict = field(default_factory=lambda: {"count": 16})
    heat: dict = field(default_factory=dict)
    evaluate: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    bundle_file: Path | None = None
    base_dir: Path = Path(".")

    def __post_init__(self):
        if self.mode not in MODES:
            raise InputError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if "eps1" not in self.params and self.bundle_file is None:
            raise InputError("config field 'params.eps1' is required")
        if self.mode != "distance_data":
            for key in ("times", "sigma"):
                if key not in self.heat:
                    raise InputError(f"mode {self.mode} requires the field 'heat.{key}'")
            if self.mode == "heat_kernel_case_i" and "landmark_distances" not in self.heat:
                raise InputError(
                    "mode heat_kernel_case_i requires the field 'heat.landmark_distances' "
                    "(externally supplied landmark distances d_hat_Y)"
                )
        if not isinstance(self.seed, int) or self.seed < 0:
            raise InputError("seed must be a nonnegative integer")

    @property
    def spec(self):
        return manifold_from_json(self.manifold)

    def reconstruction_params(self) -> ReconstructionParams:
        doc = dict(self.params)
        eps1 = float(doc.pop("eps1"))
        eps0 = float(doc.pop("eps0", eps1))
        bounds = GeometryBounds.from_json(self.bounds)
        return ReconstructionParams(bounds, eps0, eps1, **doc)

    def with_overrides(self, *, seed=None, output=None, eps1=None, sigma=None) -> "PipelineConfig":
        cfg = copy.deepcopy(self)
        if seed is not None:
            cfg.seed = int(seed)
        if output is not None:
            cfg.output = Path(output)
        if eps1 is not None:
            cfg.params["eps1"] = float(eps1)
            cfg.params["eps0"] = min(float(cfg.params.get("eps0", eps1)), float(eps1))
        if sigma is not None:
            cfg.heat["sigma"] = float(sigma)
        return cfg

    def to_json(self) -> dict:
        return {
            "manifold": self.manifold,
            "bounds": self.bounds,
            "params": self.params,
            "mode": self.mode,
            "noise": self.noise,
            "seed": self.seed,
            "ball_center": self.ball_center,
            "x_region": self.x_region,
            "nodes": self.nodes,
            "heat": self.heat,
            "evaluate": self.evaluate,
            "sweep": self.sweep,
            "bundle_file": None if self.bundle_file is None else str(self.bundle_file),
        }


def load_config(path) -> PipelineConfig:
    """Read a JSON config; relative paths resolve against the config's folder."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(doc, path.parent)


def config_from_dict(doc: dict, base_dir=".") -> PipelineConfig:
    base = Path(base_dir)
    doc = copy.deepcopy(doc)
    known = set(PipelineConfig.__dataclass_fields__) - {"base_dir"}
    unknown = set(doc) - known
    if unknown:
        raise InputError(f"unknown config fields {sorted(unknown)}")
    for key in ("manifold", "bounds"):
        if key not in doc and "bundle_file" not in doc:
            raise InputError(f"config field {key!r} is required")
    doc.setdefault("manifold", {})
    doc.setdefault("bounds", {})
    doc.setdefault("params", {})
    doc["output"] = base / doc.get("output", "out")
    if doc.get("bundle_file") is not None:
        doc["bundle_file"] = base / doc["bundle_file"]
    heat = doc.get("heat") or {}
    if isinstance(heat.get("landmark_distances"), str):
        heat["landmark_distances"] = str(base / heat["landmark_distances"])
    doc["heat"] = heat
    return PipelineConfig(base_dir=base, **doc)


# -- run report -------------------------------------------------------------------


@dataclass
class RunReport:
    status: str = "ok"
    stages: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    failure: dict | None = None
    artifacts: list = field(default_factory=list)

    def add_flags(self, stage: str, events: list) -> None:
        for ev in events:
            self.flags.append({"stage": stage, **ev})

    def stage_flag_counts(self) -> dict:
        counts: dict = {}
        for st in self.stages:
            counts[st["name"]] = st.get("flags", 0)
        return counts

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "stages": self.stages,
            "flags": self.flags,
            "flag_count": len(self.flags),
            "errors": self.errors,
            "constants": self.constants,
            "failure": self.failure,
            "artifacts": self.artifacts,
        }


class _Stage:
    """Times a stage and records its outcome in the report."""

    def __init__(self, report: RunReport, name: str):
        self.report = report
        self.entry = {"name": name, "status": "ok", "seconds": 0.0, "flags": 0}

    def __enter__(self):
        self._t = time.perf_counter()
        return self

    def flag(self, events: list) -> None:
        self.report.add_flags(self.entry["name"], events)
        self.entry["flags"] += len(events)

    def __exit__(self, exc_type, exc, tb):
        self.entry["seconds"] = time.perf_counter() - self._t
        if exc is not None:
            self.entry["status"] = "failed"
            if isinstance(exc, ReconstructionError):
                self.entry["error"] = {"category": exc.category, "message": str(exc)}
        self.report.stages.append(self.entry)
        return False


# -- stages -------------------------------------------------------------------------


def _write(out: Path, name: str, text: str, report: RunReport | None = None) -> Path:
    path = out / name
    atomic_write_text(path, text)
    if report is not None and name not in report.artifacts:
        report.artifacts.append(name)
    return path


def _ball_center(cfg: PipelineConfig, spec):
    if cfg.ball_center is not None:
        return spec.validate_points(cfg.ball_center)[0]
    return spec.random_points(np.random.default_rng(cfg.seed), 1)[0]


def stage_synth(cfg: PipelineConfig, report: RunReport | None = None):
    """Bundle (distance mode) or kernel samples (heat modes), written to disk."""
    out = Path(cfg.output)
    if cfg.bundle_file is not None:
        bundle = DataBundle.from_json(Path(cfg.bundle_file).read_text())
        _write(out, BUNDLE, bundle.to_json(), report)
        return bundle
    spec = cfg.spec
    params = cfg.reconstruction_params()
    x0 = _ball_center(cfg, spec)
    if cfg.mode == "distance_data":
        noise = cfg.noise or {"kind": "none"}
        kind = noise.get("kind", "none")
        bound = float(noise.get("bound", 0.0 if kind == "none" else params.eps1))
        model = NoiseModel(kind, bound, int(noise.get("seed", cfg.seed)))
        x_region = None
        if cfg.x_region:
            xr = cfg.x_region
            x_region = Region(xr.get("kind", "ball"), x0, float(xr.get("radius", 0.0)),
                              float(xr.get("inner_radius", 0.0)))
        bundle = synthesize_bundle(spec, params, model, cfg.seed, ball_center=x0,
                                   x_region=x_region)
        _write(out, BUNDLE, bundle.to_json(), report)
        return bundle
    heat = cfg.heat
    rng = np.random.default_rng(cfg.seed)
    seeds = [int(v) for v in rng.integers(0, 2**62, size=4)]
    y_eps = float(heat.get("y_epsilon", params.eps0))
    z_eps = float(heat.get("z_epsilon", y_eps))
    y_pts = sample_net(spec, Region("ball", x0, params.R), y_eps, seeds[0], seed_points=x0[None])
    if cfg.mode == "heat_kernel_case_ii":
        z_pts = sample_net(spec, "whole", z_eps, seeds[1])
        tag = FULL
    else:
        z_pts = sample_net(spec, Region("complement", x0, params.R), z_eps, seeds[1])
        tag = SEPARATED
    samples = corrupt_kernel(spec, y_pts, z_pts, heat["times"], float(heat["sigma"]),
                             heat.get("noise_profile", "worst_case_sign"), seeds[2],
                             case_tag=tag)
    samples.save(out / KERNEL)
    if report is not None:
        report.artifacts.extend([KERNEL, Path(KERNEL).with_suffix(".npy").name])
    return samples


def _landmark_distances(cfg: PipelineConfig, samples: KernelSampleSet):
    src = cfg.heat.get("landmark_distances")
    if src is None:
        raise InputError("the field 'heat.landmark_distances' (d_hat_Y) is missing")
    if isinstance(src, dict):
        # synthetic supply: true distances plus uniform error below h
        if samples.spec is None:
            raise InputError("synthetic landmark distances need hidden landmark points")
        h = float(src["h"])
        true = samples.spec.pairwise(samples.y_points, samples.y_points)
        rng = np.random.default_rng(int(src.get("seed", cfg.seed)))
        err = h * (1 - 1e-12) * (2 * rng.random(true.shape) - 1)
        err = np.triu(err, 1) + np.triu(err, 1).T
        return np.maximum(true + err, 0.0)
    try:
        return np.loadtxt(src, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read landmark distances from {src}: {exc}") from exc


def stage_heat2dist(cfg: PipelineConfig, samples: KernelSampleSet | None = None,
                    report: RunReport | None = None, stage: _Stage | None = None):
    out = Path(cfg.output)
    if samples is None:
        samples = KernelSampleSet.load(out / KERNEL)
    sel = select_t(samples, estimator=cfg.heat.get("estimator", "normalized"))
    est = distances_from_kernel(samples, sel)
    _write(out, T_SELECTION, dumps17({"t_star": sel.t_star, "estimator": sel.estimator,
                                      "diagnostics": sel.diagnostics}), report)
    if stage is not None:
        stage.flag([{"kind": "kernel_clamp", **f} for f in est.flags()])
    if cfg.mode == "heat_kernel_case_i":
        bundle = assemble_bundle_from_kernel(samples, est, "given", cfg.reconstruction_params(),
                                             landmark_distances=_landmark_distances(cfg, samples))
    else:
        bundle = assemble_bundle_from_kernel(samples, est, "kernel", cfg.reconstruction_params())
    _write(out, BUNDLE, bundle.to_json(), report)
    return bundle


def choose_nodes(cfg: PipelineConfig, bundle: DataBundle) -> np.ndarray:
    spec = cfg.nodes or {}
    if "indices" in spec:
        nodes = np.asarray(spec["indices"], dtype=np.int64)
        if nodes.ndim != 1 or len(nodes) == 0 or nodes.min() < 0 or nodes.max() >= bundle.n_vectors:
            raise InputError("nodes.indices must list valid vector indices")
        return nodes
    return select_nodes(bundle.view(), int(spec.get("count", 16)),
                        radius=spec.get("radius"), spacing=float(spec.get("spacing", 0.0)),
                        columns=spec.get("columns"))


def stage_local(cfg: PipelineConfig, bundle: DataBundle | None = None,
                stage: _Stage | None = None, report: RunReport | None = None):
    """Charts for every node that has an admissible neighbour below ``rho0``."""
    out = Path(cfg.output)
    if bundle is None:
        bundle = DataBundle.from_json((out / BUNDLE).read_text())
    view = bundle.view()
    nodes = choose_nodes(cfg, bundle)
    rec = LocalReconstructor(view)
    charts, failures = {}, []
    for a in nodes_needing_charts(view, nodes):
        try:
            charts[int(a)] = rec.build_chart(int(nodes[a]))
        except ReconstructionError as exc:
            failures.append({"kind": "chart_failure", "node": int(a), "vector": int(nodes[a]),
                             "category": exc.category, "message": str(exc)})
    if stage is not None:
        stage.flag(failures)
    doc = {
        "nodes": nodes,
        "charts": [{"node": a, **charts[a].to_json()} for a in sorted(charts)],
        "failures": failures,
    }
    _write(out, CHARTS, dumps17(doc), report)
    return nodes, charts, failures


def load_charts(path) -> tuple[np.ndarray, dict, list]:
    doc = json.loads(Path(path).read_text())
    nodes = np.asarray(doc["nodes"], dtype=np.int64)
    charts = {int(c["node"]): LocalChart.from_json(c) for c in doc["charts"]}
    return nodes, charts, doc.get("failures", [])


def classical_mds(values: np.ndarray, dim: int = 2) -> np.ndarray | None:
    """Classical scaling of a finite distance matrix (``None`` if any entry is
    infinite).  Signs are fixed so the output is deterministic."""
    if not np.all(np.isfinite(values)):
        return None
    n = len(values)
    J = np.eye(n) - 1.0 / n
    B = -0.5 * J @ (values**2) @ J
    w, V = np.linalg.eigh((B + B.T) / 2)
    order = np.argsort(w)[::-1][:dim]
    w, V = w[order], V[:, order]
    for k in range(V.shape[1]):
        if V[np.argmax(np.abs(V[:, k])), k] < 0:
            V[:, k] = -V[:, k]
    return V * np.sqrt(np.maximum(w, 0.0))


def stage_global(cfg: PipelineConfig, bundle: DataBundle | None = None, local=None,
                 stage: _Stage | None = None, report: RunReport | None = None) -> DistanceMatrix:
    out = Path(cfg.output)
    if bundle is None:
        bundle = DataBundle.from_json((out / BUNDLE).read_text())
    nodes, charts, failures = local if local is not None else load_charts(out / CHARTS)
    failed = {int(f["node"]): f["category"] for f in failures}
    graph = build_graph(bundle.view(), charts, nodes=nodes, failed=failed)
    matrix = chain_distances(graph)
    matrix.params_hash = params_hash(bundle.params)
    write_matrix(matrix, out / MATRIX, out / MATRIX_SIDECAR)
    if report is not None:
        report.artifacts.extend([MATRIX, MATRIX_SIDECAR])
    unreachable = [{"kind": "unreachable", "i": int(nodes[a]), "j": int(nodes[b])}
                   for a, b in matrix.unreachable]
    clamps = [{"kind": "local_clamp", "node": c["node"], "neighbor": c["neighbor"]}
              for c in graph.clamped]
    if stage is not None:
        stage.flag(clamps + unreachable)
    edges = graph.edges()
    _write(out, GRAPH, dumps17({
        "nodes": nodes,
        "edges": [[a, b, w, m] for a, b, w, m in edges],
        "gaps": graph.gaps,
        "clamped": graph.clamped,
        "hop_cap": graph.hop_cap,
        "threshold": graph.threshold,
        "connected": graph.is_connected(),
    }), report)
    emb = classical_mds(matrix.values)
    if emb is not None:
        lines = ["vector,x,y"] + [f"{int(v)},{x:.17g},{y:.17g}" for v, (x, y) in zip(nodes, emb)]
        _write(out, EMBEDDING, "\n".join(lines) + "\n", report)
    return matrix


def stage_evaluate(cfg: PipelineConfig, bundle: DataBundle | None = None,
                   matrix: DistanceMatrix | None = None, report: RunReport | None = None) -> dict:
    out = Path(cfg.output)
    if bundle is None:
        bundle = DataBundle.from_json((out / BUNDLE).read_text())
    if matrix is None:
        side = json.loads((out / MATRIX_SIDECAR).read_text())
        matrix = DistanceMatrix.from_csv((out / MATRIX).read_text(), side)
    if not bundle.has_provenance:
        doc = {"status": "skipped", "reason": "bundle has no provenance"}
        _write(out, EVALUATION, dumps17(doc), report)
        return doc
    ev = cfg.evaluate or {}
    rep = evaluate_matrix(matrix, bundle, probes=int(ev.get("probes", 0)), seed=cfg.seed)
    doc = {"status": "ok", **rep.to_json()}
    limit = ev.get("max_error")
    if limit is not None:
        doc["max_error_limit"] = float(limit)
        doc["within_limit"] = bool(rep.pairs > 0 and rep.max_error <= float(limit))
    _write(out, EVALUATION, dumps17(doc), report)
    _write(out, RESIDUALS, "residual\n" + "".join(f"{r:.17g}\n" for r in rep.residuals), report)
    return doc


# -- whole runs -------------------------------------------------------------------------


def run(cfg: PipelineConfig) -> RunReport:
    """All stages of the configured mode.  Stage failures stop the run, keep
    the artifacts written so far and are recorded in ``run.json``."""
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    report = RunReport()
    ledger = load_constants_ledger()
    try:
        with _Stage(report, "synth"):
            produced = stage_synth(cfg, report)
        report.constants = {"ledger": ledger}
        if isinstance(produced, KernelSampleSet):
            with _Stage(report, "heat2dist") as st:
                bundle = stage_heat2dist(cfg, produced, report, st)
        else:
            bundle = produced
        report.constants["params"] = bundle.params.to_json()
        with _Stage(report, "recon-local") as st:
            local = stage_local(cfg, bundle, st, report)
        with _Stage(report, "recon-global") as st:
            matrix = stage_global(cfg, bundle, local, st, report)
        with _Stage(report, "evaluate"):
            report.errors = stage_evaluate(cfg, bundle, matrix, report)
    except ReconstructionError as exc:
        report.status = "failed"
        report.failure = {"category": exc.category, "exit_code": exc.exit_code, "message": str(exc)}
    report.constants.setdefault("ledger", ledger)
    _write(out, RUN, json.dumps(report.to_json(), indent=2, sort_keys=True, default=_json_default) + "\n")
    return report


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


REFERENCE_EXPONENTS = {"eps1": 1 / 8, "sigma": 1 / 16}


def sweep(cfg: PipelineConfig) -> dict:
    """One run per axis value; long-format CSV plus a log-log slope."""
    axis = (cfg.sweep or {}).get("axis")
    values = list((cfg.sweep or {}).get("values") or [])
    if axis not in REFERENCE_EXPONENTS:
        raise InputError(f"sweep axis must be one of {sorted(REFERENCE_EXPONENTS)}")
    if not values:
        raise InputError("sweep axis values are empty")
    if any(b >= a for a, b in zip(values, values[1:])):
        raise InputError("sweep axis values must be sorted in descending order")
    out = Path(cfg.output)
    rows, runs = [], []
    for k, v in enumerate(values):
        sub = cfg.with_overrides(output=out / f"{axis}_{k}",
                                 **({"eps1": v} if axis == "eps1" else {"sigma": v}))
        try:
            rep = run(sub)
            status, err = rep.status, rep.errors
            failure = rep.failure
        except ReconstructionError as exc:
            status, err = "failed", {}
            failure = {"category": exc.category, "message": str(exc)}
        runs.append({"value": v, "status": status, "failure": failure,
                     "output": f"{axis}_{k}"})
        for metric in ("max_error", "mean_error", "unreachable"):
            if metric in err:
                rows.append((v, metric, err[metric], "evaluate"))
        rows.append((v, "status_ok", 1.0 if status == "ok" else 0.0, "run"))
    pts = [(v, e) for v, m, e, _ in rows if m == "max_error" and e > 0 and math.isfinite(e)]
    slope = None
    if len(pts) >= 2:
        lx = np.log([p[0] for p in pts])
        ly = np.log([p[1] for p in pts])
        slope = float(np.polyfit(lx, ly, 1)[0])
    lines = ["axis,value,metric,metric_value,stage"]
    lines += [f"{axis},{v:.17g},{m},{e:.17g},{st}" for v, m, e, st in rows]
    _write(out, SWEEP_CSV, "\n".join(lines) + "\n")
    doc = {"axis": axis, "values": values, "runs": runs, "slope": slope,
           "reference_exponent": REFERENCE_EXPONENTS[axis]}
    _write(out, SWEEP_JSON, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def summarize(out) -> str:
    """Human-readable summary of ``run.json`` or ``sweep.json`` in ``out``."""
    out = Path(out)
    lines = []
    if (out / SWEEP_JSON).exists():
        doc = json.loads((out / SWEEP_JSON).read_text())
        lines.append(f"sweep over {doc['axis']}: {len(doc['runs'])} runs")
        for r in doc["runs"]:
            lines.append(f"  {doc['axis']}={r['value']:g} status={r['status']}")
        if doc["slope"] is not None:
            lines.append(f"log-log slope {doc['slope']:.4f} (reference exponent {doc['reference_exponent']:.4f})")
    if (out / RUN).exists():
        doc = json.loads((out / RUN).read_text())
        lines.append(f"run status: {doc['status']}")
        for st in doc["stages"]:
            lines.append(f"  {st['name']:<13} {st['status']:<7} {st['seconds']:8.2f}s flags={st['flags']}")
        err = doc.get("errors") or {}
        if err.get("status") == "ok":
            lines.append(f"max error {err['max_error']:.6g} over {err['pairs']} pairs, "
                         f"{err['unreachable']} unreachable")
        elif err:
            lines.append(f"evaluation {err.get('status')}")
        if doc.get("failure"):
            f = doc["failure"]
            lines.append(f"failure ({f['category']}): {f['message']}")
    if not lines:
        raise InputError(f"no run.json or sweep.json in {out}")
    return "\n".join(lines)


def write_report(out) -> str:
    """Stage table as CSV (``report.csv``) and the text summary."""
    out = Path(out)
    text = summarize(out)
    if (out / RUN).exists():
        doc = json.loads((out / RUN).read_text())
        lines = ["stage,status,seconds,flags"]
        lines += [f"{s['name']},{s['status']},{s['seconds']:.6f},{s['flags']}" for s in doc["stages"]]
        _write(out, "report.csv", "\n".join(lines) + "\n")
    return text
