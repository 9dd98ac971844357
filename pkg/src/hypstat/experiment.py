"""Declarative experiment runs: spec parsing, caching, task graph and reports.

A spec is a YAML mapping with ``schema: hypstat/1``.  Unknown keys are
errors.  Relative file paths resolve against the spec's directory.  All
emitted CSV/JSON files are byte-deterministic for a given spec and input
files; wall-clock timings and cache statistics go to ``timings.json``,
which is excluded from the manifest inventory.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import platform
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
import scipy
import yaml

from . import __version__
from .coding import AutomaticStructure, build_free_group_coding, load_automatic_structure, \
    scc_decomposition, validate_strongly_markov
from .counting import BallEnumeration, Certificate, _PathTree, clt_report, counts_on_grid, \
    empirical_manhattan, enumerate_ball, growth_rate, orbital_constant, rough_similarity_test, \
    snap_grid, translation_defect_fraction
from .green import FiniteMeasure, GreenTable, compute_green_table, green_metric, \
    green_table_key, load_measure
from .group import FreeGroup
from .hilbert import hilbert_length, load_representation, schottky_rep
from .metrics import AdditiveMetric, MetricModel, measure_quasi_isometry, scale_metric, \
    word_metric
from .symbolic import analyze_pair, build_transfer, manhattan_curve, maximal_sfts, pressure

SCHEMA = "hypstat/1"
MANIFEST_SCHEMA = "hypstat-manifest/1"
REPORT_SCHEMA = "hypstat-report/1"
TASKS = ("validate", "pressure-grid", "manhattan", "constants", "clt", "rigidity")
PLOT_KINDS = ("cdf", "manhattan", "moments", "growth")


class SpecError(ValueError):
    """Invalid experiment spec (exit code 2)."""


class IncomparableError(ValueError):
    pass


# --------------------------------------------------------------------------- spec

KNOB_DEFAULTS: dict[str, Any] = {
    "depth": 4,
    "horizon": None,
    "alternatives": 4,
    "tol": 1e-13,
    "validate_depth": 10,
    "t_grid": None,
    "t_points": 8,
    "max_ball": 5_000_000,
    "defect_max_ball": 5_000_000,
    "count_mode": "auto",
    "budget": 20_000_000,
    "s_grid": [-0.5, -0.4, -0.3, -0.2, -0.1, 0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
    "pressure_s": [0.95, 1.0, 1.05],
    "pressure_t": [-0.05, 0.0, 0.05],
    "similarity_samples": 50,
    "similarity_length": 12,
}

KNOB_RANGES: dict[str, tuple[float, float]] = {
    "depth": (1, 8), "horizon": (2, 48), "alternatives": (0, 64), "tol": (1e-16, 1e-6),
    "validate_depth": (1, 14), "t_points": (5, 64), "max_ball": (10, 5e7),
    "defect_max_ball": (10, 5e7), "budget": (100, 2e8),
    "similarity_samples": (50, 10_000), "similarity_length": (1, 40),
}

METRIC_KEYS = {
    "word": set(),
    "additive": {"weights"},
    "green": {"measure", "uniform", "weights", "radius", "steps", "tolerance"},
    "hilbert": {"representation", "schottky"},
    "scaled": {"base", "factor"},
}


@dataclass
class ExperimentSpec:
    name: str
    group: dict
    d: dict
    d_star: dict
    tasks: tuple[str, ...]
    knobs: dict
    output: Path
    cache: Optional[Path]
    seed: int
    base_dir: Path
    source: Optional[Path] = None
    files: dict = field(default_factory=dict)

    def canonical(self) -> dict:
        """Hashable content: everything except output/cache locations.

        Referenced files enter by content hash, so editing a measure file
        changes the spec hash even if its path does not.
        """
        return {"schema": SCHEMA, "name": self.name, "group": self.group, "d": self.d,
                "d_star": self.d_star, "tasks": list(self.tasks), "knobs": self.knobs,
                "seed": self.seed, "files": {k: v["sha256"] for k, v in self.files.items()}}

    def path(self, name: str) -> str:
        """Absolute location of a file referenced by the spec."""
        return self.files[name]["path"]

    @property
    def hash(self) -> str:
        return _sha(json.dumps(self.canonical(), sort_keys=True))


def _sha(text) -> str:
    if isinstance(text, str):
        text = text.encode()
    return hashlib.sha256(text).hexdigest()


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise SpecError(f"{where}: expected a mapping, got {type(obj).__name__}")
    bad = sorted(set(obj) - set(allowed))
    if bad:
        raise SpecError(f"{where}: unknown key(s) {', '.join(bad)}")


def _resolve(base: Path, p: str, files: dict, where: str) -> str:
    path = (base / p).resolve() if not os.path.isabs(p) else Path(p)
    if not path.is_file():
        raise SpecError(f"{where}: file not found: {path}")
    files[str(p)] = {"sha256": _sha(path.read_bytes()), "path": str(path)}
    return str(p)


def _check_metric(m, base, files, where):
    _check_keys(m, {"kind"} | set().union(*METRIC_KEYS.values()), where)
    kind = m.get("kind")
    if kind not in METRIC_KEYS:
        raise SpecError(f"{where}.kind: expected one of {sorted(METRIC_KEYS)}, got {kind!r}")
    _check_keys(m, {"kind"} | METRIC_KEYS[kind], where)
    out = dict(m)
    if kind == "green":
        srcs = [k for k in ("measure", "uniform", "weights") if k in m]
        if len(srcs) != 1:
            raise SpecError(f"{where}: give exactly one of measure, uniform, weights")
        if "measure" in m:
            out["measure"] = _resolve(base, m["measure"], files, f"{where}.measure")
        r, s = m.get("radius", 12), m.get("steps", 160)
        if not (isinstance(r, int) and 2 <= r <= 16):
            raise SpecError(f"{where}.radius: must be an integer in [2, 16]")
        if not (isinstance(s, int) and 8 <= s <= 4000):
            raise SpecError(f"{where}.steps: must be an integer in [8, 4000]")
    elif kind == "additive":
        w = m.get("weights")
        if not isinstance(w, dict) or not w or any(not (isinstance(v, (int, float)) and v > 0)
                                                    for v in w.values()):
            raise SpecError(f"{where}.weights: expected a mapping of positive numbers")
    elif kind == "hilbert":
        if ("representation" in m) == ("schottky" in m):
            raise SpecError(f"{where}: give exactly one of representation, schottky")
        if "representation" in m:
            out["representation"] = _resolve(base, m["representation"], files,
                                             f"{where}.representation")
    elif kind == "scaled":
        f = m.get("factor")
        if not (isinstance(f, (int, float)) and f > 0):
            raise SpecError(f"{where}.factor: must be a positive number")
        if "base" not in m:
            raise SpecError(f"{where}: missing base metric")
        out["base"] = _check_metric(m["base"], base, files, f"{where}.base")
    return out


def parse_spec(data: Any, base_dir: Path, source: Optional[Path] = None) -> ExperimentSpec:
    _check_keys(data, {"schema", "name", "group", "d", "d_star", "tasks", "knobs", "output",
                       "cache", "seed"}, "spec")
    if data.get("schema") != SCHEMA:
        raise SpecError(f"spec.schema: expected {SCHEMA!r}, got {data.get('schema')!r}")
    for key in ("group", "d", "d_star", "output"):
        if key not in data:
            raise SpecError(f"spec: missing required key {key!r}")
    files: dict = {}
    group = data["group"]
    _check_keys(group, {"free_rank", "automaton"}, "group")
    if len(group) != 1:
        raise SpecError("group: give exactly one of free_rank, automaton")
    group = dict(group)
    if "free_rank" in group:
        r = group["free_rank"]
        if not (isinstance(r, int) and 1 <= r <= 6):
            raise SpecError("group.free_rank: must be an integer in [1, 6]")
    else:
        group["automaton"] = _resolve(base_dir, group["automaton"], files, "group.automaton")
    d = _check_metric(data["d"], base_dir, files, "d")
    ds = _check_metric(data["d_star"], base_dir, files, "d_star")
    tasks = data.get("tasks", ["all"])
    if isinstance(tasks, str):
        tasks = [tasks]
    bad = [t for t in tasks if t not in TASKS + ("all",)]
    if bad:
        raise SpecError(f"tasks: unknown task(s) {', '.join(map(str, bad))}")
    tasks = TASKS if "all" in tasks else tuple(t for t in TASKS if t in tasks)
    knobs = dict(KNOB_DEFAULTS)
    user = data.get("knobs") or {}
    _check_keys(user, KNOB_DEFAULTS, "knobs")
    knobs.update(user)
    for k, (lo, hi) in KNOB_RANGES.items():
        v = knobs[k]
        if v is None and k == "horizon":
            continue
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not (lo <= v <= hi):
            raise SpecError(f"knobs.{k}: {v!r} outside documented range [{lo:g}, {hi:g}]")
    if knobs["horizon"] is not None and knobs["horizon"] <= knobs["depth"]:
        raise SpecError("knobs.horizon: must exceed knobs.depth")
    if knobs["count_mode"] not in ("auto", "exact", "compressed"):
        raise SpecError("knobs.count_mode: expected auto, exact or compressed")
    for k in ("s_grid", "pressure_s", "pressure_t"):
        if not (isinstance(knobs[k], list) and knobs[k]
                and all(isinstance(x, (int, float)) for x in knobs[k])):
            raise SpecError(f"knobs.{k}: expected a non-empty list of numbers")
    tg = knobs["t_grid"]
    if tg is not None:
        if not (isinstance(tg, list) and len(tg) >= 5 and all(isinstance(x, (int, float)) and x > 0
                                                               for x in tg)):
            raise SpecError("knobs.t_grid: expected at least 5 positive numbers")
        knobs["t_grid"] = sorted(float(x) for x in tg)
    seed = data.get("seed", 0)
    if not (isinstance(seed, int) and seed >= 0):
        raise SpecError("seed: must be a non-negative integer")
    out = Path(data["output"])
    out = out if out.is_absolute() else base_dir / out
    cache = data.get("cache")
    cache = None if cache is None else (Path(cache) if os.path.isabs(cache) else base_dir / cache)
    return ExperimentSpec(str(data.get("name", source.stem if source else "experiment")),
                          group, d, ds, tasks, knobs, out, cache, seed, base_dir, source, files)


def load_spec(path) -> ExperimentSpec:
    path = Path(path)
    if not path.is_file():
        raise SpecError(f"spec file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise SpecError(f"{path}: invalid YAML: {e}") from None
    return parse_spec(data, path.resolve().parent, path)


# -------------------------------------------------------------------------- cache

class Cache:
    """Content-addressed npz store for Green tables and ball enumerations."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.hits: list[str] = []
        self.misses: list[str] = []

    @classmethod
    def for_spec(cls, spec: ExperimentSpec) -> "Cache":
        root = spec.cache or os.environ.get("HYPSTAT_CACHE") or Path.home() / ".cache" / "hypstat"
        return cls(Path(root))

    def path(self, kind: str, key: str) -> Path:
        return self.root / kind / f"{key}.npz"

    def green_table(self, mu: FiniteMeasure, radius: int, steps: int) -> GreenTable:
        key = green_table_key(mu, radius, steps)
        p = self.path("green", key)
        if p.is_file():
            self.hits.append(f"green/{key}")
            return GreenTable.load(p, mu.group)
        self.misses.append(f"green/{key}")
        table = compute_green_table(mu, radius, steps)
        p.parent.mkdir(parents=True, exist_ok=True)
        table.save(p)
        return table

    def ball(self, key: str, make: Callable[[], BallEnumeration]) -> BallEnumeration:
        p = self.path("ball", key)
        if p.is_file():
            self.hits.append(f"ball/{key}")
            return load_ball(p)
        self.misses.append(f"ball/{key}")
        ball = make()
        p.parent.mkdir(parents=True, exist_ok=True)
        save_ball(ball, p)
        return ball


def save_ball(ball: BallEnumeration, path) -> None:
    arrays = {"d": ball.d, "lengths": ball.lengths}
    for name in ("d_star", "weights", "node"):
        v = getattr(ball, name)
        if v is not None:
            arrays[name] = v
    if ball.tree is not None:
        sizes = np.array([len(p) for p in ball.tree.parent])
        arrays["tree_sizes"] = sizes
        arrays["tree_parent"] = np.concatenate(ball.tree.parent)
        arrays["tree_label"] = np.concatenate(ball.tree.label)
    meta = {"T": ball.T, "certificate": ball.certificate.to_dict(),
            "metric_hash": ball.metric_hash,
            "alphabet": list(ball.tree.alphabet) if ball.tree is not None else None}
    np.savez_compressed(path, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_ball(path) -> BallEnumeration:
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        get = lambda k: z[k] if k in z.files else None  # noqa: E731
        d, lengths, ds, w, node = get("d"), get("lengths"), get("d_star"), get("weights"), get("node")
        tree = None
        if "tree_sizes" in z.files:
            cuts = np.cumsum(z["tree_sizes"])[:-1]
            tree = _PathTree(tuple(meta["alphabet"]), np.split(z["tree_parent"], cuts),
                             np.split(z["tree_label"], cuts))
    return BallEnumeration(meta["T"], d, ds, lengths, Certificate(**meta["certificate"]),
                           meta["metric_hash"], w, node, tree)


# ------------------------------------------------------------------------ metrics

@dataclass
class MetricBuild:
    metric: MetricModel
    info: dict


def _symmetric_weights(alphabet, weights: dict, where: str) -> dict:
    out = {}
    for x in alphabet.letters:
        y = alphabet.inverse[x]
        w = weights.get(x, weights.get(y))
        if w is None:
            raise SpecError(f"{where}.weights: no weight for letter {x!r} or its inverse")
        if x in weights and y in weights and weights[x] != weights[y]:
            raise SpecError(f"{where}.weights: {x!r} and {y!r} differ (metric must be symmetric)")
        out[x] = float(w)
    return out


def build_metric(m: dict, A: AutomaticStructure, cache: Cache, where: str,
                 resolve: Callable[[str], str] = str) -> MetricBuild:
    kind = m["kind"]
    G = A.group
    if kind == "word":
        return MetricBuild(word_metric(G if G is not None else A.alphabet, A), {})
    if kind == "scaled":
        b = build_metric(m["base"], A, cache, f"{where}.base", resolve)
        return MetricBuild(scale_metric(b.metric, float(m["factor"])), b.info)
    if kind == "additive":
        w = _symmetric_weights(A.alphabet, m["weights"], where)
        return MetricBuild(AdditiveMetric(A.alphabet, w, G, A), {})
    if G is None:
        raise SpecError(f"{where}: {kind} metrics need a free group coding")
    if kind == "green":
        if "measure" in m:
            mu = load_measure(resolve(m["measure"]), G)
        elif "uniform" in m:
            mu = FiniteMeasure.uniform(G)
        else:
            mu = FiniteMeasure.nearest_neighbour(G, _symmetric_weights(G.alphabet, m["weights"], where))
        table = cache.green_table(mu, m.get("radius", 12), m.get("steps", 160))
        metric, table, flagged = green_metric(mu, table.radius, table.steps,
                                              m.get("tolerance", 1e-8), table)
        info = {"certified": table.certified, "rho_hat": table.rho_hat,
                "time_tail": table.time_tail, "flagged": flagged[:10],
                "n_flagged": len(flagged), "additive": metric.is_additive}
        if metric.is_additive:
            info["letter_errors"] = [float(x) for x in metric.letter_errors]
        build = MetricBuild(metric, info)
        return build if metric.is_additive else _with_envelope(build, min(8, table.radius))
    if kind == "hilbert":
        rep = (load_representation(resolve(m["representation"]), G) if "representation" in m
               else schottky_rep(G, float(m["schottky"])))
        return _with_envelope(MetricBuild(hilbert_length(rep), {}), 8)
    raise SpecError(f"{where}: unknown kind {kind!r}")


def _with_envelope(b: MetricBuild, radius: int) -> MetricBuild:
    """Attach a measured (inflated) quasi-isometry envelope for radius-capped counting."""
    d = b.metric
    if d.quasi_iso is None and d.group is not None:
        d.quasi_iso = measure_quasi_isometry(d, [list(d.group.sphere(n)) for n in range(radius + 1)])
        b.info["quasi_isometry"] = {"L": d.quasi_iso.L, "C": d.quasi_iso.C, "measured_to": radius}
    return b


# --------------------------------------------------------------------- formatting

def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, Path):
        return str(x)
    return x


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else ""
    return str(v)


def dumps_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


class Emitter:
    """Single writer for run outputs; records content hashes for the manifest."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.inventory: dict[str, str] = {}

    def write(self, name: str, text: str) -> None:
        data = text.encode()
        (self.root / name).write_bytes(data)
        self.inventory[name] = _sha(data)


# -------------------------------------------------------------------------- tasks

@dataclass
class RunManifest:
    spec_hash: str
    versions: dict
    normalization: Optional[dict]
    tasks: dict
    outputs: dict
    summary: dict
    group: dict
    timings: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(t["status"] != "failed" for t in self.tasks.values())

    def to_dict(self) -> dict:
        return {"schema": MANIFEST_SCHEMA, "spec_hash": self.spec_hash, "versions": self.versions,
                "normalization": self.normalization, "tasks": self.tasks, "outputs": self.outputs,
                "summary": self.summary, "group": self.group, "timings_file": "timings.json"}


def _versions() -> dict:
    return {"hypstat": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


class _Run:
    def __init__(self, spec: ExperimentSpec, cache: Cache):
        self.spec = spec
        self.k = spec.knobs
        self.cache = cache
        self.out = Emitter(spec.output)
        self.status: dict[str, dict] = {}
        self.timings: dict[str, float] = {}
        self.report: dict[str, Any] = {}
        self.routes: dict[str, str] = {}
        self.A: Optional[AutomaticStructure] = None
        self.d = self.ds = None
        self.pair = None
        self.ball: Optional[BallEnumeration] = None
        self.T_grid: Optional[np.ndarray] = None

    # graph ------------------------------------------------------------------
    def plan(self) -> list[str]:
        req = set(self.spec.tasks)
        steps = ["setup"]
        if "validate" in req:
            steps.append("validate")
        if req & {"pressure-grid", "manhattan", "constants", "clt"}:
            steps.append("potentials")
        for t in ("pressure-grid", "constants"):
            if t in req or (t == "constants" and "clt" in req):
                steps.append(t)
        if req & {"clt", "rigidity"}:
            steps.append("counting")
        for t in ("manhattan", "clt", "rigidity"):
            if t in req:
                steps.append(t)
        steps.append("reports")
        return steps

    DEPS = {"validate": ["setup"], "potentials": ["setup"], "pressure-grid": ["potentials"],
            "constants": ["potentials"], "counting": ["setup"], "manhattan": ["potentials"],
            "clt": ["constants", "counting"], "rigidity": ["counting"], "reports": []}

    def execute(self) -> RunManifest:
        for step in self.plan():
            failed = [d for d in self.DEPS.get(step, []) if self.status.get(d, {}).get("status") != "ok"]
            t0 = time.perf_counter()
            if failed:
                self.status[step] = {"status": "failed", "error": f"dependency failed: {', '.join(failed)}"}
                continue
            try:
                extra = getattr(self, "task_" + step.replace("-", "_"))() or {}
                self.status[step] = {"status": "ok", **extra}
            except Exception as e:  # recorded with context, never swallowed silently
                tb = traceback.extract_tb(e.__traceback__)[-1]
                self.status[step] = {"status": "failed", "error": f"{type(e).__name__}: {e}",
                                     "where": f"{Path(tb.filename).name}:{tb.lineno}"}
            self.timings[step] = time.perf_counter() - t0
        return self.finish()

    # tasks ------------------------------------------------------------------
    def task_setup(self):
        g = self.spec.group
        if "free_rank" in g:
            self.A = build_free_group_coding(int(g["free_rank"]))
        else:
            self.A = load_automatic_structure(self.spec.path(g["automaton"]))
        db = build_metric(self.spec.d, self.A, self.cache, "d", self.spec.path)
        sb = build_metric(self.spec.d_star, self.A, self.cache, "d_star", self.spec.path)
        self.d, self.ds = db.metric, sb.metric
        self.report["metrics"] = {"d": {"descriptor": self.d.descriptor(), **db.info},
                                  "d_star": {"descriptor": self.ds.descriptor(), **sb.info}}
        self.report["group"] = self.group_descriptor()

    def group_descriptor(self) -> dict:
        A = self.A
        return {"alphabet": list(A.alphabet.letters), "n_vertices": A.n_vertices,
                "edges_sha256": _sha(json.dumps(sorted(map(list, A.edges)))),
                "free_rank": A.group.rank if A.group is not None else None}

    def task_validate(self):
        rep = validate_strongly_markov(self.A, int(self.k["validate_depth"]), self.A.group)
        comps = [{"id": c.id, "size": len(c.vertices), "period": c.period,
                  "spectral_radius": c.spectral_radius, "word_maximal": c.is_word_maximal}
                 for c in scc_decomposition(self.A)]
        self.report["validate"] = {**rep.to_dict(), "components": comps}
        self.out.write("validate.json", dumps_json(self.report["validate"]))
        if not rep.passed:
            raise RuntimeError(f"coding failed validation: {rep.violations[:3]}")

    def task_potentials(self):
        grid = [(float(s), float(t)) for s in self.k["pressure_s"] for t in self.k["pressure_t"]]
        self.pair = analyze_pair(self.A, self.d, self.ds, int(self.k["depth"]), self.k["horizon"],
                                 float(self.k["tol"]), self.spec.seed, int(self.k["alternatives"]),
                                 grid)
        p = self.pair
        rows = [("-".join(map(str, c)), p.psi_d(c), p.psi_star(c)) for c in p.sft.cylinders]
        self.out.write("potentials.csv", dumps_csv(("cylinder", "psi_d", "psi_star"), rows))
        self.report["potentials"] = {
            "depth": p.psi_d.depth, "horizon": self.k["horizon"] or 3 * p.psi_d.depth,
            "n_cylinders": len(rows), "resolution_error_d": p.psi_d.resolution_error,
            "resolution_error_star": p.psi_star.resolution_error,
            "flagged": len(p.psi_d.flagged) + len(p.psi_star.flagged)}

    def task_pressure_grid(self):
        p = self.pair
        rec = p.report.normalization
        psi_n = p.psi_d.scaled(rec.scale_d)
        sfts = maximal_sfts(self.A, p.psi_d.depth)
        rows = []
        for s, t in p.agreement.grid:
            for sft in sfts:
                pt = pressure(build_transfer(sft, psi_n, p.phi, s, t), float(self.k["tol"]))
                rows.append((s, t, sft.component.id, pt.value, pt.residual))
        self.out.write("pressure_grid.csv",
                       dumps_csv(("s", "t", "component", "pressure", "residual"), rows))
        self.report["pressure"] = {"components": p.agreement.components,
                                   "max_discrepancy": p.agreement.max_discrepancy,
                                   "agreement": p.agreement.passed, "route": "spectral"}
        if not p.agreement.passed:
            raise RuntimeError(f"maximal components disagree: {p.agreement.max_discrepancy:.3e}")

    def task_constants(self):
        r = self.pair.report
        eb = self.pair.error_bars
        margin = r.tau - r.v_d / r.v_star
        out = {**r.to_dict(), "error_bars": eb,
               "inequality": {"margin": margin,
                              "combined_error": eb["tau"] + eb["v_ratio"],
                              "holds": margin >= -(eb["tau"] + eb["v_ratio"])},
               "route": "spectral"}
        self.report["constants"] = out
        self.routes.update({"tau": "spectral", "sigma2": "spectral", "tau_curve": "curve",
                            "sigma2_curve": "curve", "v_d": "spectral", "v_star": "spectral"})
        self.out.write("constants.json", dumps_json(out))

    def _count_mode(self) -> str:
        mode = self.k["count_mode"]
        if mode != "auto":
            return mode
        wd, ws = self.d.letter_weights, self.ds.letter_weights
        if wd is not None and ws is not None and np.all(wd > 0):
            return "compressed"
        return "exact"

    def _ball_key(self, T, mode, with_star=True) -> str:
        blob = {"group": self.group_descriptor(), "d": self.d.descriptor(),
                "d_star": self.ds.descriptor() if with_star else None, "T": repr(float(T)),
                "mode": mode, "version": 1}
        return _sha(json.dumps(_clean(blob), sort_keys=True))[:24]

    def _ball(self, T, mode, with_star=True) -> BallEnumeration:
        key = self._ball_key(T, mode, with_star)
        return self.cache.ball(key, lambda: enumerate_ball(
            self.A, self.d, T, mode, self.ds if with_star else None, int(self.k["budget"]),
            metric_hash=key))

    def _auto_T_max(self, max_ball) -> float:
        """Largest attained-distance cut with at most ``max_ball`` elements (additive d)."""
        wd = self.d.letter_weights
        if wd is None or np.any(wd <= 0):
            raise SpecError("knobs.t_grid is required for non-additive d")
        probe = math.log(max_ball) / math.log(3.0) * float(wd.max()) + 2 * float(wd.max())
        while True:
            b = enumerate_ball(self.A, self.d, probe, "compressed", None, int(self.k["budget"]))
            if b.w.sum() > max_ball:
                break
            probe *= 1.25
        # largest attained value v with #{d <= v} <= max_ball; cut just above it
        order = np.argsort(b.d, kind="stable")
        sd, cw = b.d[order], np.cumsum(b.w[order])
        # only cut where the next value sits clear of the 1e-9 slack
        ends = np.append(np.flatnonzero(np.diff(sd) > 1e-9), sd.size - 1)
        ok = ends[cw[ends] <= max_ball]
        if not len(ok):
            raise RuntimeError("max_ball too small for a single sphere")
        return float(sd[ok[-1]]) + 1e-9

    def task_counting(self):
        mode = self._count_mode()
        max_ball = float(self.k["max_ball"])
        if self.k["t_grid"] is not None:
            T_max = float(self.k["t_grid"][-1])
        else:
            T_max = self._auto_T_max(max_ball)
        ball = self._ball(T_max, mode)
        if ball.cardinality > max_ball:
            raise RuntimeError(f"ball at T={T_max} has {ball.cardinality:.0f} > max_ball elements")
        self.ball = ball
        if self.k["t_grid"] is not None:
            grid = np.array(self.k["t_grid"], float)
        else:
            grid = np.linspace(T_max / 2, T_max, int(self.k["t_points"]))
            grid[-1] = T_max
        wd = self.d.letter_weights
        if wd is not None and np.ptp(wd) == 0:
            # lattice-valued distances: sample right after each jump
            grid = snap_grid(ball, grid[:-1]).tolist() + [T_max]
            grid = np.array(sorted(set(grid)))
        self.T_grid = grid
        N = counts_on_grid(ball, grid)
        self.report["counting"] = {"mode": mode, "T_max": T_max, "N_max": ball.cardinality,
                                   "certificate": ball.certificate.to_dict(),
                                   "T_grid": grid, "N": N, "route": "counting"}
        rows = []
        try:
            fit = growth_rate(grid, N)
            fitted = fit.fitted()
            self.report["counting"]["growth"] = {"v": fit.v, "band": fit.band, "route": "counting"}
            v_ref = self.pair.report.v_d if self.pair is not None else fit.v
            orb = orbital_constant(grid, N, v_ref)
            self.report["counting"]["orbital"] = {"values": orb.values, "oscillation": orb.oscillation,
                                                  "plateau": orb.plateau}
        except ValueError as e:
            fitted = [None] * len(grid)
            self.report["counting"]["growth"] = {"error": str(e)}
        for T, n, f in zip(grid, N, fitted):
            rows.append((T, n, math.log(n) if n > 0 else None, f))
        self.report.setdefault("plotdata", {})["growth"] = {
            "columns": ["T", "N", "logN", "fit"], "rows": rows}
        self.out.write("growth.csv", dumps_csv(("T", "N", "logN", "fit"), rows))
        return {"cache_key": ball.metric_hash}

    def task_manhattan(self):
        p = self.pair
        s = np.array(self.k["s_grid"], float)
        vd, vs = p.sft.values(p.psi_d), p.sft.values(p.psi_star)
        curve = manhattan_curve(p.sft, vs, vd, s, float(self.k["tol"]), p.report.normalization)
        emp = [None] * len(s)
        band = [None] * len(s)
        if self.ball is not None and self.ball.d_star is not None and self.T_grid is not None:
            for i, si in enumerate(s):
                try:
                    e = empirical_manhattan(self.ball, float(si), self.T_grid)
                    emp[i], band[i] = e.theta, e.band
                except ValueError:
                    pass
        sd = curve.second_differences()
        self.report["manhattan"] = {
            "s": s, "theta": curve.theta, "dtheta0": curve.dtheta0, "d2theta0": curve.d2theta0,
            "chord_deviation": curve.chord_deviation(), "min_second_difference": float(sd.min()),
            "route": "curve"}
        rows = list(zip(s, curve.theta, emp, band))
        self.report.setdefault("plotdata", {})["manhattan"] = {
            "columns": ["s", "theta_spectral", "theta_empirical", "empirical_band"], "rows": rows}
        self.out.write("manhattan.csv",
                       dumps_csv(("s", "theta_spectral", "theta_empirical", "empirical_band"), rows))

    def task_clt(self):
        r = self.pair.report
        reps = [clt_report(self.ball, r.tau, r.sigma2, float(T)) for T in self.T_grid]
        last = reps[-1]
        mrows = [(m.T, m.N, m.tau_hat, *m.moments, *m.moments_d, m.ks, m.ks_d, m.ks_sup)
                 for m in reps]
        mcols = ["T", "N", "tau_hat", "m1", "m2", "m3", "m4", "m1_d", "m2_d", "m3_d", "m4_d",
                 "ks", "ks_d", "ks_sup"]
        self.out.write("moments.csv", dumps_csv(mcols, mrows))
        crow = list(zip(last.t_grid, last.cdf, last.reference, last.cdf_d))
        self.out.write("clt_cdf.csv", dumps_csv(("t", "empirical", "reference", "empirical_d"), crow))
        self.report["clt"] = {**last.to_dict(), "ks_series": [m.ks for m in reps],
                              "ks_d_series": [m.ks_d for m in reps], "route": "counting"}
        pdata = self.report.setdefault("plotdata", {})
        pdata["cdf"] = {"columns": ["t", "empirical", "reference", "empirical_d"], "rows": crow}
        pdata["moments"] = {"columns": mcols, "rows": mrows}
        self.routes.update({"ks": "counting", "tau_hat": "counting"})

    def task_rigidity(self):
        G = self.A.group
        if G is None:
            raise RuntimeError("rigidity needs a free group coding for conjugacy sampling")
        sim = rough_similarity_test(self.d, self.ds, G, int(self.k["similarity_samples"]),
                                    int(self.k["similarity_length"]), self.spec.seed)
        out = {"similarity": sim.to_dict(), "route": "counting"}
        ball = self.ball
        if ball.tree is None:
            T = self._auto_T_max(float(self.k["defect_max_ball"])) if self.k["t_grid"] is None \
                else float(self.k["t_grid"][-1])
            ball = self._ball(T, "exact", with_star=False)
        grid = self.T_grid[self.T_grid <= ball.T + 1e-12]
        defect = translation_defect_fraction(ball, self.d, G, grid)
        out["translation_defect"] = defect.to_dict()
        self.report["rigidity"] = out
        self.out.write("rigidity.json", dumps_json(out))
        self.routes.update({"similarity": "counting", "translation_defect": "counting"})

    def task_reports(self):
        self.report["schema"] = REPORT_SCHEMA
        self.report["name"] = self.spec.name
        self.report["spec_hash"] = self.spec.hash
        self.report["routes"] = self.routes
        if self.pair is not None:
            self.report["normalization"] = self.pair.report.normalization.to_dict()
        self.report["status"] = {k: v["status"] for k, v in self.status.items()}
        self.out.write("report.json", dumps_json(self.report))

    # ------------------------------------------------------------------------
    def summary(self) -> dict:
        s: dict[str, Any] = {}
        c = self.report.get("constants")
        if c:
            for k in ("tau", "sigma2", "sigma2_normalized", "v_d", "v_star", "sigma2_curve"):
                s[k] = c[k]
        clt = self.report.get("clt")
        if clt:
            s.update(ks=clt["ks"], ks_d=clt["ks_d"], tau_hat=clt["tau_hat"])
        rig = self.report.get("rigidity")
        if rig:
            s["similarity"] = rig["similarity"]["verdict"]
        return s

    def finish(self) -> RunManifest:
        man = RunManifest(self.spec.hash, _versions(),
                          self.pair.report.normalization.to_dict() if self.pair else None,
                          {k: self.status[k] for k in self.status}, dict(sorted(self.out.inventory.items())),
                          {**self.summary(), "routes": self.routes},
                          self.report.get("group", {}),
                          {"seconds": self.timings, "cache_hits": self.cache.hits,
                           "cache_misses": self.cache.misses})
        (self.spec.output / "manifest.json").write_text(dumps_json(man.to_dict()))
        (self.spec.output / "timings.json").write_text(dumps_json(man.timings))
        return man


def run(spec_or_path, cache: Optional[Cache] = None) -> RunManifest:
    """Execute a spec; outputs land in ``spec.output``."""
    spec = spec_or_path if isinstance(spec_or_path, ExperimentSpec) else load_spec(spec_or_path)
    return _Run(spec, cache or Cache.for_spec(spec)).execute()


# ------------------------------------------------------------------- diff/plotdata

DIFF_KEYS = ("tau", "sigma2", "sigma2_normalized", "v_d", "v_star", "ks", "ks_d", "tau_hat")


def _load_json(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise SpecError(f"file not found: {path}") from None


def diff(manifest_a, manifest_b) -> list[dict]:
    """Rows ``{quantity, a, b, diff, rel}``.

    User-unit values depend on how each run scaled its metrics; ``sigma2``
    is also compared in normalised units (growth rate 1, mean distortion 1)
    so runs with rescaled metrics reconcile.
    """
    a, b = _load_json(manifest_a), _load_json(manifest_b)
    if a.get("schema") != b.get("schema") or a.get("schema") != MANIFEST_SCHEMA:
        raise IncomparableError(f"schema mismatch: {a.get('schema')!r} vs {b.get('schema')!r}")
    ga, gb = a.get("group", {}), b.get("group", {})
    if ga.get("edges_sha256") != gb.get("edges_sha256") or ga.get("alphabet") != gb.get("alphabet"):
        raise IncomparableError("incomparable: runs use different groups/codings")
    rows = []
    for k in DIFF_KEYS:
        x, y = a["summary"].get(k), b["summary"].get(k)
        if x is None and y is None:
            continue
        dv = None if x is None or y is None else y - x
        rel = None if dv is None else (abs(dv) / abs(x) if x else (0.0 if dv == 0 else math.inf))
        rows.append({"quantity": k, "a": x, "b": y, "diff": dv, "rel": rel})
    return rows


def format_diff(rows: list[dict]) -> str:
    def f(v):
        return "-" if v is None else f"{v:.10g}"
    lines = [f"{'quantity':<18} {'A':>17} {'B':>17} {'B-A':>17} {'rel':>17}"]
    for r in rows:
        lines.append(f"{r['quantity']:<18} {f(r['a']):>17} {f(r['b']):>17} {f(r['diff']):>17} "
                     f"{f(r['rel']):>17}")
    return "\n".join(lines)


def emit_plot_data(report_path, kind: str, out_path=None) -> Path:
    """Write plot-ready CSV for ``kind`` from a ``report.json``.

    Columns: cdf ``t, empirical, reference, empirical_d`` on the 201-point
    grid; manhattan ``s, theta_spectral, theta_empirical, empirical_band``;
    moments ``T, N, tau_hat, m1..m4, m1_d..m4_d, ks, ks_d, ks_sup``;
    growth ``T, N, logN, fit``.
    """
    if kind not in PLOT_KINDS:
        raise SpecError(f"unknown plot kind {kind!r}; expected one of {', '.join(PLOT_KINDS)}")
    report_path = Path(report_path)
    if report_path.is_dir():
        report_path = report_path / "report.json"
    rep = _load_json(report_path)
    data = rep.get("plotdata", {}).get(kind)
    if data is None:
        raise SpecError(f"report {report_path} has no {kind!r} data (task not run?)")
    out = Path(out_path) if out_path else report_path.parent / f"plot_{kind}.csv"
    out.write_text(dumps_csv(data["columns"], data["rows"]))
    return out
