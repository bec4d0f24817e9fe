"""End-to-end experiment harness.

generate -> stage 1 -> exact labels -> features -> train -> calibrate eta on
validation -> prune test -> evaluate, with per-family breakdowns, lost-edge
provenance and a small-n gap study against exact optima.

Every output except ``timings.csv`` is a deterministic function of the
manifest (effective config + code hash).
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .candidates import (
    AscentConfig,
    CandidateGraph,
    PopmusicConfig,
    Provenance,
    alpha_nearest_candidates,
    popmusic_candidates,
    union_candidates,
)
from .features import FEATURE_NAMES, graph_features, node_stats
from .instances import DistanceType, Family, GeneratorConfig, generate_instance
from .learn import TrainConfig, TrainSet, feature_importance, save_model, score_edges, train, write_training_log
from .localsearch import solve
from .oracle import Tour, branch_and_bound, held_karp
from .prune import DEFAULT_GRID, PruneConfig, ValidationItem, calibrate_eta, prune_graph

__all__ = [
    "ExperimentConfig",
    "MetricsRow",
    "LostEdgeRecord",
    "ALL_FAMILIES",
    "instance_seed",
    "coverage_of",
    "lost_edge_analysis",
    "summarize",
    "fallback_rates",
    "format_summary",
    "run_pipeline",
    "manifest_for",
    "code_hash",
]

log = logging.getLogger(__name__)

ALL_FAMILIES = tuple((f.value, d.value) for d in DistanceType for f in Family)
SPLIT_CODES = {"train": 0, "val": 1, "test": 2, "gap": 3}
# pruned-graph construction steps that may leave the graph before the run warns
FALLBACK_ALERT = 0.05
STAGE1_MODES = ("alpha", "popmusic", "union")
PROVENANCE_CLASSES = ("dual-source", "alpha-only", "pop-only")


@dataclass
class ExperimentConfig:
    name: str = "desk"
    families: list = field(default_factory=lambda: [list(f) for f in ALL_FAMILIES])
    train_n: int = 50
    val_n: int = 50
    n_train: int = 100
    n_val: int = 30
    # (n, instances per family) for each test size
    test_sizes: list = field(default_factory=lambda: [[50, 50], [100, 50]])
    # exact-oracle gap study: sizes and instances per (family, size)
    gap_sizes: list = field(default_factory=lambda: [12, 13, 14, 15, 16])
    n_gap: int = 2
    seed: int = 0
    stage1: str = "union"
    model: str = "logistic"
    alpha_k: int = 5
    popmusic_r: int = 12
    popmusic_starts: int = 5
    knn_k: int = 10
    C: float = 1.0
    temperature: float = 1.0
    m_min: int = 2
    eta_grid: list = field(default_factory=lambda: list(DEFAULT_GRID))
    target_coverage: float = 0.99
    pooled_coverage: bool = False
    label_budget: int = 1_000_000
    generator: dict = field(default_factory=dict)
    jobs: int = 1
    out: str = "runs/desk"

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not self.families:
            raise ValueError("at least one family is required")
        for fam in self.families:
            if len(fam) != 2:
                raise ValueError(f"family must be [distribution, distance type], got {fam!r}")
            Family(fam[0])
            DistanceType(fam[1])
        for key in ("n_train", "n_val"):
            if getattr(self, key) < 1:
                raise ValueError(f"{key} must be at least 1")
        for n, count in self.test_sizes:
            if n < 3 or count < 1:
                raise ValueError(f"bad test size entry {[n, count]}")
        if self.stage1 not in STAGE1_MODES:
            raise ValueError(f"stage1 must be one of {STAGE1_MODES}")
        if self.model not in ("logistic", "svm"):
            raise ValueError("model must be 'logistic' or 'svm'")
        if not 0.0 < self.target_coverage <= 1.0:
            raise ValueError("target_coverage must lie in (0, 1]")
        for eta in self.eta_grid:
            PruneConfig(eta, self.temperature, self.m_min)
        if min(self.train_n, self.val_n, *(n for n, _ in self.test_sizes)) <= self.alpha_k:
            raise ValueError("every instance size must exceed alpha_k")
        if any(n > 20 or n <= self.alpha_k for n in self.gap_sizes):
            raise ValueError("gap study sizes must lie in (alpha_k, 20]")
        GeneratorConfig.from_mapping(self.generator)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class MetricsRow:
    split: str
    family: str
    n: int
    instance: str
    stage: str
    edges_per_n: float
    candidates_per_n: float
    coverage: float
    gap_percent: float | None
    fell_back: bool
    fallbacks: int


@dataclass(frozen=True)
class LostEdgeRecord:
    instance: str
    i: int
    j: int
    provenance: str
    features: tuple


# --------------------------------------------------------------------------
# primitives


def instance_seed(master: int, split: str, family_index: int, n: int, index: int) -> int:
    """Independent 64-bit seed per (split, family, size, index)."""
    ss = np.random.SeedSequence(master, spawn_key=(SPLIT_CODES[split], family_index, n, index))
    return int(ss.generate_state(1, np.uint64)[0])


def coverage_of(g: CandidateGraph, t: Tour) -> float:
    """Fraction of the tour's n edges present in ``g``."""
    if g.n != t.n:
        raise ValueError(f"graph has n={g.n}, tour has n={t.n}")
    idx = g.index()
    return sum(e in idx for e in t.edges()) / t.n


def provenance_class(flags: int) -> str:
    if flags == Provenance.FROM_ALPHA | Provenance.FROM_POPMUSIC:
        return "dual-source"
    if flags == Provenance.FROM_ALPHA:
        return "alpha-only"
    if flags == Provenance.FROM_POPMUSIC:
        return "pop-only"
    raise ValueError(f"edge without provenance flags ({flags})")


def lost_edge_analysis(base: CandidateGraph, pruned: CandidateGraph, t: Tour, X: np.ndarray,
                       instance: str = ""):
    """Optimal-tour edges kept by the base graph but removed by pruning.

    ``X`` holds the base graph's feature rows. Returns (records, shares) where
    shares maps each provenance class to its fraction of the records (empty
    dict when nothing was lost).
    """
    pruned_set = pruned.index()
    if not set(pruned_set) <= set(base.index()):
        raise ValueError("pruned graph is not a subset of the base graph")
    records = []
    for e in sorted(t.edges()):
        if e in base.index() and e not in pruned_set:
            k = base.edge_id(*e)
            records.append(LostEdgeRecord(instance, e[0], e[1], provenance_class(int(base.flags[k])),
                                          tuple(float(v) for v in X[k])))
    shares = {}
    if records:
        for c in PROVENANCE_CLASSES:
            shares[c] = sum(r.provenance == c for r in records) / len(records)
    return records, shares


def fallback_rates(rows: list[MetricsRow], stage: str = "pruned") -> dict[int, float]:
    """Share of construction steps (n per tour) that left the graph, per n."""
    steps: dict[int, list[int]] = {}
    for r in rows:
        if r.stage == stage:
            acc = steps.setdefault(r.n, [0, 0])
            acc[0] += r.fallbacks
            acc[1] += r.n
    return {n: fb / total for n, (fb, total) in sorted(steps.items())}


def summarize(rows: list[MetricsRow]) -> list[dict]:
    """Mean and population std per (family, n, stage), plus an ALL family."""
    if not rows:
        raise ValueError("nothing to summarise")
    groups: dict[tuple, list[MetricsRow]] = {}
    for r in rows:
        groups.setdefault((r.family, r.n, r.stage), []).append(r)
        groups.setdefault(("ALL", r.n, r.stage), []).append(r)
    out = []
    for key in sorted(groups, key=lambda k: (k[0] == "ALL", k[0], k[1], k[2] != "base", k[2])):
        rs = groups[key]
        entry = {"family": key[0], "n": key[1], "stage": key[2], "count": len(rs)}
        for metric in ("edges_per_n", "candidates_per_n", "coverage", "gap_percent"):
            vals = np.array([getattr(r, metric) for r in rs if getattr(r, metric) is not None], dtype=float)
            entry[f"{metric}_mean"] = float(vals.mean()) if len(vals) else math.nan
            entry[f"{metric}_std"] = float(vals.std()) if len(vals) else math.nan
        out.append(entry)
    return out


def format_summary(summary: list[dict]) -> str:
    """Aligned text table: one line per (family, n, stage)."""
    head = f"{'family':<24} {'n':>4} {'stage':<7} {'count':>5} {'Edges/N':>15} {'Cand/N':>15} {'Cov (%)':>19} {'Gap (%)':>15}"
    lines = [head, "-" * len(head)]
    for s in summary:
        lines.append(
            f"{s['family']:<24} {s['n']:>4} {s['stage']:<7} {s['count']:>5} "
            f"{s['edges_per_n_mean']:>7.3f} ±{s['edges_per_n_std']:<6.3f} "
            f"{s['candidates_per_n_mean']:>7.3f} ±{s['candidates_per_n_std']:<6.3f} "
            f"{100 * s['coverage_mean']:>9.3f} ±{100 * s['coverage_std']:<8.3f} "
            f"{s['gap_percent_mean']:>7.3f} ±{s['gap_percent_std']:<6.3f}"
        )
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# per-instance work (runs in worker processes)


def _family_name(fam) -> str:
    return f"{fam[0]}-{fam[1]}"


def _stage1(inst, cfg: ExperimentConfig, seed: int) -> dict[str, CandidateGraph]:
    a = alpha_nearest_candidates(inst, cfg.alpha_k, AscentConfig())
    p = popmusic_candidates(inst, PopmusicConfig(r=cfg.popmusic_r, starts=cfg.popmusic_starts, seed=seed))
    u = union_candidates(a, p)
    a.check()
    p.check()
    u.check(union_mode=True)
    return {"alpha": a, "popmusic": p, "union": u}


def _process(task) -> dict:
    split, fam_index, fam, n, index, seed, cfg = task
    timings = {}
    t0 = time.perf_counter()
    inst = generate_instance(fam[0], fam[1], n, seed, GeneratorConfig.from_mapping(cfg.generator))
    dm = inst.distance_matrix()
    timings["generate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    graphs = _stage1(inst, cfg, seed)
    timings["stage1"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if split == "gap":
        tour = held_karp(dm)
    else:
        tour = branch_and_bound(dm, budget=cfg.label_budget, seed=seed)
    timings["label"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    base = graphs[cfg.stage1]
    mode = "union" if cfg.stage1 == "union" else "single"
    X = graph_features(base, node_stats(dm, min(cfg.knn_k, n - 1)), mode)
    timings["features"] = time.perf_counter() - t0

    cov = {k: coverage_of(g, tour) for k, g in graphs.items()}
    if tour.proven_optimal and cov["union"] < max(cov["alpha"], cov["popmusic"]):
        raise AssertionError(f"{inst.name}: union coverage below a component's coverage")
    return {
        "split": split,
        "family": _family_name(fam),
        "n": n,
        "id": f"{split}/{inst.name}",
        "seed": seed,
        "dm": dm,
        "tour": tour,
        "base": base,
        "X": X,
        "coverage": cov,
        "density": {k: (g.edges_per_n, g.candidates_per_n) for k, g in graphs.items()},
        "timings": timings,
    }


def _evaluate(task) -> dict:
    rec, model, eta, cfg = task
    t0 = time.perf_counter()
    scores = score_edges(model, rec["X"])
    pruned = prune_graph(rec["base"], scores, PruneConfig(eta, cfg.temperature, cfg.m_min))
    t_prune = time.perf_counter() - t0
    base = rec["base"]
    assert set(pruned.index()) <= set(base.index()), "pruned graph must be a subset of the base graph"
    tour = rec["tour"]
    out = {"rows": [], "timings": {"prune": t_prune}}
    opt = tour.length if tour.proven_optimal else None
    for stage, g in (("base", base), ("pruned", pruned)):
        t0 = time.perf_counter()
        rep = solve(rec["dm"], g, seed=rec["seed"], opt_length=opt)
        out["timings"][f"solve_{stage}"] = time.perf_counter() - t0
        out["rows"].append(MetricsRow(
            split=rec["split"], family=rec["family"], n=rec["n"], instance=rec["id"], stage=stage,
            edges_per_n=g.edges_per_n, candidates_per_n=g.candidates_per_n,
            coverage=coverage_of(g, tour), gap_percent=rep.gap_percent,
            fell_back=rep.fell_back_to_full_graph, fallbacks=rep.fallbacks,
        ))
    if cfg.stage1 == "union":
        out["lost"], out["shares"] = lost_edge_analysis(base, pruned, tour, rec["X"], rec["id"])
        out["base_mix"] = {c: 0 for c in PROVENANCE_CLASSES}
        for f in base.flags:
            out["base_mix"][provenance_class(int(f))] += 1
    else:
        out["lost"], out["shares"], out["base_mix"] = [], {}, {}
    return out


def _labels(g: CandidateGraph, t: Tour) -> np.ndarray:
    te = t.edges()
    return np.array([e in te for e in map(tuple, g.edges.tolist())], dtype=np.int8)


def _map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


# --------------------------------------------------------------------------
# manifest and outputs


def code_hash() -> str:
    """SHA-256 over the package's source files."""
    h = hashlib.sha256()
    root = Path(__file__).resolve().parent
    for p in sorted(root.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def manifest_for(cfg: ExperimentConfig) -> dict:
    eff = cfg.to_dict()
    eff.pop("out")
    eff.pop("jobs")  # worker count does not change results
    return {"package_version": __version__, "code_sha256": code_hash(), "config": eff}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _tasks(cfg: ExperimentConfig, split: str, n: int, count: int):
    out = []
    for fi, fam in enumerate(cfg.families):
        for i in range(count):
            out.append((split, fi, tuple(fam), n, i, instance_seed(cfg.seed, split, fi, n, i), cfg))
    return out


def run_pipeline(cfg: ExperimentConfig, progress=None) -> dict:
    """Run the whole experiment and write every artifact into ``cfg.out``.

    Returns a report dict with the model, calibration, summary and the paths
    written.
    """
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    say = progress or (lambda msg: log.info(msg))
    manifest = manifest_for(cfg)
    timing_rows = []

    def stage(split, n, count):
        say(f"[{split} n={n}] {count * len(cfg.families)} instances: stage 1 + labels")
        recs = _map(_process, _tasks(cfg, split, n, count), cfg.jobs)
        for r in recs:
            timing_rows.extend((r["id"], k, 1000.0 * v) for k, v in r["timings"].items())
        return recs

    train_recs = stage("train", cfg.train_n, cfg.n_train)
    val_recs = stage("val", cfg.val_n, cfg.n_val)
    test_recs = [r for n, count in cfg.test_sizes for r in stage("test", n, count)]
    gap_recs = [r for n in cfg.gap_sizes for r in stage("gap", n, cfg.n_gap)] if cfg.n_gap > 0 else []
    all_recs = train_recs + val_recs + test_recs + gap_recs
    excluded = sorted(r["id"] for r in all_recs if not r["tour"].proven_optimal)

    _write_csv(
        out / "stage1.csv",
        ("split", "family", "n", "instance", "proven", "tour_length",
         "cov_alpha", "cov_popmusic", "cov_union",
         "epn_alpha", "epn_popmusic", "epn_union", "cpn_alpha", "cpn_popmusic", "cpn_union"),
        [(r["split"], r["family"], r["n"], r["id"], r["tour"].proven_optimal, r["tour"].length,
          r["coverage"]["alpha"], r["coverage"]["popmusic"], r["coverage"]["union"],
          *(r["density"][k][0] for k in STAGE1_MODES), *(r["density"][k][1] for k in STAGE1_MODES))
         for r in all_recs],
    )

    # training
    say("training")
    proven_train = [r for r in train_recs if r["tour"].proven_optimal]
    if not proven_train:
        raise RuntimeError("no training instance was labelled within budget")
    mode = "union" if cfg.stage1 == "union" else "single"
    ts = TrainSet.concat([
        TrainSet(r["X"], _labels(r["base"], r["tour"]), np.full(r["base"].edge_count, r["id"]), mode)
        for r in proven_train
    ])
    t0 = time.perf_counter()
    model = train(cfg.model, ts, TrainConfig(C=cfg.C, seed=cfg.seed))
    timing_rows.append(("model", "train", 1000.0 * (time.perf_counter() - t0)))
    (out / "training_log.csv").write_text(write_training_log(model.history), encoding="utf-8")

    # calibration
    say("calibrating eta")
    val_items = [ValidationItem(r["base"], r["X"], r["tour"]) for r in val_recs if r["tour"].proven_optimal]
    t0 = time.perf_counter()
    calib = calibrate_eta(model, val_items, cfg.target_coverage, cfg.eta_grid, cfg.temperature,
                          cfg.m_min, cfg.pooled_coverage)
    timing_rows.append(("model", "calibrate", 1000.0 * (time.perf_counter() - t0)))
    _write_csv(out / "calibration.csv", ("eta", "mean_coverage", "retained_edges"), calib.table)
    save_model(model, out / "model.txt")

    imp = feature_importance(model)
    _write_csv(out / "importance.csv", ("kind", "name", "share"),
               [("feature", k, v) for k, v in imp["features"].items()]
               + [("family", k, v) for k, v in imp["families"].items()])

    # evaluation on proven test and gap-study instances
    say("pruning and evaluating")
    eval_recs = [r for r in test_recs + gap_recs if r["tour"].proven_optimal]
    results = _map(_evaluate, [(r, model, calib.eta, cfg) for r in eval_recs], cfg.jobs)
    rows: list[MetricsRow] = []
    lost: list[LostEdgeRecord] = []
    mix_rows = []
    for r, res in zip(eval_recs, results):
        rows.extend(res["rows"])
        lost.extend(res["lost"])
        timing_rows.extend((r["id"], k, 1000.0 * v) for k, v in res["timings"].items())
        if res["base_mix"]:
            mix_rows.append((r["split"], r["family"], r["n"], r["id"],
                             *(res["base_mix"][c] for c in PROVENANCE_CLASSES),
                             *(sum(x.provenance == c for x in res["lost"]) for c in PROVENANCE_CLASSES)))
    base_density = {r.instance: r.edges_per_n for r in rows if r.stage == "base"}
    for r in rows:
        assert r.stage != "pruned" or r.edges_per_n <= base_density[r.instance]
    metric_fields = [f.name for f in dataclasses.fields(MetricsRow)]
    _write_csv(out / "metrics.csv", metric_fields, [[getattr(r, f) for f in metric_fields] for r in rows])
    _write_csv(out / "lost_edges.csv", ("instance", "i", "j", "provenance", *FEATURE_NAMES),
               [(x.instance, x.i, x.j, x.provenance, *x.features) for x in lost])
    _write_csv(out / "provenance_mix.csv",
               ("split", "family", "n", "instance",
                *(f"base_{c}" for c in PROVENANCE_CLASSES), *(f"lost_{c}" for c in PROVENANCE_CLASSES)),
               mix_rows)

    summary = summarize(rows) if rows else []
    if summary:
        keys = list(summary[0])
        _write_csv(out / "summary.csv", keys, [[s[k] for k in keys] for s in summary])
        (out / "summary.txt").write_text(format_summary(summary), encoding="utf-8")

    manifest["calibrated_eta"] = calib.eta
    manifest["calibration_feasible"] = calib.feasible
    manifest["excluded_unproven"] = excluded
    manifest["pruned_fallback_rate"] = rates = fallback_rates(rows)
    for n, rate in rates.items():
        if rate >= FALLBACK_ALERT:
            log.warning("pruned graphs at n=%d left the graph on %.1f%% of construction steps", n, 100 * rate)
            say(f"warning: pruned fallback rate {100 * rate:.1f}% at n={n}")
    manifest["counts"] = {
        split: sum(1 for r in all_recs if r["split"] == split) for split in SPLIT_CODES
    }
    (out / "manifest.yaml").write_text(yaml.safe_dump(manifest, sort_keys=True), encoding="utf-8")
    _write_csv(out / "timings.csv", ("instance", "stage", "milliseconds"), timing_rows)
    say(f"done: eta={calib.eta} ({'feasible' if calib.feasible else 'no eta met the target'})")
    return {"model": model, "calibration": calib, "summary": summary, "rows": rows, "out": out,
            "excluded": excluded, "importance": imp}


def read_metrics(path) -> list[MetricsRow]:
    """Load a metrics.csv written by :func:`run_pipeline`."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for d in csv.DictReader(fh):
            rows.append(MetricsRow(
                split=d["split"], family=d["family"], n=int(d["n"]), instance=d["instance"],
                stage=d["stage"], edges_per_n=float(d["edges_per_n"]),
                candidates_per_n=float(d["candidates_per_n"]), coverage=float(d["coverage"]),
                gap_percent=float(d["gap_percent"]) if d["gap_percent"] else None,
                fell_back=d["fell_back"] == "1", fallbacks=int(d["fallbacks"]),
            ))
    return rows


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError("config file must hold a mapping")
    return ExperimentConfig.from_mapping(data)


def cpu_count() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
