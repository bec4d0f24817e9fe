"""Command-line entry point: one thin subcommand per pipeline stage."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .bench import ExperimentConfig, coverage_of, run_pipeline
from .candidates import (
    AscentConfig,
    CandidateGraph,
    GraphFormatError,
    PopmusicConfig,
    alpha_nearest_candidates,
    popmusic_candidates,
    subgradient_ascent,
    union_candidates,
    write_candidate_file,
)
from .features import FEATURE_VERSION, graph_features, node_stats, read_feature_dump, write_feature_dump
from .instances import DistanceType, Family, GeneratorConfig, TsplibError, generate_instance, read_tsplib, write_tsplib
from .learn import ModelFormatError, TrainConfig, TrainSet, load_model, save_model, score_edges, train, write_training_log
from .localsearch import MAX_STARTS, MOVE_SETS, solve
from .oracle import OracleError, Tour, branch_and_bound, brute_force, held_karp, label_edges, read_tour, write_tour
from .prune import PruneConfig, ValidationItem, calibrate_eta, prune_graph

EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_FORMAT = 4
EXIT_INVALID = 5

SEED_ENV = "TSP_SPARSIFY_SEED"


class CliError(Exception):
    def __init__(self, msg: str, code: int = EXIT_INVALID):
        super().__init__(msg)
        self.code = code


# --------------------------------------------------------------------------
# helpers


def _read(path) -> str:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"input file not found: {path}", EXIT_MISSING)
    return p.read_text(encoding="utf-8")


def _write(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text, encoding="utf-8")


def _instance(path):
    _read(path)
    return read_tsplib(path)


def _graph(path) -> CandidateGraph:
    return CandidateGraph.loads(_read(path))


def _emit(args, record: dict) -> None:
    """Print a result record as ``key: value`` lines or as one CSV row."""
    if args.format == "delimited":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(record.keys())
        w.writerow(record.values())
        sys.stdout.write(buf.getvalue())
    else:
        for k, v in record.items():
            sys.stdout.write(f"{k}: {v}\n")


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


# --------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> None:
    gen = GeneratorConfig.from_mapping(args.generator or {})
    inst = generate_instance(args.family, args.type, args.n, args.seed, gen)
    _write(args.out, write_tsplib(inst))


def _build_graph(inst, mode: str, k: int, seed: int, r: int, starts: int) -> CandidateGraph:
    if mode == "alpha":
        return alpha_nearest_candidates(inst, k)
    pop = popmusic_candidates(inst, PopmusicConfig(r=r, starts=starts, seed=seed))
    if mode == "popmusic":
        return pop
    return union_candidates(alpha_nearest_candidates(inst, k), pop)


def cmd_candidates(args) -> None:
    inst = _instance(args.instance)
    g = _build_graph(inst, args.mode, args.k, args.seed, args.r, args.starts)
    _write(args.out, g.dumps())
    if args.out not in (None, "-"):
        _emit(args, {"n": g.n, "edges": g.edge_count, "edges_per_n": g.edges_per_n,
                     "candidates_per_n": g.candidates_per_n})


def cmd_solve(args) -> None:
    inst = _instance(args.instance)
    g = _graph(args.graph)
    opt = None
    if args.opt_tour:
        opt = read_tour(_read(args.opt_tour), inst.distance_matrix()).length
    rep = solve(inst, g, seed=args.seed, opt_length=opt, starts=args.restarts, moves=args.moves)
    if args.out:
        _write(args.out, write_tour(rep.tour))
    _emit(args, {"length": rep.tour.length, "gap_percent": rep.gap_percent, "moves": rep.moves_applied,
                 "fell_back": rep.fell_back_to_full_graph, "fallbacks": rep.fallbacks})


def cmd_label(args) -> None:
    inst = _instance(args.instance)
    dm = inst.distance_matrix()
    if args.method == "bnb":
        t = branch_and_bound(dm, budget=args.budget, seed=args.seed)
    elif args.method == "held-karp":
        t = held_karp(dm)
    else:
        t = brute_force(dm)
    if args.out:
        _write(args.out, write_tour(t))
    record = {"length": t.length, "proven_optimal": t.proven_optimal}
    if args.graph:
        g = _graph(args.graph)
        lab = label_edges(g, t, allow_unproven=args.allow_unproven)
        record.update(positives=lab.positives, total=lab.total, coverage=lab.coverage)
    _emit(args, record)


def cmd_features(args) -> None:
    inst = _instance(args.instance)
    g = _graph(args.graph)
    X = graph_features(g, node_stats(inst, min(args.knn, inst.n - 1)), args.mode)
    y = None
    if args.tour:
        t = read_tour(_read(args.tour), inst.distance_matrix(), proven_optimal=True)
        y = label_edges(g, t).y
    _write(args.out, write_feature_dump([(inst.name, g.edges, y, X)]))


def cmd_train(args) -> None:
    parts = []
    for path in args.dump:
        ids, _, y, X = read_feature_dump(_read(path))
        if np.any(y < 0):
            raise CliError(f"{path}: feature dump has unlabelled rows")
        parts.append(TrainSet(X, y, np.array(ids), args.mode))
    m = train(args.model, TrainSet.concat(parts), TrainConfig(C=args.C, seed=args.seed))
    if not args.out:
        raise CliError("train needs --out for the model file")
    save_model(m, args.out)
    if args.log:
        _write(args.log, write_training_log(m.history))
    _emit(args, {"loss": m.loss_kind, "iterations": m.train_meta["iterations"],
                 "objective": m.train_meta["objective"], "grad_norm": m.train_meta["grad_norm"]})


def _validation_items(list_path, mode: str, knn: int) -> list[ValidationItem]:
    items = []
    for ln in _read(list_path).splitlines():
        if not ln.strip() or ln.lstrip().startswith("#"):
            continue
        parts = ln.split()
        if len(parts) != 3:
            raise CliError(f"validation list lines need 'instance graph tour': {ln!r}")
        inst = _instance(parts[0])
        g = _graph(parts[1])
        t = read_tour(_read(parts[2]), inst.distance_matrix(), proven_optimal=True)
        X = graph_features(g, node_stats(inst, min(knn, inst.n - 1)), mode)
        items.append(ValidationItem(g, X, t))
    return items


def cmd_calibrate(args) -> None:
    _read(args.model)
    m = load_model(args.model)
    items = _validation_items(args.val, m.mode, args.knn)
    grid = [float(x) for x in args.grid.split(",")] if args.grid else None
    kw = {"grid": grid} if grid else {}
    cal = calibrate_eta(m, items, args.target, temperature=args.temperature, m_min=args.m_min, **kw)
    save_model(m, args.out or args.model)
    _emit(args, {"eta": cal.eta, "feasible": cal.feasible})


def cmd_prune(args) -> None:
    _read(args.model)
    m = load_model(args.model)
    eta = args.eta if args.eta is not None else m.calibrated_eta
    if eta is None:
        raise CliError("no eta given and the model has no calibrated eta")
    cfg = PruneConfig(eta, args.temperature, args.m_min)
    inst = _instance(args.instance)
    g = _graph(args.graph)
    X = graph_features(g, node_stats(inst, min(args.knn, inst.n - 1)), m.mode)
    pg = prune_graph(g, score_edges(m, X, FEATURE_VERSION), cfg)
    _write(args.out, pg.dumps())
    if args.out not in (None, "-"):
        _emit(args, {"eta": eta, "base_edges": g.edge_count, "pruned_edges": pg.edge_count,
                     "edges_per_n": pg.edges_per_n, "candidates_per_n": pg.candidates_per_n})


def cmd_eval(args) -> None:
    g = _graph(args.graph)
    inst = _instance(args.instance) if args.instance else None
    t = read_tour(_read(args.tour), inst.distance_matrix() if inst else None, proven_optimal=True)
    record = {"n": g.n, "edges": g.edge_count, "edges_per_n": g.edges_per_n,
              "candidates_per_n": g.candidates_per_n, "coverage": coverage_of(g, t)}
    if inst is not None:
        rep = solve(inst, g, seed=args.seed, opt_length=t.length)
        record.update(gap_percent=rep.gap_percent, fell_back=rep.fell_back_to_full_graph)
    _emit(args, record)


def cmd_pipeline(args) -> None:
    data = dict(args.config_data or {})
    # config file overrides flags, flags override defaults
    data.setdefault("seed", args.seed)
    if args.out:
        data.setdefault("out", args.out)
    if args.jobs:
        data.setdefault("jobs", args.jobs)
    cfg = ExperimentConfig.from_mapping(data)
    report = run_pipeline(cfg, progress=lambda msg: print(msg, file=sys.stderr, flush=True))
    _emit(args, {"out": str(report["out"]), "eta": report["calibration"].eta,
                 "calibration_feasible": report["calibration"].feasible,
                 "excluded_unproven": len(report["excluded"])})


def cmd_export_lkh(args) -> None:
    inst = _instance(args.instance)
    g = _graph(args.graph)
    tree = subgradient_ascent(inst, AscentConfig()).tree
    _write(args.out, write_candidate_file(g, tree))


# --------------------------------------------------------------------------
# parser


def _eta(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"eta must be a number, got {text!r}") from None
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError(f"eta must lie in (0, 1], got {v}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"random seed (default: ${SEED_ENV} or 0)")
    common.add_argument("--config", help="YAML file whose keys override the flags")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--format", choices=("text", "delimited"), default="text", help="printed output style")
    common.add_argument("--jobs", type=int, default=None, help="worker processes for batch work")

    p = argparse.ArgumentParser(prog="tsp-sparsify", description="TSP candidate-graph sparsification")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("generate", parents=[common], help="sample a synthetic instance")
    s.add_argument("--family", required=True, choices=[f.value for f in Family])
    s.add_argument("--type", required=True, choices=[d.value for d in DistanceType])
    s.add_argument("--n", type=int, required=True)
    s.set_defaults(func=cmd_generate, generator=None)

    s = sub.add_parser("candidates", parents=[common], help="build a stage-1 candidate graph")
    s.add_argument("--instance", required=True)
    s.add_argument("--mode", choices=("alpha", "popmusic", "union"), default="union")
    s.add_argument("--k", type=int, default=5, help="alpha-nearest edges per node")
    s.add_argument("--r", type=int, default=12, help="POPMUSIC subpath length")
    s.add_argument("--starts", type=int, default=5, help="POPMUSIC starting tours")
    s.set_defaults(func=cmd_candidates)

    s = sub.add_parser("solve", parents=[common], help="candidate-restricted local search")
    s.add_argument("--instance", required=True)
    s.add_argument("--graph", required=True)
    s.add_argument("--opt-tour", help="optimal tour file, for the gap")
    s.add_argument("--restarts", type=_positive_int, default=MAX_STARTS,
                   help="start cities tried (best tour kept)")
    s.add_argument("--moves", choices=MOVE_SETS, default="3opt",
                   help="2opt: 2-opt + Or-opt; 3opt: also restricted 3-opt")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("label", parents=[common], help="exact optimal tour and edge labels")
    s.add_argument("--instance", required=True)
    s.add_argument("--graph", help="candidate graph to label")
    s.add_argument("--method", choices=("bnb", "held-karp", "brute"), default="bnb")
    s.add_argument("--budget", type=int, default=1_000_000, help="branch-and-bound node budget")
    s.add_argument("--allow-unproven", action="store_true")
    s.set_defaults(func=cmd_label)

    s = sub.add_parser("features", parents=[common], help="dump edge features")
    s.add_argument("--instance", required=True)
    s.add_argument("--graph", required=True)
    s.add_argument("--tour", help="optimal tour for the label column")
    s.add_argument("--mode", choices=("union", "single"), default="union")
    s.add_argument("--knn", type=int, default=10)
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("train", parents=[common], help="train a linear edge scorer")
    s.add_argument("--dump", nargs="+", required=True, help="labelled feature dumps")
    s.add_argument("--model", choices=("logistic", "svm"), default="logistic")
    s.add_argument("--mode", choices=("union", "single"), default="union")
    s.add_argument("--C", type=float, default=1.0)
    s.add_argument("--log", help="training log output")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("calibrate", parents=[common], help="calibrate eta on validation instances")
    s.add_argument("--model", required=True)
    s.add_argument("--val", required=True, help="file with 'instance graph tour' per line")
    s.add_argument("--target", type=float, default=0.99)
    s.add_argument("--grid", help="comma-separated eta values")
    s.add_argument("--temperature", type=float, default=1.0)
    s.add_argument("--m-min", type=int, default=2)
    s.add_argument("--knn", type=int, default=10)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("prune", parents=[common], help="prune a candidate graph with a model")
    s.add_argument("--model", required=True)
    s.add_argument("--instance", required=True)
    s.add_argument("--graph", required=True)
    s.add_argument("--eta", type=_eta, help="defaults to the model's calibrated eta")
    s.add_argument("--temperature", type=float, default=1.0)
    s.add_argument("--m-min", type=int, default=2)
    s.add_argument("--knn", type=int, default=10)
    s.set_defaults(func=cmd_prune)

    s = sub.add_parser("eval", parents=[common], help="coverage, density and gap of a graph")
    s.add_argument("--graph", required=True)
    s.add_argument("--tour", required=True)
    s.add_argument("--instance", help="enables the local-search gap")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("pipeline", parents=[common], help="run the end-to-end experiment")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("export-lkh", parents=[common], help="write an LKH candidate file")
    s.add_argument("--instance", required=True)
    s.add_argument("--graph", required=True)
    s.set_defaults(func=cmd_export_lkh)
    return p


def _apply_config(args) -> None:
    args.config_data = None
    if not args.config:
        return
    data = yaml.safe_load(_read(args.config)) or {}
    if not isinstance(data, dict):
        raise CliError(f"{args.config}: config must be a mapping")
    if args.command == "pipeline":
        args.config_data = data
        return
    for key, value in data.items():
        attr = key.replace("-", "_")
        if attr == "generator" and args.command == "generate":
            args.generator = value
            continue
        if not hasattr(args, attr) or attr in ("func", "command", "config"):
            raise CliError(f"{args.config}: unknown option {key!r} for '{args.command}'")
        if attr == "eta":
            value = _eta(str(value))
        setattr(args, attr, value)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.seed is None:
            args.seed = _default_seed()
        _apply_config(args)
        args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_MISSING
    except (TsplibError, GraphFormatError, ModelFormatError, OracleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (argparse.ArgumentTypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return 0


if __name__ == "__main__":
    sys.exit(main())
