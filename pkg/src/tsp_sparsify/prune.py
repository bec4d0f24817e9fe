"""Node-level softmax cumulative-mass pruning and eta calibration.

At node i with incident base edges delta(i) and scores s_e, edges are ranked
by descending score and weighted by softmax((s_e - s_max) / T). The shortest
prefix whose cumulative mass reaches eta is kept, lifted to at least
min(m_min, |delta(i)|) edges. The pruned graph is the union over endpoints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .candidates import CandidateGraph
from .learn import LinearModel, score_edges
from .oracle import Tour

__all__ = [
    "PruneConfig",
    "DEFAULT_GRID",
    "node_softmax_select",
    "prune_graph",
    "ValidationItem",
    "Calibration",
    "calibrate_eta",
]

DEFAULT_GRID = tuple(round(0.50 + 0.05 * k, 2) for k in range(11))


@dataclass(frozen=True)
class PruneConfig:
    eta: float = 1.0
    temperature: float = 1.0
    m_min: int = 2

    def __post_init__(self):
        if not (isinstance(self.eta, (int, float)) and 0.0 < self.eta <= 1.0):
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if not self.temperature > 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.m_min < 2:
            raise ValueError(f"m_min must be at least 2, got {self.m_min}")


def node_softmax_select(incident, cfg: PruneConfig) -> list[int]:
    """Retained edge ids (a prefix of the descending-score order).

    ``incident`` is a sequence of (edge id, score) pairs; score ties go to the
    smaller edge id.
    """
    items = [(int(e), float(s)) for e, s in incident]
    if not items:
        raise ValueError("node has no incident edges")
    if any(math.isnan(s) or math.isinf(s) for _, s in items):
        raise ValueError("scores must be finite")
    items.sort(key=lambda t: (-t[1], t[0]))
    d = len(items)
    floor = min(cfg.m_min, d)
    if cfg.eta >= 1.0:
        # full mass is reached only by the full set, even when tiny weights underflow
        return [e for e, _ in items]
    smax = items[0][1]
    w = [math.exp((s - smax) / cfg.temperature) for _, s in items]
    total = math.fsum(w)
    keep = d
    for k in range(1, d + 1):
        if math.fsum(w[:k]) / total >= cfg.eta:
            keep = k
            break
    keep = max(keep, floor)
    return [e for e, _ in items[:keep]]


def prune_graph(g: CandidateGraph, scores, cfg: PruneConfig) -> CandidateGraph:
    """Union of every node's retained prefix; flags and alpha are preserved."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (g.edge_count,):
        raise ValueError(f"need one score per edge ({g.edge_count}), got {scores.shape}")
    keep = np.zeros(g.edge_count, dtype=bool)
    for ids in g.incident():
        if ids:
            keep[node_softmax_select([(k, scores[k]) for k in ids], cfg)] = True
    return g.subgraph(keep)


@dataclass(frozen=True, eq=False)
class ValidationItem:
    """A validation instance: its base graph, feature rows and optimal tour."""

    graph: CandidateGraph
    X: np.ndarray
    tour: Tour


@dataclass(frozen=True, eq=False)
class Calibration:
    eta: float
    feasible: bool
    table: list = field(default_factory=list)  # (eta, coverage, retained edges)


def _coverage(g: CandidateGraph, t: Tour) -> tuple[int, int]:
    idx = g.index()
    return sum(e in idx for e in t.edges()), t.n


def calibrate_eta(m: LinearModel, validation: list[ValidationItem], target: float = 0.99,
                  grid=DEFAULT_GRID, temperature: float = 1.0, m_min: int = 2,
                  pooled: bool = False) -> Calibration:
    """Pick the grid eta with the fewest retained edges among those whose
    validation coverage reaches ``target``; fall back to eta = 1 (flagged).

    Coverage is the mean of per-instance coverages, or the pooled fraction of
    all tour edges when ``pooled`` is set. The chosen eta is stored on ``m``.
    """
    grid = sorted(float(x) for x in grid)
    if not grid:
        raise ValueError("empty eta grid")
    if not validation:
        raise ValueError("empty validation set")
    for item in validation:
        if not item.tour.proven_optimal:
            raise ValueError("validation tours must be proven optimal")
    scores = [score_edges(m, item.X) for item in validation]
    table = []
    for eta in grid:
        cfg = PruneConfig(eta, temperature, m_min)
        covs, hits, total, edges = [], 0, 0, 0
        for item, s in zip(validation, scores):
            pg = prune_graph(item.graph, s, cfg)
            h, n = _coverage(pg, item.tour)
            covs.append(h / n)
            hits += h
            total += n
            edges += pg.edge_count
        cov = hits / total if pooled else float(np.mean(covs))
        table.append((eta, cov, edges))
    ok = [row for row in table if row[1] >= target]
    if ok:
        eta = min(ok, key=lambda r: (r[2], r[0]))[0]
        feasible = True
    else:
        eta, feasible = 1.0, False
    m.calibrated_eta = eta
    return Calibration(eta=eta, feasible=feasible, table=table)
