"""Candidate-restricted tour construction and improvement.

Used to measure how pruning affects tour quality without an external solver:
nearest-neighbour construction over candidate edges, then first-improvement
2-opt + Or-opt where every introduced edge must be a candidate, optionally
followed by restricted 3-opt, repeated from several start cities.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .candidates import CandidateGraph, _as_matrix
from .oracle import Tour

__all__ = ["MAX_STARTS", "MOVE_SETS", "SolveReport", "start_cities", "construct_tour", "two_opt_improve",
           "three_opt_improve", "gap", "solve"]


@dataclass(frozen=True, eq=False)
class SolveReport:
    tour: Tour
    gap_percent: float | None
    moves_applied: int
    fell_back_to_full_graph: bool
    fallbacks: int = 0


def _setup(source, g: CandidateGraph):
    d = np.ascontiguousarray(_as_matrix(source), dtype=np.int64)
    if d.shape[0] != g.n:
        raise ValueError(f"graph has n={g.n}, instance has n={d.shape[0]}")
    return d, g.adjacency_matrix()


MAX_STARTS = 32
MOVE_SETS = ("2opt", "3opt")


def start_cities(n: int, seed: int, starts: int) -> list[int]:
    """``starts`` distinct cities in a seeded random order."""
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    return [int(c) for c in perm[: max(1, min(starts, n))]]


def construct_tour(source, g: CandidateGraph, seed: int = 0, start: int | None = None) -> tuple[Tour, int]:
    """Nearest neighbour along candidate edges from ``start`` (default: a
    seeded random city).

    When no unvisited candidate neighbour exists, the globally nearest
    unvisited city is taken and counted; so is a non-candidate closing edge.
    Returns (tour, fallback steps).
    """
    d, allowed = _setup(source, g)
    if start is None:
        start = start_cities(g.n, seed, 1)[0]
    elif not 0 <= start < g.n:
        raise ValueError(f"start city {start} outside 0..{g.n - 1}")
    order, fallbacks = K.nearest_neighbor_tour(d, start, allowed)
    return Tour.from_order(d, order, False), int(fallbacks)


def two_opt_improve(t: Tour, source, g: CandidateGraph, budget: int = 1 << 30) -> tuple[Tour, int]:
    """First-improvement 2-opt + Or-opt(1..3) restricted to candidate edges.
    Returns (tour, moves applied)."""
    d, allowed = _setup(source, g)
    order, moves = K.improve_cycle(d, np.array(t.order, dtype=np.int64), allowed, budget)
    return Tour.from_order(d, order, False), int(moves)


def three_opt_improve(t: Tour, source, g: CandidateGraph, budget: int = 1 << 30) -> tuple[Tour, int]:
    """``two_opt_improve`` plus pure 3-opt moves (segment exchange with or
    without reversals), every introduced edge again a candidate. Escapes the
    2-opt optima that sparse graphs trap. Returns (tour, moves applied)."""
    d, allowed = _setup(source, g)
    order, moves = K.improve_cycle_3opt(d, np.array(t.order, dtype=np.int64), allowed, budget)
    return Tour.from_order(d, order, False), int(moves)


def gap(t: Tour, opt_length: int) -> float:
    """Percentage excess of ``t`` over the optimum."""
    if opt_length <= 0:
        raise ValueError("optimal length must be positive")
    return 100.0 * (t.length - opt_length) / opt_length


def solve(source, g: CandidateGraph, seed: int = 0, budget: int = 1 << 30,
          opt_length: int | None = None, starts: int = MAX_STARTS, moves: str = "3opt") -> SolveReport:
    """Best of ``min(starts, n)`` construct-and-improve runs from distinct
    start cities; the earliest run wins ties. ``budget`` applies per run.
    ``moves`` is "2opt" (2-opt + Or-opt) or "3opt" (adds restricted 3-opt)."""
    if moves not in MOVE_SETS:
        raise ValueError(f"moves must be one of {MOVE_SETS}, got {moves!r}")
    improve = three_opt_improve if moves == "3opt" else two_opt_improve
    d, _ = _setup(source, g)
    best = None
    for start in start_cities(g.n, seed, starts):
        t, fb = construct_tour(d, g, start=start)
        t, mv = improve(t, d, g, budget)
        if best is None or t.length < best[0].length:
            best = (t, fb, mv)
    t, fallbacks, moves = best
    return SolveReport(
        tour=t,
        gap_percent=None if opt_length is None else gap(t, opt_length),
        moves_applied=moves,
        fell_back_to_full_graph=fallbacks > 0,
        fallbacks=fallbacks,
    )
