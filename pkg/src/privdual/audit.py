"""Toy-scale empirical privacy auditor.

Builds adjacent input pairs (one database row changed, one query of one
analyst dropped, or one analyst's workload replaced wholesale), runs the
mechanism many times on each side, coarsens each run's output to a grid cell
(answer vectors rounded to a fixed grid), and reports the largest absolute
log-ratio of cell frequencies over cells with enough hits on both sides.

This is a statistical lower-bound probe on the privacy loss, not a proof:
cells below the hit floor are ignored precisely because empty-cell ratios
blow up, and the estimate comes with Wilson intervals to say how rough it is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .queries import Database, Workload


@dataclass(frozen=True)
class AdjacencyPair:
    """Two inputs differing exactly per their kind's adjacency relation."""

    kind: str  # "data" | "query" | "analyst"
    base_database: Database
    other_database: Database
    base_workloads: tuple[Workload, ...]
    other_workloads: tuple[Workload, ...]
    excluded_analyst: str | None = None

    def __post_init__(self):
        if self.kind not in ("data", "query", "analyst"):
            raise ValueError("kind must be data, query, or analyst")
        if self.kind != "data" and self.excluded_analyst is None:
            raise ValueError("query/analyst adjacency must name the analyst")


def make_data_adjacent(
    database: Database, workloads: list[Workload], row_from: int, row_to: int
) -> AdjacencyPair:
    """Move one row of the histogram from one universe element to another."""
    counts = np.array(database.counts)
    if counts[row_from] < 1:
        raise ValueError(f"no row at universe element {row_from} to move")
    counts[row_from] -= 1
    counts[row_to] += 1
    other = Database(universe=database.universe, counts=counts)
    wl = tuple(workloads)
    return AdjacencyPair(
        kind="data", base_database=database, other_database=other,
        base_workloads=wl, other_workloads=wl,
    )


def make_query_adjacent(
    database: Database, workloads: list[Workload], analyst_id: str, query_id: str
) -> AdjacencyPair:
    """Drop one query of one analyst (symmetric difference of size one)."""
    base = tuple(workloads)
    other = []
    dropped = False
    for wl in base:
        if wl.analyst_id == analyst_id:
            kept = tuple(q for q in wl.queries if q.query_id != query_id)
            if len(kept) != len(wl.queries):
                dropped = True
            other.append(Workload(analyst_id=wl.analyst_id, queries=kept))
        else:
            other.append(wl)
    if not dropped:
        raise ValueError(f"analyst {analyst_id!r} has no query {query_id!r}")
    return AdjacencyPair(
        kind="query", base_database=database, other_database=database,
        base_workloads=base, other_workloads=tuple(other),
        excluded_analyst=analyst_id,
    )


def make_analyst_adjacent(
    database: Database, workloads: list[Workload], analyst_id: str,
    replacement: Workload,
) -> AdjacencyPair:
    """Replace one analyst's entire workload."""
    if replacement.analyst_id != analyst_id:
        raise ValueError("replacement workload must carry the same analyst id")
    base = tuple(workloads)
    if all(wl.analyst_id != analyst_id for wl in base):
        raise ValueError(f"no analyst {analyst_id!r} in the workloads")
    other = tuple(
        replacement if wl.analyst_id == analyst_id else wl for wl in base
    )
    return AdjacencyPair(
        kind="analyst", base_database=database, other_database=database,
        base_workloads=base, other_workloads=other,
        excluded_analyst=analyst_id,
    )


def wilson_interval(successes: int, total: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if total < 1:
        raise ValueError("total must be positive")
    p = successes / total
    denom = 1.0 + z * z / total
    center = (p + z * z / (2 * total)) / denom
    half = z * math.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass
class AuditResult:
    eps_hat: float
    cells: list[dict]  # per qualifying cell: key, counts, freqs, intervals
    trials: int
    grid: float
    min_hits: int
    histogram_base: dict = field(repr=False, default_factory=dict)
    histogram_other: dict = field(repr=False, default_factory=dict)

    def to_json(self) -> dict:
        return {
            "eps_hat": self.eps_hat,
            "trials_per_side": self.trials,
            "grid": self.grid,
            "min_hits": self.min_hits,
            "note": "statistical lower-bound probe, not a proof",
            "cells": self.cells,
        }


RunFn = Callable[[Database, tuple[Workload, ...], np.random.Generator], np.ndarray]


def audit_privacy(
    run_fn: RunFn,
    pair: AdjacencyPair,
    trials: int,
    bins: int,
    seed: int,
    grid: float = 0.05,
    min_hits: int = 50,
) -> AuditResult:
    """Estimate the empirical privacy loss of ``run_fn`` across the pair.

    ``run_fn`` maps (database, workloads, rng) to the audited answer vector;
    for query/analyst adjacency the caller must already exclude the changed
    analyst's own outputs from that vector.  Answers are rounded to the grid
    and histogrammed; eps_hat is the largest |ln(p0/p1)| over cells with at
    least ``min_hits`` hits on both sides.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    histograms: list[dict[tuple, int]] = [{}, {}]
    sides = [
        (pair.base_database, pair.base_workloads),
        (pair.other_database, pair.other_workloads),
    ]
    for side, (db, wls) in enumerate(sides):
        hist = histograms[side]
        for trial in range(trials):
            rng = np.random.default_rng([seed, side, trial])
            answers = np.asarray(run_fn(db, wls, rng), dtype=np.float64)
            cell = tuple(int(round(v / grid)) for v in answers)
            hist[cell] = hist.get(cell, 0) + 1
            if len(hist) > bins:
                raise ValueError(
                    f"output space exceeded {bins} cells; coarsen the grid"
                )
    eps_hat = 0.0
    cells = []
    for cell in sorted(set(histograms[0]) | set(histograms[1])):
        c0 = histograms[0].get(cell, 0)
        c1 = histograms[1].get(cell, 0)
        if c0 < min_hits or c1 < min_hits:
            continue
        p0, p1 = c0 / trials, c1 / trials
        ratio = abs(math.log(p0 / p1))
        eps_hat = max(eps_hat, ratio)
        cells.append(
            {
                "cell": list(cell),
                "count_base": c0,
                "count_other": c1,
                "log_ratio": math.log(p0 / p1),
                "wilson_base": wilson_interval(c0, trials),
                "wilson_other": wilson_interval(c1, trials),
            }
        )
    if not cells:
        raise ValueError(
            "insufficient trials: no output cell reached the hit floor on both sides"
        )
    return AuditResult(
        eps_hat=eps_hat, cells=cells, trials=trials, grid=grid, min_hits=min_hits,
        histogram_base={str(k): v for k, v in histograms[0].items()},
        histogram_other={str(k): v for k, v in histograms[1].items()},
    )


def randomized_response_run(flip_probability: float = 0.25) -> RunFn:
    """Toy plugin: a one-bit database answered by randomized response.

    With flip probability 1/4 the frequency ratio between adjacent inputs
    is 3, so the audit should recover ln 3.
    """
    if not 0 < flip_probability < 0.5:
        raise ValueError("flip probability must be in (0, 0.5)")

    def run(db: Database, workloads, rng: np.random.Generator) -> np.ndarray:
        bit = 1 if db.counts[1] > 0 else 0
        if rng.random() < flip_probability:
            bit = 1 - bit
        return np.array([float(bit)])

    return run
