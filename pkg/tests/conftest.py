"""Shared instance builders for unit and acceptance tests."""

from __future__ import annotations

import numpy as np
import pytest

from privdual.queries import (
    Database,
    LinearQuery,
    Universe,
    Workload,
    compile_conjunction,
)


def product_database(
    rng: np.random.Generator, bits: int, n: int, bias_lo: float, bias_hi: float
) -> Database:
    """Rows drawn from a product distribution with per-bit biases."""
    universe = Universe(size=1 << bits, bit_count=bits)
    biases = rng.uniform(bias_lo, bias_hi, size=bits)
    rows = np.zeros(n, dtype=np.int64)
    for j in range(bits):
        rows |= (rng.random(n) < biases[j]).astype(np.int64) << j
    counts = np.bincount(rows, minlength=universe.size)
    return Database(universe=universe, counts=counts)


def conjunction_workloads(
    rng: np.random.Generator,
    universe: Universe,
    analysts: int,
    per_analyst: int,
    max_width: int = 3,
) -> list[Workload]:
    """Random conjunction queries of width 1..max_width, split by analyst."""
    workloads = []
    for a in range(analysts):
        queries = []
        for i in range(per_analyst):
            width = int(rng.integers(1, max_width + 1))
            attrs = rng.choice(universe.bit_count, size=width, replace=False)
            terms = [
                {"attr": int(at), "value": int(rng.integers(0, 2))} for at in attrs
            ]
            queries.append(
                LinearQuery(
                    query_id=f"a{a}q{i}",
                    analyst_id=f"a{a}",
                    values=compile_conjunction(terms, universe),
                )
            )
        workloads.append(Workload(analyst_id=f"a{a}", queries=tuple(queries)))
    return workloads


def max_workload_error(database: Database, workloads, answer_fn) -> float:
    truth = database.row_fractions()
    return max(
        abs(answer_fn(wl.analyst_id, q) - float(q.values @ truth))
        for wl in workloads
        for q in wl.queries
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240311)
