"""Data universe, databases, linear queries, per-analyst workloads, ingestion.

The universe is explicitly enumerated (hard cap 2**20 elements) so that every
algorithm can keep one weight per element.  A linear query is a [0,1]-valued
vector over the universe, evaluated as the average over database rows; a
query's negation has values ``1 - q(x)`` and is attributed to the same
analyst.  Queries arrive either as dense value vectors or as boolean
conjunctions over binary attributes, which are compiled to dense vectors.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

MAX_UNIVERSE = 1 << 20
MAX_BITS = 20

NEGATION_SUFFIX = "!neg"


class WorkloadError(ValueError):
    """Malformed database or workload input."""


@dataclass(frozen=True)
class Universe:
    """Enumerated data universe; indices 0..size-1 are the element identities.

    ``bit_count`` is set when the universe is the cube of binary attributes;
    element index i encodes attribute j as bit j of i (attribute 0 is the
    least significant bit).
    """

    size: int
    bit_count: int | None = None
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.size < 1:
            raise WorkloadError("universe must have at least one element")
        if self.size > MAX_UNIVERSE:
            raise WorkloadError(f"universe too large (> 2^{MAX_BITS})")
        if self.bit_count is not None and (1 << self.bit_count) != self.size:
            raise WorkloadError("bit_count inconsistent with universe size")
        if self.labels is not None and len(self.labels) != self.size:
            raise WorkloadError("labels length must equal universe size")


@dataclass(frozen=True)
class Database:
    """Histogram of n rows over an enumerated universe."""

    universe: Universe
    counts: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.counts, dtype=np.int64)
        if arr.ndim != 1 or arr.size != self.universe.size:
            raise WorkloadError("counts must have one entry per universe element")
        if np.any(arr < 0):
            raise WorkloadError("counts must be non-negative")
        if arr.sum() < 1:
            raise WorkloadError("database must contain at least one row")
        arr.flags.writeable = False
        object.__setattr__(self, "counts", arr)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def row_fractions(self) -> np.ndarray:
        return self.counts / self.n


@dataclass(frozen=True)
class LinearQuery:
    """A [0,1]-valued function over the universe, owned by one analyst."""

    query_id: str
    analyst_id: str
    values: np.ndarray
    negated_of: str | None = None

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise WorkloadError("query values must be one-dimensional")
        if np.any(arr < 0) or np.any(arr > 1) or not np.all(np.isfinite(arr)):
            raise WorkloadError(f"query {self.query_id!r}: values must lie in [0, 1]")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)


@dataclass(frozen=True)
class Workload:
    """One analyst's ordered query set."""

    analyst_id: str
    queries: tuple[LinearQuery, ...]

    def __post_init__(self):
        for q in self.queries:
            if q.analyst_id != self.analyst_id:
                raise WorkloadError(
                    f"query {q.query_id!r} carries analyst {q.analyst_id!r}, "
                    f"expected {self.analyst_id!r}"
                )


@dataclass(frozen=True)
class QueryTable:
    """All queries across analysts after negation closure.

    ``position`` maps query_id to index; ``negation_pair[i]`` is the index of
    the query whose values are ``1 - values[i]``.
    """

    queries: tuple[LinearQuery, ...]
    position: dict[str, int] = field(repr=False)
    negation_pair: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.queries)

    def values_matrix(self) -> np.ndarray:
        return np.stack([q.values for q in self.queries])


def evaluate(query: LinearQuery, database: Database) -> float:
    """q(D) = (1/n) * sum over rows of q(row)."""
    if query.values.size != database.universe.size:
        raise WorkloadError("query and database use different universes")
    return float(query.values @ database.counts) / database.n


def negate(query: LinearQuery) -> LinearQuery:
    """The complementary query 1 - q, attributed to the same analyst."""
    if query.query_id.endswith(NEGATION_SUFFIX) and query.negated_of:
        new_id = query.negated_of
    else:
        new_id = query.query_id + NEGATION_SUFFIX
    return LinearQuery(
        query_id=new_id,
        analyst_id=query.analyst_id,
        values=1.0 - query.values,
        negated_of=query.query_id,
    )


def close_under_negation(workloads: list[Workload]) -> QueryTable:
    """Union of all workloads together with every query's negation."""
    originals: list[LinearQuery] = []
    seen: set[str] = set()
    for wl in workloads:
        for q in wl.queries:
            if q.query_id in seen:
                raise WorkloadError(f"duplicate query_id {q.query_id!r}")
            seen.add(q.query_id)
            originals.append(q)
    table: list[LinearQuery] = list(originals)
    for q in originals:
        nq = negate(q)
        if nq.query_id in seen:
            raise WorkloadError(f"duplicate query_id {nq.query_id!r}")
        seen.add(nq.query_id)
        table.append(nq)
    position = {q.query_id: i for i, q in enumerate(table)}
    m = len(originals)
    pair = np.empty(len(table), dtype=np.int64)
    pair[:m] = np.arange(m) + m
    pair[m:] = np.arange(m)
    return QueryTable(queries=tuple(table), position=position, negation_pair=pair)


def compile_conjunction(terms, universe: Universe) -> np.ndarray:
    """Dense 0/1 vector of a conjunction over binary attributes.

    ``terms`` is a list of {"attr": j, "value": 0|1}; the vector is 1 exactly
    on the elements whose bit j equals the required value for every term.
    """
    if universe.bit_count is None:
        raise WorkloadError("conjunction queries require a binary-attribute universe")
    values = np.ones(universe.size, dtype=np.float64)
    indices = np.arange(universe.size)
    seen_attrs = set()
    for term in terms:
        try:
            attr = int(term["attr"])
            value = int(term["value"])
        except (KeyError, TypeError, ValueError) as exc:
            raise WorkloadError(f"malformed conjunction term: {term!r}") from exc
        if not 0 <= attr < universe.bit_count:
            raise WorkloadError(f"conjunction attribute {attr} out of range")
        if value not in (0, 1):
            raise WorkloadError(f"conjunction value must be 0 or 1, got {value}")
        if attr in seen_attrs:
            raise WorkloadError(f"conjunction repeats attribute {attr}")
        seen_attrs.add(attr)
        values *= ((indices >> attr) & 1) == value
    return values


def _resolve_universe(universe_spec, bit_count: int | None) -> Universe:
    if isinstance(universe_spec, Universe):
        return universe_spec
    if universe_spec is None:
        if bit_count is None:
            raise WorkloadError(
                "universe size required for single-column databases"
            )
        return Universe(size=1 << bit_count, bit_count=bit_count)
    size = int(universe_spec)
    if bit_count is not None and size != (1 << bit_count):
        raise WorkloadError(
            f"universe size {size} inconsistent with {bit_count} binary columns"
        )
    return Universe(size=size, bit_count=bit_count)


def load_database(path, universe_spec=None) -> Database:
    """Load a CSV of rows: one universe-index column, or d binary columns."""
    rows: list[list[str]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for record in csv.reader(fh):
            cells = [c.strip() for c in record if c.strip() != ""]
            if cells:
                rows.append(cells)
    if rows and not all(_is_int(c) for c in rows[0]):
        rows = rows[1:]  # header row
    if not rows:
        raise WorkloadError(f"database file {path} contains no rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise WorkloadError(f"database file {path} has ragged rows")
    if width == 1:
        universe = _resolve_universe(universe_spec, bit_count=None)
        counts = np.zeros(universe.size, dtype=np.int64)
        for lineno, row in enumerate(rows, start=1):
            idx = _parse_int(row[0], path, lineno)
            if not 0 <= idx < universe.size:
                raise WorkloadError(
                    f"{path}:{lineno}: row index {idx} outside universe of size "
                    f"{universe.size}"
                )
            counts[idx] += 1
        return Database(universe=universe, counts=counts)
    if width > MAX_BITS:
        raise WorkloadError(f"at most {MAX_BITS} binary attribute columns supported")
    universe = _resolve_universe(universe_spec, bit_count=width)
    counts = np.zeros(universe.size, dtype=np.int64)
    for lineno, row in enumerate(rows, start=1):
        idx = 0
        for j, cell in enumerate(row):
            bit = _parse_int(cell, path, lineno)
            if bit not in (0, 1):
                raise WorkloadError(
                    f"{path}:{lineno}: attribute column {j} must be 0/1, got {bit}"
                )
            idx |= bit << j
        counts[idx] += 1
    return Database(universe=universe, counts=counts)


def load_workloads(path, universe: Universe) -> list[Workload]:
    """Load a JSON array of dense-vector or conjunction query records."""
    with open(path, encoding="utf-8") as fh:
        try:
            records = json.load(fh)
        except json.JSONDecodeError as exc:
            raise WorkloadError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(records, list):
        raise WorkloadError(f"{path}: workload file must be a JSON array")
    by_analyst: dict[str, list[LinearQuery]] = {}
    for pos, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise WorkloadError(f"{path}: entry {pos} is not an object")
        try:
            analyst_id = str(rec["analyst_id"])
            query_id = str(rec["query_id"])
        except KeyError as exc:
            raise WorkloadError(f"{path}: entry {pos} missing {exc.args[0]!r}") from exc
        if "values" in rec:
            values = np.asarray(rec["values"], dtype=np.float64)
            if values.size != universe.size:
                raise WorkloadError(
                    f"{path}: query {query_id!r} has {values.size} values, "
                    f"universe has {universe.size}"
                )
        elif "conjunction" in rec:
            values = compile_conjunction(rec["conjunction"], universe)
        else:
            raise WorkloadError(
                f"{path}: query {query_id!r} has neither 'values' nor 'conjunction'"
            )
        query = LinearQuery(query_id=query_id, analyst_id=analyst_id, values=values)
        by_analyst.setdefault(analyst_id, []).append(query)
    return [
        Workload(analyst_id=aid, queries=tuple(qs)) for aid, qs in by_analyst.items()
    ]


def _is_int(cell: str) -> bool:
    try:
        int(cell)
    except ValueError:
        return False
    return True


def _parse_int(cell: str, path, lineno: int) -> int:
    try:
        return int(cell)
    except ValueError as exc:
        raise WorkloadError(f"{path}:{lineno}: malformed integer {cell!r}") from exc
