"""Laplace noise, sparse vector, advanced composition, and a black-box
multiplicative-weights release used to answer a flagged analyst's workload.

Every randomized primitive takes an explicit ``numpy.random.Generator`` and an
optional ``noise`` hook (``noise(scale, rng) -> float``) so that tests can
force noise to zero deterministically.  Privacy spends are appended to a
``PrivacyLedger``; top-level ledger totals add up budgets (simple
composition), while ``compose`` provides the advanced composition rate used
to derive per-round budgets inside the release loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .queries import Database, LinearQuery, evaluate

NoiseFn = Callable[[float, np.random.Generator], float]


@dataclass(frozen=True)
class PrivacyParams:
    """(epsilon, delta) budget plus the accuracy failure probability beta."""

    epsilon: float
    delta: float
    beta: float = 0.05

    def __post_init__(self):
        if not 0 < self.epsilon <= 10:
            raise ValueError("epsilon must be in (0, 10]")
        if not 0 < self.delta < 1:
            raise ValueError("delta must be in (0, 1)")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must be in (0, 1]")

    def split(self, parts: int) -> "PrivacyParams":
        return PrivacyParams(self.epsilon / parts, self.delta / parts, self.beta)


@dataclass(frozen=True)
class LedgerEvent:
    label: str
    epsilon0: float
    delta0: float
    count: int = 1


@dataclass
class PrivacyLedger:
    """Ordered (epsilon0, delta0) event log with deterministic totals."""

    events: list[LedgerEvent] = field(default_factory=list)

    def record(self, label: str, epsilon0: float, delta0: float, count: int = 1):
        self.events.append(LedgerEvent(label, epsilon0, delta0, count))

    def total(self) -> tuple[float, float]:
        eps = sum(e.epsilon0 * e.count for e in self.events)
        delta = sum(e.delta0 * e.count for e in self.events)
        return eps, delta

    def to_json(self) -> dict:
        eps, delta = self.total()
        return {
            "events": [
                {
                    "label": e.label,
                    "epsilon0": e.epsilon0,
                    "delta0": e.delta0,
                    "count": e.count,
                }
                for e in self.events
            ],
            "total_epsilon": eps,
            "total_delta": delta,
        }


@dataclass(frozen=True)
class NoisyAnswer:
    query_id: str
    value: float  # unclamped
    noise_scale: float

    def __post_init__(self):
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")


def laplace_noise(scale: float, rng: np.random.Generator) -> float:
    """Laplace(scale) sample via inverse CDF on a uniform draw."""
    if scale < 0:
        raise ValueError("scale must be non-negative")
    if scale == 0:
        return 0.0
    u = rng.random()
    # u == 0 would map to -inf; nudge into the open interval.
    u = min(max(u, 5e-324), 1.0 - 1e-16)
    if u < 0.5:
        return scale * math.log(2.0 * u)
    return -scale * math.log(2.0 * (1.0 - u))


def zero_noise(scale: float, rng: np.random.Generator) -> float:
    """Deterministic test hook: noise forced to zero."""
    return 0.0


def compose(
    epsilon0: float, delta0: float, count: int, delta_slack: float
) -> tuple[float, float]:
    """Advanced composition of ``count`` (epsilon0, delta0) steps.

    Returns (epsilon0 * sqrt(8 * T * ln(1/delta_slack)) + 2 * epsilon0^2 * T,
    T * delta0 + delta_slack).  The first term carries the epsilon0 factor;
    without it the rate is dimensionally inconsistent.
    """
    if epsilon0 < 0:
        raise ValueError("epsilon0 must be non-negative")
    if epsilon0 > 0.5:
        raise ValueError("advanced composition requires epsilon0 <= 1/2")
    if count < 0:
        raise ValueError("count must be non-negative")
    if not 0 < delta_slack < 1:
        raise ValueError("delta_slack must be in (0, 1)")
    eps = epsilon0 * math.sqrt(8.0 * count * math.log(1.0 / delta_slack))
    eps += 2.0 * epsilon0 * epsilon0 * count
    return eps, count * delta0 + delta_slack


def per_round_epsilon(epsilon: float, count: int, delta_slack: float) -> float:
    """Per-step budget so that advanced composition's first term meets epsilon."""
    if count < 1:
        raise ValueError("count must be at least 1")
    return epsilon / math.sqrt(8.0 * count * math.log(1.0 / delta_slack))


def laplace_mechanism(
    database: Database,
    queries: Sequence[LinearQuery],
    sensitivity: float,
    params: PrivacyParams,
    rng: np.random.Generator,
    ledger: PrivacyLedger | None = None,
    noise: NoiseFn = laplace_noise,
) -> list[NoisyAnswer]:
    """Answer each query with fresh Laplace noise at scale
    ``sensitivity * sqrt(8 |F| ln(1/delta)) / epsilon``."""
    if not queries:
        raise ValueError("laplace_mechanism requires at least one query")
    if sensitivity <= 0:
        raise ValueError("sensitivity must be positive")
    scale = (
        sensitivity
        * math.sqrt(8.0 * len(queries) * math.log(1.0 / params.delta))
        / params.epsilon
    )
    answers = [
        NoisyAnswer(
            query_id=q.query_id,
            value=evaluate(q, database) + noise(scale, rng),
            noise_scale=scale,
        )
        for q in queries
    ]
    if ledger is not None:
        ledger.record("laplace_mechanism", params.epsilon, params.delta)
    return answers


@dataclass
class SparseVectorResult:
    indices: list[int]
    budget_violated: bool
    threshold_noise: float
    decision_inputs: list[set[int]]

    @property
    def index_set(self) -> set[int]:
        return set(self.indices)


def sparse_vector(
    database: Database,
    functions: Sequence[Callable[[Database], float]],
    alpha: float,
    k: int,
    sensitivity: float,
    params: PrivacyParams,
    rng: np.random.Generator,
    ledger: PrivacyLedger | None = None,
    noise: NoiseFn = laplace_noise,
) -> SparseVectorResult:
    """Flag the functions whose value on the database exceeds the threshold.

    One shared threshold-noise draw Lap(2b) and fresh per-index noise Lap(4b)
    with b = sensitivity * sqrt(8 k ln(1/delta)) / epsilon.  Every index is
    tested (no adaptive halting), so the decision for index i is computed
    from f_i(D), the shared threshold noise, and its own fresh draw only;
    ``decision_inputs`` records which functions each decision consumed.
    Exceeding k discoveries raises the budget-violation flag rather than
    hiding results.
    """
    if k < 0:
        raise ValueError("discovery budget k must be non-negative")
    if sensitivity <= 0:
        raise ValueError("sensitivity must be positive")
    base_scale = (
        sensitivity * math.sqrt(8.0 * k * math.log(1.0 / params.delta)) / params.epsilon
    )
    calls: list[int] = []

    def instrumented(i: int) -> float:
        calls.append(i)
        return float(functions[i](database))

    threshold_noise = noise(2.0 * base_scale, rng)
    flagged: list[int] = []
    decision_inputs: list[set[int]] = []
    for i in range(len(functions)):
        mark = len(calls)
        value = instrumented(i)
        index_noise = noise(4.0 * base_scale, rng)
        if value + index_noise >= alpha + threshold_noise:
            flagged.append(i)
        decision_inputs.append(set(calls[mark:]))
    if ledger is not None:
        ledger.record("sparse_vector", params.epsilon, params.delta)
    return SparseVectorResult(
        indices=flagged,
        budget_violated=len(flagged) > k,
        threshold_noise=threshold_noise,
        decision_inputs=decision_inputs,
    )


def mw_release(
    database: Database,
    queries: Sequence[LinearQuery],
    params: PrivacyParams,
    rng: np.random.Generator,
    ledger: PrivacyLedger | None = None,
    noise: NoiseFn = laplace_noise,
    rounds: int | None = None,
    eta: float | None = None,
) -> list[NoisyAnswer]:
    """MWEM-style private release of every query in the set.

    Maintains a synthetic distribution over the universe; each of T' rounds
    selects the query with the largest noisy error (report-noisy-max with
    fresh Laplace noise), measures it with Laplace noise, and applies the
    exponential update toward the measurement.  Per-round budget is
    epsilon / sqrt(8 T' ln(1/delta)), split evenly between selection and
    measurement.  Answers come from the round-averaged synthetic
    distribution.
    """
    if not queries:
        raise ValueError("mw_release requires at least one query")
    n = database.n
    universe_size = database.universe.size
    t_rounds = rounds if rounds is not None else math.ceil(
        math.sqrt(n) * math.log(universe_size)
    )
    t_rounds = max(1, t_rounds)
    step = eta if eta is not None else 1.0 / math.sqrt(n)
    sensitivity = 1.0 / n
    eps0 = per_round_epsilon(params.epsilon, t_rounds, params.delta)
    selection_scale = 4.0 * sensitivity / eps0
    answer_scale = 2.0 * sensitivity / eps0

    values = np.stack([q.values for q in queries])  # |F| x |X|
    truths = values @ database.counts / n
    log_w = np.zeros(universe_size)
    avg_dist = np.zeros(universe_size)
    for _ in range(t_rounds):
        w = np.exp(log_w - log_w.max())
        dist = w / w.sum()
        avg_dist += dist
        synth = values @ dist
        errors = np.abs(truths - synth)
        noisy = errors + np.array(
            [noise(selection_scale, rng) for _ in range(len(queries))]
        )
        pick = int(np.argmax(noisy))
        measurement = truths[pick] + noise(answer_scale, rng)
        if measurement >= synth[pick]:
            log_w -= step * (1.0 - values[pick])
        else:
            log_w -= step * values[pick]
    avg_dist /= t_rounds
    final = values @ avg_dist
    if ledger is not None:
        ledger.record("mw_release", params.epsilon, params.delta)
    return [
        NoisyAnswer(query_id=q.query_id, value=float(final[i]), noise_scale=answer_scale)
        for i, q in enumerate(queries)
    ]
