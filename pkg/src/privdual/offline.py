"""Offline release mechanisms: one-query and one-analyst variants.

Both run the same three-stage pipeline on a fixed batch of workloads:

  1. no-regret self-play between the data player and a density-constrained
     column player (queries, or whole analysts); the data player's sampled
     actions form the synopsis rows,
  2. sparse vector over the per-column error of the synopsis, flagging the
     few columns the synopsis mishandles, and
  3. direct noisy answers for the flagged columns: Laplace answers per
     flagged query, or a full multiplicative-weights release per flagged
     analyst.

The privacy budget is spent in thirds (eps/3, delta/3 per stage) for the
one-query mechanism; the one-analyst mechanism spends the third stage at
eps' = eps / (10 sqrt(s ln(3s/delta))) and delta' = delta / (3s) per flagged
analyst.  Paper-scale parameter formulas are the defaults; every knob is
overridable because the formulas are hopeless at desk scale, and overrides
are reported so nothing hides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dp
from .dp import NoiseFn, PrivacyLedger, PrivacyParams
from .game import (
    PlayTranscript,
    build_analyst_game,
    build_game,
    play_no_regret,
    regret_bound,
)
from .queries import (
    Database,
    LinearQuery,
    Workload,
    close_under_negation,
    evaluate,
    negate,
)


@dataclass(frozen=True)
class OfflineParams:
    """Round count, learning rate, density/patch budget, and privacy budget."""

    rounds: int
    eta: float
    s: int
    epsilon: float
    delta: float
    beta: float = 0.05
    sv_threshold: float | None = None  # defaults to the 4*rho error level
    mw_rounds: int | None = None  # flagged-analyst release overrides
    mw_eta: float | None = None
    mw_epsilon: float | None = None
    mw_delta: float | None = None
    overridden: tuple[str, ...] = ()
    clamped: bool = False

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.s < 1:
            raise ValueError("s must be at least 1")

    def privacy(self) -> PrivacyParams:
        return PrivacyParams(self.epsilon, self.delta, self.beta)

    def threshold(self, universe_size: int, col_count: int) -> float:
        """Sparse-vector threshold: 4 * rho at these play parameters.

        The constant hides asymptotic slack, so the value is overridable;
        the default tracks the error level the self-play analysis bounds.
        """
        if self.sv_threshold is not None:
            return self.sv_threshold
        return 4.0 * regret_bound(
            universe_size, col_count, self.rounds, self.eta, self.beta
        )


def _apply_overrides(
    rounds: int,
    s: int,
    clamped: bool,
    epsilon: float,
    delta: float,
    overrides: dict | None,
) -> tuple[int, float, int, bool, tuple[str, ...], dict]:
    """Resolve (rounds, eta, s) against explicit overrides.

    eta's default is derived from the final round count, so overriding T
    alone still gives the matching eps / (2 sqrt(T ln(1/delta))).
    """
    overrides = dict(overrides or {})
    noted = []
    if "rounds" in overrides or "T" in overrides:
        rounds = int(overrides.pop("rounds", overrides.pop("T", rounds)))
        overrides.pop("T", None)
        noted.append("rounds")
    eta = epsilon / (2.0 * math.sqrt(rounds * math.log(1.0 / delta)))
    if "eta" in overrides:
        eta = float(overrides.pop("eta"))
        noted.append("eta")
    if "s" in overrides:
        s = int(overrides.pop("s"))
        clamped = False
        noted.append("s")
    return rounds, eta, s, clamped, tuple(noted), overrides


def _extra_overrides(params_kwargs: dict, overrides: dict, noted: tuple[str, ...]):
    names = []
    for key in ("sv_threshold", "mw_rounds", "mw_eta", "mw_epsilon", "mw_delta"):
        if key in overrides:
            params_kwargs[key] = overrides.pop(key)
            names.append(key)
    if overrides:
        raise ValueError(f"unknown parameter overrides: {sorted(overrides)}")
    params_kwargs["overridden"] = noted + tuple(names)


def derive_params_alg3(
    n: int,
    universe_size: int,
    closed_query_count: int,
    epsilon: float,
    delta: float,
    beta: float = 0.05,
    overrides: dict | None = None,
) -> OfflineParams:
    """T = ceil(n * max(ln|X|, ln|Q|)), eta = eps / (2 sqrt(T ln(1/delta))),
    s = min(12T, |Q|), clamped with a warning flag when |Q| binds."""
    if n < 1 or universe_size < 1 or closed_query_count < 1:
        raise ValueError("n, universe size and query count must be positive")
    rounds = math.ceil(n * max(math.log(universe_size), math.log(closed_query_count)))
    rounds = max(1, rounds)
    s = 12 * rounds
    clamped = s > closed_query_count
    s = min(s, closed_query_count)
    rounds, eta, s, clamped, noted, rest = _apply_overrides(
        rounds, s, clamped, epsilon, delta, overrides
    )
    kwargs = dict(
        rounds=rounds, eta=eta, s=s, epsilon=epsilon, delta=delta, beta=beta,
        clamped=clamped,
    )
    _extra_overrides(kwargs, rest, noted)
    return OfflineParams(**kwargs)


def derive_params_alg4(
    n: int,
    universe_size: int,
    analyst_count: int,
    epsilon: float,
    delta: float,
    beta: float = 0.05,
    overrides: dict | None = None,
) -> OfflineParams:
    """T = ceil(n^(2/3) * max(ln|X|, m)); eta as in the one-query variant
    (the printed reciprocal orientation is a typo; the privacy argument uses
    eps / (2 sqrt(T ln(1/delta)))); s = min(12T, m)."""
    if n < 1 or universe_size < 1 or analyst_count < 1:
        raise ValueError("n, universe size and analyst count must be positive")
    rounds = math.ceil(n ** (2.0 / 3.0) * max(math.log(universe_size), analyst_count))
    rounds = max(1, rounds)
    s = 12 * rounds
    clamped = s > analyst_count
    s = min(s, analyst_count)
    rounds, eta, s, clamped, noted, rest = _apply_overrides(
        rounds, s, clamped, epsilon, delta, overrides
    )
    kwargs = dict(
        rounds=rounds, eta=eta, s=s, epsilon=epsilon, delta=delta, beta=beta,
        clamped=clamped,
    )
    _extra_overrides(kwargs, rest, noted)
    return OfflineParams(**kwargs)


@dataclass(frozen=True)
class Synopsis:
    """The released object: sampled universe elements plus per-analyst patches."""

    sampled_rows: tuple[int, ...]
    universe_size: int
    patches: dict[str, dict[str, float]]  # analyst_id -> query_id -> value

    def histogram(self) -> np.ndarray:
        hist = np.bincount(
            np.asarray(self.sampled_rows, dtype=np.int64),
            minlength=self.universe_size,
        )
        return hist / len(self.sampled_rows)


@dataclass(frozen=True)
class AnalystOutput:
    """One analyst's view: the shared synopsis plus their own patches only."""

    analyst_id: str
    synopsis: Synopsis
    patches: dict[str, float]
    _hist: np.ndarray = field(repr=False, compare=False)
    _negation_of: dict[str, str] = field(repr=False, compare=False)

    def answer(self, query: LinearQuery) -> float:
        """q's patched answer if present, else q evaluated on the synopsis.

        Patched values are clamped into [0, 1] (post-processing; the raw
        patch keeps the unclamped value).  A patch for the query's negation
        (same analyst by construction) answers via 1 - patch.
        """
        if query.query_id in self.patches:
            return min(1.0, max(0.0, self.patches[query.query_id]))
        partner = self._negation_of.get(query.query_id)
        if partner is not None and partner in self.patches:
            return 1.0 - min(1.0, max(0.0, self.patches[partner]))
        return float(query.values @ self._hist)


@dataclass
class ReleaseResult:
    synopsis: Synopsis
    outputs: dict[str, AnalystOutput]
    ledger: PrivacyLedger
    transcript: PlayTranscript
    flags: list[str]
    params: OfflineParams
    flagged_ids: list[str]

    @property
    def budget_violated(self) -> bool:
        return any(f.startswith("sv-budget-violated") for f in self.flags)


def _negation_map(table_queries) -> dict[str, str]:
    mapping: dict[str, str] = {}
    for q in table_queries:
        if q.negated_of is not None:
            mapping[q.negated_of] = q.query_id
            mapping[q.query_id] = q.negated_of
    return mapping


def _build_outputs(
    workloads: list[Workload],
    synopsis: Synopsis,
    negation_of: dict[str, str],
) -> dict[str, AnalystOutput]:
    hist = synopsis.histogram()
    outputs = {}
    for wl in workloads:
        outputs[wl.analyst_id] = AnalystOutput(
            analyst_id=wl.analyst_id,
            synopsis=synopsis,
            patches=synopsis.patches.get(wl.analyst_id, {}),
            _hist=hist,
            _negation_of=negation_of,
        )
    return outputs


def release_one_query(
    database: Database,
    workloads: list[Workload],
    params: OfflineParams,
    rng: np.random.Generator,
    noise: NoiseFn = dp.laplace_noise,
) -> ReleaseResult:
    """One-query-to-many-analyst offline mechanism.

    Self-play against the negation-closed query table produces the sampled
    synopsis; sparse vector (budget s) flags queries whose synopsis error
    exceeds the threshold; flagged queries are answered by the Laplace
    mechanism and patched into their owner's output only.
    """
    if not workloads or all(not wl.queries for wl in workloads):
        raise ValueError("workloads must contain at least one query")
    table = close_under_negation(workloads)
    if params.s > len(table):
        raise ValueError("density budget s exceeds the closed table size")
    ledger = PrivacyLedger()
    flags = [f"override:{name}" for name in params.overridden]
    if params.clamped:
        flags.append("s-clamped-to-column-count")
    stage = params.privacy().split(3)

    game = build_game(database, table)
    transcript = play_no_regret(game, params.rounds, params.eta, params.s, rng)
    ledger.record("self-play-sampling", stage.epsilon, stage.delta)

    sampled = tuple(int(x) for x in transcript.rows)
    hist = np.bincount(transcript.rows, minlength=database.universe.size)
    hist = hist / transcript.rounds
    synth_answers = game.values @ hist

    threshold = params.threshold(database.universe.size, len(table))
    funcs = [
        _SynopsisError(q, float(synth_answers[i]))
        for i, q in enumerate(table.queries)
    ]
    sv = dp.sparse_vector(
        database, funcs, alpha=threshold, k=params.s,
        sensitivity=1.0 / database.n, params=stage, rng=rng, ledger=ledger,
        noise=noise,
    )
    flagged_idx = sv.indices
    if sv.budget_violated:
        flags.append(
            f"sv-budget-violated:{len(sv.indices)}>{params.s}"
        )
        flagged_idx = sv.indices[: params.s]

    patches: dict[str, dict[str, float]] = {}
    flagged_ids = []
    if flagged_idx:
        flagged_queries = [table.queries[i] for i in flagged_idx]
        answers = dp.laplace_mechanism(
            database, flagged_queries, sensitivity=1.0 / database.n,
            params=stage, rng=rng, ledger=ledger, noise=noise,
        )
        for q, ans in zip(flagged_queries, answers):
            patches.setdefault(q.analyst_id, {})[q.query_id] = ans.value
            flagged_ids.append(q.query_id)
    else:
        ledger.record("laplace_mechanism", stage.epsilon, stage.delta)

    synopsis = Synopsis(
        sampled_rows=sampled, universe_size=database.universe.size, patches=patches
    )
    outputs = _build_outputs(workloads, synopsis, _negation_map(table.queries))
    return ReleaseResult(
        synopsis=synopsis, outputs=outputs, ledger=ledger, transcript=transcript,
        flags=flags, params=params, flagged_ids=flagged_ids,
    )


class _SynopsisError:
    """|q(D) - q(synopsis)| as a 1/n-sensitive function of the database."""

    def __init__(self, query: LinearQuery, synopsis_answer: float):
        self.query = query
        self.synopsis_answer = synopsis_answer

    def __call__(self, database: Database) -> float:
        return abs(evaluate(self.query, database) - self.synopsis_answer)


class _WorstQueryError:
    """max over the analyst's queries of |q(D) - q(synopsis)|; 1/n-sensitive."""

    def __init__(self, queries, synopsis_answers):
        self.values = np.stack([q.values for q in queries])
        self.synopsis_answers = np.asarray(synopsis_answers)

    def __call__(self, database: Database) -> float:
        truths = self.values @ database.counts / database.n
        return float(np.max(np.abs(truths - self.synopsis_answers)))


def release_one_analyst(
    database: Database,
    workloads: list[Workload],
    params: OfflineParams,
    rng: np.random.Generator,
    noise: NoiseFn = dp.laplace_noise,
) -> ReleaseResult:
    """One-analyst-to-many-analyst offline mechanism.

    The column player picks whole analysts; sparse vector flags the analysts
    whose worst query error on the synopsis exceeds the threshold, and each
    flagged analyst's entire (negation-closed) workload is answered by an
    independent multiplicative-weights release.
    """
    if not workloads or all(not wl.queries for wl in workloads):
        raise ValueError("workloads must contain at least one query")
    closed = [
        Workload(
            analyst_id=wl.analyst_id,
            queries=tuple(wl.queries) + tuple(negate(q) for q in wl.queries),
        )
        for wl in workloads
    ]
    if params.s > len(closed):
        raise ValueError("density budget s exceeds the analyst count")
    ledger = PrivacyLedger()
    flags = [f"override:{name}" for name in params.overridden]
    if params.clamped:
        flags.append("s-clamped-to-column-count")
    stage = params.privacy().split(3)

    game = build_analyst_game(database, closed)
    transcript = play_no_regret(game, params.rounds, params.eta, params.s, rng)
    ledger.record("self-play-sampling", stage.epsilon, stage.delta)

    sampled = tuple(int(x) for x in transcript.rows)
    hist = np.bincount(transcript.rows, minlength=database.universe.size)
    hist = hist / transcript.rounds

    threshold = params.threshold(database.universe.size, len(closed))
    funcs = []
    for wl in closed:
        synth = [float(q.values @ hist) for q in wl.queries]
        funcs.append(_WorstQueryError(wl.queries, synth))
    sv = dp.sparse_vector(
        database, funcs, alpha=threshold, k=params.s,
        sensitivity=1.0 / database.n, params=stage, rng=rng, ledger=ledger,
        noise=noise,
    )
    flagged_idx = sv.indices
    if sv.budget_violated:
        flags.append(f"sv-budget-violated:{len(sv.indices)}>{params.s}")
        flagged_idx = sv.indices[: params.s]

    # Printed third-stage budget: eps' = eps / (10 sqrt(s ln(3s/delta))),
    # delta' = delta / (3s).
    mw_epsilon = params.mw_epsilon
    if mw_epsilon is None:
        mw_epsilon = params.epsilon / (
            10.0 * math.sqrt(params.s * math.log(3.0 * params.s / params.delta))
        )
    mw_delta = params.mw_delta if params.mw_delta is not None else params.delta / (
        3.0 * params.s
    )
    patches: dict[str, dict[str, float]] = {}
    flagged_ids = []
    for idx in flagged_idx:
        wl = closed[idx]
        flagged_ids.append(wl.analyst_id)
        answers = dp.mw_release(
            database, list(wl.queries),
            params=PrivacyParams(mw_epsilon, mw_delta, params.beta),
            rng=rng, ledger=ledger, noise=noise,
            rounds=params.mw_rounds, eta=params.mw_eta,
        )
        patches[wl.analyst_id] = {a.query_id: a.value for a in answers}

    synopsis = Synopsis(
        sampled_rows=sampled, universe_size=database.universe.size, patches=patches
    )
    negation_of = {}
    for wl in closed:
        negation_of.update(_negation_map(wl.queries))
    outputs = _build_outputs(workloads, synopsis, negation_of)
    return ReleaseResult(
        synopsis=synopsis, outputs=outputs, ledger=ledger, transcript=transcript,
        flags=flags, params=params, flagged_ids=flagged_ids,
    )
