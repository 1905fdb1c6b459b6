"""Online analyst-private multiplicative weights for a fixed query sequence.

A hypothesis (a multiset of samples from the current weight vector) answers
queries while it can.  Each incoming query is compared to the true answer
through one Laplace draw; if the noisy error is within the threshold, the
round is good and the released value is the hypothesis answer, bit for bit.
Otherwise the round is bad: the noisy true answer is released, and the query
joins the update pool with the sign of its observed error.  When the pool
outgrows the (noisy) batch size, the pooled signed queries are averaged,
the weight vector takes one exponential step against the average, and a
fresh hypothesis is sampled.

The sequence must be fixed in advance; adaptively chosen queries are outside
the contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dp
from .dp import NoiseFn, PrivacyLedger
from .measures import Measure, mw_update
from .queries import Database, LinearQuery, evaluate


@dataclass(frozen=True)
class OnlineParams:
    """Parameters for the online mechanism.

    Defaults follow the paper-scale formulas (natural logs, ceilings on the
    integer counts); they are astronomically conservative at desk scale, so
    every field is overridable and overrides are recorded.
    """

    eta: float
    s: float  # batch size (pool trigger before noise)
    n_hat: int  # hypothesis sample count
    epochs: int  # epoch cap T
    bad_round_cap: int  # R
    sigma: float  # answer-noise scale
    tau: float  # error threshold
    epsilon: float
    k: int  # sequence length
    delta: float | None = None
    beta: float | None = None
    overridden: tuple[str, ...] = ()
    predicted_error: float | None = None
    vacuous_warning: bool = False

    def __post_init__(self):
        for name in ("eta", "s", "sigma", "tau", "epsilon"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_hat < 1 or self.epochs < 1 or self.bad_round_cap < 1 or self.k < 1:
            raise ValueError("counts must be positive")

    def error_bound(self) -> float:
        """Accuracy level every answer should meet: tau + 6 sigma ln(4k/beta)."""
        beta = self.beta if self.beta is not None else 0.05
        return self.tau + 6.0 * self.sigma * math.log(4.0 * self.k / beta)


def derive_params_online(
    n: int,
    universe_size: int,
    k: int,
    epsilon: float,
    delta: float,
    beta: float,
    overrides: dict | None = None,
) -> OnlineParams:
    """Linear-query defaults:

    eta = n^(-2/5), s = 128 n^(2/5) sqrt(ln|X| ln(4k/beta) ln(1/delta)) / eps,
    n_hat = ceil(32 n^(4/5) ln(4k/beta)), T = ceil(n^(4/5) ln|X|), R = 2sT,
    sigma = 20000 ln^(3/4)|X| ln^(1/4)(4k/beta) ln^(5/4)(4/delta) / (eps^(3/2) n^(2/5)),
    tau has ln^(5/4)(4k/beta) in place of the 1/4 power and constant 80000.
    """
    if n < 1 or universe_size < 1 or k < 1:
        raise ValueError("n, universe size and k must be positive")
    logx = math.log(universe_size) if universe_size > 1 else 1.0
    logk = math.log(4.0 * k / beta)
    logd = math.log(1.0 / delta)
    log4d = math.log(4.0 / delta)
    eta = n ** (-0.4)
    s = 128.0 * n ** 0.4 * math.sqrt(logx * logk * logd) / epsilon
    n_hat = math.ceil(32.0 * n ** 0.8 * logk)
    epochs = math.ceil(n ** 0.8 * logx)
    sigma = (
        20000.0 * logx ** 0.75 * logk ** 0.25 * log4d ** 1.25
        / (epsilon ** 1.5 * n ** 0.4)
    )
    tau = (
        80000.0 * logx ** 0.75 * logk ** 1.25 * log4d ** 1.25
        / (epsilon ** 1.5 * n ** 0.4)
    )
    values = dict(
        eta=eta, s=s, n_hat=n_hat, epochs=epochs, sigma=sigma, tau=tau,
    )
    noted = []
    for key in list(values):
        if overrides and key in overrides:
            values[key] = overrides[key]
            noted.append(key)
    values["n_hat"] = int(values["n_hat"])
    values["epochs"] = int(values["epochs"])
    bad_round_cap = math.ceil(2.0 * values["s"] * values["epochs"])
    if overrides and "bad_round_cap" in overrides:
        bad_round_cap = int(overrides["bad_round_cap"])
        noted.append("bad_round_cap")
    if overrides:
        unknown = set(overrides) - set(values) - {"bad_round_cap"}
        if unknown:
            raise ValueError(f"unknown parameter overrides: {sorted(unknown)}")
    return OnlineParams(
        eta=float(values["eta"]), s=float(values["s"]), n_hat=values["n_hat"],
        epochs=values["epochs"], bad_round_cap=bad_round_cap,
        sigma=float(values["sigma"]), tau=float(values["tau"]),
        epsilon=epsilon, delta=delta, beta=beta, k=k, overridden=tuple(noted),
    )


def derive_params_lowsens(
    n: int,
    universe_size: int,
    k: int,
    sensitivity: float,
    epsilon: float,
) -> OnlineParams:
    """Parameter recipe for general low-sensitivity queries.

    Balances the learning rate against the threshold (eta = tau), with
    T ~ n ln|X| / eta^2, s ~ sqrt(n ln|X|) ln^(1/4) k / (eps eta),
    sigma ~ sensitivity * sqrt(R) / eps and tau ~ sigma ln k.  Returns the
    parameter set with the predicted error bound attached; the guarantee is
    vacuous unless sensitivity << n^(-3/4), which raises a warning flag.
    The state space itself (all size-n databases) is not materialized; this
    op returns parameters and the predicted error only.
    """
    if not 0 < sensitivity <= 1:
        raise ValueError("sensitivity must be in (0, 1]")
    if n < 2 or universe_size < 2 or k < 2:
        raise ValueError("n, universe size and k must be at least 2")
    logx = math.log(universe_size)
    logk = math.log(k)
    # eta = tau solves eta^(5/2) = sens * n^(3/4) ln^(3/4)|X| ln^(9/8) k / eps^(3/2)
    eta = (
        sensitivity * n ** 0.75 * logx ** 0.75 * logk ** 1.125 / epsilon ** 1.5
    ) ** 0.4
    epochs = max(1, math.ceil(n * logx / eta ** 2))
    s = max(1.0, math.sqrt(n * logx) * logk ** 0.25 / (epsilon * eta))
    n_hat = max(1, math.ceil(math.sqrt(logk) / eta ** 2))
    bad_round_cap = max(1, math.ceil(2.0 * s * epochs))
    sigma = sensitivity * math.sqrt(bad_round_cap) / epsilon
    tau = sigma * logk
    predicted = (
        sensitivity ** 0.4 * n ** 0.3 * logx ** 0.3 * logk ** 0.45
        / epsilon ** 0.4
    )
    return OnlineParams(
        eta=eta, s=s, n_hat=n_hat, epochs=epochs, bad_round_cap=bad_round_cap,
        sigma=sigma, tau=tau, epsilon=epsilon, k=k,
        predicted_error=predicted,
        vacuous_warning=sensitivity >= n ** -0.75,
    )


@dataclass(frozen=True)
class SignedQuery:
    """A pooled update query with the sign of its observed error."""

    query: LinearQuery
    sign: int

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise ValueError("sign must be -1 or +1")


class TerminatedError(RuntimeError):
    """The mechanism stopped; ``reason`` is one of epoch-cap, bad-round-cap,
    sequence-end."""

    def __init__(self, reason: str):
        super().__init__(f"online mechanism terminated: {reason}")
        self.reason = reason


@dataclass
class AnswerRecord:
    query_id: str
    answer: float
    round_type: str  # "good" | "bad"
    epoch: int

    def to_json(self) -> dict:
        return {
            "query_id": self.query_id,
            "answer": self.answer,
            "round_type": self.round_type,
            "epoch": self.epoch,
        }


class OnlineState:
    """Mutable run state: weight vector, hypothesis, pool, and counters."""

    def __init__(
        self,
        database: Database,
        params: OnlineParams,
        rng: np.random.Generator,
        noise: NoiseFn = dp.laplace_noise,
        ledger: PrivacyLedger | None = None,
    ):
        self.database = database
        self.params = params
        self.rng = rng
        self.noise = noise
        size = database.universe.size
        self.log_weights = np.zeros(size)
        # H_0 is the uniform distribution itself, not samples from it.
        self.hypothesis = np.full(size, 1.0 / size)
        self.pool: list[SignedQuery] = []
        self.batch_cap = params.s + noise(2.0 / params.epsilon, rng)
        self.epoch = 0
        self.bad_rounds = 0
        self.answered = 0
        self.ledger = ledger
        if ledger is not None:
            ledger.record("online-release", params.epsilon,
                          params.delta if params.delta is not None else 0.0)

    def check_live(self):
        if self.epoch >= self.params.epochs:
            raise TerminatedError("epoch-cap")
        if self.bad_rounds >= self.params.bad_round_cap:
            raise TerminatedError("bad-round-cap")
        if self.answered >= self.params.k:
            raise TerminatedError("sequence-end")

    def distribution(self) -> np.ndarray:
        w = np.exp(self.log_weights - self.log_weights.max())
        return w / w.sum()


def answer_next(
    state: OnlineState, query: LinearQuery, rng: np.random.Generator | None = None
) -> tuple[float, OnlineState]:
    """Answer one query, advancing the state.

    Good round: the hypothesis answer is released unchanged and only the
    query counter moves.  Bad round: the noisy true answer is released, the
    signed query joins the pool, and a full pool triggers the epoch update
    and a fresh noisy batch cap.
    """
    state.check_live()
    rng = rng if rng is not None else state.rng
    params = state.params
    true_answer = evaluate(query, state.database)
    hyp_answer = float(query.values @ state.hypothesis)
    z = state.noise(params.sigma, rng)
    state.answered += 1
    if abs(true_answer - hyp_answer + z) <= params.tau:
        record = AnswerRecord(query.query_id, hyp_answer, "good", state.epoch)
        state.last_record = record
        return hyp_answer, state
    sign = 1 if (hyp_answer - true_answer - z) > 0 else -1
    state.pool.append(SignedQuery(query=query, sign=sign))
    state.bad_rounds += 1
    answer = true_answer + z
    record = AnswerRecord(query.query_id, answer, "bad", state.epoch)
    state.last_record = record
    if len(state.pool) > state.batch_cap:
        _advance_epoch(state, rng)
    return answer, state


def _advance_epoch(state: OnlineState, rng: np.random.Generator):
    params = state.params
    update = aggregate_pool(state.pool, params.s)
    state.log_weights = state.log_weights - (params.eta / 2.0) * update
    state.log_weights -= state.log_weights.max()
    dist = state.distribution()
    counts = sample_hypothesis(dist, params.n_hat, rng)
    state.hypothesis = counts / params.n_hat
    state.pool = []
    state.batch_cap = params.s + state.noise(2.0 / params.epsilon, rng)
    state.epoch += 1


def aggregate_pool(pool: list[SignedQuery], s: float) -> np.ndarray:
    """Average of the pooled signed queries, clamped into [-1, 1].

    The noisy batch cap can let the pool slightly exceed s, so the
    per-element aggregate is clamped to keep the update losses in range;
    clamping only activates in the Laplace tail.
    """
    if not pool:
        raise ValueError("update pool is empty")
    total = np.zeros_like(pool[0].query.values)
    for sq in pool:
        total = total + sq.sign * sq.query.values
    return np.clip(total / s, -1.0, 1.0)


def sample_hypothesis(
    distribution: np.ndarray, n_hat: int, rng: np.random.Generator
) -> np.ndarray:
    """Histogram of n_hat independent samples from the distribution."""
    cdf = np.cumsum(distribution)
    draws = rng.random(n_hat) * cdf[-1]
    indices = np.searchsorted(cdf, draws, side="right")
    indices = np.minimum(indices, distribution.size - 1)
    return np.bincount(indices, minlength=distribution.size).astype(np.float64)


def epoch_update(
    weights: Measure, pool: list[SignedQuery], params: OnlineParams,
    rng: np.random.Generator,
) -> tuple[Measure, np.ndarray]:
    """Standalone epoch update on a Measure: exponential step against the
    pool average, normalization to density 1, and a fresh hypothesis.

    The signed aggregate u in [-1, 1] is applied through the standard
    update by shifting losses to (u + 1) / 2 in [0, 1]; the uniform factor
    this introduces cancels in the normalization.
    """
    update = aggregate_pool(pool, params.s)
    shifted = (update + 1.0) / 2.0
    stepped = mw_update(weights, shifted, params.eta)
    normalized = Measure(stepped.weights / stepped.density)
    counts = sample_hypothesis(normalized.weights, params.n_hat, rng)
    return normalized, counts / params.n_hat


def answer_sequence(
    database: Database,
    sequence: list[LinearQuery],
    params: OnlineParams,
    rng: np.random.Generator,
    noise: NoiseFn = dp.laplace_noise,
    ledger: PrivacyLedger | None = None,
) -> tuple[list[AnswerRecord], OnlineState]:
    """Run the mechanism over a fixed, pre-loaded query sequence."""
    if len(sequence) > params.k:
        raise ValueError("sequence longer than the declared length k")
    state = OnlineState(database, params, rng, noise=noise, ledger=ledger)
    records = []
    for query in sequence:
        answer_next(state, query)
        records.append(state.last_record)
    return records, state
