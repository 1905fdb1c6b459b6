"""The data-vs-query zero-sum game and no-regret self-play.

The data player owns one action per universe element and runs plain
multiplicative weights on losses ``G(x, q) = (1 + q(D) - q(x)) / 2``.  The
column player (queries, or whole analysts) runs density-constrained
multiplicative weights: it updates the unprojected measure, but samples from
its projection onto density-s measures, which caps any single action's
probability at 1/s.  The column player maximizes the payoff, so its losses
are ``1 - G``; the projection and the sampling normalization are invariant
under a uniform shift of losses, which is why the shift into [0, 1] is
behavior-neutral.

Self-play alternates exactly as the release mechanism does: the data player
updates on the current column action and samples, then the column player
updates on that sample, projects, and draws the next column action.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .measures import project_log_weights, sample_weights
from .queries import Database, QueryTable, Workload

NEGATION_CLOSURE_TOL = 1e-9


@dataclass(frozen=True)
class PlayTranscript:
    """Sampled actions and per-round payoffs from one self-play run."""

    rows: np.ndarray  # data actions x_t
    cols: np.ndarray  # column actions q_t (indices into the column space)
    payoffs: np.ndarray
    eta: float
    s: float

    def __post_init__(self):
        if not (len(self.rows) == len(self.cols) == len(self.payoffs)):
            raise ValueError("transcript arrays must have equal length")
        if np.any(self.payoffs < -1e-12) or np.any(self.payoffs > 1 + 1e-12):
            raise ValueError("payoffs must lie in [0, 1]")

    @property
    def rounds(self) -> int:
        return int(len(self.rows))

    def average_payoff(self) -> float:
        return float(self.payoffs.mean())

    def row_histogram(self, row_count: int) -> np.ndarray:
        return np.bincount(self.rows, minlength=row_count) / self.rounds

    def col_histogram(self, col_count: int) -> np.ndarray:
        return np.bincount(self.cols, minlength=col_count) / self.rounds

    def to_json(self) -> list[dict]:
        return [
            {"round": t + 1, "x": int(self.rows[t]), "q": int(self.cols[t]),
             "payoff": float(self.payoffs[t])}
            for t in range(self.rounds)
        ]


class QueryGameOracle:
    """Payoffs ``G(x, q) = (1 + q(D) - q(x)) / 2`` with q(D) cached."""

    def __init__(self, values: np.ndarray, true_answers: np.ndarray,
                 negation_pair: np.ndarray | None = None):
        self.values = values  # |Q| x |X|
        self.true_answers = true_answers  # q(D) per query
        self.negation_pair = negation_pair
        self.row_count = int(values.shape[1])
        self.col_count = int(values.shape[0])

    def payoff(self, row: int, col: int) -> float:
        return 0.5 * (1.0 + self.true_answers[col] - self.values[col, row])

    def data_losses(self, col: int) -> np.ndarray:
        return 0.5 * (1.0 + self.true_answers[col] - self.values[col])

    def col_losses(self, row: int) -> np.ndarray:
        # Maximizer's losses: 1 - G(row, .)
        return 0.5 * (1.0 + self.values[:, row] - self.true_answers)

    def mean_payoff_per_row(self, col_weights: np.ndarray) -> np.ndarray:
        return 0.5 * (
            1.0 + col_weights @ self.true_answers - col_weights @ self.values
        )

    def mean_payoff_per_col(self, row_weights: np.ndarray) -> np.ndarray:
        return 0.5 * (1.0 + self.true_answers - self.values @ row_weights)


class MatrixGameOracle:
    """Explicit payoff matrix ``M[x, c]`` in [0, 1]; used by tests and toys."""

    def __init__(self, payoffs: np.ndarray):
        M = np.asarray(payoffs, dtype=np.float64)
        if M.ndim != 2:
            raise ValueError("payoff matrix must be two-dimensional")
        if np.any(M < 0) or np.any(M > 1):
            raise ValueError("payoffs must lie in [0, 1]")
        self.matrix = M
        self.row_count = int(M.shape[0])
        self.col_count = int(M.shape[1])

    def payoff(self, row: int, col: int) -> float:
        return float(self.matrix[row, col])

    def data_losses(self, col: int) -> np.ndarray:
        return self.matrix[:, col]

    def col_losses(self, row: int) -> np.ndarray:
        return 1.0 - self.matrix[row]

    def mean_payoff_per_row(self, col_weights: np.ndarray) -> np.ndarray:
        return self.matrix @ col_weights

    def mean_payoff_per_col(self, row_weights: np.ndarray) -> np.ndarray:
        return self.matrix.T @ row_weights


def build_game(database: Database, table: QueryTable) -> QueryGameOracle:
    """Game oracle for a negation-closed query table."""
    values = table.values_matrix()
    if values.shape[1] != database.universe.size:
        raise ValueError("query table and database use different universes")
    pair = table.negation_pair
    if pair is None or np.max(
        np.abs(values[pair] - (1.0 - values))
    ) > NEGATION_CLOSURE_TOL:
        raise ValueError("query table is not closed under negation")
    true_answers = values @ database.counts / database.n
    return QueryGameOracle(values, true_answers, pair)


def build_analyst_game(
    database: Database, closed_workloads: list[Workload]
) -> MatrixGameOracle:
    """Payoffs ``max over the analyst's queries of (1 + q(D) - q(x)) / 2``.

    Each workload must already contain the negations of its queries, which
    keeps every column's payoff at least 1/2.
    """
    cols = []
    for wl in closed_workloads:
        values = np.stack([q.values for q in wl.queries])
        complements = 1.0 - values[::-1]
        if values.shape[0] % 2 != 0 or np.max(
            np.abs(np.sort(values, axis=0) - np.sort(complements, axis=0))
        ) > NEGATION_CLOSURE_TOL:
            raise ValueError(
                f"workload {wl.analyst_id!r} is not closed under negation"
            )
        truths = values @ database.counts / database.n
        cols.append(0.5 * (1.0 + np.max(truths[:, None] - values, axis=0)))
    return MatrixGameOracle(np.stack(cols, axis=1))


def _project_positive(w: np.ndarray, s: float, ks: np.ndarray) -> np.ndarray:
    """Lean projection for the self-play loop: strictly positive weights,
    validation done by the caller once.  Same piecewise closed form as
    ``measures.project_weights``."""
    order = np.argsort(w)[::-1]
    u = w[order]
    prefix = np.cumsum(u)
    total = prefix[-1]
    tails = total - prefix + u  # tails[k] = sum of the k-th largest onward
    cs = (s - ks) / tails
    valid = (cs * u <= 1.0 + 1e-12) & (s - ks > 0)
    valid[1:] &= cs[1:] * u[:-1] >= 1.0 - 1e-12
    k = int(np.argmax(valid))
    if not valid[k]:
        return project_log_weights(np.log(w), s)
    return np.minimum(1.0, cs[k] * w)


def _sample_positive(w: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(w)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, w.size - 1)


def play_no_regret(
    game, rounds: int, eta: float, s: float, rng: np.random.Generator
) -> PlayTranscript:
    """Self-play: MW data player against the density-s projected column player.

    Both players keep log-domain weights; the column player's measure is
    exponentiated with a max shift and projected each round before sampling.
    The per-round loss vectors are premultiplied by eta once, since the
    games here have fixed payoffs.
    """
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    if eta <= 0:
        raise ValueError("eta must be positive")
    if not 0 < s <= game.col_count:
        raise ValueError("s must lie in (0, number of column actions]")
    # eta-scaled loss tables: row player indexed by column action and vice versa.
    row_steps = np.stack(
        [eta * game.data_losses(c) for c in range(game.col_count)]
    )
    col_steps = np.stack(
        [eta * game.col_losses(x) for x in range(game.row_count)]
    )
    ks = np.arange(game.col_count, dtype=np.float64)
    log_row = np.zeros(game.row_count)
    log_col = np.zeros(game.col_count)
    col_action = _sample_positive(_project_positive(np.exp(log_col), s, ks), rng)

    rows = np.empty(rounds, dtype=np.int64)
    cols = np.empty(rounds, dtype=np.int64)
    payoffs = np.empty(rounds)
    for t in range(rounds):
        log_row -= row_steps[col_action]
        row_action = _sample_positive(np.exp(log_row - log_row.max()), rng)
        rows[t] = row_action
        cols[t] = col_action
        payoffs[t] = game.payoff(row_action, col_action)
        log_col -= col_steps[row_action]
        projected = _project_positive(np.exp(log_col - log_col.max()), s, ks)
        col_action = _sample_positive(projected, rng)
    return PlayTranscript(rows=rows, cols=cols, payoffs=payoffs, eta=eta, s=s)


def best_density_s_payoff(col_payoffs: np.ndarray, s: float) -> float:
    """Best average payoff achievable by a density-s measure over columns.

    The maximizing density-s measure puts capped (unit) weight on the best
    actions, so the optimum is the mean of the s largest average payoffs,
    with a fractional share of the next one when s is not an integer.
    """
    if not 0 < s <= col_payoffs.size:
        raise ValueError("s must lie in (0, number of columns]")
    ordered = np.sort(col_payoffs)[::-1]
    whole = int(math.floor(s))
    mass = float(ordered[:whole].sum())
    if whole < s and whole < ordered.size:
        mass += (s - whole) * float(ordered[whole])
    return mass / s


def empirical_regret(transcript: PlayTranscript, game) -> tuple[float, float]:
    """(data regret, column regret against the best density-s comparator).

    Data regret: average loss incurred minus the best fixed data action's
    average loss against the sampled column actions.  Column regret: best
    average payoff of a density-s measure against the sampled data actions,
    minus the payoff achieved.
    """
    row_hist = transcript.row_histogram(game.row_count)
    col_hist = transcript.col_histogram(game.col_count)
    achieved = transcript.average_payoff()
    best_fixed_row = float(np.min(game.mean_payoff_per_row(col_hist)))
    data_regret = achieved - best_fixed_row
    col_avg = game.mean_payoff_per_col(row_hist)
    col_regret = best_density_s_payoff(col_avg, transcript.s) - achieved
    return data_regret, col_regret


def regret_bound(
    row_count: int, col_count: int, rounds: int, eta: float, beta: float
) -> float:
    """High-probability regret expression for the projected self-play:
    eta + max(ln |X|, ln |Q|) / (eta T) + 4 ln(2/beta) / sqrt(T)."""
    return (
        eta
        + max(math.log(row_count), math.log(col_count)) / (eta * rounds)
        + 4.0 * math.log(2.0 / beta) / math.sqrt(rounds)
    )
