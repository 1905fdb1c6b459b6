"""Weight vectors over finite action sets and the operations the players need.

A measure is a non-negative weight vector; its density is the total weight.
Normalizing a measure gives the distribution the owning player samples from.
Three operations carry the whole construction:

  * the exponential update ``w <- w * exp(-eta * loss)``,
  * the capped-scaling projection onto measures of a prescribed density
    (find ``c`` with ``sum(min(1, c * w)) == s``), and
  * inverse-CDF sampling.

Long update loops should work in the log domain (see ``project_log_weights``)
so that thousands of exponential updates cannot underflow; the projection is
invariant under positive rescaling, which makes the max-shift safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DENSITY_TOL = 1e-9


def _as_weight_array(values, name: str = "weights") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class Measure:
    """Non-negative weights over actions ``0 .. action_count-1``."""

    weights: np.ndarray

    def __post_init__(self):
        arr = _as_weight_array(self.weights)
        if np.any(arr < 0):
            raise ValueError("measure weights must be non-negative")
        arr.flags.writeable = False
        object.__setattr__(self, "weights", arr)

    @property
    def action_count(self) -> int:
        return int(self.weights.size)

    @property
    def density(self) -> float:
        return float(self.weights.sum())

    def distribution(self) -> "Distribution":
        total = self.density
        if total <= 0:
            raise ValueError("cannot normalize an all-zero measure")
        return Distribution(self.weights / total)


@dataclass(frozen=True)
class Distribution:
    """Probability vector over actions; sums to one within tolerance."""

    probabilities: np.ndarray

    def __post_init__(self):
        arr = _as_weight_array(self.probabilities, "probabilities")
        if np.any(arr < 0):
            raise ValueError("probabilities must be non-negative")
        if abs(arr.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must sum to 1")
        arr.flags.writeable = False
        object.__setattr__(self, "probabilities", arr)


@dataclass(frozen=True)
class LossVector:
    """Per-action losses, each in [0, 1]."""

    losses: np.ndarray

    def __post_init__(self):
        arr = _as_weight_array(self.losses, "losses")
        if np.any(arr < 0) or np.any(arr > 1):
            raise ValueError("losses must lie in [0, 1]")
        arr.flags.writeable = False
        object.__setattr__(self, "losses", arr)


def uniform_measure(action_count: int, density: float = 1.0) -> Measure:
    """Measure putting ``density / action_count`` on every action."""
    if action_count < 1:
        raise ValueError("action_count must be at least 1")
    if density <= 0:
        raise ValueError("density must be positive")
    return Measure(np.full(action_count, density / action_count))


def mw_update(measure: Measure, losses, eta: float) -> Measure:
    """Exponential-weights update: ``w(a) * exp(-eta * L(a))`` per action.

    Losses must already be in [0, 1]; callers with signed or oversized losses
    clamp or shift before calling (the update itself never rescales).
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if isinstance(losses, LossVector):
        loss_arr = losses.losses
    else:
        loss_arr = _as_weight_array(losses, "losses")
        if np.any(loss_arr < 0) or np.any(loss_arr > 1):
            raise ValueError("losses must lie in [0, 1]")
    if loss_arr.size != measure.action_count:
        raise ValueError("loss vector length must match action count")
    return Measure(measure.weights * np.exp(-eta * loss_arr))


def _project_bisection(weights: np.ndarray, s: float) -> np.ndarray:
    """Solve sum(min(1, c*w)) = s by bisection on c (1e-12 relative)."""
    # sum(min(1, c*w)) <= c * sum(w), so c = s / sum(w) is a valid lower end.
    lo = s / float(weights.sum())
    hi = max(lo * 2.0, 1.0)
    while np.minimum(1.0, hi * weights).sum() < s:
        hi *= 2.0
        if hi > 1e300:
            raise ValueError("projection has no solution at this density")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.minimum(1.0, mid * weights).sum() < s:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * hi:
            break
    return np.minimum(1.0, hi * weights)


def project_weights(weights: np.ndarray, s: float) -> np.ndarray:
    """Scale-and-cap projection kernel on a raw weight array.

    Finds c > 0 with ``sum(min(1, c * w)) == s`` and returns
    ``min(1, c * w)``.  Sorting the weights makes the cap set explicit: if
    exactly the k largest weights are capped, then c = (s - k) / (tail sum),
    so each candidate k is checked in closed form.  Falls back to bisection
    if floating-point ties defeat the scan.
    """
    w = _as_weight_array(weights)
    n = w.size
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    positive = int(np.count_nonzero(w > 0))
    if positive == 0:
        raise ValueError("cannot project an all-zero measure")
    if s <= 0:
        raise ValueError("target density must be positive")
    if s > n:
        raise ValueError("target density exceeds the action count; no solution")
    if s > positive:
        raise ValueError(
            "target density exceeds the number of positive weights; no solution"
        )
    order = np.argsort(w)[::-1]
    u = w[order]
    total = float(u.sum())
    if s == positive:
        # Every positive weight must be capped at 1.
        return np.where(w > 0, 1.0, 0.0)

    prefix = np.cumsum(u)
    ks = np.arange(n, dtype=np.float64)
    tails = total - np.concatenate(([0.0], prefix[:-1]))
    with np.errstate(divide="ignore", invalid="ignore"):
        cs = (s - ks) / tails
    valid = (s - ks > 0) & (tails > 0) & np.isfinite(cs)
    # Cap-set consistency: the k-th largest is capped, the (k+1)-th is not.
    upper_ok = np.empty(n, dtype=bool)
    upper_ok[0] = True
    upper_ok[1:] = cs[1:] * u[:-1] >= 1.0 - 1e-12
    lower_ok = cs * u <= 1.0 + 1e-12
    valid &= upper_ok & lower_ok
    idx = np.nonzero(valid)[0]
    if idx.size > 0:
        c = float(cs[idx[0]])
        projected = np.minimum(1.0, c * w)
        if abs(projected.sum() - s) <= max(DENSITY_TOL, 1e-12 * s):
            return projected
    projected = _project_bisection(w, s)
    if abs(projected.sum() - s) > max(DENSITY_TOL, 1e-9 * s):
        raise ValueError("projection failed to reach the target density")
    return projected


def project_density(measure: Measure, s: float) -> Measure:
    """Project a measure onto the set of density-``s`` measures.

    The scaling factor may be any positive real (not only >= 1): the output
    is identical wherever both are defined, and deflation keeps the
    projection well-defined after log-domain rescaling.
    """
    return Measure(project_weights(measure.weights, s))


def project_log_weights(log_weights: np.ndarray, s: float) -> np.ndarray:
    """Project weights given in the log domain, shifting by the max first."""
    log_w = np.asarray(log_weights, dtype=np.float64)
    return project_weights(np.exp(log_w - log_w.max()), s)


def sample_weights(weights: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw over a fixed action ordering."""
    cdf = np.cumsum(weights)
    total = cdf[-1]
    if not total > 0:
        raise ValueError("cannot sample from an all-zero measure")
    u = rng.random() * total
    idx = int(np.searchsorted(cdf, u, side="right"))
    if idx >= weights.size:
        idx = weights.size - 1
    while weights[idx] == 0.0 and idx > 0:
        idx -= 1
    return idx


def sample(measure: Measure, rng: np.random.Generator) -> int:
    """Draw action a with probability ``A(a) / density(A)``."""
    return sample_weights(measure.weights, rng)


def statistical_distance(p, q) -> float:
    """Total variation distance ``0.5 * sum |p - q|``.

    Accepts ``Distribution`` objects or arrays; if the supports differ in
    length the shorter side is padded with zero-probability actions.
    """
    pa = p.probabilities if isinstance(p, Distribution) else np.asarray(p, dtype=np.float64)
    qa = q.probabilities if isinstance(q, Distribution) else np.asarray(q, dtype=np.float64)
    if pa.size != qa.size:
        size = max(pa.size, qa.size)
        pa = np.pad(pa, (0, size - pa.size))
        qa = np.pad(qa, (0, size - qa.size))
    return float(0.5 * np.abs(pa - qa).sum())
