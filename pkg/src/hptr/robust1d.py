"""One-dimensional trimmed statistics.

Two-sided trims feed the mean/regression/covariance scores, the one-sided trim
feeds PCA, and the trimmed-min residual scale feeds the regression score
denominator.  Tie-breaking is always by ascending original index (stable
sort), which keeps every downstream transcript replayable.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InsufficientDataError, InvalidParameterError

#: Fraction of alpha*n removed per tail by the two-sided trim.
TWO_SIDED_TAIL = 2.0 / 5.5
#: Fraction of alpha*n removed from the top by the one-sided (PCA) trim.
ONE_SIDED_TAIL = 2.0 / 3.5


def two_sided_tail_count(n: int, alpha: float, tail_fraction: float = TWO_SIDED_TAIL) -> int:
    # floor keeps the middle block largest; conservative for resilience.
    return int(math.floor(tail_fraction * alpha * n))


@dataclass(frozen=True)
class TrimPartition:
    bottom: np.ndarray
    middle: np.ndarray
    top: np.ndarray
    tail_count: int


@dataclass(frozen=True)
class RobustMoments:
    mean: float
    var: float
    kept: np.ndarray = field(repr=False)

    def to_json(self) -> str:
        return json.dumps({"mean": self.mean, "var": self.var, "kept": self.kept.tolist()})


def partition_by_count(values, tail_count: int) -> TrimPartition:
    """Split indices into bottom/middle/top blocks of the stated sizes."""
    v = np.asarray(values, dtype=float)
    n = v.shape[0]
    if tail_count < 0:
        raise InvalidParameterError("tail_count must be >= 0")
    if n < 2 * tail_count + 1:
        raise InsufficientDataError(f"n={n} too small for tail_count={tail_count}")
    order = np.argsort(v, kind="stable")
    t = tail_count
    return TrimPartition(
        bottom=order[:t],
        middle=np.sort(order[t : n - t]),
        top=order[n - t :] if t else order[:0],
        tail_count=t,
    )


def partition_two_sided(values, alpha: float, tail_fraction: float = TWO_SIDED_TAIL) -> TrimPartition:
    v = np.asarray(values, dtype=float)
    return partition_by_count(v, two_sided_tail_count(v.shape[0], alpha, tail_fraction))


def trimmed_mean_var(values, alpha: float, tail_fraction: float = TWO_SIDED_TAIL) -> RobustMoments:
    """Mean and population variance (divisor |middle|) of the middle block."""
    v = np.asarray(values, dtype=float)
    part = partition_two_sided(v, alpha, tail_fraction)
    mid = v[part.middle]
    m = float(mid.mean())
    return RobustMoments(mean=m, var=float(np.mean((mid - m) ** 2)), kept=part.middle)


def trimmed_second_moment(values, alpha: float, tail_fraction: float = TWO_SIDED_TAIL) -> float:
    """Mean of squares over the two-sided middle block (zero-mean convention).

    Regression trims the raw projections by value but measures spread about 0,
    matching inputs that are zero mean by assumption.
    """
    v = np.asarray(values, dtype=float)
    part = partition_two_sided(v, alpha, tail_fraction)
    return float(np.mean(v[part.middle] ** 2))


def partition_one_sided_sq(sq_values, alpha: float, tail_fraction: float = ONE_SIDED_TAIL) -> np.ndarray:
    """Kept (smallest) indices after removing the top tail of squared values."""
    w = np.asarray(sq_values, dtype=float)
    if w.size and w.min() < 0:
        raise InvalidParameterError("squared values must be non-negative")
    n = w.shape[0]
    drop = int(math.floor(tail_fraction * alpha * n))
    keep = n - drop
    if keep < 1:
        raise InsufficientDataError(f"one-sided trim keeps {keep} of {n} points")
    order = np.argsort(w, kind="stable")
    return np.sort(order[:keep])


@dataclass
class NoiseScaleResult:
    gamma_hat: float
    beta_bar: np.ndarray
    kept: np.ndarray
    mode: str
    degenerate: bool = False


def _lstsq(X, y):
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    return beta, rank < X.shape[1]


def _kept_value(X, y, beta, keep_count):
    sq = (y - X @ beta) ** 2
    kept = np.sort(np.argsort(sq, kind="stable")[:keep_count])
    return float(sq[kept].mean()), kept


def robust_noise_scale(
    X,
    y,
    alpha: float,
    mode: str = "heuristic",
    rng: np.random.Generator | None = None,
    starts: int = 8,
    max_iter: int = 60,
) -> NoiseScaleResult:
    """Trimmed-min residual scale: minimize the mean of the kept squared
    residuals over the fit, where the kept set drops the largest
    floor((2/5.5)*alpha*n) squared residuals.

    ``heuristic`` alternates between refitting on the kept rows and re-picking
    the kept set from >= ``starts`` seeded starting fits; it upper-bounds the
    true minimum.  ``bruteforce`` (n <= 12) enumerates every kept set, solves
    least squares on each, and returns the global minimum: min over fits of the
    trimmed objective equals min over kept sets of the per-set least squares,
    because for a fixed fit the kept set is exactly the best subset of its size.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    drop = two_sided_tail_count(n, alpha)
    keep_count = n - drop
    if n < d + drop + 1:
        raise InsufficientDataError(f"n={n} too small for d={d} with drop={drop}")

    if mode == "bruteforce":
        if n > 12:
            raise InvalidParameterError("bruteforce mode is limited to n <= 12")
        best = None
        degenerate = False
        for kept in itertools.combinations(range(n), keep_count):
            kept = np.array(kept)
            beta, bad = _lstsq(X[kept], y[kept])
            degenerate = degenerate or bad
            val = float(np.mean((y[kept] - X[kept] @ beta) ** 2))
            if best is None or val < best[0]:
                best = (val, beta, kept)
        val, beta, kept = best
        return NoiseScaleResult(math.sqrt(max(val, 0.0)), beta, kept, mode, degenerate)

    if mode != "heuristic":
        raise InvalidParameterError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(0) if rng is None else rng
    degenerate = False
    best = None
    for s in range(max(starts, 1)):
        if s == 0:
            beta, bad = _lstsq(X, y)
        else:
            rows = rng.choice(n, size=max(d + 1, n // 2), replace=False)
            beta, bad = _lstsq(X[rows], y[rows])
        degenerate = degenerate or bad
        prev_kept = None
        for _ in range(max_iter):
            val, kept = _kept_value(X, y, beta, keep_count)
            if prev_kept is not None and np.array_equal(kept, prev_kept):
                break
            prev_kept = kept
            beta, bad = _lstsq(X[kept], y[kept])
            degenerate = degenerate or bad
        val, kept = _kept_value(X, y, beta, keep_count)
        if best is None or val < best[0]:
            best = (val, beta, kept)
    val, beta, kept = best
    return NoiseScaleResult(math.sqrt(max(val, 0.0)), beta, kept, "heuristic", degenerate)
