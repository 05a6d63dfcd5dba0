"""Core DP primitives.

Laplace sampling, the finite-candidate exponential mechanism, the classic
propose-test-release wrapper for scalar queries, and an exact finite-domain
(eps, delta) verifier based on the hockey-stick divergence.

Everything here is pure given an explicit ``numpy.random.Generator``; callers
that want replay pass seeded generators.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np

from .exceptions import InvalidParameterError, SchemaError

#: Reserved outcome id for the abort symbol of the Test step.
BOTTOM = "bot"

_PROB_TOL = 1e-12


@dataclass(frozen=True)
class DiscretePMF:
    """Finite outcome distribution: ``atoms`` is a tuple of (outcome-id, prob).

    Probabilities must be non-negative, sum to 1 within 1e-12, and outcome ids
    must be unique.  ``BOTTOM`` is an ordinary atom, so the Test step's abort
    participates in DP verification like any other outcome.
    """

    atoms: tuple

    def __post_init__(self):
        ids = [a for a, _ in self.atoms]
        if len(set(ids)) != len(ids):
            raise SchemaError("duplicate outcome ids in pmf")
        probs = np.array([p for _, p in self.atoms], dtype=float)
        if probs.size and probs.min() < -_PROB_TOL:
            raise SchemaError(f"negative probability {probs.min()}")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise SchemaError(f"probabilities sum to {probs.sum()!r}, not 1")

    @classmethod
    def from_dict(cls, d: dict) -> "DiscretePMF":
        return cls(tuple(sorted(d.items(), key=lambda kv: str(kv[0]))))

    @property
    def support(self) -> frozenset:
        return frozenset(a for a, _ in self.atoms)

    def prob(self, outcome: Hashable) -> float:
        for a, p in self.atoms:
            if a == outcome:
                return p
        return 0.0

    def as_dict(self) -> dict:
        return {a: p for a, p in self.atoms}

    def to_json(self) -> str:
        return json.dumps({"atoms": [[a, p] for a, p in self.atoms]})

    @classmethod
    def from_json(cls, s: str) -> "DiscretePMF":
        try:
            obj = json.loads(s)
            return cls(tuple((a, float(p)) for a, p in obj["atoms"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed pmf json: {exc}") from exc


@dataclass(frozen=True)
class NeighborPair:
    """Two dataset ids at Hamming distance exactly one."""

    left: int
    right: int
    hamming: int = 1

    def __post_init__(self):
        if self.hamming != 1:
            raise InvalidParameterError("neighbor pairs must have hamming == 1")


def hamming_distance(a: Sequence, b: Sequence) -> int:
    if len(a) != len(b):
        raise SchemaError("datasets of different sizes are not comparable")
    return sum(1 for x, y in zip(a, b) if not np.array_equal(x, y))


def sample_laplace(scale: float, rng: np.random.Generator, size=None):
    """Draw from Lap(scale) by inverse CDF on a 64-bit uniform.

    Deterministic given the generator state, which is what makes transcripts
    replayable from seeds.
    """
    if not scale > 0:
        raise InvalidParameterError(f"laplace scale must be positive, got {scale}")
    u = rng.random(size) - 0.5
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def laplace_cdf(x: float, scale: float) -> float:
    """P(Lap(scale) <= x), used for exact bottom-probabilities."""
    if not scale > 0:
        raise InvalidParameterError(f"laplace scale must be positive, got {scale}")
    if x < 0:
        return 0.5 * math.exp(x / scale)
    return 1.0 - 0.5 * math.exp(-x / scale)


def hockey_stick_delta(p: DiscretePMF, q: DiscretePMF, eps: float) -> float:
    """Smallest delta with P(E) <= e^eps Q(E) + delta for every event E.

    The worst event is {o : p(o) > e^eps q(o)}, so the 2^|O| events collapse
    to a single sum.
    """
    if eps < 0:
        raise InvalidParameterError("eps must be >= 0")
    if p.support != q.support:
        raise SchemaError("pmfs must share an outcome universe")
    qd = q.as_dict()
    e = math.exp(eps)
    return float(sum(max(pp - e * qd[a], 0.0) for a, pp in p.atoms))


@dataclass
class VerifyReport:
    passed: bool
    eps: float
    delta: float
    worst_delta: float
    worst_pair: NeighborPair | None

    def to_json(self) -> str:
        pair = None
        if self.worst_pair is not None:
            pair = [self.worst_pair.left, self.worst_pair.right]
        return json.dumps(
            {
                "pass": self.passed,
                "eps": self.eps,
                "delta": self.delta,
                "worst_delta": self.worst_delta,
                "worst_pair": pair,
            }
        )


def neighbor_pairs(universe: Sequence) -> list[NeighborPair]:
    """All ordered index pairs of datasets at Hamming distance one."""
    pairs = []
    for i in range(len(universe)):
        for j in range(len(universe)):
            if i != j and hamming_distance(universe[i], universe[j]) == 1:
                pairs.append(NeighborPair(i, j))
    return pairs


def verify_dp(
    mechanism: Callable[[Sequence], DiscretePMF],
    universe: Sequence,
    eps: float,
    delta: float,
    pairs: Iterable[NeighborPair] | None = None,
) -> VerifyReport:
    """Decide (eps, delta)-DP exactly on a finite universe of datasets.

    Maximizes the hockey-stick divergence over all neighbor pairs in both
    orders (``pairs`` is ordered already).  Reduction order is the pair list
    order, so reports are deterministic.
    """
    if len(universe) == 0:
        raise InvalidParameterError("empty universe")
    if pairs is None:
        pairs = neighbor_pairs(universe)
    laws = [mechanism(s) for s in universe]
    worst = 0.0
    worst_pair = None
    for pair in pairs:
        d = hockey_stick_delta(laws[pair.left], laws[pair.right], eps)
        if d > worst:
            worst, worst_pair = d, pair
    return VerifyReport(worst <= delta, eps, delta, worst, worst_pair)


def exp_mech_pmf(scores: Sequence[float], coefficient: float) -> np.ndarray:
    """Softmin law: probabilities proportional to exp(-coefficient * score).

    Normalized by log-sum-exp with the minimum score subtracted, so large
    coefficients do not underflow.
    """
    if coefficient < 0:
        raise InvalidParameterError("coefficient must be >= 0")
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise InvalidParameterError("empty candidate set")
    if np.isnan(s).any():
        raise InvalidParameterError("NaN score")
    w = np.exp(-coefficient * (s - s.min()))
    return w / w.sum()


def exp_mech_finite(
    candidates: Sequence,
    scores: Sequence[float],
    coefficient: float,
    rng: np.random.Generator,
):
    """Sample one candidate from the softmin law over finite candidates."""
    if len(candidates) != len(scores):
        raise InvalidParameterError("candidates and scores differ in length")
    pmf = exp_mech_pmf(scores, coefficient)
    idx = int(np.searchsorted(np.cumsum(pmf), rng.random(), side="right"))
    return candidates[min(idx, len(candidates) - 1)]


def classic_ptr(
    f: Callable[[Sequence], float],
    dataset: Sequence,
    sensitivity_bound: float,
    margin_oracle: Callable[[Sequence], int],
    eps: float,
    delta: float,
    rng: np.random.Generator,
):
    """Classic scalar propose-test-release.

    The margin oracle must return a non-negative integer with Hamming-Lipschitz
    constant one.  Aborts (returns ``BOTTOM``) when the noisy margin falls
    below (2/eps) * log(1/delta); otherwise releases f(S) + Lap(2*Delta/eps).
    """
    if not sensitivity_bound > 0:
        raise InvalidParameterError("sensitivity bound must be positive")
    if not (eps > 0 and 0 < delta < 1):
        raise InvalidParameterError("need eps > 0 and delta in (0, 1)")
    m = margin_oracle(dataset)
    if m < 0:
        raise InvalidParameterError("margin oracle returned a negative margin")
    noisy = m + float(sample_laplace(2.0 / eps, rng))
    if noisy < (2.0 / eps) * math.log(1.0 / delta):
        return BOTTOM
    return f(dataset) + float(sample_laplace(2.0 * sensitivity_bound / eps, rng))
