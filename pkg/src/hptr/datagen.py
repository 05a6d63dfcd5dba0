"""Synthetic data generators for the distribution families under test.

All generators are deterministic given the seed.  The two-point hard pair is
the one lower-bound construction promoted to a reusable fixture: two
distributions at total variation alpha whose means differ by 2 alpha^(1-1/k).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DomainError, InvalidParameterError, ParseError
from .mechanisms import DiscretePMF


def _check_cov(sigma) -> np.ndarray:
    s = np.atleast_2d(np.asarray(sigma, dtype=float))
    if not np.allclose(s, s.T):
        raise DomainError("covariance must be symmetric")
    if np.linalg.eigvalsh(s).min() <= 0:
        raise DomainError("covariance must be positive definite")
    return s


def _sqrtm(s: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(s)
    return (vecs * np.sqrt(vals)) @ vecs.T


@dataclass(frozen=True)
class Gaussian:
    mu: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class SubGaussianBounded:
    """Truncated Gaussian rescaled back to covariance sigma.

    ``proxy_factor`` is the truncation level in std units; smaller values give
    a heavier rescaling and a larger proxy-to-covariance ratio.
    """

    mu: np.ndarray
    sigma: np.ndarray
    proxy_factor: float = 2.5


@dataclass(frozen=True)
class StudentT:
    """Zero-mean multivariate t rescaled to covariance sigma; nu > 4 makes it
    (kappa, 4)-hypercontractive with kappa^4 = 3(nu-2)/(nu-4)."""

    nu: float
    sigma: np.ndarray


@dataclass(frozen=True)
class NoiseSpec:
    """independent: eta ~ family(scale gamma); dependent: eta = gamma * s *
    sqrt((1-coupling) + coupling * q) with s an independent Rademacher sign and
    q = x' Sigma_x^{-1} x / d, so E[x eta] = 0 by the sign and E[eta^2] = gamma^2
    by construction."""

    kind: str  # "independent" | "dependent"
    gamma: float
    family: str = "gaussian"  # for independent noise: "gaussian" | "student-t"
    nu: float = 8.0
    coupling: float = 1.0


@dataclass(frozen=True)
class LinearModel:
    beta: np.ndarray
    sigma_x: np.ndarray
    noise: NoiseSpec


@dataclass(frozen=True)
class CovBounded:
    """Gaussian instance of the covariance-bounded family (||sigma|| <= 1)."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if np.linalg.norm(np.atleast_2d(self.sigma), 2) > 1 + 1e-12:
            raise DomainError("covariance-bounded family requires spectral norm <= 1")


@dataclass(frozen=True)
class HardPair:
    alpha: float
    k: int
    side: int


FamilySpec = Gaussian | SubGaussianBounded | StudentT | LinearModel | CovBounded | HardPair


@dataclass
class Dataset:
    rows: np.ndarray
    labels: np.ndarray | None
    provenance: str
    seed: int
    spec: str = ""

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        for i in range(self.n):
            row = [repr(float(v)) for v in self.rows[i]]
            if self.labels is not None:
                row.append(repr(float(self.labels[i])))
            w.writerow(row)
        return buf.getvalue()

    def sidecar_json(self) -> str:
        return json.dumps(
            {"spec": self.spec, "seed": self.seed, "n": self.n, "d": self.dim,
             "labeled": self.labels is not None, "provenance": self.provenance}
        )

    @classmethod
    def from_csv(cls, text: str, labeled: bool, seed: int = -1, spec: str = "") -> "Dataset":
        rows, labels = [], []
        for lineno, line in enumerate(csv.reader(io.StringIO(text)), start=1):
            if not line:
                continue
            try:
                vals = [float(v) for v in line]
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from exc
            if labeled:
                rows.append(vals[:-1])
                labels.append(vals[-1])
            else:
                rows.append(vals)
        return cls(
            rows=np.array(rows, dtype=float),
            labels=np.array(labels, dtype=float) if labeled else None,
            provenance="loaded",
            seed=seed,
            spec=spec,
        )


def spec_string(spec: FamilySpec) -> str:
    name = type(spec).__name__
    if isinstance(spec, Gaussian):
        return f"{name}(d={np.atleast_1d(spec.mu).shape[0]})"
    if isinstance(spec, SubGaussianBounded):
        return f"{name}(d={np.atleast_1d(spec.mu).shape[0]},T={spec.proxy_factor})"
    if isinstance(spec, StudentT):
        return f"{name}(nu={spec.nu})"
    if isinstance(spec, LinearModel):
        return f"{name}(d={np.atleast_1d(spec.beta).shape[0]},noise={spec.noise.kind})"
    if isinstance(spec, CovBounded):
        return f"{name}(d={np.atleast_1d(spec.mu).shape[0]})"
    if isinstance(spec, HardPair):
        return f"{name}(alpha={spec.alpha},k={spec.k},side={spec.side})"
    return name


def _truncated_normal(rng, shape, level):
    out = rng.standard_normal(shape)
    while True:
        bad = np.abs(out) > level
        if not bad.any():
            break
        out[bad] = rng.standard_normal(int(bad.sum()))
    # rescale to unit variance: Var of a +-T truncated standard normal
    t = level
    phi = math.exp(-t * t / 2.0) / math.sqrt(2.0 * math.pi)
    mass = math.erf(t / math.sqrt(2.0))
    var = 1.0 - 2.0 * t * phi / mass
    return out / math.sqrt(var)


def hard_pair(alpha: float, k: int, side: int) -> DiscretePMF:
    """Three-atom pmf at {-1, +1, -+ alpha^(-1/k)}.

    The spike location alpha^(-1/k) is what makes the advertised moments come
    out: mean gap 2 alpha^(1-1/k) between sides, total variation alpha, and
    k-th absolute moment 2 - alpha.
    """
    if not 0 < alpha < 0.5:
        raise InvalidParameterError("alpha must be in (0, 1/2)")
    if k < 3:
        raise InvalidParameterError("k must be >= 3")
    if side not in (1, 2):
        raise InvalidParameterError("side must be 1 or 2")
    spike = alpha ** (-1.0 / k)
    if side == 1:
        spike = -spike
    return DiscretePMF(((-1.0, (1 - alpha) / 2.0), (1.0, (1 - alpha) / 2.0), (spike, alpha)))


def _sample_pmf(pmf: DiscretePMF, n: int, rng) -> np.ndarray:
    outcomes = np.array([a for a, _ in pmf.atoms], dtype=float)
    probs = np.array([p for _, p in pmf.atoms], dtype=float)
    idx = rng.choice(len(outcomes), size=n, p=probs / probs.sum())
    return outcomes[idx]


def generate(spec: FamilySpec, n: int, seed: int) -> Dataset:
    """Draw n records; bit-identical for identical (spec, n, seed)."""
    if n < 1:
        raise InvalidParameterError("n must be >= 1")
    rng = np.random.default_rng(seed)
    labels = None
    if isinstance(spec, (Gaussian, CovBounded)):
        s = _check_cov(spec.sigma)
        mu = np.atleast_1d(np.asarray(spec.mu, dtype=float))
        rows = mu + rng.standard_normal((n, s.shape[0])) @ _sqrtm(s).T
    elif isinstance(spec, SubGaussianBounded):
        s = _check_cov(spec.sigma)
        mu = np.atleast_1d(np.asarray(spec.mu, dtype=float))
        z = _truncated_normal(rng, (n, s.shape[0]), spec.proxy_factor)
        rows = mu + z @ _sqrtm(s).T
    elif isinstance(spec, StudentT):
        if spec.nu <= 4:
            raise DomainError("StudentT requires nu > 4")
        s = _check_cov(spec.sigma)
        t = rng.standard_t(spec.nu, size=(n, s.shape[0]))
        z = t * math.sqrt((spec.nu - 2.0) / spec.nu)
        rows = z @ _sqrtm(s).T
    elif isinstance(spec, LinearModel):
        sx = _check_cov(spec.sigma_x)
        beta = np.atleast_1d(np.asarray(spec.beta, dtype=float))
        rows = rng.standard_normal((n, sx.shape[0])) @ _sqrtm(sx).T
        ns = spec.noise
        if ns.gamma < 0:
            raise DomainError("noise scale must be >= 0")
        if ns.kind == "independent":
            if ns.family == "gaussian":
                eta = ns.gamma * rng.standard_normal(n)
            elif ns.family == "student-t":
                if ns.nu <= 4:
                    raise DomainError("student-t noise requires nu > 4")
                eta = ns.gamma * rng.standard_t(ns.nu, size=n) * math.sqrt((ns.nu - 2.0) / ns.nu)
            else:
                raise DomainError(f"unknown noise family {ns.family!r}")
        elif ns.kind == "dependent":
            if not 0.0 <= ns.coupling <= 1.0:
                raise DomainError("coupling must be in [0, 1]")
            q = np.einsum("ni,ij,nj->n", rows, np.linalg.inv(sx), rows) / sx.shape[0]
            signs = rng.choice((-1.0, 1.0), size=n)
            eta = ns.gamma * signs * np.sqrt((1.0 - ns.coupling) + ns.coupling * q)
        else:
            raise DomainError(f"unknown noise kind {ns.kind!r}")
        labels = rows @ beta + eta
    elif isinstance(spec, HardPair):
        rows = _sample_pmf(hard_pair(spec.alpha, spec.k, spec.side), n, rng)[:, None]
    else:
        raise DomainError(f"unknown family spec {spec!r}")
    return Dataset(rows=np.atleast_2d(rows), labels=labels, provenance="clean",
                   seed=seed, spec=spec_string(spec))
