"""Task scores built from one-dimensional trimmed statistics.

Each score approximates a sup over unit directions (or unit-Frobenius
symmetric matrices) by a finite deterministic net.  Nets always contain the
signed canonical basis, so d=1 scores are exact, and per-direction sensitivity
arguments hold for any net.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    DegenerateDataError,
    DegenerateDirectionError,
    DegenerateNoiseError,
    DomainError,
    InvalidParameterError,
    SchemaError,
    ShapeError,
)
from .robust1d import (
    ONE_SIDED_TAIL,
    TWO_SIDED_TAIL,
    partition_one_sided_sq,
    partition_two_sided,
    trimmed_mean_var,
    trimmed_second_moment,
)

_UNIT_TOL = 1e-10

# Default sphere-point counts per dimension; part of the serialized identity.
_DEFAULT_SPHERE = {2: 24, 3: 48}


def _golden_circle(count: int) -> np.ndarray:
    # golden-angle spacing on the circle; low-discrepancy analog of the
    # d=3 Fibonacci sphere
    golden = math.pi * (3.0 - math.sqrt(5.0))
    angles = golden * np.arange(count)
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _fibonacci_sphere(count: int) -> np.ndarray:
    i = np.arange(count) + 0.5
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    z = 1.0 - 2.0 * i / count
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


@dataclass(frozen=True)
class DirectionNet:
    """Finite set of unit directions standing in for a sup over directions.

    ``kind`` is "vector" or "symmetric".  ``elements`` has shape (m, d) for
    vectors and (m, d, d) for symmetric matrices (unit Frobenius norm).
    Regeneration from (kind, dim, seed, n_random, n_sphere) is byte-identical.
    """

    kind: str
    dim: int
    elements: np.ndarray
    seed: int
    n_random: int
    n_sphere: int

    def __post_init__(self):
        e = self.elements
        if self.kind == "vector":
            norms = np.linalg.norm(e, axis=1)
        elif self.kind == "symmetric":
            if not np.array_equal(e, np.swapaxes(e, 1, 2)):
                raise InvalidParameterError("symmetric net elements must satisfy V == V.T")
            norms = np.linalg.norm(e.reshape(e.shape[0], -1), axis=1)
        else:
            raise InvalidParameterError(f"unknown net kind {self.kind!r}")
        if norms.size == 0 or np.abs(norms - 1.0).max() > _UNIT_TOL:
            raise InvalidParameterError("net elements must have unit norm within 1e-10")

    def __len__(self):
        return self.elements.shape[0]

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind,
                "dim": self.dim,
                "seed": self.seed,
                "size": len(self),
                "n_random": self.n_random,
                "n_sphere": self.n_sphere,
            }
        )

    @classmethod
    def from_json(cls, s: str) -> "DirectionNet":
        try:
            obj = json.loads(s)
            kind, dim = obj["kind"], int(obj["dim"])
            seed = int(obj["seed"])
            n_random, n_sphere = int(obj["n_random"]), int(obj["n_sphere"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed net json: {exc}") from exc
        if kind == "vector":
            net = vector_net(dim, seed, n_random=n_random, n_sphere=n_sphere)
        else:
            net = symmetric_net(dim, seed, n_random=n_random)
        if len(net) != int(obj["size"]):
            raise SchemaError("net size mismatch on regeneration")
        return net


def vector_net(dim: int, seed: int, n_random: int = 16, n_sphere: int | None = None) -> DirectionNet:
    """Signed canonical basis, plus +-pairs of seeded Gaussian directions,
    plus low-discrepancy sphere points for d <= 3."""
    if dim < 1:
        raise InvalidParameterError("dim must be >= 1")
    if n_sphere is None:
        n_sphere = _DEFAULT_SPHERE.get(dim, 0)
    parts = [np.eye(dim), -np.eye(dim)]
    if n_random > 0 and dim > 1:
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((n_random, dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        parts += [g, -g]
    if n_sphere > 0 and dim == 2:
        parts.append(_golden_circle(n_sphere))
    elif n_sphere > 0 and dim == 3:
        parts.append(_fibonacci_sphere(n_sphere))
    elements = np.concatenate(parts, axis=0)
    elements /= np.linalg.norm(elements, axis=1, keepdims=True)
    return DirectionNet("vector", dim, elements, seed, n_random if dim > 1 else 0, n_sphere if dim in (2, 3) else 0)


def symmetric_net(dim: int, seed: int, n_random: int = 16) -> DirectionNet:
    """Signed canonical symmetric basis plus symmetrized Gaussian matrices."""
    if dim < 1:
        raise InvalidParameterError("dim must be >= 1")
    basis = []
    for i in range(dim):
        e = np.zeros((dim, dim))
        e[i, i] = 1.0
        basis.append(e)
    for i in range(dim):
        for j in range(i + 1, dim):
            e = np.zeros((dim, dim))
            e[i, j] = e[j, i] = 1.0 / math.sqrt(2.0)
            basis.append(e)
    basis = np.array(basis)
    parts = [basis, -basis]
    if n_random > 0 and dim > 1:
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((n_random, dim, dim))
        g = (g + np.swapaxes(g, 1, 2)) / 2.0
        g /= np.linalg.norm(g.reshape(n_random, -1), axis=1)[:, None, None]
        parts += [g, -g]
    elements = np.concatenate(parts, axis=0)
    elements /= np.linalg.norm(elements.reshape(elements.shape[0], -1), axis=1)[:, None, None]
    return DirectionNet("symmetric", dim, elements, seed, n_random if dim > 1 else 0, 0)


# ---------------------------------------------------------------------------
# Task parameters

@dataclass(frozen=True)
class Mean:
    mu: np.ndarray


@dataclass(frozen=True)
class EuclideanMean:
    mu: np.ndarray


@dataclass(frozen=True)
class Regression:
    beta: np.ndarray


@dataclass(frozen=True)
class Covariance:
    sigma: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigma)
        if s.ndim != 2 or s.shape[0] != s.shape[1] or not np.allclose(s, s.T):
            raise DomainError("covariance candidate must be square symmetric")
        if np.linalg.eigvalsh(s).min() <= 0:
            raise DomainError("covariance candidate must be positive definite")


@dataclass(frozen=True)
class PCADirection:
    u: np.ndarray

    def __post_init__(self):
        if abs(np.linalg.norm(self.u) - 1.0) > _UNIT_TOL:
            raise InvalidParameterError("PCA direction must have unit norm within 1e-10")


# ---------------------------------------------------------------------------
# Per-direction profiles (cached trimmed statistics, independent of the
# candidate parameter)

def mean_profile(X, net: DirectionNet, alpha: float, tail_fraction: float = TWO_SIDED_TAIL):
    """Trimmed mean and std of each net projection; raises on zero spread."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    proj = X @ net.elements.T
    mus = np.empty(len(net))
    sds = np.empty(len(net))
    for k in range(len(net)):
        mom = trimmed_mean_var(proj[:, k], alpha, tail_fraction)
        mus[k] = mom.mean
        sds[k] = math.sqrt(mom.var)
        if sds[k] <= 0.0:
            raise DegenerateDirectionError(
                f"zero robust variance along net direction {k}", direction=net.elements[k]
            )
    return mus, sds


def second_moment_profile(X, net: DirectionNet, alpha: float, tail_fraction: float = TWO_SIDED_TAIL):
    """sqrt of the trimmed second moment about 0 per direction (x-trim)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    proj = X @ net.elements.T
    out = np.empty(len(net))
    for k in range(len(net)):
        out[k] = math.sqrt(trimmed_second_moment(proj[:, k], alpha, tail_fraction))
        if out[k] <= 0.0:
            raise DegenerateDirectionError(
                f"zero robust second moment along net direction {k}", direction=net.elements[k]
            )
    return out


def cov_profile(X, symnet: DirectionNet, alpha: float, tail_fraction: float = TWO_SIDED_TAIL):
    """Trimmed mean and trimmed std of <V, x x^T> per symmetric net element."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w = np.einsum("ni,kij,nj->nk", X, symnet.elements, X)
    mus = np.empty(len(symnet))
    psis = np.empty(len(symnet))
    for k in range(len(symnet)):
        mom = trimmed_mean_var(w[:, k], alpha, tail_fraction)
        mus[k] = mom.mean
        psis[k] = math.sqrt(mom.var)
        if psis[k] <= 0.0:
            raise DegenerateDirectionError(
                f"zero robust spread along symmetric net element {k}", direction=symnet.elements[k]
            )
    return mus, psis


def pca_profile(X, net: DirectionNet, alpha: float, tail_fraction: float = ONE_SIDED_TAIL):
    """One-sided trimmed quadratic form per direction (cacheable denominator)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    sq = (X @ net.elements.T) ** 2
    out = np.empty(len(net))
    for k in range(len(net)):
        kept = partition_one_sided_sq(sq[:, k], alpha, tail_fraction)
        out[k] = float(sq[kept, k].mean())
    return out


# ---------------------------------------------------------------------------
# Scores

def mean_score_components(X, mu_hat, alpha: float, net: DirectionNet, profile=None,
                          tail_fraction: float = TWO_SIDED_TAIL) -> np.ndarray:
    mus, sds = mean_profile(X, net, alpha, tail_fraction) if profile is None else profile
    return (net.elements @ np.asarray(mu_hat, dtype=float) - mus) / sds


def mean_score(X, mu_hat, alpha: float, net: DirectionNet, profile=None,
               tail_fraction: float = TWO_SIDED_TAIL) -> float:
    """max over the net of (<v, mu_hat> - trimmed mean) / trimmed std."""
    return float(mean_score_components(X, mu_hat, alpha, net, profile, tail_fraction).max())


def mean_score_euclidean(X, mu_hat, alpha: float, net: DirectionNet, profile=None,
                         tail_fraction: float = TWO_SIDED_TAIL) -> float:
    """Un-normalized variant; 1-Lipschitz in mu_hat."""
    if profile is None:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        proj = X @ net.elements.T
        mus = np.array([trimmed_mean_var(proj[:, k], alpha, tail_fraction).mean for k in range(len(net))])
    else:
        mus = profile
    return float((net.elements @ np.asarray(mu_hat, dtype=float) - mus).max())


def lr_score(X, y, beta_hat, alpha: float, gamma_hat: float, net: DirectionNet, x_profile=None,
             tail_fraction: float = TWO_SIDED_TAIL) -> float:
    """Regression surrogate: per direction, the two-sided trimmed mean of the
    projected gradient values <v, x_i (y_i - x_i' beta)>, normalized by the
    trimmed second moment of <v, x_i> and by gamma_hat.

    The gradient trim is recomputed per (direction, beta_hat); the x-trim
    depends on the direction only.  Callers must floor gamma_hat themselves;
    zero is rejected here.
    """
    if gamma_hat == 0:
        raise DegenerateNoiseError("gamma_hat is zero; caller must supply a floor")
    if gamma_hat < 0:
        raise InvalidParameterError("gamma_hat must be positive")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    sig0 = second_moment_profile(X, net, alpha, tail_fraction) if x_profile is None else x_profile
    resid = y - X @ np.asarray(beta_hat, dtype=float)
    grad = (X @ net.elements.T) * resid[:, None]
    best = -math.inf
    for k in range(len(net)):
        part = partition_two_sided(grad[:, k], alpha, tail_fraction)
        num = float(grad[part.middle, k].mean())
        best = max(best, num / (sig0[k] * gamma_hat))
    return best


def cov_score(X, sigma_hat, alpha: float, symnet: DirectionNet, profile=None,
              tail_fraction: float = TWO_SIDED_TAIL) -> float:
    """Covariance surrogate over unit-Frobenius symmetric directions.

    Rejects non-PD candidates before scoring, matching the domain restriction
    of the release support.
    """
    Covariance(np.asarray(sigma_hat, dtype=float))  # domain check
    mus, psis = cov_profile(X, symnet, alpha, tail_fraction) if profile is None else profile
    proj = np.einsum("kij,ij->k", symnet.elements, np.asarray(sigma_hat, dtype=float))
    return float(((proj - mus) / psis).max())


def pca_score(X, u_hat, alpha: float, net: DirectionNet, profile=None,
              tail_fraction: float = ONE_SIDED_TAIL) -> float:
    """1 - (trimmed quadratic form at u_hat) / (max over the net).

    The net should include u_hat (release candidates are net elements), which
    keeps the score in [0, 1]; for off-net directions the value may dip
    slightly below 0 by the net approximation error.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    denom_all = pca_profile(X, net, alpha, tail_fraction) if profile is None else profile
    denom = float(denom_all.max())
    if denom <= 0.0:
        raise DegenerateDataError("all one-sided trimmed quadratic forms are zero")
    sq = (X @ np.asarray(u_hat, dtype=float)) ** 2
    kept = partition_one_sided_sq(sq, alpha, tail_fraction)
    return 1.0 - float(sq[kept].mean()) / denom


# ---------------------------------------------------------------------------
# Matrix flattening and true error metrics

def flatten(M) -> np.ndarray:
    """Row-major flattening; matches the Kronecker convention
    (x (x) y)[(i-1)d + j] = x_i y_j."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError("flatten expects a square matrix")
    return M.reshape(-1).copy()


def sharpen(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ShapeError("sharpen expects a vector")
    d = math.isqrt(v.shape[0])
    if d * d != v.shape[0]:
        raise ShapeError(f"vector length {v.shape[0]} is not a perfect square")
    return v.reshape(d, d).copy()


def gaussian_fourth_moment_operator(sigma) -> np.ndarray:
    """E[(x (x) x - Sigma_flat)(x (x) x - Sigma_flat)^T] for N(0, Sigma):
    entrywise Sigma_ik Sigma_jl + Sigma_il Sigma_jk, which acts on flattened
    symmetric matrices exactly like 2 (Sigma (x) Sigma)."""
    s = np.asarray(sigma, dtype=float)
    d = s.shape[0]
    first = np.kron(s, s)
    # commutation: (i,j),(k,l) -> Sigma_il Sigma_jk
    second = first.reshape(d, d, d, d).transpose(0, 1, 3, 2).reshape(d * d, d * d)
    return first + second


def _check_pd(sigma):
    s = np.asarray(sigma, dtype=float)
    if np.linalg.eigvalsh(s).min() <= 0:
        raise DomainError("reference covariance must be positive definite")
    return s


def mahalanobis_witness(mu_hat, mu, sigma) -> np.ndarray:
    """Unit direction achieving max_v <v, mu_hat - mu> / sqrt(v' Sigma v)."""
    s = _check_pd(sigma)
    a = np.asarray(mu_hat, dtype=float) - np.asarray(mu, dtype=float)
    if np.allclose(a, 0):
        w = np.zeros_like(a)
        w[0] = 1.0
        return w
    v = np.linalg.solve(s, a)
    return v / np.linalg.norm(v)


def true_distance(task: str, theta_hat, reference) -> float:
    """Closed-form target error metric per task.

    mean: ||Sigma^{-1/2}(mu_hat - mu)|| against reference (mu, Sigma).
    euclidean-mean: ||mu_hat - mu|| against reference (mu,).
    lr: (1/gamma) ||Sigma^{1/2}(beta_hat - beta)|| against (beta, Sigma, gamma).
    cov: ||Psi^{-1/2}(flat difference)|| with the Gaussian Psi = 2 Sigma (x) Sigma,
         which reduces to (1/sqrt 2)||Sigma^{-1/2} Sigma_hat Sigma^{-1/2} - I||_F,
         against reference (Sigma,).
    pca: 1 - u_hat' Sigma u_hat / lambda_max(Sigma) against (Sigma,).
    """
    if task == "mean":
        mu, sigma = reference
        s = _check_pd(sigma)
        a = np.asarray(theta_hat, dtype=float) - np.asarray(mu, dtype=float)
        w = np.linalg.solve(s, a)
        return float(math.sqrt(max(a @ w, 0.0)))
    if task == "euclidean-mean":
        (mu,) = reference if isinstance(reference, tuple) else (reference,)
        return float(np.linalg.norm(np.asarray(theta_hat, dtype=float) - np.asarray(mu, dtype=float)))
    if task == "lr":
        beta, sigma, gamma = reference
        if gamma <= 0:
            raise DomainError("gamma must be positive")
        s = _check_pd(sigma)
        a = np.asarray(theta_hat, dtype=float) - np.asarray(beta, dtype=float)
        return float(math.sqrt(max(a @ s @ a, 0.0)) / gamma)
    if task == "cov":
        (sigma,) = reference if isinstance(reference, tuple) else (reference,)
        s = _check_pd(sigma)
        vals, vecs = np.linalg.eigh(s)
        inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.T
        m = inv_sqrt @ np.asarray(theta_hat, dtype=float) @ inv_sqrt
        return float(np.linalg.norm(m - np.eye(s.shape[0]), ord="fro") / math.sqrt(2.0))
    if task == "pca":
        (sigma,) = reference if isinstance(reference, tuple) else (reference,)
        s = np.asarray(sigma, dtype=float)
        lam = float(np.linalg.eigvalsh(s).max())
        if lam <= 0:
            raise DomainError("reference covariance must have a positive top eigenvalue")
        u = np.asarray(theta_hat, dtype=float)
        return float(1.0 - (u @ s @ u) / lam)
    raise InvalidParameterError(f"unknown task {task!r}")
