"""Resilience certification, adversarial corruption, and the runtime checker
for the four assumptions of the universal utility analysis.

Certificates are empirical: suprema over an enumerated family of subsets and a
finite direction net.  Exhaustive mode (n <= 14) enumerates every admissible
subset; sampled mode combines seeded random subsets with deterministic
directional-tail subsets, because random deficits alone grossly under-estimate
the adversarial supremum.  Sampled certificates are lower bounds and are
labeled as such.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .datagen import Dataset
from .exceptions import DomainError, InvalidParameterError
from .scores import DirectionNet, gaussian_fourth_moment_operator, true_distance

_STAT_NAMES = {
    "mean": ("rho1", "rho2"),
    "euclidean-mean": ("rho1",),
    "lr": ("rho1", "rho2", "rho3", "rho4"),
    "cov": ("rho1", "rho2"),
    "pca": ("rho1", "rho2"),
}


@dataclass
class ResilienceCertificate:
    task: str
    alpha: float
    rho: dict
    reference: dict
    net_seed: int
    subset_mode: str
    count: int
    n: int
    witnesses: dict = field(default_factory=dict)

    @property
    def rho1(self):
        return self.rho.get("rho1")

    @property
    def rho2(self):
        return self.rho.get("rho2")

    @property
    def rho3(self):
        return self.rho.get("rho3")

    @property
    def rho4(self):
        return self.rho.get("rho4")

    def to_json(self) -> str:
        ref = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.reference.items()}
        wit = {k: {"subset": list(map(int, w[0])), "column": int(w[1])} for k, w in self.witnesses.items()}
        return json.dumps(
            {
                "task": self.task,
                "alpha": self.alpha,
                "rho": self.rho,
                "reference": ref,
                "net_seed": self.net_seed,
                "subset_mode": self.subset_mode,
                "count": self.count,
                "n": self.n,
                "witnesses": wit,
            }
        )


def _reference_arrays(task, reference):
    """Normalize the per-task reference into (dict, validated arrays)."""
    if task == "mean":
        mu, sigma = reference
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        if np.linalg.eigvalsh(sigma).min() <= 0:
            raise DomainError("reference covariance must be positive definite")
        return {"mu": np.atleast_1d(np.asarray(mu, dtype=float)), "sigma": sigma}
    if task == "euclidean-mean":
        (mu,) = reference if isinstance(reference, tuple) else (reference,)
        return {"mu": np.atleast_1d(np.asarray(mu, dtype=float))}
    if task == "lr":
        beta, sigma, gamma = reference
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        if np.linalg.eigvalsh(sigma).min() <= 0:
            raise DomainError("reference covariance must be positive definite")
        if not gamma > 0:
            raise DomainError("reference gamma must be positive")
        return {"beta": np.atleast_1d(np.asarray(beta, dtype=float)), "sigma": sigma, "gamma": float(gamma)}
    if task in ("cov", "pca"):
        (sigma,) = reference if isinstance(reference, tuple) else (reference,)
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        if np.linalg.eigvalsh(sigma).min() <= 0:
            raise DomainError("reference covariance must be positive definite")
        return {"sigma": sigma}
    raise InvalidParameterError(f"unknown task {task!r}")


def _deviation_table(task, X, y, ref, net):
    """Per-record statistic columns A plus targets t and scales s, so that the
    deviation of a kept set T in column q is |mean_T(A[:, q]) - t[q]| / s[q].

    Returns (A, t, s, groups, orderings): ``groups`` maps rho names to column
    slices, ``orderings`` lists columns whose sorted order seeds tail subsets.
    """
    V = net.elements
    if task == "cov":
        w = np.einsum("ni,kij,nj->nk", X, V, X)
        sv = np.einsum("kij,ij->k", V, ref["sigma"])
        # psi_V^2 = 2 <V, Sigma V Sigma> for the Gaussian fourth-moment operator
        psi2 = 2.0 * np.einsum("kij,kij->k", V, ref["sigma"] @ V @ ref["sigma"])
        psi = np.sqrt(psi2)
        A = np.concatenate([w, (w - sv) ** 2], axis=1)
        t = np.concatenate([sv, psi2])
        s = np.concatenate([psi, psi])  # second-moment deviation scales by psi, not psi^2
        m = V.shape[0]
        return A, t, s, {"rho1": slice(0, m), "rho2": slice(m, 2 * m)}, list(range(m))

    proj = X @ V.T
    m = V.shape[0]
    if task == "euclidean-mean":
        mu_v = V @ ref["mu"]
        return proj, mu_v, np.ones(m), {"rho1": slice(0, m)}, list(range(m))
    sigma_v = np.sqrt(np.einsum("ki,ij,kj->k", V, ref["sigma"], V))
    if task == "mean":
        mu_v = V @ ref["mu"]
        A = np.concatenate([proj, (proj - mu_v) ** 2], axis=1)
        t = np.concatenate([mu_v, sigma_v**2])
        s = np.concatenate([sigma_v, sigma_v**2])
        return A, t, s, {"rho1": slice(0, m), "rho2": slice(m, 2 * m)}, list(range(m))
    if task == "pca":
        A = np.concatenate([proj, proj**2], axis=1)
        t = np.concatenate([np.zeros(m), sigma_v**2])
        s = np.concatenate([sigma_v, sigma_v**2])
        return A, t, s, {"rho1": slice(0, m), "rho2": slice(m, 2 * m)}, list(range(m))
    if task == "lr":
        resid = y - X @ ref["beta"]
        grad = proj * resid[:, None]
        A = np.concatenate([grad, proj**2, proj, (resid**2)[:, None]], axis=1)
        t = np.concatenate([np.zeros(m), sigma_v**2, np.zeros(m), [ref["gamma"] ** 2]])
        s = np.concatenate([sigma_v * ref["gamma"], sigma_v**2, sigma_v, [ref["gamma"] ** 2]])
        groups = {
            "rho1": slice(0, m),
            "rho2": slice(m, 2 * m),
            "rho3": slice(2 * m, 3 * m),
            "rho4": slice(3 * m, 3 * m + 1),
        }
        # tails of the gradient, of the raw projection (whose |.| tails also
        # cover the squared-projection block), and of squared residuals
        return A, t, s, groups, list(range(0, m)) + list(range(2 * m, 3 * m)) + [3 * m]
    raise InvalidParameterError(f"unknown task {task!r}")


def _tail_sizes(kmax: int) -> list[int]:
    if kmax <= 0:
        return []
    if kmax <= 64:
        return list(range(1, kmax + 1))
    sizes = set(range(1, 17))
    j = 32
    while j < kmax:
        sizes.add(j)
        j *= 2
    sizes.add(kmax)
    return sorted(sizes)


def _subset_iter(task_cols, A, kmax, n, mode, count, seed):
    """Yield complement index arrays.  Sampling is nested in alpha: random
    subsets are prefixes of seeded permutations with a size fraction drawn once,
    so certificates are monotone in alpha by construction."""
    yield np.empty(0, dtype=int)
    if mode == "exhaustive":
        if n > 14:
            raise InvalidParameterError("exhaustive mode requires n <= 14")
        for size in range(1, kmax + 1):
            for comb in itertools.combinations(range(n), size):
                yield np.array(comb, dtype=int)
        return
    if mode != "sampled":
        raise InvalidParameterError(f"unknown subset mode {mode!r}")
    # deterministic directional tails: top-j, bottom-j, largest-|.|-j
    for col in task_cols:
        order = np.argsort(A[:, col], kind="stable")
        order_abs = np.argsort(np.abs(A[:, col]), kind="stable")
        for j in _tail_sizes(kmax):
            yield order[n - j :]
            yield order[:j]
            yield order_abs[n - j :]
    rng = np.random.default_rng(seed)
    for _ in range(count):
        frac = rng.random()
        size = int(math.floor(frac * kmax))
        if size == 0:
            continue
        yield rng.permutation(n)[:size]


def certify_resilience(
    task: str,
    X,
    alpha: float,
    reference,
    net: DirectionNet,
    subset_mode: str = "sampled",
    count: int = 2000,
    seed: int = 0,
    y=None,
) -> ResilienceCertificate:
    """Empirical resilience of the dataset against the reference parameter.

    rho_j is the max over enumerated kept sets T (|T| >= (1-alpha) n) and net
    directions of the defining deviation divided by its scale.  Enumeration
    runs over complements of size <= floor(alpha n), which is the smaller
    space.
    """
    if not 0 <= alpha < 1:
        raise InvalidParameterError("alpha must be in [0, 1)")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if task == "lr" and y is None:
        raise InvalidParameterError("lr certification needs labels")
    ref = _reference_arrays(task, reference)
    A, t, s, groups, orderings = _deviation_table(task, X, y if y is None else np.asarray(y, float), ref, net)
    kmax = int(math.floor(alpha * n))

    total = A.sum(axis=0)
    best = {name: (0.0, (np.empty(0, dtype=int), -1)) for name in groups}
    for comp in _subset_iter(orderings, A, kmax, n, subset_mode, count, seed):
        size = n - comp.shape[0]
        t_sum = total if comp.size == 0 else total - A[comp].sum(axis=0)
        dev = np.abs(t_sum / size - t) / s
        for name, sl in groups.items():
            col = int(np.argmax(dev[sl]))
            val = float(dev[sl][col])
            if val > best[name][0]:
                best[name] = (val, (comp.copy(), sl.start + col))

    rho = {name: best[name][0] for name in groups}
    witnesses = {name: best[name][1] for name in groups}
    return ResilienceCertificate(
        task=task,
        alpha=alpha,
        rho=rho,
        reference=ref,
        net_seed=net.seed,
        subset_mode=subset_mode,
        count=count if subset_mode == "sampled" else 0,
        n=n,
        witnesses=witnesses,
    )


def replay_witness(cert: ResilienceCertificate, X, net: DirectionNet, name: str, y=None) -> float:
    """Recompute the deviation at a stored witness (for test replay)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    A, t, s, _, _ = _deviation_table(cert.task, X, y if y is None else np.asarray(y, float), cert.reference, net)
    comp, col = cert.witnesses[name]
    keep = np.setdiff1d(np.arange(X.shape[0]), comp)
    return float(abs(A[keep, col].mean() - t[col]) / s[col])


# ---------------------------------------------------------------------------
# Corruption

@dataclass(frozen=True)
class CorruptionSpec:
    """Strong-contamination adversary: inspects the data, replaces exactly
    floor(fraction * n) records.  Records are rows, with the label appended for
    labeled datasets.  ``center`` defaults to the reference/empirical mean."""

    fraction: float
    adversary: str = "mean-shift"
    direction: np.ndarray | None = None
    magnitude: float = 10.0
    factor: float = 4.0
    budget: int = 2000
    seed: int = 0
    center: np.ndarray | None = None

    def __post_init__(self):
        if not 0 <= self.fraction < 0.5:
            raise InvalidParameterError("corruption fraction must be in [0, 1/2)")
        if self.adversary not in ("identity", "mean-shift", "variance-inflate", "tail-plant", "greedy-score"):
            raise InvalidParameterError(f"unknown adversary {self.adversary!r}")


def _records(dataset: Dataset) -> np.ndarray:
    if dataset.labels is None:
        return dataset.rows.copy()
    return np.concatenate([dataset.rows, dataset.labels[:, None]], axis=1)


def _unrecords(rec: np.ndarray, labeled: bool):
    if labeled:
        return rec[:, :-1].copy(), rec[:, -1].copy()
    return rec.copy(), None


def corrupt_dataset(dataset: Dataset, spec: CorruptionSpec, score_fn=None) -> Dataset:
    """Replace floor(fraction*n) records according to the adversary.

    The identity adversary re-writes selected records with their own values, so
    the Hamming accounting invariant applies to the modifying adversaries.  The
    greedy adversary needs ``score_fn`` (record-matrix -> float) and replaces,
    one slot at a time, with the pool candidate that most increases it.
    """
    rec = _records(dataset)
    n, p = rec.shape
    m = int(math.floor(spec.fraction * n))
    rng = np.random.default_rng(spec.seed)
    targets = rng.permutation(n)[:m]
    center = np.asarray(spec.center, dtype=float) if spec.center is not None else rec.mean(axis=0)
    scale = rec.std(axis=0)

    if m == 0 or spec.adversary == "identity":
        out = rec
    elif spec.adversary == "mean-shift":
        v = np.asarray(spec.direction, dtype=float) if spec.direction is not None else np.eye(p)[0]
        out = rec.copy()
        out[targets] = center + spec.magnitude * v
    elif spec.adversary == "variance-inflate":
        out = rec.copy()
        out[targets] = center + spec.factor * (rec[targets] - center)
    elif spec.adversary == "tail-plant":
        v = np.asarray(spec.direction, dtype=float) if spec.direction is not None else np.eye(p)[0]
        sd = float(np.sqrt(np.sum((v * scale) ** 2))) or 1.0
        out = rec.copy()
        out[targets] = center + spec.magnitude * sd * v
    elif spec.adversary == "greedy-score":
        if score_fn is None:
            raise InvalidParameterError("greedy-score adversary needs a score_fn")
        # pool: scaled extreme points +-C sigma v along record-space axes and
        # seeded random directions; covers tail plants and inside-the-middle
        # biasing plants
        dirs = [np.eye(p)[i] for i in range(p)]
        g = rng.standard_normal((max(2 * p, 4), p))
        dirs += list(g / np.linalg.norm(g, axis=1, keepdims=True))
        pool = []
        for v in dirs:
            sd = float(np.sqrt(np.sum((v * scale) ** 2))) or 1.0
            for c in (1.0, 3.0, 10.0):
                pool.append(center + c * sd * v)
                pool.append(center - c * sd * v)
        pool = np.array(pool)
        per_slot = max(1, spec.budget // max(m, 1))
        out = rec.copy()
        for slot in targets:
            take = pool if per_slot >= len(pool) else pool[rng.permutation(len(pool))[:per_slot]]
            base = out[slot].copy()
            best_val, best_cand = -math.inf, None
            for cand in take:
                out[slot] = cand
                val = score_fn(out)
                if val > best_val:
                    best_val, best_cand = val, cand.copy()
            out[slot] = best_cand if best_cand is not None else base
    else:  # pragma: no cover
        raise InvalidParameterError(spec.adversary)

    rows, labels = _unrecords(out, dataset.labels is not None)
    return Dataset(rows=rows, labels=labels, provenance=f"corrupted({spec.adversary},{spec.fraction})",
                   seed=dataset.seed, spec=dataset.spec)


# ---------------------------------------------------------------------------
# Runtime checker for the four utility assumptions

@dataclass
class AssumptionReport:
    a: bool
    b: bool
    c: bool
    d: bool
    measurements: dict
    reasons: dict = field(default_factory=dict)

    @property
    def all_hold(self):
        return self.a and self.b and self.c and self.d


def bounded_sensitivity_holds(Delta, rho, eps, delta, zeta, p, c0=31.8, c1=10.2, c2=3.0):
    """The literal bounded-sensitivity inequality; with Delta proportional to
    1/n it holds exactly for large enough n."""
    bound = (c0 - 3 * c1) * rho * eps / (32.0 * (c2 * p + eps / 2.0 + math.log(16.0 / (delta * zeta))))
    return Delta <= bound, bound


def check_utility_assumptions(
    dataset: Dataset,
    config,
    reference,
    constants: tuple[float, float, float],
    rho: float,
    rng: np.random.Generator | None = None,
    n_sets: int = 10,
    n_theta: int = 40,
) -> AssumptionReport:
    """Monte Carlo checks of the four sufficient conditions for utility.

    (a) bounded volume via grid-cell counts, (b) local sensitivity under
    seeded record swaps within Hamming k* of the data, (c) the literal bounded
    sensitivity inequality, (d) score-vs-true-distance robustness on the
    threshold ball.  (a), (b), (d) are Monte Carlo and reported as such.
    """
    from . import engine  # local import; engine does not import this module

    c0, c1, c2 = constants
    rng = np.random.default_rng(0) if rng is None else rng
    cfg = config
    atoms = engine.grid_atoms(cfg)
    scores_s = engine.score_atoms(dataset, cfg)
    p_dim = engine.parameter_dim(cfg)
    k_star = cfg.k_star
    meas: dict = {}
    reasons: dict = {}

    # (a) bounded volume
    inner_t = (7.0 / 8.0) * cfg.tau - (k_star + 1) * cfg.Delta - c1 * rho
    outer_t = cfg.tau + (k_star + 1) * cfg.Delta + c1 * rho
    if (7.0 / 8.0) * cfg.tau - (k_star + 1) * cfg.Delta <= 0:
        a = False
        reasons["a"] = "empty inner set"
        meas["vol_ratio"] = math.inf
    else:
        n_out = int(np.sum(scores_s <= outer_t))
        n_in = int(np.sum(scores_s <= inner_t))
        if n_in == 0:
            from .exceptions import ResolutionError

            raise ResolutionError("grid too coarse: no cell inside the inner ball")
        meas["vol_ratio"] = n_out / n_in
        a = meas["vol_ratio"] <= math.exp(c2 * p_dim)

    # (b) local sensitivity within Hamming k* (Monte Carlo over swaps)
    ball = float(cfg.tau + (k_star + 3) * cfg.Delta)
    cand = np.flatnonzero(scores_s <= ball)
    if cand.size > n_theta:
        cand = cand[np.linspace(0, cand.size - 1, n_theta).astype(int)]
    rec = _records(dataset)
    n = rec.shape[0]
    worst = 0.0
    for _ in range(n_sets):
        k = int(rng.integers(0, k_star + 1))
        sp = rec.copy()
        idx = rng.permutation(n)[:k]
        sp[idx] = rec[rng.integers(0, n, size=k)]
        spp = sp.copy()
        j = int(rng.integers(0, n))
        spp[j] = rec[int(rng.integers(0, n))]
        ds_p = _as_dataset(dataset, sp)
        ds_pp = _as_dataset(dataset, spp)
        s_p = engine.score_atoms(ds_p, cfg)[cand]
        s_pp = engine.score_atoms(ds_pp, cfg)[cand]
        worst = max(worst, float(np.max(np.abs(s_p - s_pp))))
    meas["local_sensitivity"] = worst
    b = worst <= cfg.Delta

    # (c) bounded sensitivity, literally
    c, bound = bounded_sensitivity_holds(cfg.Delta, rho, cfg.eps, cfg.delta, cfg.zeta,
                                         p_dim, c0, c1, c2)
    meas["sensitivity_bound"] = bound

    # (d) robustness of the surrogate on the threshold ball
    feas = np.flatnonzero(scores_s <= cfg.tau)
    if feas.size > n_theta:
        feas = feas[np.linspace(0, feas.size - 1, n_theta).astype(int)]
    gap = 0.0
    for i in feas:
        td = true_distance(cfg.task, engine.atom_parameter(cfg, atoms, int(i)), reference)
        gap = max(gap, abs(td - float(scores_s[i])))
    meas["robustness_gap"] = gap
    d = gap <= c1 * rho

    return AssumptionReport(a=a, b=b, c=c, d=d, measurements=meas, reasons=reasons)


def _as_dataset(like: Dataset, rec: np.ndarray) -> Dataset:
    rows, labels = _unrecords(rec, like.labels is not None)
    return Dataset(rows=rows, labels=labels, provenance=like.provenance, seed=like.seed, spec=like.spec)
