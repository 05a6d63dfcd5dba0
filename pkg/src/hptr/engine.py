"""The propose-test-release engine.

Proposal constants, the two safety-margin oracles (exact breadth-first search
over tiny finite universes, and a certified order-statistics lower bound), the
noisy threshold test, and the discretized exponential-mechanism release.

Margin under-estimation is privacy-safe: a lower bound on the distance to the
nearest unsafe dataset only raises the abort probability.  The certified
oracle therefore never needs to be tight, only sound, and the exact oracle
exists to measure how conservative it is.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .datagen import Dataset
from .exceptions import (
    DegenerateDirectionError,
    EmptySupportError,
    InvalidParameterError,
    ResourceError,
)
from .mechanisms import (
    BOTTOM,
    DiscretePMF,
    exp_mech_pmf,
    laplace_cdf,
    sample_laplace,
)
from .robust1d import (
    ONE_SIDED_TAIL,
    robust_noise_scale,
    trimmed_mean_var,
    two_sided_tail_count,
)
from .scores import DirectionNet, _fibonacci_sphere, vector_net

GAMMA_FLOOR = 1e-12

TASKS = ("mean", "euclidean-mean", "lr", "cov", "pca")


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=keys))


def test_threshold(eps: float, delta: float) -> float:
    return (2.0 / eps) * math.log(2.0 / delta)


# ---------------------------------------------------------------------------
# Configuration

@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned candidate grid; for PCA a sphere net of ``sphere_size``
    unit vectors is used instead."""

    center: np.ndarray | None = None
    half_widths: np.ndarray | None = None
    points_per_axis: int = 0
    sphere_size: int = 0
    cap: int = 2_000_000

    def axis(self, j: int) -> np.ndarray:
        return np.linspace(
            self.center[j] - self.half_widths[j],
            self.center[j] + self.half_widths[j],
            self.points_per_axis,
        )


@dataclass(frozen=True)
class MechanismConfig:
    task: str
    eps: float
    delta: float
    zeta: float
    alpha: float
    Delta: float
    grid: GridSpec
    tau: float | None = None
    net: DirectionNet | None = None
    seed: int = 0
    k_star: int = field(default=-1)

    def __post_init__(self):
        if self.task not in TASKS:
            raise InvalidParameterError(f"unknown task {self.task!r}")
        if not (self.eps > 0 and 0 < self.delta < 1 and 0 < self.zeta < 1):
            raise InvalidParameterError("need eps > 0 and delta, zeta in (0, 1)")
        if not self.Delta > 0:
            raise InvalidParameterError("Delta must be positive")
        if (self.tau is None) != (self.task == "pca"):
            raise InvalidParameterError("tau must be present iff the task is not pca")
        if self.net is None:
            raise InvalidParameterError("config needs a direction net")
        want_kind = "symmetric" if self.task == "cov" else "vector"
        if self.net.kind != want_kind:
            raise InvalidParameterError(f"task {self.task} needs a {want_kind} net")
        expected = math.ceil((2.0 / self.eps) * math.log(4.0 / (self.delta * self.zeta)))
        if self.k_star == -1:
            object.__setattr__(self, "k_star", expected)
        elif self.k_star != expected:
            raise InvalidParameterError(f"k_star must equal {expected}")

    @property
    def coefficient(self) -> float:
        return self.eps / (4.0 * self.Delta)

    def to_dict(self) -> dict:
        d = {
            "task": self.task,
            "eps": self.eps,
            "delta": self.delta,
            "zeta": self.zeta,
            "alpha": self.alpha,
            "Delta": self.Delta,
            "tau": self.tau,
            "seed": self.seed,
            "k_star": self.k_star,
            "grid": {
                "center": None if self.grid.center is None else list(map(float, self.grid.center)),
                "half_widths": None if self.grid.half_widths is None else list(map(float, self.grid.half_widths)),
                "points_per_axis": self.grid.points_per_axis,
                "sphere_size": self.grid.sphere_size,
            },
        }
        if self.net is not None:
            d["net"] = json.loads(self.net.to_json())
        return d


@dataclass
class MarginResult:
    value: int
    mode: str
    cap: int
    witness: tuple | None = None


@dataclass
class Transcript:
    margin: int
    noisy_margin: float
    passed: bool
    output: np.ndarray | None
    pmf_entropy: float
    seed: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "margin": self.margin,
                "noisy_margin": self.noisy_margin,
                "pass": self.passed,
                "output": None if self.output is None else list(map(float, np.atleast_1d(self.output))),
                "pmf_entropy": self.pmf_entropy,
                "seed": self.seed,
            }
        )


# ---------------------------------------------------------------------------
# Proposal

_FAMILIES = ("sub-gaussian", "hypercontractive", "cov-bounded")


def propose_from_rho(task: str, rho: float, alpha: float, n: int):
    """Delta and tau from a resilience scale: 110 rho/(alpha n) and 42 rho for
    the mean-like tasks, 80 rho/(alpha n) with no threshold for PCA."""
    if rho <= 0:
        raise InvalidParameterError("rho must be positive")
    if task == "pca":
        return 80.0 * rho / (alpha * n), None
    if task in ("mean", "euclidean-mean", "lr", "cov"):
        return 110.0 * rho / (alpha * n), 42.0 * rho
    raise InvalidParameterError(f"unknown task {task!r}")


def propose_params(
    task: str,
    family: str,
    alpha: float,
    n: int,
    calibration: float = 1.0,
    zeta: float = 0.05,
    k: int | None = None,
    kappa: float | None = None,
):
    """Sensitivity bound, threshold, and resilience scale from the family
    formulas: Delta = 110 rho1 / (alpha n) and tau = 42 rho1 for mean-like
    tasks, Delta = 80 rho2 / (alpha n) and no threshold for PCA.

    The leading constant of each family's resilience is a calibration input.
    """
    if not 0 < alpha < 0.5:
        raise InvalidParameterError("alpha must be in (0, 1/2)")
    if calibration <= 0:
        raise InvalidParameterError("calibration constant must be positive")
    if family not in _FAMILIES:
        raise InvalidParameterError(f"unknown family {family!r}")
    log1a = math.log(1.0 / alpha)

    if task in ("mean", "lr"):
        if family == "sub-gaussian":
            rho = calibration * alpha * math.sqrt(log1a)
        elif family == "hypercontractive":
            if k is None or kappa is None:
                raise InvalidParameterError("hypercontractive family needs k and kappa")
            rho = calibration * k * kappa * alpha ** (1.0 - 1.0 / k) * zeta ** (-1.0 / k)
        else:
            raise InvalidParameterError(f"({task}, {family}) is not a supported pair")
    elif task == "euclidean-mean":
        if family != "cov-bounded":
            raise InvalidParameterError(f"({task}, {family}) is not a supported pair")
        rho = calibration * math.sqrt(alpha)
    elif task == "cov":
        if family != "sub-gaussian":
            raise InvalidParameterError(f"({task}, {family}) is not a supported pair")
        rho = calibration * alpha * log1a
    elif task == "pca":
        if family == "sub-gaussian":
            rho = calibration * alpha * log1a
        elif family == "hypercontractive":
            if k is None or kappa is None:
                raise InvalidParameterError("hypercontractive family needs k and kappa")
            rho = calibration * (k * kappa) ** 2 * alpha ** (1.0 - 2.0 / k) * zeta ** (-2.0 / k)
        else:
            raise InvalidParameterError(f"({task}, {family}) is not a supported pair")
    else:
        raise InvalidParameterError(f"unknown task {task!r}")

    delta_bound, tau = propose_from_rho(task, rho, alpha, n)
    return delta_bound, tau, rho


# ---------------------------------------------------------------------------
# Candidate grids

def _pack_symmetric(M: np.ndarray) -> np.ndarray:
    d = M.shape[0]
    idx = np.triu_indices(d)
    return M[idx]


def _unpack_symmetric(v: np.ndarray, d: int) -> np.ndarray:
    M = np.zeros((d, d))
    idx = np.triu_indices(d)
    M[idx] = v
    M.T[idx] = v
    return M


def parameter_dim(config: MechanismConfig) -> int:
    """Dimension of the packed candidate parameter (the p of the volume and
    sensitivity conditions): d for mean/lr, d(d+1)/2 for covariance, d for the
    sphere candidates of PCA."""
    if config.task == "pca":
        return config.net.dim
    return config.grid.center.shape[0]


def sphere_atoms(dim: int, size: int, seed: int = 0) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        angles = 2.0 * math.pi * np.arange(size) / size
        return np.stack([np.cos(angles), np.sin(angles)], axis=1)
    if dim == 3:
        return _fibonacci_sphere(size)
    net = vector_net(dim, seed, n_random=max(size // 2, 1), n_sphere=0)
    return net.elements


def grid_atoms(config: MechanismConfig) -> np.ndarray:
    """Candidate parameters as a (m, p) array of packed coordinates.

    Covariance grids drop non-PD candidates at construction; their exclusion
    is data-independent, so the outcome universe stays comparable across
    datasets.
    """
    g = config.grid
    if config.task == "pca":
        atoms = sphere_atoms(config.net.dim, g.sphere_size, config.seed)
        if atoms.shape[0] > g.cap:
            raise InvalidParameterError("sphere net exceeds the grid cap")
        return atoms
    p = g.center.shape[0]
    if g.points_per_axis**p > g.cap:
        raise InvalidParameterError(
            f"grid of {g.points_per_axis}^{p} points exceeds the cap {g.cap}"
        )
    axes = [g.axis(j) for j in range(p)]
    mesh = np.meshgrid(*axes, indexing="ij")
    atoms = np.stack([m.reshape(-1) for m in mesh], axis=1)
    if config.task == "cov":
        d = _sym_dim(p)
        keep = [i for i in range(atoms.shape[0]) if _is_pd(_unpack_symmetric(atoms[i], d))]
        atoms = atoms[keep]
    return atoms


def _sym_dim(packed_len: int) -> int:
    d = int((math.isqrt(8 * packed_len + 1) - 1) // 2)
    if d * (d + 1) // 2 != packed_len:
        raise InvalidParameterError(f"{packed_len} is not a packed symmetric length")
    return d


def _is_pd(M: np.ndarray) -> bool:
    return bool(np.linalg.eigvalsh(M).min() > 1e-12)


def atom_parameter(config: MechanismConfig, atoms: np.ndarray, i: int):
    if config.task == "cov":
        return _unpack_symmetric(atoms[i], _sym_dim(atoms.shape[1]))
    return atoms[i]


def lr_gamma_hat(dataset: Dataset, config: MechanismConfig) -> float:
    res = robust_noise_scale(
        dataset.rows, dataset.labels, config.alpha, mode="heuristic", rng=derive_rng(config.seed, 7)
    )
    return max(res.gamma_hat, GAMMA_FLOOR)


# ---------------------------------------------------------------------------
# Scoring all atoms at once (shared by release and the certified margin)

def _two_sided_stats(values: np.ndarray, alpha: float):
    """per-column sorted values, trimmed mean, trimmed std, tail count."""
    v = np.sort(values, axis=0)
    n = v.shape[0]
    t = two_sided_tail_count(n, alpha)
    mid = v[t : n - t]
    mu = mid.mean(axis=0)
    sd = np.sqrt(np.mean((mid - mu) ** 2, axis=0))
    return v, mu, sd, t


def score_atoms(dataset: Dataset, config: MechanismConfig, atoms: np.ndarray | None = None) -> np.ndarray:
    """Task score at every candidate; raises DegenerateDirectionError when a
    direction has zero robust spread (callers map that to an empty support)."""
    if atoms is None:
        atoms = grid_atoms(config)
    X = dataset.rows
    a = config.alpha
    if config.task in ("mean", "euclidean-mean"):
        V = config.net.elements
        z = X @ V.T
        _, mu, sd, _ = _two_sided_stats(z, a)
        num = atoms @ V.T - mu
        if config.task == "euclidean-mean":
            return num.max(axis=1)
        if sd.min() <= 0:
            raise DegenerateDirectionError("zero robust variance on the net", direction=int(np.argmin(sd)))
        return (num / sd).max(axis=1)
    if config.task == "cov":
        V = config.net.elements
        w = np.einsum("ni,kij,nj->nk", X, V, X)
        _, mu, psi, _ = _two_sided_stats(w, a)
        if psi.min() <= 0:
            raise DegenerateDirectionError("zero robust spread on the symmetric net", direction=int(np.argmin(psi)))
        d = _sym_dim(atoms.shape[1])
        mats = np.stack([_unpack_symmetric(atoms[i], d) for i in range(atoms.shape[0])])
        proj = np.einsum("kij,aij->ak", V, mats)
        return ((proj - mu) / psi).max(axis=1)
    if config.task == "pca":
        sq = (X @ atoms.T) ** 2
        n = X.shape[0]
        drop = int(math.floor(ONE_SIDED_TAIL * a * n))
        kept = np.sort(sq, axis=0)[: n - drop]
        q = kept.mean(axis=0)
        denom = q.max()
        if denom <= 0:
            raise DegenerateDirectionError("all trimmed quadratic forms vanish", direction=0)
        return 1.0 - q / denom
    if config.task == "lr":
        stats = _lr_atom_stats(dataset, config, atoms, ladder=(0,))
        return stats["scores"]
    raise InvalidParameterError(config.task)


def _lr_atom_stats(dataset: Dataset, config: MechanismConfig, atoms: np.ndarray, ladder):
    """Per-(direction, atom) trimmed-gradient statistics for regression.

    ``ladder`` lists the window offsets j whose order statistics are needed;
    one chunked partition pass serves both the release scores (j = 0) and the
    certified margin (the full ladder).
    """
    X, y = dataset.rows, dataset.labels
    V = config.net.elements
    n = X.shape[0]
    t = two_sided_tail_count(n, config.alpha)
    m_dirs = V.shape[0]
    n_atoms = atoms.shape[0]
    gamma = lr_gamma_hat(dataset, config)

    z = X @ V.T
    zs, _, _, _ = _two_sided_stats(z, config.alpha)
    sig0 = np.sqrt(np.mean(zs[t : n - t] ** 2, axis=0))
    if sig0.min() <= 0:
        raise DegenerateDirectionError("zero robust second moment on the net", direction=int(np.argmin(sig0)))

    ladder = sorted(set(int(j) for j in ladder))
    lo_pos = {j: max(t - j, 0) for j in ladder}
    hi_pos = {j: min(n - 1 - t + j, n - 1) for j in ladder}
    kth = sorted({p for j in ladder for p in (lo_pos[j], hi_pos[j])} | {max(t - 1, 0), n - t - 1})

    qmeans = np.empty((n_atoms, m_dirs))
    wlo = {j: np.empty((n_atoms, m_dirs)) for j in ladder}
    whi = {j: np.empty((n_atoms, m_dirs)) for j in ladder}
    chunk = max(1, int(4e6 // max(n * m_dirs, 1)))
    for start in range(0, n_atoms, chunk):
        r = y[None, :] - atoms[start : start + chunk] @ X.T  # (c, n)
        g = z.T[None, :, :] * r[:, None, :]  # (c, m, n)
        gp = np.partition(g, kth, axis=2)
        bot = gp[:, :, : max(t, 0)].sum(axis=2) if t else 0.0
        top = gp[:, :, n - t :].sum(axis=2) if t else 0.0
        qmeans[start : start + chunk] = (g.sum(axis=2) - bot - top) / (n - 2 * t)
        for j in ladder:
            wlo[j][start : start + chunk] = gp[:, :, lo_pos[j]]
            whi[j][start : start + chunk] = gp[:, :, hi_pos[j]]
    scores = (qmeans / (sig0[None, :] * gamma)).max(axis=1)
    return {
        "scores": scores,
        "qmeans": qmeans,
        "wlo": wlo,
        "whi": whi,
        "sig0": sig0,
        "gamma": gamma,
        "zsorted": zs,
        "tail": t,
    }


# ---------------------------------------------------------------------------
# Release

def release_pmf(dataset: Dataset, config: MechanismConfig, atoms: np.ndarray | None = None,
                scores: np.ndarray | None = None):
    """Exact softmin law over feasible atoms.

    Returns (probs over all atoms, feasible mask); probs are zero outside the
    feasible set.  Raises EmptySupportError when nothing satisfies the
    threshold (the pipeline maps that to the abort symbol).
    """
    if atoms is None:
        atoms = grid_atoms(config)
    try:
        s = score_atoms(dataset, config, atoms) if scores is None else scores
    except DegenerateDirectionError:
        raise EmptySupportError("degenerate data: no direction has robust spread")
    if config.task == "pca":
        feas = np.ones(s.shape[0], dtype=bool)
    else:
        feas = s <= config.tau
    if not feas.any():
        raise EmptySupportError("no grid point satisfies the score threshold")
    probs = np.zeros(s.shape[0])
    probs[feas] = exp_mech_pmf(s[feas], config.coefficient)
    return probs, feas


def release_sample(dataset: Dataset, config: MechanismConfig, rng: np.random.Generator):
    atoms = grid_atoms(config)
    probs, _ = release_pmf(dataset, config, atoms)
    idx = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
    idx = min(idx, atoms.shape[0] - 1)
    return atom_parameter(config, atoms, idx)


def pmf_entropy(probs: np.ndarray) -> float:
    p = probs[probs > 0]
    return float(-(p * np.log(p)).sum())


# ---------------------------------------------------------------------------
# Safety test

def safety_test(margin: int, eps: float, delta: float, rng: np.random.Generator) -> bool:
    """Pass iff margin + Lap(2/eps) clears (2/eps) log(2/delta)."""
    if margin < 0:
        raise InvalidParameterError("margin must be >= 0")
    if math.isinf(eps):
        return margin >= 0.0
    noisy = margin + float(sample_laplace(2.0 / eps, rng))
    return noisy >= test_threshold(eps, delta)


# ---------------------------------------------------------------------------
# Exact margin oracle (tiny finite universes)

def _dataset_from_records(records, labeled: bool, like: Dataset) -> Dataset:
    arr = np.array([np.atleast_1d(np.asarray(r, dtype=float)) for r in records])
    if labeled:
        return Dataset(rows=arr[:, :-1], labels=arr[:, -1], provenance="universe", seed=like.seed, spec=like.spec)
    return Dataset(rows=arr, labels=None, provenance="universe", seed=like.seed, spec=like.spec)


def release_law(dataset: Dataset, config: MechanismConfig, atoms: np.ndarray | None = None) -> DiscretePMF:
    """Gridded release pmf over atom ids plus the abort atom (which carries all
    mass when the support is empty)."""
    if atoms is None:
        atoms = grid_atoms(config)
    ids = [f"g{i}" for i in range(atoms.shape[0])] + [BOTTOM]
    try:
        probs, _ = release_pmf(dataset, config, atoms)
        vals = list(probs) + [0.0]
    except EmptySupportError:
        vals = [0.0] * atoms.shape[0] + [1.0]
    return DiscretePMF(tuple(zip(ids, vals)))


def margin_exact(
    dataset: Dataset,
    config: MechanismConfig,
    alphabet,
    cap: int | None = None,
    budget: float = 5e6,
) -> MarginResult:
    """Breadth-first search for the nearest dataset whose local release law
    violates the (eps/2, delta/2) condition against one of its own neighbors
    (pure eps/2 for PCA).

    Works on record multisets: trimmed scores are permutation invariant, so the
    Hamming ball projects onto the replace-one-record multiset graph.
    """
    records = [tuple(np.atleast_1d(r)) for r in _record_view(dataset)]
    alphabet = [tuple(np.atleast_1d(np.asarray(a, dtype=float))) for a in alphabet]
    n = len(records)
    cap = cap if cap is not None else 2 * n
    atoms = grid_atoms(config)
    if len(alphabet) ** n * max(atoms.shape[0], 1) > budget:
        raise ResourceError(f"universe of {len(alphabet)}^{n} datasets exceeds the budget", partial=None)
    labeled = dataset.labels is not None
    for r in records:
        if r not in alphabet:
            raise InvalidParameterError("dataset contains records outside the alphabet")

    half_delta = 0.0 if config.task == "pca" else config.delta / 2.0
    tol = 1e-12

    laws: dict = {}

    def law(ms):
        if ms not in laws:
            laws[ms] = release_law(_dataset_from_records(ms, labeled, dataset), config, atoms)
        return laws[ms]

    def neighbors(ms):
        seen = set()
        for i in range(n):
            for a in alphabet:
                if a == ms[i]:
                    continue
                nxt = tuple(sorted(ms[:i] + (a,) + ms[i + 1 :]))
                if nxt not in seen:
                    seen.add(nxt)
                    yield nxt

    unsafe_memo: dict = {}

    def unsafe(ms):
        if ms not in unsafe_memo:
            from .mechanisms import hockey_stick_delta

            p = law(ms)
            bad = False
            for nb in neighbors(ms):
                q = law(nb)
                if (
                    hockey_stick_delta(p, q, config.eps / 2.0) > half_delta + tol
                    or hockey_stick_delta(q, p, config.eps / 2.0) > half_delta + tol
                ):
                    bad = True
                    break
            unsafe_memo[ms] = bad
        return unsafe_memo[ms]

    start = tuple(sorted(records))
    dist = {start: 0}
    queue = deque([start])
    while queue:
        ms = queue.popleft()
        d = dist[ms]
        if unsafe(ms):
            return MarginResult(value=d, mode="exact", cap=cap, witness=ms)
        if d >= cap:
            continue
        for nb in neighbors(ms):
            if nb not in dist:
                dist[nb] = d + 1
                queue.append(nb)
    return MarginResult(value=cap, mode="exact", cap=cap, witness=None)


def _record_view(dataset: Dataset) -> np.ndarray:
    if dataset.labels is None:
        return dataset.rows
    return np.concatenate([dataset.rows, dataset.labels[:, None]], axis=1)


# ---------------------------------------------------------------------------
# Certified margin oracle

def _window_positions(t: int, n: int, j: int):
    return max(t - j, 0), min(n - 1 - t + j, n - 1)


def _two_sided_cache(dataset, config, atoms):
    X = dataset.rows
    if config.task == "cov":
        V = config.net.elements
        vals = np.einsum("ni,kij,nj->nk", X, V, X)
        d = _sym_dim(atoms.shape[1])
        mats = np.stack([_unpack_symmetric(atoms[i], d) for i in range(atoms.shape[0])])
        proj = np.einsum("kij,aij->ak", V, mats)
    else:
        V = config.net.elements
        vals = X @ V.T
        proj = atoms @ V.T
    zs, mu, sd, t = _two_sided_stats(vals, config.alpha)
    return {"zs": zs, "mu": mu, "sd": sd, "t": t, "proj": proj}


def _certify_two_sided(cache, config, atoms, k, normalize):
    """Score intervals and one-swap bounds over the Hamming-(k+1) ball for the
    mean / euclidean-mean / cov families (two-sided trims).

    Sound only while k+1 stays below the per-tail trim count: beyond that an
    inserted record escapes the trim and no data-range bound exists.
    Returns None when the radius is not certifiable.
    """
    zs, mu, sd, t, proj = cache["zs"], cache["mu"], cache["sd"], cache["t"], cache["proj"]
    n = zs.shape[0]
    j = k + 1
    if j > t:
        return None
    M = n - 2 * t
    lo_p, hi_p = _window_positions(t, n, j)
    R = zs[hi_p] - zs[lo_p]
    meansens = R / M
    jm = j * meansens
    NUM = proj - mu
    if not normalize:
        hi = (NUM + jm).max(axis=1)
        lo = (NUM - jm).max(axis=1)
        os = np.full(atoms.shape[0], meansens.max())
        return {"lo": lo, "hi": hi, "onestep": os}
    # one swap exchanges two window values; their squared deviations about the
    # (drifted) trimmed mean differ by at most rdev^2, plus the mean-shift term
    rdev = np.maximum(zs[hi_p] - mu, mu - zs[lo_p]) + jm
    varsens = rdev**2 / M + meansens**2
    jvar = j * varsens
    s2 = sd**2
    if np.any(jvar >= s2):
        return None
    slo = np.sqrt(s2 - jvar)
    shi = np.sqrt(s2 + jvar)
    num_hi = NUM + jm
    num_lo = NUM - jm
    hi = np.where(num_hi > 0, num_hi / slo, num_hi / shi).max(axis=1)
    lo = np.where(num_lo > 0, num_lo / shi, num_lo / slo).max(axis=1)
    os = (meansens / slo + (np.abs(NUM) + jm) * (varsens / (2.0 * slo**3))).max(axis=1)
    return {"lo": lo, "hi": hi, "onestep": os}


def _pca_cache(dataset, config, atoms):
    return {"sq": np.sort((dataset.rows @ atoms.T) ** 2, axis=0)}


def _certify_pca(cache, config, atoms, k):
    sq = cache["sq"]
    n = sq.shape[0]
    drop = int(math.floor(ONE_SIDED_TAIL * config.alpha * n))
    j = k + 1
    if j > drop:
        return None
    K = n - drop
    q = sq[:K].mean(axis=0)
    whi = sq[min(K - 1 + j, n - 1)]
    qsens = whi / K
    qlo = np.maximum(q - j * qsens, 0.0)
    qhi = q + j * qsens
    denlo = qlo.max()
    denhi = qhi.max()
    if denlo <= 0:
        return None
    hi = 1.0 - qlo / denhi
    lo = np.maximum(1.0 - qhi / denlo, 0.0)
    os = qsens / denlo + qhi * qsens.max() / denlo**2
    return {"lo": lo, "hi": hi, "onestep": os}


def _certify_lr(config, atoms, k, stats_cache):
    n = stats_cache["n"]
    t = stats_cache["tail"]
    j = k + 1
    if j > t or j not in stats_cache["wlo"]:
        return None
    M = n - 2 * t
    zs = stats_cache["zsorted"]
    sig0 = stats_cache["sig0"]
    gamma = stats_cache["gamma"]
    lo_p, hi_p = _window_positions(t, n, j)
    zlo, zhi = zs[lo_p], zs[hi_p]
    crosses = (zlo <= 0) & (zhi >= 0)
    sqhi = np.maximum(zlo**2, zhi**2)
    sqlo = np.where(crosses, 0.0, np.minimum(zlo**2, zhi**2))
    sqsens = (sqhi - sqlo) / M
    s2 = sig0**2
    if np.any(j * sqsens >= s2):
        return None
    s0lo = np.sqrt(s2 - j * sqsens)
    s0hi = np.sqrt(s2 + j * sqsens)

    rsq = stats_cache["resid_sq_sorted"]
    keep = stats_cache["gamma_keep"]
    rhi = rsq[min(keep - 1 + j, n - 1)]
    rsens = rhi / keep
    g2 = gamma**2
    if j * rsens >= g2:
        return None
    glo = math.sqrt(g2 - j * rsens)
    ghi = math.sqrt(g2 + j * rsens)

    qm = stats_cache["qmeans"]
    gsens = (stats_cache["whi"][j] - stats_cache["wlo"][j]) / M
    jq = j * gsens
    num_hi = qm + jq
    num_lo = qm - jq
    den_lo = s0lo * glo
    den_hi = s0hi * ghi
    hi = np.where(num_hi > 0, num_hi / den_lo, num_hi / den_hi).max(axis=1)
    lo = np.where(num_lo > 0, num_lo / den_hi, num_lo / den_lo).max(axis=1)
    inv_drift = sqsens / (2.0 * s0lo**3) / glo + rsens / (2.0 * glo**3) / s0lo
    os = (gsens / den_lo + (np.abs(qm) + jq) * inv_drift).max(axis=1)
    return {"lo": lo, "hi": hi, "onestep": os}


def _certified_intervals(cache, config, atoms, k):
    if config.task in ("mean", "cov"):
        return _certify_two_sided(cache, config, atoms, k, normalize=True)
    if config.task == "euclidean-mean":
        return _certify_two_sided(cache, config, atoms, k, normalize=False)
    if config.task == "pca":
        return _certify_pca(cache, config, atoms, k)
    if config.task == "lr":
        return _certify_lr(config, atoms, k, cache)
    raise InvalidParameterError(config.task)


def _largest_certified(certifiable, k_cap: int, candidates=None) -> int:
    """Largest radius the predicate accepts.

    Free-form search (exponential probe then bisection) when any radius can be
    evaluated; a restricted ascending scan when only prepared candidate radii
    are available (the regression cache prepares specific window offsets).
    The returned radius was itself evaluated, which is all soundness needs.
    """
    if candidates is not None:
        best = -1
        for k in candidates:
            if k > k_cap:
                break
            if certifiable(k):
                best = k
            else:
                break
        return max(best, 0)
    if not certifiable(0):
        return 0
    lo = 0
    step = 1
    while lo + step <= k_cap and certifiable(lo + step):
        lo += step
        step *= 2
    hi = min(lo + step, k_cap + 1)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if certifiable(mid):
            lo = mid
        else:
            hi = mid
    return lo


def margin_certified(dataset: Dataset, config: MechanismConfig, k_cap: int | None = None) -> MarginResult:
    """Largest k such that every dataset within Hamming distance k provably
    satisfies the (eps/2, delta/2) release condition against its neighbors.

    Certification at radius k combines (i) per-atom one-swap score bounds from
    the order-statistic windows -- the multiplicative e^(eps/2) part -- with
    (ii) a mass budget for atoms whose feasibility can flip across a swap,
    charged to delta/2.  Under-estimation is safe, so every failed bound just
    lowers the reported margin.
    """
    result, _ = _margin_certified_with_scores(dataset, config, k_cap)
    return result


def _margin_certified_with_scores(dataset, config, k_cap=None):
    """Certified margin plus, for regression, the atom scores it computed
    along the way (the per-atom trimmed-gradient pass dominates the runtime,
    so the release reuses it)."""
    if k_cap is None:
        k_cap = 4 * config.k_star
    atoms = grid_atoms(config)
    c = config.coefficient
    scores_out = None
    candidates = None
    if config.task == "lr":
        candidates = sorted({0, 1, 2, 4, 8} | {min(int(2.0**i), k_cap) for i in range(4, 40) if 2.0**i <= k_cap} | {k_cap})
        cache = _lr_atom_stats(dataset, config, atoms, ladder=[k + 1 for k in candidates])
        rs = robust_noise_scale(dataset.rows, dataset.labels, config.alpha, mode="heuristic",
                                rng=derive_rng(config.seed, 7))
        cache["resid_sq_sorted"] = np.sort((dataset.labels - dataset.rows @ rs.beta_bar) ** 2)
        cache["gamma_keep"] = dataset.rows.shape[0] - two_sided_tail_count(dataset.rows.shape[0], config.alpha)
        cache["n"] = dataset.rows.shape[0]
        scores_out = cache["scores"]
    elif config.task == "pca":
        cache = _pca_cache(dataset, config, atoms)
    else:
        cache = _two_sided_cache(dataset, config, atoms)

    def certifiable(k: int) -> bool:
        iv = _certified_intervals(cache, config, atoms, k)
        if iv is None:
            return False
        lo, hi, os = iv["lo"], iv["hi"], iv["onestep"]
        if config.task == "pca":
            return 2.0 * c * float(os.max()) <= config.eps / 2.0
        tau = config.tau
        possible = lo <= tau
        if not possible.any():
            return False
        os_max = float(os[possible].max())
        hibest = float(hi.min())
        if hibest > tau:
            return False
        band = possible & (hi >= tau - os)
        expo = c * (tau - os_max - hibest)
        if not np.isfinite(expo):
            return False
        xi = float(band.sum()) * math.exp(-min(max(expo, -700.0), 700.0))
        if xi > config.delta / 2.0:
            return False
        return 2.0 * c * os_max + math.log1p(xi) <= config.eps / 2.0

    value = _largest_certified(certifiable, k_cap, candidates)
    return MarginResult(value=value, mode="certified", cap=k_cap, witness=None), scores_out


# ---------------------------------------------------------------------------
# Full pipeline

def compute_margin(dataset, config, margin_mode, alphabet=None, cap=None, margin_value=None) -> MarginResult:
    if margin_mode == "exact":
        if alphabet is None:
            raise InvalidParameterError("exact margin mode needs a record alphabet")
        return margin_exact(dataset, config, alphabet, cap=cap)
    if margin_mode == "certified":
        return margin_certified(dataset, config, k_cap=cap)
    if margin_mode == "fixed":
        if margin_value is None:
            raise InvalidParameterError("fixed margin mode needs margin_value")
        return MarginResult(value=int(margin_value), mode="fixed", cap=int(margin_value))
    raise InvalidParameterError(f"unknown margin mode {margin_mode!r}")


def run(
    dataset: Dataset,
    config: MechanismConfig,
    margin_mode: str = "certified",
    rng: np.random.Generator | None = None,
    alphabet=None,
    cap: int | None = None,
    margin_value: int | None = None,
) -> Transcript:
    """Propose -> margin -> noisy test -> release; aborts yield output None."""
    rng = derive_rng(config.seed, 11) if rng is None else rng
    scores = None
    if margin_mode == "certified":
        margin, scores = _margin_certified_with_scores(dataset, config, cap)
    else:
        margin = compute_margin(dataset, config, margin_mode, alphabet, cap, margin_value)
    noisy = margin.value + float(sample_laplace(2.0 / config.eps, rng))
    passed = noisy >= test_threshold(config.eps, config.delta)
    if not passed:
        return Transcript(margin.value, noisy, False, None, 0.0, config.seed)
    atoms = grid_atoms(config)
    try:
        probs, _ = release_pmf(dataset, config, atoms, scores=scores)
    except EmptySupportError:
        return Transcript(margin.value, noisy, True, None, 0.0, config.seed)
    idx = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
    idx = min(idx, atoms.shape[0] - 1)
    return Transcript(margin.value, noisy, True, atom_parameter(config, atoms, idx), pmf_entropy(probs), config.seed)


def output_law(
    dataset: Dataset,
    config: MechanismConfig,
    margin_mode: str = "exact",
    alphabet=None,
    cap: int | None = None,
    margin_value: int | None = None,
) -> DiscretePMF:
    """Exact law of the full mechanism (test + release) over atom ids and the
    abort atom; the abort probability is the closed-form Laplace tail."""
    margin = compute_margin(dataset, config, margin_mode, alphabet, cap, margin_value)
    p_bot = laplace_cdf(test_threshold(config.eps, config.delta) - margin.value, 2.0 / config.eps)
    atoms = grid_atoms(config)
    ids = [f"g{i}" for i in range(atoms.shape[0])] + [BOTTOM]
    try:
        probs, _ = release_pmf(dataset, config, atoms)
        vals = list((1.0 - p_bot) * probs) + [p_bot]
    except EmptySupportError:
        vals = [0.0] * atoms.shape[0] + [1.0]
    return DiscretePMF(tuple(zip(ids, vals)))


# ---------------------------------------------------------------------------
# Data-driven defaults

def default_grid(task: str, dataset: Dataset, alpha: float, points_per_axis: int = 33,
                 span: float = 8.0, sphere_size: int | None = None, seed: int = 0) -> GridSpec:
    """Candidate support from coordinate-wise trimmed statistics: center at the
    trimmed mean, half-width ``span`` trimmed standard deviations (scaled to
    the fit error for regression)."""
    X = dataset.rows
    d = X.shape[1]
    if task == "pca":
        return GridSpec(sphere_size=sphere_size if sphere_size is not None else max(32, 16 * d))
    if task in ("mean", "euclidean-mean"):
        moms = [trimmed_mean_var(X[:, j], alpha) for j in range(d)]
        center = np.array([m.mean for m in moms])
        hw = np.array([span * math.sqrt(m.var) for m in moms])
        return GridSpec(center=center, half_widths=np.maximum(hw, 1e-9), points_per_axis=points_per_axis)
    if task == "lr":
        res = robust_noise_scale(X, dataset.labels, alpha, mode="heuristic", rng=derive_rng(seed, 7))
        sig = np.array([math.sqrt(max(trimmed_mean_var(X[:, j], alpha).var, 1e-18)) for j in range(d)])
        n = X.shape[0]
        hw = span * (res.gamma_hat + 1e-9) / sig * (1.0 / math.sqrt(n) + alpha)
        return GridSpec(center=res.beta_bar, half_widths=np.maximum(hw, 1e-9), points_per_axis=points_per_axis)
    if task == "cov":
        idx = np.triu_indices(d)
        prods = X[:, idx[0]] * X[:, idx[1]]
        moms = [trimmed_mean_var(prods[:, j], alpha) for j in range(prods.shape[1])]
        center = np.array([m.mean for m in moms])
        hw = np.array([span * math.sqrt(m.var) * (1.0 / math.sqrt(X.shape[0]) + alpha) for m in moms])
        return GridSpec(center=center, half_widths=np.maximum(hw, 1e-9), points_per_axis=points_per_axis)
    raise InvalidParameterError(f"unknown task {task!r}")
