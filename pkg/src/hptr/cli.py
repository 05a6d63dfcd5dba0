"""Command-line surface and experiment harness.

Subcommands: gen, certify, score, margin, run, verify-dp, sweep, report.
All flags are long-form; mechanism configs live in TOML files and any flag
overrides the file.  Exit codes: 0 success, 2 validation error, 3 resource
error.  All randomness flows from --seed; HPTR_THREADS caps sweep workers.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, fields

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python 3.10
    import tomli as tomllib

from . import datagen, engine, resilience
from .datagen import (
    CovBounded,
    Dataset,
    Gaussian,
    HardPair,
    LinearModel,
    NoiseSpec,
    StudentT,
    SubGaussianBounded,
)
from .exceptions import HptrError, InvalidParameterError, ParseError, ResourceError
from .mechanisms import verify_dp
from .scores import DirectionNet, symmetric_net, true_distance, vector_net

REPORT_FIELDS = (
    "task", "family", "n", "d", "alpha", "eps", "delta", "trial",
    "passed", "error", "margin", "runtime_ms", "seed",
)


@dataclass
class ReportRow:
    task: str
    family: str
    n: int
    d: int
    alpha: float
    eps: float
    delta: float
    trial: int
    passed: bool
    error: float | None
    margin: int
    runtime_ms: int
    seed: int

    def csv_values(self):
        vals = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "error":
                vals.append("" if v is None else repr(float(v)))
            elif f.name == "passed":
                vals.append("true" if v else "false")
            else:
                vals.append(str(v))
        return vals


@dataclass
class SweepSpec:
    task: str
    family: str
    d: int
    n_grid: list
    alpha_grid: list
    eps_grid: list
    delta: float
    corruption_grid: list
    adversary: str
    trials: int
    seed: int
    out: str
    zeta: float = 0.05
    certify_count: int = 400

    def __post_init__(self):
        if self.trials < 1:
            raise InvalidParameterError("trials must be >= 1")
        if not (self.n_grid and self.alpha_grid and self.eps_grid and self.corruption_grid):
            raise InvalidParameterError("sweep grid must be nonempty")


# ---------------------------------------------------------------------------
# Family strings: "gaussian" or "gaussian+mean-shift@0.02"

def _family_spec(kind: str, d: int, task: str) -> datagen.FamilySpec:
    if kind == "gaussian":
        sigma = np.diag(1.0 + 0.5 * np.arange(d))
        if task == "pca":
            sigma = np.diag(1.0 + 1.0 * (np.arange(d) == 0))
        return Gaussian(mu=np.zeros(d), sigma=sigma)
    if kind == "subgaussian":
        return SubGaussianBounded(mu=np.zeros(d), sigma=np.diag(1.0 + 0.5 * np.arange(d)))
    if kind == "student-t":
        return StudentT(nu=8.0, sigma=np.eye(d))
    if kind == "linear":
        return LinearModel(beta=np.linspace(1.0, 2.0, d), sigma_x=np.eye(d),
                           noise=NoiseSpec(kind="independent", gamma=1.0))
    if kind == "linear-dependent":
        return LinearModel(beta=np.linspace(1.0, 2.0, d), sigma_x=np.eye(d),
                           noise=NoiseSpec(kind="dependent", gamma=1.0, coupling=1.0))
    if kind == "cov-bounded":
        return CovBounded(mu=np.zeros(d), sigma=0.5 * np.eye(d))
    raise InvalidParameterError(f"unknown family {kind!r}")


def _reference_for(task: str, spec: datagen.FamilySpec):
    if task in ("mean", "euclidean-mean"):
        if task == "euclidean-mean":
            return (np.atleast_1d(spec.mu),)
        return (np.atleast_1d(spec.mu), np.atleast_2d(spec.sigma))
    if task == "lr":
        return (np.atleast_1d(spec.beta), np.atleast_2d(spec.sigma_x), spec.noise.gamma)
    if task in ("cov", "pca"):
        sigma = spec.sigma_x if isinstance(spec, LinearModel) else spec.sigma
        return (np.atleast_2d(sigma),)
    raise InvalidParameterError(task)


def parse_family_string(s: str):
    """'gaussian' or 'gaussian+<adversary>@<fraction>'."""
    if "+" not in s:
        return s, None, 0.0
    base, corr = s.split("+", 1)
    if "@" not in corr:
        raise ParseError(f"malformed corruption tag in family {s!r}")
    adversary, frac = corr.rsplit("@", 1)
    return base, adversary, float(frac)


def family_string(base: str, adversary: str | None, fraction: float) -> str:
    if not adversary or fraction == 0.0:
        return base
    return f"{base}+{adversary}@{fraction:g}"


def _points_rule(task: str, n: int) -> int:
    if task == "lr":
        p = int(round(0.22 * math.sqrt(n)))
    else:
        p = int(round(0.8 * math.sqrt(n)))
    return 2 * max(p, 4) + 1


def _sphere_rule(n: int) -> int:
    return int(6 * max(8, round(math.sqrt(n))))


def run_trial(task: str, family: str, n: int, d: int, alpha: float, eps: float,
              delta: float, seed: int, zeta: float = 0.05, certify_count: int = 400,
              trial: int = 0) -> tuple[ReportRow, engine.Transcript]:
    """One end-to-end experiment; fully determined by its arguments."""
    t0 = time.perf_counter()
    base, adversary, fraction = parse_family_string(family)
    spec = _family_spec(base, d, task)
    data = datagen.generate(spec, n, seed)
    reference = _reference_for(task, spec)

    if fraction > 0.0:
        cspec = _corruption_spec(task, adversary, fraction, reference, seed)
        if adversary == "greedy-score":
            score_fn = _greedy_score_fn(task, data, alpha, reference, seed)
            data = resilience.corrupt_dataset(data, cspec, score_fn=score_fn)
        else:
            data = resilience.corrupt_dataset(data, cspec)

    if task == "cov":
        net = symmetric_net(d, seed=0, n_random=6)
    else:
        net = vector_net(d, seed=0, n_random=4, n_sphere=8 if d in (2, 3) else 0)
    cert = resilience.certify_resilience(
        task if task != "euclidean-mean" else "euclidean-mean",
        data.rows, alpha, reference, net,
        subset_mode="sampled", count=certify_count, seed=seed ^ 0x5EED,
        y=data.labels if task == "lr" else None,
    )
    if task == "pca":
        rho = max(cert.rho2, 1e-6)
        Delta, tau = 80.0 * rho / (alpha * n), None
    else:
        rho = max(cert.rho1, 1e-6)
        Delta, tau = 110.0 * rho / (alpha * n), 42.0 * rho

    grid = engine.default_grid(task, data, alpha, points_per_axis=_points_rule(task, n),
                               sphere_size=_sphere_rule(n), seed=seed)
    config = engine.MechanismConfig(task=task, eps=eps, delta=delta, zeta=zeta, alpha=alpha,
                                    Delta=Delta, tau=tau, grid=grid, net=net, seed=seed)
    transcript = engine.run(data, config, margin_mode="certified", rng=engine.derive_rng(seed, 11))
    err = None
    if transcript.passed and transcript.output is not None:
        err = true_distance(task, transcript.output, reference)
    ms = int(1000 * (time.perf_counter() - t0))
    row = ReportRow(task=task, family=family, n=n, d=d, alpha=alpha, eps=eps, delta=delta,
                    trial=trial, passed=err is not None, error=err,
                    margin=transcript.margin, runtime_ms=ms, seed=seed)
    return row, transcript


def _corruption_spec(task, adversary, fraction, reference, seed, magnitude=None):
    p_extra = 1 if task == "lr" else 0
    if task in ("mean", "euclidean-mean"):
        d = reference[0].shape[0]
        center = np.atleast_1d(reference[0])
    elif task == "lr":
        d = reference[0].shape[0]
        center = np.zeros(d + 1)
    else:
        d = reference[0].shape[0]
        center = np.zeros(d)
    direction = np.zeros(d + p_extra)
    direction[min(1, d - 1) if task == "pca" else 0] = 1.0
    if magnitude is None:
        magnitude = 1.5 if adversary == "mean-shift" else 10.0
    return resilience.CorruptionSpec(fraction=fraction, adversary=adversary or "mean-shift",
                                     direction=direction, magnitude=magnitude, seed=seed ^ 0xC0,
                                     center=center)


def _greedy_score_fn(task, data, alpha, reference, seed):
    """Score at the true parameter over a small direction net (cheap probe)."""
    from .scores import lr_score, mean_score, pca_score

    d = data.rows.shape[1]
    probe = vector_net(d, seed=3, n_random=4, n_sphere=0)
    if task in ("mean", "euclidean-mean"):
        mu = np.atleast_1d(reference[0])

        def fn(rec):
            return mean_score(rec, mu, alpha, probe)

        return fn
    if task == "pca":
        sigma = reference[0]
        top = np.linalg.eigh(sigma)[1][:, -1]

        def fn(rec):
            return pca_score(rec, top, alpha, probe)

        return fn
    if task == "lr":
        beta, _, gamma = reference

        def fn(rec):
            return lr_score(rec[:, :-1], rec[:, -1], beta, alpha, max(gamma, 1e-9), probe)

        return fn
    raise InvalidParameterError(task)


# ---------------------------------------------------------------------------
# Sweeps

def _cells(spec: SweepSpec):
    i = 0
    for n in spec.n_grid:
        for alpha in spec.alpha_grid:
            for eps in spec.eps_grid:
                for corr in spec.corruption_grid:
                    yield i, (int(n), float(alpha), float(eps), float(corr))
                    i += 1


def _trial_seed(master: int, cell_idx: int, trial: int) -> int:
    return int(np.random.SeedSequence(entropy=master, spawn_key=(cell_idx, trial)).generate_state(1)[0])


def _one_sweep_trial(args):
    spec, cell_idx, cell, trial = args
    n, alpha, eps, corr = cell
    fam = family_string(spec.family, spec.adversary, corr)
    seed = _trial_seed(spec.seed, cell_idx, trial)
    try:
        row, _ = run_trial(spec.task, fam, n, spec.d, alpha, eps, spec.delta, seed,
                           zeta=spec.zeta, certify_count=spec.certify_count, trial=trial)
    except HptrError:
        row = ReportRow(task=spec.task, family=fam, n=n, d=spec.d, alpha=alpha, eps=eps,
                        delta=spec.delta, trial=trial, passed=False, error=None,
                        margin=0, runtime_ms=0, seed=seed)
    return (cell_idx, trial), row


def run_experiment(spec: SweepSpec) -> list[ReportRow]:
    """One row per (cell, trial); per-trial failures become passed=false rows."""
    jobs = [(spec, ci, cell, t) for ci, cell in _cells(spec) for t in range(spec.trials)]
    workers = int(os.environ.get("HPTR_THREADS", "1"))
    results = {}
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            for key, row in pool.map(_one_sweep_trial, jobs):
                results[key] = row
    else:
        for job in jobs:
            key, row = _one_sweep_trial(job)
            results[key] = row
    rows = [results[k] for k in sorted(results)]
    _write_rows(spec.out, rows)
    return rows


def _write_rows(path: str, rows: list[ReportRow]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_FIELDS)
        for r in rows:
            w.writerow(r.csv_values())


def load_rows(path: str) -> list[dict]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(REPORT_FIELDS):
            raise ParseError("line 1: bad header")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(REPORT_FIELDS):
                raise ParseError(f"line {lineno}: expected {len(REPORT_FIELDS)} fields")
            try:
                out.append(
                    {
                        "task": rec[0],
                        "family": rec[1],
                        "n": int(rec[2]),
                        "d": int(rec[3]),
                        "alpha": float(rec[4]),
                        "eps": float(rec[5]),
                        "delta": float(rec[6]),
                        "trial": int(rec[7]),
                        "passed": rec[8] == "true",
                        "error": None if rec[9] == "" else float(rec[9]),
                        "margin": int(rec[10]),
                        "runtime_ms": int(rec[11]),
                        "seed": int(rec[12]),
                    }
                )
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from exc
    return out


def nearest_rank(sorted_vals: list[float], q: float) -> float:
    if not sorted_vals:
        raise InvalidParameterError("empty sample")
    idx = max(int(math.ceil(q * len(sorted_vals))) - 1, 0)
    return sorted_vals[idx]


def emit_report(csv_path: str) -> dict:
    """Per-cell medians/quantiles by the nearest-rank rule plus pass rates."""
    rows = load_rows(csv_path)
    cells: dict = {}
    for r in rows:
        key = (r["task"], r["family"], r["n"], r["d"], r["alpha"], r["eps"], r["delta"])
        cells.setdefault(key, []).append(r)
    out = {"cells": []}
    for key in sorted(cells, key=str):
        group = cells[key]
        errs = sorted(r["error"] for r in group if r["passed"])
        entry = {
            "task": key[0], "family": key[1], "n": key[2], "d": key[3],
            "alpha": key[4], "eps": key[5], "delta": key[6],
            "trials": len(group),
            "pass_rate": sum(r["passed"] for r in group) / len(group),
            "median_error": nearest_rank(errs, 0.5) if errs else None,
            "q25_error": nearest_rank(errs, 0.25) if errs else None,
            "q75_error": nearest_rank(errs, 0.75) if errs else None,
        }
        out["cells"].append(entry)
    return out


def report_table(summary: dict) -> str:
    cols = ("task", "family", "n", "d", "alpha", "eps", "delta",
            "trials", "pass_rate", "median_error", "q25_error", "q75_error")
    lines = ["# " + "\t".join(cols)]
    for c in summary["cells"]:
        lines.append("\t".join("nan" if c[k] is None else str(c[k]) for k in cols))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Config files

def _load_toml(path: str) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def config_from_dict(d: dict, dataset: Dataset | None = None) -> engine.MechanismConfig:
    task = d["task"]
    dd = dataset.rows.shape[1] if dataset is not None else int(d.get("d", 1))
    if "net" in d:
        net = DirectionNet.from_json(json.dumps(d["net"]))
    elif task == "cov":
        net = symmetric_net(dd, seed=int(d.get("net_seed", 0)))
    else:
        net = vector_net(dd, seed=int(d.get("net_seed", 0)))
    g = d.get("grid", {})
    if "center" in g:
        grid = engine.GridSpec(
            center=np.asarray(g["center"], dtype=float),
            half_widths=np.asarray(g["half_widths"], dtype=float),
            points_per_axis=int(g.get("points_per_axis", 33)),
            sphere_size=int(g.get("sphere_size", 0)),
        )
    elif task == "pca":
        grid = engine.GridSpec(sphere_size=int(g.get("sphere_size", 64)))
    elif dataset is not None:
        grid = engine.default_grid(task, dataset, float(d["alpha"]),
                                   points_per_axis=int(g.get("points_per_axis", 33)),
                                   seed=int(d.get("seed", 0)))
    else:
        raise InvalidParameterError("config needs either an explicit grid or a dataset")
    return engine.MechanismConfig(
        task=task, eps=float(d["eps"]), delta=float(d["delta"]), zeta=float(d.get("zeta", 0.05)),
        alpha=float(d["alpha"]), Delta=float(d["Delta"]),
        tau=None if task == "pca" else float(d["tau"]),
        grid=grid, net=net, seed=int(d.get("seed", 0)),
    )


# ---------------------------------------------------------------------------
# Argument parsing

def _add_common(p):
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hptr", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--family", required=True)
    g.add_argument("--task", default="mean")
    g.add_argument("--d", type=int, default=1)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--out", required=True)
    _add_common(g)

    c = sub.add_parser("certify", help="empirical resilience certificate")
    c.add_argument("--data", required=True)
    c.add_argument("--task", required=True)
    c.add_argument("--alpha", type=float, required=True)
    c.add_argument("--mode", default="sampled", choices=("sampled", "exhaustive"))
    c.add_argument("--count", type=int, default=2000)
    c.add_argument("--family", default="gaussian")
    _add_common(c)

    s = sub.add_parser("score", help="evaluate a task score at a parameter")
    s.add_argument("--data", required=True)
    s.add_argument("--task", required=True)
    s.add_argument("--theta", required=True, help="comma-separated parameter")
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--gamma-hat", type=float, default=None)
    _add_common(s)

    m = sub.add_parser("margin", help="safety margin of a dataset")
    m.add_argument("--data", required=True)
    m.add_argument("--config", required=True)
    m.add_argument("--mode", default="certified", choices=("certified", "exact"))
    m.add_argument("--alphabet", default=None, help="comma-separated record values (exact mode)")
    m.add_argument("--cap", type=int, default=None)
    _add_common(m)

    r = sub.add_parser("run", help="full propose-test-release run")
    r.add_argument("--data", default=None)
    r.add_argument("--config", default=None)
    r.add_argument("--margin-mode", default="certified", choices=("certified", "exact", "fixed"))
    r.add_argument("--margin-value", type=int, default=None)
    r.add_argument("--alphabet", default=None)
    # trial mode: regenerate everything from row-level fields
    r.add_argument("--task", default=None)
    r.add_argument("--family", default=None)
    r.add_argument("--n", type=int, default=None)
    r.add_argument("--d", type=int, default=1)
    r.add_argument("--alpha", type=float, default=None)
    r.add_argument("--eps", type=float, default=None)
    r.add_argument("--delta", type=float, default=None)
    _add_common(r)

    v = sub.add_parser("verify-dp", help="exact DP verification on a tiny universe")
    v.add_argument("--config", required=True)
    v.add_argument("--alphabet", required=True)
    v.add_argument("--n", type=int, required=True)
    v.add_argument("--margin-mode", default="exact", choices=("certified", "exact"))
    _add_common(v)

    w = sub.add_parser("sweep", help="run an experiment sweep to CSV")
    w.add_argument("--spec", required=True)
    w.add_argument("--out", default=None)
    _add_common(w)

    t = sub.add_parser("report", help="summarize a sweep CSV")
    t.add_argument("--csv", required=True)
    t.add_argument("--out", default=None, help="prefix for .json and .tsv outputs")
    return ap


def _load_dataset(prefix: str) -> Dataset:
    with open(prefix + ".json", encoding="utf-8") as fh:
        side = json.load(fh)
    with open(prefix + ".csv", encoding="utf-8") as fh:
        return Dataset.from_csv(fh.read(), labeled=side.get("labeled", False),
                                seed=side.get("seed", -1), spec=side.get("spec", ""))


def _cmd_gen(args) -> int:
    spec = _family_spec(args.family, args.d, args.task)
    ds = datagen.generate(spec, args.n, args.seed)
    with open(args.out + ".csv", "w", encoding="utf-8") as fh:
        fh.write(ds.to_csv())
    with open(args.out + ".json", "w", encoding="utf-8") as fh:
        fh.write(ds.sidecar_json())
    print(args.out + ".csv")
    return 0


def _cmd_certify(args) -> int:
    ds = _load_dataset(args.data)
    spec = _family_spec(args.family, ds.dim, args.task)
    reference = _reference_for(args.task, spec)
    net = symmetric_net(ds.dim, 0) if args.task == "cov" else vector_net(ds.dim, 0)
    cert = resilience.certify_resilience(args.task, ds.rows, args.alpha, reference, net,
                                         subset_mode=args.mode, count=args.count,
                                         seed=args.seed, y=ds.labels)
    print(cert.to_json())
    return 0


def _cmd_score(args) -> int:
    ds = _load_dataset(args.data)
    theta = np.array([float(v) for v in args.theta.split(",")])
    from .scores import cov_score, lr_score, mean_score, mean_score_euclidean, pca_score

    net = vector_net(ds.dim, args.seed)
    if args.task == "mean":
        val = mean_score(ds.rows, theta, args.alpha, net)
    elif args.task == "euclidean-mean":
        val = mean_score_euclidean(ds.rows, theta, args.alpha, net)
    elif args.task == "lr":
        gh = args.gamma_hat
        if gh is None:
            gh = max(engine.robust_noise_scale(ds.rows, ds.labels, args.alpha).gamma_hat, 1e-12)
        val = lr_score(ds.rows, ds.labels, theta, args.alpha, gh, net)
    elif args.task == "cov":
        d = ds.dim
        val = cov_score(ds.rows, theta.reshape(d, d), args.alpha, symmetric_net(d, args.seed))
    elif args.task == "pca":
        val = pca_score(ds.rows, theta / np.linalg.norm(theta), args.alpha, net)
    else:
        raise InvalidParameterError(args.task)
    print(repr(float(val)))
    return 0


def _parse_alphabet(s: str):
    return [float(v) for v in s.split(",")]


def _cmd_margin(args) -> int:
    ds = _load_dataset(args.data)
    cfg = config_from_dict(_load_toml(args.config)["mechanism"], dataset=ds)
    if args.mode == "exact":
        res = engine.margin_exact(ds, cfg, _parse_alphabet(args.alphabet), cap=args.cap)
    else:
        res = engine.margin_certified(ds, cfg, k_cap=args.cap)
    print(json.dumps({"value": res.value, "mode": res.mode, "cap": res.cap,
                      "witness": None if res.witness is None else [list(w) for w in res.witness]}))
    return 0


def _cmd_run(args) -> int:
    if args.task is not None:
        if None in (args.family, args.n, args.alpha, args.eps, args.delta):
            raise InvalidParameterError("trial mode needs --family --n --alpha --eps --delta")
        row, transcript = run_trial(args.task, args.family, args.n, args.d, args.alpha,
                                    args.eps, args.delta, args.seed)
        print(transcript.to_json())
        return 0
    if args.data is None or args.config is None:
        raise InvalidParameterError("run needs either --task trial flags or --data and --config")
    ds = _load_dataset(args.data)
    cfg = config_from_dict(_load_toml(args.config)["mechanism"], dataset=ds)
    alphabet = _parse_alphabet(args.alphabet) if args.alphabet else None
    transcript = engine.run(ds, cfg, margin_mode=args.margin_mode,
                            rng=engine.derive_rng(args.seed, 11), alphabet=alphabet,
                            margin_value=args.margin_value)
    print(transcript.to_json())
    return 0


def _cmd_verify_dp(args) -> int:
    cfg_dict = _load_toml(args.config)["mechanism"]
    alphabet = _parse_alphabet(args.alphabet)
    n = args.n

    import itertools

    universe = [np.array(tup, dtype=float)[:, None] for tup in itertools.product(alphabet, repeat=n)]
    base = Dataset(rows=universe[0], labels=None, provenance="universe", seed=args.seed)
    cfg = config_from_dict(cfg_dict, dataset=base)

    law_cache: dict = {}

    def mech(rows):
        key = tuple(sorted(float(v) for v in rows[:, 0]))
        if key not in law_cache:
            ds = Dataset(rows=rows, labels=None, provenance="universe", seed=args.seed)
            law_cache[key] = engine.output_law(ds, cfg, margin_mode=args.margin_mode,
                                               alphabet=alphabet)
        return law_cache[key]

    report = verify_dp(mech, universe, cfg.eps, cfg.delta)
    print(report.to_json())
    return 0 if report.passed else 1


def _cmd_sweep(args) -> int:
    raw = _load_toml(args.spec)["sweep"]
    spec = SweepSpec(
        task=raw["task"],
        family=raw.get("family", "gaussian"),
        d=int(raw.get("d", 2)),
        n_grid=list(raw["n"]),
        alpha_grid=list(raw.get("alpha", [0.1])),
        eps_grid=list(raw.get("eps", [2.0])),
        delta=float(raw.get("delta", 1e-6)),
        corruption_grid=list(raw.get("corruption", [0.0])),
        adversary=raw.get("adversary", "mean-shift"),
        trials=int(raw.get("trials", 4)),
        seed=int(raw.get("seed", args.seed)),
        out=args.out or raw.get("out", "sweep.csv"),
        zeta=float(raw.get("zeta", 0.05)),
        certify_count=int(raw.get("certify_count", 400)),
    )
    rows = run_experiment(spec)
    print(f"{spec.out}: {len(rows)} rows")
    return 0


def _cmd_report(args) -> int:
    summary = emit_report(args.csv)
    text = json.dumps(summary, indent=2, sort_keys=True)
    if args.out:
        with open(args.out + ".json", "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        with open(args.out + ".tsv", "w", encoding="utf-8") as fh:
            fh.write(report_table(summary))
        print(args.out + ".json")
    else:
        print(text)
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "certify": _cmd_certify,
    "score": _cmd_score,
    "margin": _cmd_margin,
    "run": _cmd_run,
    "verify-dp": _cmd_verify_dp,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.cmd](args)
    except ResourceError as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return 3
    except (HptrError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
