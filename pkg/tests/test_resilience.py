import itertools
import math

import numpy as np
import pytest

from hptr import datagen, engine, resilience, scores
from hptr.exceptions import DomainError, InvalidParameterError


def two_point_instance():
    X = np.array([[-1.0], [1.0]])
    net = scores.vector_net(1, seed=0)
    return X, net


class TestCertify:
    def test_two_point_alpha_zero(self):
        X, net = two_point_instance()
        cert = resilience.certify_resilience("mean", X, 0.0, (np.zeros(1), np.eye(1)), net,
                                             subset_mode="exhaustive")
        assert cert.rho1 == pytest.approx(0.0, abs=1e-12)
        assert cert.rho2 == pytest.approx(0.0, abs=1e-12)

    def test_two_point_alpha_half(self):
        # T = {+1} admissible: |mean - 0| / 1 = 1; second moment deviation 0
        X, net = two_point_instance()
        cert = resilience.certify_resilience("mean", X, 0.5, (np.zeros(1), np.eye(1)), net,
                                             subset_mode="exhaustive")
        assert cert.rho1 == pytest.approx(1.0, abs=1e-12)
        assert cert.rho2 == pytest.approx(0.0, abs=1e-12)

    def test_witness_replays_to_rho(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((12, 2))
        net = scores.vector_net(2, seed=1, n_random=4, n_sphere=0)
        cert = resilience.certify_resilience("mean", X, 0.25, (np.zeros(2), np.eye(2)), net,
                                             subset_mode="exhaustive")
        for name in ("rho1", "rho2"):
            assert resilience.replay_witness(cert, X, net, name) == pytest.approx(cert.rho[name], abs=1e-12)

    def test_sampled_lower_bounds_exhaustive(self):
        rng = np.random.default_rng(1)
        net = scores.vector_net(1, seed=0)
        for seed in range(50):
            X = np.random.default_rng(seed).standard_normal((10, 1))
            full = resilience.certify_resilience("mean", X, 0.3, (np.zeros(1), np.eye(1)), net,
                                                 subset_mode="exhaustive")
            samp = resilience.certify_resilience("mean", X, 0.3, (np.zeros(1), np.eye(1)), net,
                                                 subset_mode="sampled", count=10**4, seed=seed)
            assert samp.rho1 <= full.rho1 + 1e-12
            assert samp.rho2 <= full.rho2 + 1e-12

    def test_monotone_in_alpha_and_net(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((60, 2))
        small = scores.vector_net(2, seed=3, n_random=4, n_sphere=0)
        big_elements = np.concatenate([small.elements,
                                       scores.vector_net(2, seed=9, n_random=6, n_sphere=0).elements])
        big = scores.DirectionNet("vector", 2, big_elements, seed=-1, n_random=0, n_sphere=0)
        ref = (np.zeros(2), np.eye(2))
        prev = 0.0
        for alpha in (0.05, 0.1, 0.2, 0.3):
            cert = resilience.certify_resilience("mean", X, alpha, ref, small, count=300, seed=5)
            assert cert.rho1 >= prev - 1e-12
            prev = cert.rho1
        a = resilience.certify_resilience("mean", X, 0.2, ref, small, count=300, seed=5)
        b = resilience.certify_resilience("mean", X, 0.2, ref, big, count=300, seed=5)
        assert b.rho1 >= a.rho1 - 1e-12

    def test_bad_reference_rejected(self):
        X, net = two_point_instance()
        with pytest.raises(DomainError):
            resilience.certify_resilience("mean", X, 0.1, (np.zeros(1), np.zeros((1, 1))), net)
        with pytest.raises(DomainError):
            resilience.certify_resilience("lr", X, 0.1, (np.zeros(1), np.eye(1), 0.0), net,
                                          y=np.zeros(2))

    def test_lr_and_pca_and_cov_stats(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((200, 2))
        y = X @ np.array([1.0, 2.0]) + 0.5 * rng.standard_normal(200)
        net = scores.vector_net(2, seed=0, n_random=4, n_sphere=0)
        lr = resilience.certify_resilience("lr", X, 0.1, (np.array([1.0, 2.0]), np.eye(2), 0.5),
                                           net, count=200, seed=0, y=y)
        assert set(lr.rho) == {"rho1", "rho2", "rho3", "rho4"}
        pca = resilience.certify_resilience("pca", X, 0.1, (np.eye(2),), net, count=200, seed=0)
        assert set(pca.rho) == {"rho1", "rho2"}
        sym = scores.symmetric_net(2, seed=0, n_random=4)
        cov = resilience.certify_resilience("cov", X, 0.1, (np.eye(2),), sym, count=200, seed=0)
        assert set(cov.rho) == {"rho1", "rho2"}
        for cert in (lr, pca, cov):
            assert all(v >= 0 for v in cert.rho.values())

    def test_json_round_trip(self):
        X, net = two_point_instance()
        cert = resilience.certify_resilience("mean", X, 0.5, (np.zeros(1), np.eye(1)), net,
                                             subset_mode="exhaustive")
        import json

        obj = json.loads(cert.to_json())
        assert obj["task"] == "mean" and obj["rho"]["rho1"] == pytest.approx(1.0)


class TestTailBoundLemma:
    def test_exhaustive_small_subset_deviations(self):
        # with the exact (exhaustive) certificate rho_hat at level alpha, every
        # subset T with alpha_t n <= |T| <= alpha n deviates by at most
        # ((2 - alpha_t) / alpha_t) rho_hat
        rng = np.random.default_rng(7)
        X = rng.standard_normal((12, 1))
        alpha = 0.5
        net = scores.vector_net(1, seed=0)
        cert = resilience.certify_resilience("mean", X, alpha, (np.zeros(1), np.eye(1)), net,
                                             subset_mode="exhaustive")
        n = 12
        for size in range(2, int(alpha * n) + 1):
            alpha_t = size / n
            bound = (2 - alpha_t) / alpha_t * cert.rho1
            for T in itertools.combinations(range(n), size):
                dev = abs(X[list(T), 0].mean())
                assert dev <= bound + 1e-9


class TestCorruptGoodBounds:
    def test_trimmed_stats_stay_close_on_corrupt_good_sets(self):
        # small alpha keeps the trim bias inside [0.9, 1.1]; corruption is
        # alpha/5.5 of the records
        alpha, n, d = 0.01, 20000, 2
        sigma = np.diag([1.0, 2.0])
        ds = datagen.generate(datagen.Gaussian(mu=np.zeros(d), sigma=sigma), n, seed=11)
        spec = resilience.CorruptionSpec(fraction=alpha / 5.5, adversary="tail-plant",
                                         direction=np.eye(d)[0], magnitude=10.0, seed=1,
                                         center=np.zeros(d))
        corr = resilience.corrupt_dataset(ds, spec)
        net = scores.vector_net(d, seed=0, n_random=6, n_sphere=8)
        cert = resilience.certify_resilience("mean", corr.rows, alpha, (np.zeros(d), sigma), net,
                                             count=300, seed=2)
        from hptr.robust1d import trimmed_mean_var

        for v in net.elements:
            proj = corr.rows @ v
            mom = trimmed_mean_var(proj, alpha)
            sig_v = math.sqrt(v @ sigma @ v)
            assert abs(mom.mean - 0.0) <= 6 * cert.rho1 * sig_v
            assert 0.9 * sig_v <= math.sqrt(mom.var) <= 1.1 * sig_v


class TestCorruption:
    def test_zero_fraction_identity(self):
        ds = datagen.generate(datagen.Gaussian(mu=np.zeros(2), sigma=np.eye(2)), 50, seed=0)
        out = resilience.corrupt_dataset(ds, resilience.CorruptionSpec(fraction=0.0))
        assert np.array_equal(out.rows, ds.rows)

    def test_mean_shift_replaces_exact_count(self):
        mu = np.array([1.0, -1.0])
        ds = datagen.generate(datagen.Gaussian(mu=mu, sigma=np.eye(2)), 100, seed=1)
        spec = resilience.CorruptionSpec(fraction=0.1, adversary="mean-shift",
                                         direction=np.eye(2)[0], magnitude=10.0, seed=3, center=mu)
        out = resilience.corrupt_dataset(ds, spec)
        changed = np.flatnonzero(np.any(out.rows != ds.rows, axis=1))
        assert len(changed) == 10
        assert np.allclose(out.rows[changed], mu + 10.0 * np.eye(2)[0])

    def test_hamming_accounting(self):
        ds = datagen.generate(datagen.Gaussian(mu=np.zeros(3), sigma=np.eye(3)), 83, seed=2)
        for adversary in ("mean-shift", "variance-inflate", "tail-plant"):
            for fraction in (0.05, 0.11, 0.2):
                spec = resilience.CorruptionSpec(fraction=fraction, adversary=adversary,
                                                 direction=np.eye(3)[1], magnitude=7.0,
                                                 factor=5.0, seed=4)
                out = resilience.corrupt_dataset(ds, spec)
                dh = int(np.sum(np.any(out.rows != ds.rows, axis=1)))
                assert dh == int(math.floor(fraction * 83))

    def test_greedy_needs_score_fn(self):
        ds = datagen.generate(datagen.Gaussian(mu=np.zeros(1), sigma=np.eye(1)), 20, seed=3)
        with pytest.raises(InvalidParameterError):
            resilience.corrupt_dataset(ds, resilience.CorruptionSpec(fraction=0.1, adversary="greedy-score"))

    def test_greedy_beats_mean_shift_mostly(self):
        # head-to-head: the greedy adversary raises the score at the true mean
        # at least as much as the fixed mean shift on >= 80% of trials
        alpha, n, d = 0.1, 300, 1
        wins = 0
        trials = 50
        probe = scores.vector_net(d, seed=3, n_random=0, n_sphere=0)
        for seed in range(trials):
            ds = datagen.generate(datagen.Gaussian(mu=np.zeros(d), sigma=np.eye(d)), n, seed=seed)

            def score_fn(rec):
                return scores.mean_score(rec, np.zeros(d), alpha, probe)

            frac = alpha / 5.5
            shift = resilience.corrupt_dataset(
                ds, resilience.CorruptionSpec(fraction=frac, adversary="mean-shift",
                                              direction=np.eye(d)[0], magnitude=10.0,
                                              seed=seed, center=np.zeros(d)))
            greedy = resilience.corrupt_dataset(
                ds, resilience.CorruptionSpec(fraction=frac, adversary="greedy-score",
                                              seed=seed, budget=600, center=np.zeros(d)),
                score_fn=score_fn)
            if score_fn(greedy.rows) >= score_fn(shift.rows) - 1e-12:
                wins += 1
        assert wins >= 0.8 * trials


@pytest.fixture(scope="module")
def instance():
    n, d, alpha = 2000, 1, 0.1
    ds = datagen.generate(datagen.Gaussian(mu=np.zeros(d), sigma=np.eye(d)), n, seed=5)
    net = scores.vector_net(d, seed=0)
    cert = resilience.certify_resilience("mean", ds.rows, alpha, (np.zeros(d), np.eye(d)),
                                         net, count=400, seed=1)
    rho = cert.rho1
    cfg = engine.MechanismConfig(
        task="mean", eps=2.0, delta=1e-6, zeta=0.05, alpha=alpha,
        Delta=110 * rho / (alpha * n), tau=42 * rho,
        grid=engine.default_grid("mean", ds, alpha, points_per_axis=61),
        net=net, seed=5)
    return ds, cfg, (np.zeros(d), np.eye(d)), rho


class TestUtilityAssumptions:

    def test_assumptions_hold_on_clean_instance(self, instance):
        ds, cfg, ref, rho = instance
        rep = resilience.check_utility_assumptions(ds, cfg, ref, (31.8, 10.2, 3.0), rho,
                                                   rng=np.random.default_rng(0))
        # (d) robustness gap within 10.2 rho on the threshold ball
        assert rep.d, rep.measurements
        assert rep.a, rep.measurements
        assert rep.b, rep.measurements

    def test_bounded_sensitivity_needs_large_n(self, instance):
        # the literal inequality with Delta = 110 rho/(alpha n): false at desk
        # n, true once n clears the constant
        _, cfg, _, rho = instance
        alpha, eps, delta, zeta = cfg.alpha, cfg.eps, cfg.delta, cfg.zeta
        small, _ = resilience.bounded_sensitivity_holds(110 * rho / (alpha * 2000), rho,
                                                        eps, delta, zeta, p=1)
        big, bound = resilience.bounded_sensitivity_holds(110 * rho / (alpha * 10**6), rho,
                                                          eps, delta, zeta, p=1)
        assert not small
        assert big
        # threshold scale: n >= 110 / (alpha * bound / rho)
        n_min = 110 * rho / (alpha * bound)
        assert 10**5 < n_min < 10**6

    def test_resolution_error_on_coarse_grid(self, instance):
        ds, cfg, ref, rho = instance
        from dataclasses import replace

        from hptr.exceptions import ResolutionError

        coarse = replace(cfg, grid=engine.GridSpec(center=np.array([50.0]),
                                                   half_widths=np.array([1.0]),
                                                   points_per_axis=3))
        with pytest.raises(ResolutionError):
            resilience.check_utility_assumptions(ds, coarse, ref, (31.8, 10.2, 3.0), rho,
                                                 rng=np.random.default_rng(0))

    def test_degenerate_inner_ball_reported(self, instance):
        ds, cfg, ref, rho = instance
        from dataclasses import replace

        tiny = replace(cfg, tau=cfg.Delta * (cfg.k_star + 1) / 2, k_star=-1)
        rep = resilience.check_utility_assumptions(ds, tiny, ref, (31.8, 10.2, 3.0), rho,
                                                   rng=np.random.default_rng(0))
        assert not rep.a
        assert rep.reasons.get("a") == "empty inner set"
