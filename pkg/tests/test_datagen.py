import math

import numpy as np
import pytest

from hptr import datagen, resilience, scores
from hptr.exceptions import DomainError, InvalidParameterError


class TestGenerate:
    def test_same_seed_bit_identical(self):
        spec = datagen.Gaussian(mu=np.zeros(3), sigma=np.eye(3))
        a = datagen.generate(spec, 500, seed=7)
        b = datagen.generate(spec, 500, seed=7)
        assert a.rows.tobytes() == b.rows.tobytes()

    def test_gaussian_covariance_concentration(self):
        sigma = np.array([[2.0, 0.4], [0.4, 1.0]])
        n = 10**5
        ds = datagen.generate(datagen.Gaussian(mu=np.zeros(2), sigma=sigma), n, seed=1)
        emp = ds.rows.T @ ds.rows / n - np.outer(ds.rows.mean(0), ds.rows.mean(0))
        assert np.linalg.norm(emp - sigma, 2) <= 5 * np.linalg.norm(sigma, 2) / math.sqrt(n)

    def test_student_t_fourth_moment(self):
        nu, n = 8.0, 10**6
        ds = datagen.generate(datagen.StudentT(nu=nu, sigma=np.eye(1)), n, seed=2)
        m4 = np.mean(ds.rows[:, 0] ** 4)
        expect = 3 * (nu - 2) / (nu - 4)  # = 4.5 at nu = 8
        assert expect == 4.5
        assert abs(m4 - expect) <= 0.1 * expect

    def test_student_t_needs_heavy_dof(self):
        with pytest.raises(DomainError):
            datagen.generate(datagen.StudentT(nu=3.0, sigma=np.eye(1)), 10, seed=0)

    def test_linear_labels_exact_for_independent_noise(self):
        spec = datagen.LinearModel(beta=np.array([1.0, -2.0]), sigma_x=np.eye(2),
                                   noise=datagen.NoiseSpec(kind="independent", gamma=0.0))
        ds = datagen.generate(spec, 200, seed=3)
        assert np.allclose(ds.labels, ds.rows @ spec.beta, atol=1e-12)

    def test_dependent_noise_moments(self):
        spec = datagen.LinearModel(beta=np.zeros(2), sigma_x=np.eye(2),
                                   noise=datagen.NoiseSpec(kind="dependent", gamma=1.5, coupling=1.0))
        ds = datagen.generate(spec, 200000, seed=4)
        eta = ds.labels
        # E[eta^2] = gamma^2 and E[x eta] = 0 by the independent sign
        assert np.mean(eta**2) == pytest.approx(2.25, rel=0.02)
        assert np.abs(ds.rows.T @ eta / len(eta)).max() < 0.02

    def test_subgaussian_bounded_is_bounded(self):
        spec = datagen.SubGaussianBounded(mu=np.zeros(2), sigma=np.eye(2), proxy_factor=2.5)
        ds = datagen.generate(spec, 5000, seed=5)
        vf = math.sqrt(1.0 / (1 - 2 * 2.5 * math.exp(-2.5**2 / 2) / math.sqrt(2 * math.pi) / math.erf(2.5 / math.sqrt(2))))
        assert np.abs(ds.rows).max() <= 2.5 * vf + 1e-9
        emp = np.diag(ds.rows.T @ ds.rows / 5000)
        assert np.allclose(emp, 1.0, atol=0.1)

    def test_csv_round_trip(self):
        spec = datagen.LinearModel(beta=np.array([2.0]), sigma_x=np.eye(1),
                                   noise=datagen.NoiseSpec(kind="independent", gamma=1.0))
        ds = datagen.generate(spec, 30, seed=6)
        again = datagen.Dataset.from_csv(ds.to_csv(), labeled=True)
        assert np.array_equal(again.rows, ds.rows)
        assert np.array_equal(again.labels, ds.labels)


class TestHardPair:
    def test_moments(self):
        alpha, k = 0.25, 4
        p1 = datagen.hard_pair(alpha, k, 1)
        p2 = datagen.hard_pair(alpha, k, 2)
        m1 = sum(a * p for a, p in p1.atoms)
        m2 = sum(a * p for a, p in p2.atoms)
        assert m2 - m1 == pytest.approx(2 * alpha ** (1 - 1 / k), abs=1e-12)
        # total variation between the sides is exactly alpha
        sup = set(a for a, _ in p1.atoms) | set(a for a, _ in p2.atoms)
        tv = 0.5 * sum(abs(p1.prob(a) - p2.prob(a)) for a in sup)
        assert tv == pytest.approx(alpha, abs=1e-12)
        # k-th absolute moment 2 - alpha, second moment 1 - alpha + alpha^(1-2/k)
        mk = sum(abs(a) ** k * p for a, p in p1.atoms)
        assert mk == pytest.approx(2 - alpha, abs=1e-12)
        m2nd = sum(a**2 * p for a, p in p1.atoms)
        assert m2nd == pytest.approx(1 - alpha + alpha ** (1 - 2 / k), abs=1e-12)

    def test_parameter_validation(self):
        with pytest.raises(InvalidParameterError):
            datagen.hard_pair(0.7, 4, 1)
        with pytest.raises(InvalidParameterError):
            datagen.hard_pair(0.1, 2, 1)

    def test_sides_distinguishable_but_corruptible(self):
        alpha, k, n = 0.2, 4, 10**4
        s1 = datagen.generate(datagen.HardPair(alpha, k, 1), n, seed=8)
        s2 = datagen.generate(datagen.HardPair(alpha, k, 2), n, seed=9)
        from hptr.robust1d import trimmed_mean_var

        t1 = trimmed_mean_var(s1.rows[:, 0], alpha).mean
        t2 = trimmed_mean_var(s2.rows[:, 0], alpha).mean
        gap = t2 - t1
        assert gap >= 0.5 * 2 * alpha ** (1 - 1 / k)
        # an alpha-corruption maps side 1 into (a sample from) side 2: move the
        # negative spike to the positive one
        rows = s1.rows.copy()
        spike = alpha ** (-1.0 / k)
        neg = np.flatnonzero(np.isclose(rows[:, 0], -spike))
        rows[neg, 0] = spike
        t1_corr = trimmed_mean_var(rows[:, 0], alpha).mean
        assert abs(t1_corr - t2) <= 0.15 * abs(gap)
        assert len(neg) <= alpha * n * 1.2


class TestResilienceOfCleanGaussian:
    def test_certified_rho1_scales_like_family_formula(self):
        # desk-scale echo of the sub-Gaussian resilience: certified rho1 stays
        # below a calibrated multiple of alpha sqrt(log(1/alpha)) on >= 45/50 seeds
        alpha, d = 0.2, 1
        n = int(200 * d / alpha**2)
        net = scores.vector_net(d, seed=0)
        target = alpha * math.sqrt(math.log(1 / alpha))
        ok = 0
        for seed in range(50):
            ds = datagen.generate(datagen.Gaussian(mu=np.zeros(d), sigma=np.eye(d)), n, seed=seed)
            cert = resilience.certify_resilience("mean", ds.rows, alpha, (np.zeros(d), np.eye(d)),
                                                 net, subset_mode="sampled", count=120, seed=seed)
            # calibrated constant: measured ~1.1-1.3 for the trim-aligned sampler
            if cert.rho1 <= 2.0 * target:
                ok += 1
        assert ok >= 45
