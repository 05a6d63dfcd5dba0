import numpy as np
import pytest

from hptr import datagen, resilience, scores


@pytest.fixture(scope="session")
def rng0():
    return np.random.default_rng(0)


def make_certified_instance(seed, n=2000, d=2, alpha=0.1, corrupt=True):
    """Gaussian instance with an adversarial corruption and a sampled-mode
    certificate against the true (mu, Sigma); shared by several suites."""
    mu = np.zeros(d)
    sigma = np.diag(1.0 + 0.5 * np.arange(d))
    data = datagen.generate(datagen.Gaussian(mu=mu, sigma=sigma), n, seed)
    if corrupt:
        spec = resilience.CorruptionSpec(fraction=alpha / 5.5, adversary="tail-plant",
                                         direction=np.eye(d)[0], magnitude=3.0,
                                         seed=seed ^ 0xABC, center=mu)
        data = resilience.corrupt_dataset(data, spec)
    net = scores.vector_net(d, seed=0, n_random=8, n_sphere=12 if d in (2, 3) else 0)
    cert = resilience.certify_resilience("mean", data.rows, alpha, (mu, sigma), net,
                                         subset_mode="sampled", count=500, seed=seed)
    return {"data": data, "net": net, "cert": cert, "mu": mu, "sigma": sigma,
            "alpha": alpha, "n": n, "d": d}


@pytest.fixture(scope="session")
def certified_instances():
    return [make_certified_instance(seed) for seed in range(20)]
