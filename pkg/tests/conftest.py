import numpy as np
import pytest

from mpdopt.gp import Dataset, GradientBelief, KernelParams, fit_gp


def random_belief(rng, d, mu_scale=1.0, eig_lo=0.05, eig_hi=4.0):
    """PD gradient belief with controlled eigenvalue range."""
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    eigs = rng.uniform(eig_lo, eig_hi, d)
    sigma = Q @ np.diag(eigs) @ Q.T
    mu = mu_scale * rng.standard_normal(d)
    return GradientBelief(mu, sigma)


def random_gp(rng, d=3, n=8, noise=0.05, outputscale=1.5):
    """Small fitted-but-not-optimized GP on random data."""
    params = KernelParams(rng.uniform(0.4, 1.2, d), outputscale, noise)
    data = Dataset(d, 512)
    for x in rng.uniform(0.0, 1.0, (n, d)):
        data.append(x, float(rng.standard_normal()))
    return fit_gp(data, refit=False, init=params)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
