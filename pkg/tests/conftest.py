import numpy as np
import pytest
from scipy.special import logsumexp

from kdm_helio import synthetic
from kdm_helio.kdm import KdmModel


def reference_mean_ll(z, mu, logits, log_sigma):
    """Mean log-likelihood in standardized units, written independently of the package."""
    s = 0.5 * np.exp(log_sigma)
    d = z.shape[1]
    log_w = logits - logsumexp(logits)
    sq = ((z[:, None, :] - mu[None, :, :]) ** 2).sum(axis=2)
    comp = log_w[None, :] - sq / (2 * s * s) - d * np.log(s) - 0.5 * d * np.log(2 * np.pi)
    return float(np.mean(logsumexp(comp, axis=1)))


def random_model(rng, m=None, d=1, sigma=None, scaled=True):
    m = m or int(rng.integers(1, 9))
    mu = rng.normal(size=(m, d))
    logits = rng.normal(scale=0.5, size=m)
    sigma = sigma or float(rng.uniform(0.3, 1.5))
    mean = rng.normal(scale=10, size=d) if scaled else np.zeros(d)
    scale = rng.uniform(0.5, 50, size=d) if scaled else np.ones(d)
    return KdmModel(mu, logits, np.log(sigma), mean, scale)


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


@pytest.fixture
def unit_model():
    """Single component at 0, sigma = 0.1, identity scaling."""
    return KdmModel.from_mixture([0.0], sigma=0.1)


@pytest.fixture(scope="session")
def synthetic_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("fixture") / "psp_like.csv"
    synthetic.write_csv(path, synthetic.solar_wind_table(6000, seed=7))
    return path
