"""Shared oracles that do not depend on the package internals."""
import numpy as np


def rank_error(sorted_data, q, value):
    """Distance from ``q`` to the interval of ranks that ``value`` occupies in the data."""
    n = sorted_data.size
    lo = np.searchsorted(sorted_data, value, side="left") / n
    hi = np.searchsorted(sorted_data, value, side="right") / n
    return float(np.maximum(0.0, np.maximum(lo - q, q - hi)).max())


def adversarial_inputs(n, seed=0):
    rng = np.random.default_rng(seed)
    half = n // 2
    return {
        "sorted": np.sort(rng.normal(size=n)),
        "reverse": np.sort(rng.normal(size=n))[::-1].copy(),
        "constant": np.full(n, 3.25),
        "bimodal": np.concatenate([rng.normal(-50, 1, half), rng.normal(50, 0.01, n - half)]),
        "lognormal": rng.lognormal(0, 2.5, n),
    }


def two_pass(values):
    v = np.asarray(values, dtype=np.float64)
    mean = float(np.sum(v) / v.size)
    dev = v - mean
    return mean, float(np.dot(dev, dev))
