import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kdm_helio.sketch import QuantileSketch
from kdm_helio.stats import tree_reduce

from .helpers import adversarial_inputs, rank_error

QS = np.linspace(0.001, 0.999, 999)


@pytest.mark.parametrize("kind", ["sorted", "reverse", "constant", "bimodal", "lognormal"])
@pytest.mark.parametrize("n_chunks", [1, 64])
def test_rank_error_adversarial(kind, n_chunks):
    data = adversarial_inputs(10**6, seed=1)[kind]
    parts = [QuantileSketch().update(c) for c in np.array_split(data, n_chunks)]
    sk = tree_reduce(parts, lambda a, b: a.merge(b))
    assert sk.count == data.size
    err = rank_error(np.sort(data), QS, sk.quantile(QS))
    assert err <= 0.005


def test_centroid_budget():
    sk = QuantileSketch(500).update(np.random.default_rng(0).normal(size=200_000))
    assert len(sk) <= 520


def test_extremes_and_empty():
    sk = QuantileSketch()
    with pytest.raises(ValueError):
        sk.quantile(0.5)
    sk.update([np.nan, 4.0, -1.0, 2.0])
    assert sk.count == 3
    assert sk.quantile(0.0) == -1.0 and sk.quantile(1.0) == 4.0
    with pytest.raises(ValueError):
        sk.quantile(1.5)


def test_merge_does_not_mutate():
    a = QuantileSketch().update(np.arange(100.0))
    b = QuantileSketch().update(np.arange(100.0, 200.0))
    before = a.means.copy()
    c = a.merge(b)
    np.testing.assert_array_equal(a.means, before)
    assert c.count == 200 and c.min == 0.0 and c.max == 199.0


def test_merge_order_independent():
    rng = np.random.default_rng(3)
    a = QuantileSketch().update(rng.normal(size=5000))
    b = QuantileSketch().update(rng.exponential(size=7000))
    np.testing.assert_array_equal(a.merge(b).means, b.merge(a).means)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=3000), st.integers(1, 8))
def test_rank_error_property(values, n_chunks):
    data = np.asarray(values)
    parts = [QuantileSketch().update(c) for c in np.array_split(data, n_chunks) if c.size]
    sk = tree_reduce(parts, lambda a, b: a.merge(b))
    # interpolating between neighbouring order statistics costs up to 1/n in rank,
    # exact linear-interpolation quantiles included
    assert rank_error(np.sort(data), QS, sk.quantile(QS)) <= 0.005 + 1.0 / data.size
