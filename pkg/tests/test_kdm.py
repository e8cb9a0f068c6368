import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from kdm_helio import kdm
from kdm_helio.errors import (
    InvalidArgumentError,
    MissingDataError,
    UnsupportedDimensionError,
)
from kdm_helio.kdm import AnomalyMode, KdmModel, TrainConfig

from .conftest import random_model, reference_mean_ll

# log(1 / (sqrt(2 pi) * 0.05)), 30-digit mpmath evaluation
LOG_PEAK_S005 = 2.07679374034931825165489383974


def test_kernel_identity_and_closed_form():
    assert kdm.kernel_eval([0.3], [0.3], 0.1) == 1.0
    assert kdm.kernel_eval([1.0, -2.0], [1.0, -2.0], 0.7) == 1.0
    expected = float(mpmath.exp(-mpmath.mpf("0.01") / mpmath.mpf("0.01")))
    assert kdm.kernel_eval([0.0], [0.1], 0.1) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(0.367879441171442, rel=1e-14)


def test_kernel_symmetry(rng):
    for _ in range(1000):
        x, y = rng.normal(size=2), rng.normal(size=2)
        s = float(rng.uniform(0.05, 3))
        assert kdm.kernel_eval(x, y, s) == kdm.kernel_eval(y, x, s)


@pytest.mark.parametrize("args", [([np.nan], [0.0], 0.1), ([0.0], [np.inf], 0.1),
                                  ([0.0], [0.0], 0.0), ([0.0], [0.0], -1.0),
                                  ([0.0, 1.0], [0.0], 1.0)])
def test_kernel_rejects_bad_input(args):
    with pytest.raises(InvalidArgumentError):
        kdm.kernel_eval(*args)


def test_squared_kernel_is_gaussian_with_half_sigma():
    # k^2 normalized over the line is N(y, (sigma/2)^2)
    sigma = 0.37
    val, _ = integrate.quad(lambda t: kdm.kernel_eval([t], [0.0], sigma) ** 2, -5, 5)
    assert val == pytest.approx(math.sqrt(2 * math.pi) * sigma / 2, rel=1e-10)


def test_log_density_single_component(unit_model):
    oracle = float(mpmath.log(1 / (mpmath.sqrt(2 * mpmath.pi) * mpmath.mpf("0.05"))))
    assert oracle == pytest.approx(LOG_PEAK_S005, rel=1e-15)
    assert kdm.log_density(unit_model, 0.0) == pytest.approx(oracle, rel=1e-13)


def test_log_density_symmetric_pair(rng):
    model = KdmModel.from_mixture([-1.3, 1.3], sigma=0.8)
    t = rng.uniform(-4, 4, 100)
    np.testing.assert_allclose(kdm.log_density(model, t), kdm.log_density(model, -t), rtol=1e-13)


def test_log_density_far_tail_is_finite(unit_model):
    # 300 component stds away: exp underflows, log-sum-exp must not
    val = kdm.log_density(unit_model, 300 * 0.05)
    assert math.isfinite(val)
    assert val == pytest.approx(LOG_PEAK_S005 - 0.5 * 300**2, rel=1e-12)


def test_log_density_dimension_mismatch(unit_model):
    with pytest.raises(InvalidArgumentError):
        kdm.log_density(unit_model, [[0.0, 1.0]])
    m2 = KdmModel.from_mixture([[0.0, 0.0]], sigma=0.5)
    with pytest.raises(InvalidArgumentError):
        kdm.log_density(m2, 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_density_integrates_to_one_1d(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, m=6)
    s = model.component_std * model.standardize_scale[0]
    centers = np.sort(model.component_means[:, 0])
    lo, hi = centers[0] - 8 * s, centers[-1] + 8 * s
    total, _ = integrate.quad(lambda t: math.exp(kdm.log_density(model, t)), lo, hi,
                              points=list(centers), limit=500)
    assert 0.999 <= total <= 1.001


def test_log_likelihood_examples(unit_model):
    data = np.zeros(17)
    assert kdm.log_likelihood(unit_model, data) == pytest.approx(17 * LOG_PEAK_S005, rel=1e-13)
    assert kdm.log_likelihood(unit_model, [0.03]) == kdm.log_density(unit_model, 0.03)
    with pytest.raises(InvalidArgumentError):
        kdm.log_likelihood(unit_model, np.empty((0, 1)))


def test_log_likelihood_parallel_and_permutation(rng):
    model = random_model(rng, m=5, d=2)
    data = model.destandardize(rng.normal(size=(5000, 2)))
    ref = kdm.log_likelihood(model, data)
    par = kdm.log_likelihood(model, data, parallel=True, block_rows=333)
    perm = kdm.log_likelihood(model, data[rng.permutation(5000)], parallel=True, block_rows=333)
    assert par == pytest.approx(ref, rel=1e-9)
    assert perm == pytest.approx(ref, rel=1e-9)
    assert kdm.log_likelihood(model, data, parallel=True, block_rows=333) == par


def _fd_gradients(model, z, h=1e-5):
    mu, logits, ls = model.components.copy(), model.weight_logits.copy(), model.log_sigma

    def f(mu_, lg_, ls_):
        return reference_mean_ll(z, mu_, lg_, ls_)

    g_mu = np.zeros_like(mu)
    for idx in np.ndindex(mu.shape):
        p, m = mu.copy(), mu.copy()
        p[idx] += h
        m[idx] -= h
        g_mu[idx] = (f(p, logits, ls) - f(m, logits, ls)) / (2 * h)
    g_lg = np.zeros_like(logits)
    for i in range(logits.size):
        p, m = logits.copy(), logits.copy()
        p[i] += h
        m[i] -= h
        g_lg[i] = (f(mu, p, ls) - f(mu, m, ls)) / (2 * h)
    g_ls = (f(mu, logits, ls + h) - f(mu, logits, ls - h)) / (2 * h)
    return g_mu, g_lg, g_ls


def _rel(a, b):
    a, b = np.atleast_1d(a), np.atleast_1d(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300))


@pytest.mark.parametrize("seed", range(10))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    d = 1 + seed % 2
    model = random_model(rng, d=d)
    n = int(rng.integers(4, 33))
    z = model.components[rng.integers(0, model.n_components, n)] + rng.normal(scale=0.6, size=(n, d))
    g = kdm.gradients(model, model.destandardize(z))
    fd_mu, fd_lg, fd_ls = _fd_gradients(model, z)
    assert _rel(g.components, fd_mu) < 1e-5
    assert _rel(g.weight_logits, fd_lg) < 1e-5
    assert _rel(g.log_sigma, fd_ls) < 1e-5


def test_gradient_stationary_single_component():
    model = KdmModel.from_mixture([0.4], sigma=0.3)
    g = kdm.gradients(model, np.array([[0.4]]))
    assert np.all(g.components == 0)
    assert np.all(g.weight_logits == 0)


def test_gradient_symmetric_logits():
    model = KdmModel.from_mixture([-1.0, 1.0], sigma=0.9)
    g = kdm.gradients(model, np.array([-1.5, -0.2, 0.2, 1.5]))
    assert g.weight_logits[0] == pytest.approx(g.weight_logits[1], abs=1e-15)


def test_gradients_need_data(unit_model):
    with pytest.raises(InvalidArgumentError):
        kdm.gradients(unit_model, np.empty((0, 1)))


def test_cdf_limits_and_symmetry():
    model = KdmModel.from_mixture([0.0], sigma=0.1, standardize_mean=[5.0], standardize_scale=[3.0])
    s = 0.05 * 3.0
    assert kdm.cdf_eval(model, 5.0) == pytest.approx(0.5, abs=1e-12)
    assert kdm.cdf_eval(model, 5.0 + 10 * s) > 1 - 1e-9
    assert kdm.cdf_eval(model, 5.0 - 10 * s) < 1e-9


@pytest.mark.parametrize("seed", range(4))
def test_cdf_matches_quadrature(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, m=5)
    s = model.component_std * model.standardize_scale[0]
    centers = np.sort(model.component_means[:, 0])
    lo = centers[0] - 40 * s
    for x in rng.uniform(centers[0] - 2 * s, centers[-1] + 2 * s, 5):
        pts = [c for c in centers if lo < c < x]
        val, _ = integrate.quad(lambda t: math.exp(kdm.log_density(model, t)), lo, x,
                                points=pts or None, limit=500, epsabs=1e-12)
        assert kdm.cdf_eval(model, x) == pytest.approx(val, abs=1e-6)


def test_cdf_monotone(rng):
    model = random_model(rng, m=7)
    xs = np.sort(rng.normal(model.standardize_mean[0], 3 * model.standardize_scale[0], 2000))
    assert np.all(np.diff(kdm.cdf_eval(model, xs)) >= 0)


def test_cdf_requires_1d():
    with pytest.raises(UnsupportedDimensionError):
        kdm.cdf_eval(KdmModel.from_mixture([[0.0, 0.0]]), 0.0)


def test_quantile_examples(rng):
    model = KdmModel.from_mixture([0.0], sigma=0.2, standardize_mean=[10.0], standardize_scale=[4.0])
    assert kdm.quantile(model, 0.5) == pytest.approx(10.0, abs=1e-8 * 4.0)
    for q in (0.001, 0.25, 0.75, 0.999):
        assert abs(kdm.cdf_eval(model, kdm.quantile(model, q)) - q) < 1e-9
    m2 = random_model(rng)
    assert kdm.quantile(m2, 0.25) < kdm.quantile(m2, 0.75)
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(InvalidArgumentError):
            kdm.quantile(m2, bad)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-4, 1 - 1e-4))
def test_quantile_roundtrip_property(seed, q):
    model = random_model(np.random.default_rng(seed))
    assert abs(kdm.cdf_eval(model, kdm.quantile(model, q)) - q) < 1e-9


def test_sample_shapes_and_determinism(rng):
    model = random_model(rng, d=2)
    assert kdm.sample(model, 0, seed=1).shape == (0, 2)
    a = kdm.sample(model, 50, seed=3)
    np.testing.assert_array_equal(a, kdm.sample(model, 50, seed=3))
    with pytest.raises(InvalidArgumentError):
        kdm.sample(model, -1)


def test_sample_mean_matches_mixture_mean():
    model = KdmModel.from_mixture([-1.0, 2.0], weights=[0.3, 0.7], sigma=0.5,
                                  standardize_mean=[100.0], standardize_scale=[20.0])
    n = 10**6
    x = kdm.sample(model, n, seed=11)[:, 0]
    w, mu, s = model.weights, model.components[:, 0], model.component_std
    mean_z = float(w @ mu)
    var_z = float(w @ (mu**2 + s**2)) - mean_z**2
    se = math.sqrt(var_z) * 20.0 / math.sqrt(n)
    assert abs(x.mean() - (100.0 + 20.0 * mean_z)) < 4 * se


def test_sample_ks_against_model_cdf(rng):
    model = random_model(rng, m=4)
    n = 10**5
    x = np.sort(kdm.sample(model, n, seed=5)[:, 0])
    c = kdm.cdf_eval(model, x)
    i = np.arange(1, n + 1)
    ks = max(np.max(i / n - c), np.max(c - (i - 1) / n))
    assert ks < 1.95 / math.sqrt(n)


def test_anomaly_quantile_mode(unit_model):
    th = kdm.anomaly_thresholds(unit_model, 0.025)
    z = float(norm.ppf(0.975))
    assert z == pytest.approx(1.959963984540054, rel=1e-14)
    assert th.lower == pytest.approx(-z * 0.05, abs=1e-9)
    assert th.upper == pytest.approx(z * 0.05, abs=1e-9)
    assert th.lower < th.upper


def test_anomaly_degenerate_alpha(unit_model):
    th = kdm.anomaly_thresholds(unit_model, 0.5)
    assert th.lower == th.upper == kdm.quantile(unit_model, 0.5)
    for bad in (0.0, -0.1, 0.6):
        with pytest.raises(InvalidArgumentError):
            kdm.anomaly_thresholds(unit_model, bad)


def test_anomaly_low_density_needs_training_densities(unit_model, rng):
    with pytest.raises(MissingDataError):
        kdm.anomaly_thresholds(unit_model, 0.01, AnomalyMode.LOW_DENSITY)
    data = rng.normal(size=500)
    model = kdm.fit(data, TrainConfig(n_components=20, epochs=5))
    th = kdm.anomaly_thresholds(model, 0.05, "low-density")
    dens = np.exp(kdm.log_density(model, data))
    assert th.density_floor == pytest.approx(np.quantile(dens, 0.05), rel=1e-12)
    assert np.mean(th.flags(model, data)) == pytest.approx(0.05, abs=0.005)


def test_density_grid_normalization_and_symmetry():
    model = KdmModel.from_mixture([[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]], sigma=0.6)
    g = kdm.density_grid(model, 256, 256, bounds=[(-3, 4), (-3, 4)])
    assert np.all(np.isfinite(g.values)) and np.all(g.values >= 0)
    np.testing.assert_allclose(g.values, g.values.T, atol=1e-12, rtol=0)
    assert 0.98 <= kdm.density_grid(model, 256, 256).riemann_sum() <= 1.02


def test_density_grid_requires_2d(unit_model):
    with pytest.raises(UnsupportedDimensionError):
        kdm.density_grid(unit_model, 10, 10)
    with pytest.raises(InvalidArgumentError):
        kdm.density_grid(KdmModel.from_mixture([[0.0, 0.0]]), 1, 10)


def test_model_invariants(rng):
    model = random_model(rng)
    assert abs(model.weights.sum() - 1) < 1e-12 and np.all(model.weights > 0)
    with pytest.raises(InvalidArgumentError):
        KdmModel([[np.nan]], [0.0], 0.0, [0.0], [1.0])
    with pytest.raises(InvalidArgumentError):
        KdmModel([[0.0]], [0.0], 0.0, [0.0], [0.0])
    with pytest.raises(UnsupportedDimensionError):
        KdmModel(np.zeros((2, 3)), [0.0, 0.0], 0.0, np.zeros(3), np.ones(3))


def test_fit_validation():
    with pytest.raises(InvalidArgumentError):
        kdm.fit(np.arange(10.0), TrainConfig(n_components=11))
    bad = np.arange(20.0)
    bad[7] = np.nan
    with pytest.raises(InvalidArgumentError, match="row index 7"):
        kdm.fit(bad, TrainConfig(n_components=5))
    with pytest.raises(InvalidArgumentError, match="zero variance"):
        kdm.fit(np.column_stack([np.arange(20.0), np.ones(20)]), TrainConfig(n_components=5))
    with pytest.raises(UnsupportedDimensionError):
        kdm.fit(np.zeros((20, 3)), TrainConfig(n_components=5))
    with pytest.raises(InvalidArgumentError):
        TrainConfig(learning_rate=0)
    with pytest.raises(InvalidArgumentError):
        TrainConfig(sigma_init=float("inf"))


@pytest.mark.parametrize("seed", range(5))
def test_fit_never_worse_than_initialization(seed):
    rng = np.random.default_rng(seed)
    data = np.concatenate([rng.normal(-1, 0.3, 300), rng.gamma(2.0, 1.0, 300)])
    model = kdm.fit(data, TrainConfig(n_components=40, epochs=30, seed=seed, learning_rate=0.05))
    rep = model.report
    assert rep.final_log_likelihood >= rep.initial_log_likelihood
    assert kdm.log_likelihood(model, data) == pytest.approx(rep.final_log_likelihood, rel=1e-10)
    assert abs(model.weights.sum() - 1) < 1e-12


def test_fit_is_deterministic(rng):
    data = rng.normal(size=(400, 2)) * [3.0, 0.5]
    cfg = TrainConfig(n_components=30, epochs=20, seed=9, batch_size=64)
    a, b = kdm.fit(data, cfg), kdm.fit(data, cfg)
    assert kdm.dumps(a) == kdm.dumps(b)


def test_fit_minibatch_and_kmeans_init(rng):
    data = rng.normal(size=1000)
    for cfg in (TrainConfig(n_components=25, epochs=5, batch_size=100),
                TrainConfig(n_components=25, epochs=5, init="kmeans", batch_size="full")):
        model = kdm.fit(data, cfg)
        assert model.report.final_log_likelihood >= model.report.initial_log_likelihood


def test_fit_raw_mode_keeps_units(rng):
    data = rng.normal(size=300)
    model = kdm.fit(data, TrainConfig(n_components=10, epochs=3, standardize=False))
    assert model.standardize_mean.tolist() == [0.0]
    assert model.standardize_scale.tolist() == [1.0]


def test_affine_equivariance(rng):
    x = np.concatenate([rng.normal(0, 1, 400), rng.normal(4, 0.5, 200)])
    a, b = 37.5, -120.0
    cfg = TrainConfig(n_components=30, epochs=40, seed=4, learning_rate=0.01)
    mx, my = kdm.fit(x, cfg), kdm.fit(a * x + b, cfg)
    t = np.linspace(-3, 7, 41)
    np.testing.assert_allclose(kdm.cdf_eval(my, a * t + b), kdm.cdf_eval(mx, t), atol=1e-6)


def test_serialization_roundtrip(tmp_path, rng):
    data = rng.normal(size=(300, 2))
    model = kdm.fit(data, TrainConfig(n_components=12, epochs=5), column_names=("vp_fit", "np_fit"))
    path = tmp_path / "m.json"
    kdm.save_model(model, path)
    doc = json.loads(path.read_text())
    assert set(doc) == {"version", "dim", "column_names", "standardize_mean", "standardize_scale",
                        "sigma", "weights", "components", "train_config", "final_log_likelihood"}
    back = kdm.load_model(path)
    assert back.column_names == ("vp_fit", "np_fit")
    assert kdm.log_likelihood(back, data) == pytest.approx(kdm.log_likelihood(model, data), rel=1e-12)
    assert back.train_config == model.train_config
    np.testing.assert_array_equal(back.components, model.components)
    np.testing.assert_allclose(back.weights, model.weights, rtol=1e-14)
    assert back.sigma == model.sigma


def test_curve_and_grid_csv(tmp_path):
    model = KdmModel.from_mixture([0.0, 1.0], sigma=0.5)
    xs, p, c = kdm.curve(model, 7)
    kdm.write_curve_csv(tmp_path / "c.csv", xs, p, c)
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "x,pdf,cdf" and len(lines) == 8
    assert float(lines[4].split(",")[0]) == xs[3]
    g = kdm.density_grid(KdmModel.from_mixture([[0.0, 0.0]], sigma=1.0), 3, 2)
    kdm.write_grid_csv(tmp_path / "g.csv", g)
    rows = (tmp_path / "g.csv").read_text().splitlines()
    assert rows[0] == "x,y,density" and len(rows) == 7
    # row-major: y varies fastest
    assert [float(r.split(",")[1]) for r in rows[1:3]] == list(g.y_axis)
