"""Kernel Density Matrices over 1-D and 2-D real data.

A model is a weighted set of components sharing one Gaussian kernel
``k(x, y) = exp(-|x - y|^2 / sigma^2)``.  The density is the weighted sum of
normalized squared kernels, which makes each component a normal distribution
centred on the component with standard deviation ``sigma / 2``.  Everything is
evaluated in standardized (z-scored) coordinates; the public functions accept
and return original data units.
"""
from __future__ import annotations

import enum
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import log_softmax, ndtr, softmax

from ._threads import worker_count
from .errors import (
    InvalidArgumentError,
    MissingDataError,
    NonConvergenceError,
    UnsupportedDimensionError,
)

FORMAT_VERSION = 1
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
# rows per evaluation block; bounds the n x m working set
BLOCK_ROWS = 512
FULL_BATCH_LIMIT = 65_536
SMALL_MINIBATCH = 256
DEFAULT_MINIBATCH = 8_192


class Init(str, enum.Enum):
    SUBSAMPLE_DATA = "subsample"
    KMEANS_LIKE = "kmeans"


class AnomalyMode(str, enum.Enum):
    PARAMETER_QUANTILE = "quantile"
    LOW_DENSITY = "low-density"


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters.

    ``n_components``, ``learning_rate`` and ``sigma_init`` default to 400
    components, lr 1e-3 and sigma 0.1 (sigma in standardized
    units).  ``batch_size="auto"`` uses shuffled mini-batches of 256 up to
    65 536 points and 8 192 above; ``"full"`` is plain full-batch ascent.
    Small batches matter: with lr 1e-3 a full-batch run barely moves sigma
    in a few hundred steps and ends up noticeably rougher.
    """

    n_components: int = 400
    learning_rate: float = 1e-3
    sigma_init: float = 0.1
    epochs: int = 300
    batch_size: int | str = "auto"
    seed: int = 0
    init: Init = Init.SUBSAMPLE_DATA
    min_rel_ll_improvement: float = 1e-6
    patience: int = 20
    standardize: bool = True

    def __post_init__(self):
        if not (isinstance(self.n_components, (int, np.integer)) and self.n_components >= 1):
            raise InvalidArgumentError(f"n_components must be a positive integer, got {self.n_components!r}")
        for name in ("learning_rate", "sigma_init"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidArgumentError(f"{name} must be finite and > 0, got {v!r}")
        if self.epochs < 1:
            raise InvalidArgumentError("epochs must be >= 1")
        if self.batch_size not in ("full", "auto") and not (isinstance(self.batch_size, (int, np.integer)) and self.batch_size >= 1):
            raise InvalidArgumentError(f"batch_size must be 'auto', 'full' or a positive integer, got {self.batch_size!r}")
        if not 0 <= self.seed < 2**64:
            raise InvalidArgumentError("seed must be a 64-bit unsigned integer")
        if self.min_rel_ll_improvement < 0 or self.patience < 1:
            raise InvalidArgumentError("early-stop settings must be nonnegative / positive")
        object.__setattr__(self, "init", Init(self.init))

    def resolved_batch_size(self, n):
        if self.batch_size == "full":
            return n
        if self.batch_size == "auto":
            return min(n, SMALL_MINIBATCH if n <= FULL_BATCH_LIMIT else DEFAULT_MINIBATCH)
        return min(int(self.batch_size), n)

    def to_dict(self):
        d = asdict(self)
        d["init"] = self.init.value
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class FitReport:
    initial_log_likelihood: float
    final_log_likelihood: float
    epochs_run: int
    best_epoch: int
    history: list = field(repr=False)
    # log f(x) at every training row under the returned model
    train_log_density: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True, eq=False)
class KdmModel:
    """The (components, weights, bandwidth) triplet plus column standardization.

    ``components`` live in standardized units.  Weights and bandwidth are
    stored unconstrained (logits and log sigma); use :attr:`weights` and
    :attr:`sigma` for the constrained values.
    """

    components: np.ndarray
    weight_logits: np.ndarray
    log_sigma: float
    standardize_mean: np.ndarray
    standardize_scale: np.ndarray
    column_names: tuple = ()
    train_config: TrainConfig | None = None
    report: FitReport | None = field(default=None, repr=False)

    def __post_init__(self):
        comps = np.array(self.components, dtype=np.float64, ndmin=2)
        logits = np.array(self.weight_logits, dtype=np.float64).reshape(-1)
        mean = np.array(self.standardize_mean, dtype=np.float64).reshape(-1)
        scale = np.array(self.standardize_scale, dtype=np.float64).reshape(-1)
        m, d = comps.shape
        if m < 1:
            raise InvalidArgumentError("a model needs at least one component")
        if d not in (1, 2):
            raise UnsupportedDimensionError(f"dimension must be 1 or 2, got {d}")
        if logits.shape != (m,):
            raise InvalidArgumentError(f"expected {m} weight logits, got {logits.shape[0]}")
        if mean.shape != (d,) or scale.shape != (d,):
            raise InvalidArgumentError("standardization vectors must have one entry per column")
        if not np.all(np.isfinite(comps)):
            raise InvalidArgumentError("components must be finite")
        if not np.all(np.isfinite(logits)) or not math.isfinite(self.log_sigma):
            raise InvalidArgumentError("weight logits and log_sigma must be finite")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(scale)) and np.all(scale > 0)):
            raise InvalidArgumentError("standardize_scale must be finite and > 0")
        names = tuple(self.column_names) or tuple(f"x{j}" for j in range(d))
        if len(names) != d:
            raise InvalidArgumentError("column_names must have one entry per column")
        for name, arr in (("components", comps), ("weight_logits", logits),
                          ("standardize_mean", mean), ("standardize_scale", scale)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "log_sigma", float(self.log_sigma))
        object.__setattr__(self, "column_names", names)

    @property
    def dim(self):
        return self.components.shape[1]

    @property
    def n_components(self):
        return self.components.shape[0]

    @property
    def weights(self):
        return softmax(self.weight_logits)

    @property
    def sigma(self):
        return math.exp(self.log_sigma)

    @property
    def component_std(self):
        """Per-component standard deviation in standardized units (sigma / 2)."""
        return 0.5 * self.sigma

    @property
    def component_means(self):
        """Component locations in original units."""
        return self.components * self.standardize_scale + self.standardize_mean

    def standardize(self, x):
        return (x - self.standardize_mean) / self.standardize_scale

    def destandardize(self, z):
        return z * self.standardize_scale + self.standardize_mean

    @classmethod
    def from_mixture(cls, means, weights=None, sigma=0.1, column_names=(),
                     standardize_mean=None, standardize_scale=None):
        """Build a model from component locations given in standardized units."""
        means = np.array(means, dtype=np.float64)
        if means.ndim == 1:
            means = means[:, None]
        m, d = means.shape
        if weights is None:
            logits = np.zeros(m)
        else:
            w = np.asarray(weights, dtype=np.float64)
            if np.any(w <= 0):
                raise InvalidArgumentError("weights must be strictly positive")
            logits = np.log(w / w.sum())
        if not (math.isfinite(sigma) and sigma > 0):
            raise InvalidArgumentError("sigma must be finite and > 0")
        return cls(
            components=means,
            weight_logits=logits,
            log_sigma=math.log(sigma),
            standardize_mean=np.zeros(d) if standardize_mean is None else standardize_mean,
            standardize_scale=np.ones(d) if standardize_scale is None else standardize_scale,
            column_names=column_names,
        )


# ---------------------------------------------------------------------------
# kernel and densities


def kernel_eval(x, y, sigma):
    """Gaussian kernel ``exp(-|x - y|^2 / sigma^2)``; equals 1 when x == y."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape:
        raise InvalidArgumentError(f"points have different dimensions: {x.shape} vs {y.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidArgumentError("kernel arguments must be finite")
    if not (math.isfinite(sigma) and sigma > 0):
        raise InvalidArgumentError(f"sigma must be finite and > 0, got {sigma!r}")
    d2 = float(np.sum((x - y) ** 2))
    return math.exp(-d2 / (sigma * sigma))


def _as_points(model, x):
    """Coerce ``x`` to an (n, d) float array; report whether a scalar result is wanted."""
    arr = np.asarray(x, dtype=np.float64)
    d = model.dim
    if arr.ndim == 0:
        if d != 1:
            raise InvalidArgumentError(f"model has dimension {d}, got a scalar")
        return arr.reshape(1, 1), True
    if arr.ndim == 1:
        if d == 1:
            return arr[:, None], False
        if arr.shape[0] == d:
            return arr[None, :], True
        raise InvalidArgumentError(f"model has dimension {d}, got a point of length {arr.shape[0]}")
    if arr.ndim == 2 and arr.shape[1] == d:
        return arr, False
    raise InvalidArgumentError(f"model has dimension {d}, got an array of shape {arr.shape}")


def _sq_dist(z, mu):
    # broadcasting rather than BLAS keeps results bit-stable for d <= 2
    d2 = np.subtract.outer(z[:, 0], mu[:, 0])
    d2 *= d2
    for j in range(1, z.shape[1]):
        diff = np.subtract.outer(z[:, j], mu[:, j])
        diff *= diff
        d2 += diff
    return d2


def _lse_rows(a):
    """Row-wise log-sum-exp; returns (lse, exp(a - rowmax), rowsum) and overwrites ``a``."""
    amax = a.max(axis=1, keepdims=True)
    a -= amax
    # exp below ~-708 lands in subnormals, which are very slow and contribute < 1e-304
    np.maximum(a, -700.0, out=a)
    np.exp(a, out=a)
    tot = a.sum(axis=1)
    return amax[:, 0] + np.log(tot), a, tot


def _log_density_std(z, mu, log_w, s):
    """log density in standardized units for rows of ``z``."""
    d = mu.shape[1]
    out = np.empty(z.shape[0])
    inv = 0.5 / (s * s)
    norm = d * (math.log(s) + LOG_SQRT_2PI)
    for lo in range(0, z.shape[0], BLOCK_ROWS):
        a = _sq_dist(z[lo:lo + BLOCK_ROWS], mu)
        a *= -inv
        a += log_w
        out[lo:lo + BLOCK_ROWS] = _lse_rows(a)[0] - norm
    return out


def _log_jacobian(model):
    return float(np.sum(np.log(model.standardize_scale)))


def log_density(model, x):
    """log f(x) in original units, via log-sum-exp over components.

    ``x`` may be a single point or an (n, d) array (a flat array for 1-D
    models); array input gives an array of log densities.
    """
    pts, scalar = _as_points(model, x)
    if not np.all(np.isfinite(pts)):
        raise InvalidArgumentError("evaluation points must be finite")
    z = model.standardize(pts)
    out = _log_density_std(z, model.components, log_softmax(model.weight_logits),
                           model.component_std) - _log_jacobian(model)
    return float(out[0]) if scalar else out


def pdf(model, x):
    return np.exp(log_density(model, x))


def log_likelihood(model, data, parallel=False, block_rows=65_536):
    """Sum of log densities over the rows of ``data`` (original units).

    The sequential mode is the reference.  ``parallel=True`` evaluates
    fixed-size row blocks on a thread pool and adds the block sums in index
    order, so the result is reproducible and agrees with the reference to
    rounding.
    """
    pts, _ = _as_points(model, data)
    if pts.shape[0] == 0:
        raise InvalidArgumentError("log_likelihood needs at least one row")
    if not parallel:
        return float(np.sum(log_density(model, pts)))
    blocks = [pts[lo:lo + block_rows] for lo in range(0, pts.shape[0], block_rows)]
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        sums = list(pool.map(lambda b: float(np.sum(log_density(model, b))), blocks))
    total = 0.0
    for s in sums:
        total += s
    return total


# ---------------------------------------------------------------------------
# gradients


@dataclass(frozen=True)
class Gradients:
    components: np.ndarray
    weight_logits: np.ndarray
    log_sigma: float


def _grad_and_ll(z, mu, logits, log_sigma):
    """Gradient of the mean log-likelihood and the summed log-likelihood.

    Works in standardized units.  With responsibilities r (posterior
    component probabilities) and s = sigma / 2:
      d/d mu_i      = mean_n r_ni (z_n - mu_i) / s^2
      d/d logit_i   = mean_n r_ni - w_i
      d/d log sigma = mean_n sum_i r_ni (|z_n - mu_i|^2 / s^2 - d)
    """
    n, d = z.shape
    s = 0.5 * math.exp(log_sigma)
    inv_s2 = 1.0 / (s * s)
    log_w = log_softmax(logits)
    norm = d * (math.log(s) + LOG_SQRT_2PI)
    g_mu = np.zeros_like(mu)
    r_sum = np.zeros(mu.shape[0])
    g_ls = 0.0
    ll = 0.0
    for lo in range(0, n, BLOCK_ROWS):
        zb = z[lo:lo + BLOCK_ROWS]
        d2 = _sq_dist(zb, mu)
        a = d2 * (-0.5 * inv_s2)
        a += log_w
        lse, r, tot = _lse_rows(a)
        r /= tot[:, None]
        ll += float(np.sum(lse)) - norm * zb.shape[0]
        rs = r.sum(axis=0)
        r_sum += rs
        g_mu += r.T @ zb - rs[:, None] * mu
        g_ls += float(np.sum(r * d2)) * inv_s2
    g_mu *= inv_s2 / n
    g_logits = r_sum / n - np.exp(log_w)
    g_ls = g_ls / n - d
    return Gradients(g_mu, g_logits, g_ls), ll


def gradients(model, batch):
    """Gradient of the mean log-likelihood of ``batch`` w.r.t. the free parameters."""
    pts, _ = _as_points(model, batch)
    if pts.shape[0] == 0:
        raise InvalidArgumentError("gradients need a nonempty batch")
    if not np.all(np.isfinite(pts)):
        raise InvalidArgumentError("batch rows must be finite")
    g, _ = _grad_and_ll(model.standardize(pts), model.components,
                        model.weight_logits, model.log_sigma)
    return g


# ---------------------------------------------------------------------------
# training


class _Adam:
    """Adam ascent over a flat parameter vector."""

    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return params + self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _check_data(data):
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InvalidArgumentError(f"data must be an (n, d) matrix, got shape {arr.shape}")
    if arr.shape[1] not in (1, 2):
        raise UnsupportedDimensionError(f"only 1-D and 2-D data are supported, got d={arr.shape[1]}")
    bad = ~np.all(np.isfinite(arr), axis=1)
    if bad.any():
        raise InvalidArgumentError(f"data contains non-finite values; first offending row index {int(np.argmax(bad))}")
    return arr


def _kmeans_init(z, centers, iters=10):
    for _ in range(iters):
        labels = np.argmin(_sq_dist(z, centers), axis=1)
        counts = np.bincount(labels, minlength=centers.shape[0])
        sums = np.zeros_like(centers)
        for j in range(z.shape[1]):
            sums[:, j] = np.bincount(labels, weights=z[:, j], minlength=centers.shape[0])
        filled = counts > 0
        centers = centers.copy()
        centers[filled] = sums[filled] / counts[filled, None]
    counts = np.bincount(np.argmin(_sq_dist(z, centers), axis=1), minlength=centers.shape[0])
    # cluster shares as initial weights; +1 keeps empty clusters alive
    return centers, np.log((counts + 1.0) / (counts.sum() + counts.size))


def fit(data, config=None, column_names=()):
    """Fit a model by maximum likelihood with Adam.

    Columns are z-scored (unless ``config.standardize`` is false), components
    start at a seeded subsample of the rows, weights start uniform and sigma
    at ``config.sigma_init``.  The returned model is the best-scoring snapshot
    seen during training, so its training log-likelihood is never below the
    initial one.  The result depends only on ``(data, config)``.
    """
    config = config or TrainConfig()
    x = _check_data(data)
    n, d = x.shape
    m = config.n_components
    if n < m:
        raise InvalidArgumentError(f"need at least n_components={m} rows, got {n}")
    if config.standardize:
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        if np.any(scale <= 0) or not np.all(np.isfinite(scale)):
            col = int(np.argmax(~(scale > 0)))
            raise InvalidArgumentError(f"column {col} has zero variance and cannot be standardized")
    else:
        mean, scale = np.zeros(d), np.ones(d)
    z = (x - mean) / scale
    log_jac = float(np.sum(np.log(scale)))

    rng = np.random.default_rng(config.seed)
    mu = z[np.sort(rng.choice(n, size=m, replace=False))].copy()
    logits0 = np.zeros(m)
    if config.init == Init.KMEANS_LIKE:
        mu, logits0 = _kmeans_init(z, mu)

    def pack(mu, logits, ls):
        return np.concatenate([mu.ravel(), logits, [ls]])

    def unpack(theta):
        return theta[:m * d].reshape(m, d), theta[m * d:m * d + m], float(theta[-1])

    def flat_grad(g):
        return np.concatenate([g.components.ravel(), g.weight_logits, [g.log_sigma]])

    theta = pack(mu, logits0, math.log(config.sigma_init))
    opt = _Adam(theta.size, config.learning_rate)
    batch = config.resolved_batch_size(n)
    full_batch = batch >= n

    def total_ll(theta):
        mu, logits, ls = unpack(theta)
        return float(np.sum(_log_density_std(z, mu, log_softmax(logits), 0.5 * math.exp(ls)))) - n * log_jac

    best_theta, best_ll, best_epoch = theta, None, 0
    initial_ll = None
    history = []
    epochs_run = 0
    for epoch in range(config.epochs + 1):
        if full_batch:
            g, ll = _grad_and_ll(z, *unpack(theta))
            ll -= n * log_jac
        else:
            ll = total_ll(theta)
        if not math.isfinite(ll):
            raise NonConvergenceError(f"log-likelihood became non-finite at epoch {epoch}")
        if initial_ll is None:
            initial_ll = ll
        if best_ll is None or ll > best_ll:
            best_theta, best_ll, best_epoch = theta, ll, epoch
        history.append(best_ll)
        if epoch == config.epochs:
            break
        if epoch >= config.patience:
            ref = history[epoch - config.patience]
            if best_ll - ref <= config.min_rel_ll_improvement * abs(ref):
                break
        epochs_run = epoch + 1
        if full_batch:
            theta = opt.step(theta, flat_grad(g))
        else:
            perm = rng.permutation(n)
            for lo in range(0, n, batch):
                g, _ = _grad_and_ll(z[perm[lo:lo + batch]], *unpack(theta))
                theta = opt.step(theta, flat_grad(g))
        if not np.all(np.isfinite(theta)):
            raise NonConvergenceError(f"parameters became non-finite at epoch {epoch + 1}")

    mu, logits, ls = unpack(best_theta)
    model = KdmModel(mu, logits, ls, mean, scale, column_names=column_names, train_config=config)
    train_ld = log_density(model, x)
    report = FitReport(
        initial_log_likelihood=initial_ll,
        final_log_likelihood=best_ll,
        epochs_run=epochs_run,
        best_epoch=best_epoch,
        history=history,
        train_log_density=train_ld,
    )
    return replace(model, report=report)


# ---------------------------------------------------------------------------
# 1-D products


def _require_dim(model, d):
    if model.dim != d:
        raise UnsupportedDimensionError(f"operation requires a {d}-D model, got d={model.dim}")


def cdf_eval(model, x):
    """Mixture CDF at ``x`` (original units); scalar or array input."""
    _require_dim(model, 1)
    arr = np.asarray(x, dtype=np.float64)
    z = (arr - model.standardize_mean[0]) / model.standardize_scale[0]
    s = model.component_std
    w = model.weights
    mu = model.components[:, 0]
    flat = np.atleast_1d(z).reshape(-1)
    out = np.empty(flat.shape)
    for lo in range(0, flat.size, BLOCK_ROWS):
        out[lo:lo + BLOCK_ROWS] = ndtr((flat[lo:lo + BLOCK_ROWS, None] - mu) / s) @ w
    np.clip(out, 0.0, 1.0, out=out)
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def quantile(model, q, tol=1e-12, max_iter=200):
    """Inverse CDF by bracketed bisection; returns original units."""
    _require_dim(model, 1)
    if not (0.0 < q < 1.0):
        raise InvalidArgumentError(f"q must lie in (0, 1), got {q!r}")
    s = model.component_std
    mu = model.components[:, 0]
    lo, hi = float(mu.min() - 12 * s), float(mu.max() + 12 * s)
    m0, sc = model.standardize_mean[0], model.standardize_scale[0]
    w = model.weights

    def cdf_std(z):
        return float(ndtr((z - mu) / s) @ w)

    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        c = cdf_std(mid)
        if abs(c - q) < tol:
            break
        if c < q:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.spacing(abs(mid) + s):
            break
    return float(mid * sc + m0)


def sample(model, n, seed=0):
    """Draw ``n`` points: a component from the weights, then Gaussian noise of std sigma/2."""
    if n < 0:
        raise InvalidArgumentError("n must be >= 0")
    rng = np.random.default_rng(seed)
    idx = rng.choice(model.n_components, size=n, p=model.weights)
    z = model.components[idx] + model.component_std * rng.standard_normal((n, model.dim))
    return model.destandardize(z)


@dataclass(frozen=True)
class AnomalyThresholds:
    mode: AnomalyMode
    alpha: float
    lower: float | None = None
    upper: float | None = None
    density_floor: float | None = None

    def flags(self, model, x):
        """Boolean mask of anomalous points."""
        if self.mode == AnomalyMode.PARAMETER_QUANTILE:
            x = np.asarray(x, dtype=np.float64).reshape(-1)
            return (x < self.lower) | (x > self.upper)
        return pdf(model, x) < self.density_floor

    def to_dict(self):
        d = asdict(self)
        d["mode"] = self.mode.value
        return d


def anomaly_thresholds(model, alpha=0.001, mode=AnomalyMode.PARAMETER_QUANTILE,
                       train_log_density=None):
    """Thresholds separating nominal from extreme values.

    ``quantile`` mode returns the central ``1 - 2 alpha`` interval of the
    fitted distribution (1-D only).  ``low-density`` mode returns the
    alpha-quantile of the density over the training rows, taken from the fit
    report or from ``train_log_density``.  ``alpha = 0.5`` is accepted as the
    degenerate limit where lower == upper == median.
    """
    mode = AnomalyMode(mode)
    if not (0.0 < alpha <= 0.5):
        raise InvalidArgumentError(f"alpha must lie in (0, 0.5), got {alpha!r}")
    if mode == AnomalyMode.PARAMETER_QUANTILE:
        _require_dim(model, 1)
        if alpha == 0.5:
            lower = upper = quantile(model, 0.5)
        else:
            lower, upper = quantile(model, alpha), quantile(model, 1.0 - alpha)
        return AnomalyThresholds(mode, alpha, lower=lower, upper=upper)
    if train_log_density is None and model.report is not None:
        train_log_density = model.report.train_log_density
    if train_log_density is None or len(train_log_density) == 0:
        raise MissingDataError("low-density thresholds need the training densities retained by fit")
    floor = float(np.quantile(np.exp(np.asarray(train_log_density)), alpha))
    return AnomalyThresholds(mode, alpha, density_floor=floor)


# ---------------------------------------------------------------------------
# 2-D products


@dataclass(frozen=True)
class DensityGrid:
    x_axis: np.ndarray
    y_axis: np.ndarray
    values: np.ndarray  # shape (len(x_axis), len(y_axis)); values[i, j] at (x_i, y_j)

    def riemann_sum(self):
        dx = (self.x_axis[-1] - self.x_axis[0]) / (len(self.x_axis) - 1)
        dy = (self.y_axis[-1] - self.y_axis[0]) / (len(self.y_axis) - 1)
        return float(self.values.sum() * dx * dy)


def default_bounds(model, pad=5.0):
    """Component bounding box padded by ``pad`` component stds, original units, per axis."""
    s = model.component_std
    lo = model.destandardize(model.components.min(axis=0) - pad * s)
    hi = model.destandardize(model.components.max(axis=0) + pad * s)
    return [(float(a), float(b)) for a, b in zip(lo, hi)]


def density_grid(model, nx=256, ny=256, bounds=None):
    """Density on a regular ``nx`` x ``ny`` lattice of nodes (2-D models)."""
    _require_dim(model, 2)
    if nx < 2 or ny < 2:
        raise InvalidArgumentError("nx and ny must be >= 2")
    (x0, x1), (y0, y1) = bounds if bounds is not None else default_bounds(model)
    if not (x1 > x0 and y1 > y0):
        raise InvalidArgumentError("bounds must be increasing")
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    vals = pdf(model, np.column_stack([gx.ravel(), gy.ravel()])).reshape(nx, ny)
    return DensityGrid(xs, ys, vals)


def curve(model, n_points=512, bounds=None):
    """(x, pdf, cdf) arrays over a regular grid for a 1-D model."""
    _require_dim(model, 1)
    if n_points < 2:
        raise InvalidArgumentError("n_points must be >= 2")
    lo, hi = bounds if bounds is not None else default_bounds(model)[0]
    xs = np.linspace(lo, hi, n_points)
    return xs, pdf(model, xs), cdf_eval(model, xs)


# ---------------------------------------------------------------------------
# emission and serialization


def _fmt(v):
    return repr(float(v))


def write_curve_csv(path, xs, pdfs, cdfs):
    with open(path, "w", newline="") as fh:
        fh.write("x,pdf,cdf\n")
        for x, p, c in zip(xs, pdfs, cdfs):
            fh.write(f"{_fmt(x)},{_fmt(p)},{_fmt(c)}\n")


def write_grid_csv(path, grid):
    with open(path, "w", newline="") as fh:
        fh.write("x,y,density\n")
        for i, x in enumerate(grid.x_axis):
            for j, y in enumerate(grid.y_axis):
                fh.write(f"{_fmt(x)},{_fmt(y)},{_fmt(grid.values[i, j])}\n")


def model_to_dict(model):
    if model.report is not None:
        final_ll = model.report.final_log_likelihood
    else:
        final_ll = None
    return {
        "version": FORMAT_VERSION,
        "dim": model.dim,
        "column_names": list(model.column_names),
        "standardize_mean": model.standardize_mean.tolist(),
        "standardize_scale": model.standardize_scale.tolist(),
        "sigma": model.sigma,
        "weights": model.weights.tolist(),
        "components": model.components.tolist(),
        "train_config": model.train_config.to_dict() if model.train_config else None,
        "final_log_likelihood": final_ll,
    }


def model_from_dict(doc):
    if doc.get("version") != FORMAT_VERSION:
        raise InvalidArgumentError(f"unsupported model format version {doc.get('version')!r}")
    comps = np.array(doc["components"], dtype=np.float64)
    if comps.ndim != 2 or comps.shape[1] != doc["dim"]:
        raise InvalidArgumentError("components do not match the declared dimension")
    w = np.array(doc["weights"], dtype=np.float64)
    if np.any(w <= 0):
        raise InvalidArgumentError("serialized weights must be strictly positive")
    cfg = doc.get("train_config")
    return KdmModel(
        components=comps,
        weight_logits=np.log(w),
        log_sigma=math.log(doc["sigma"]),
        standardize_mean=doc["standardize_mean"],
        standardize_scale=doc["standardize_scale"],
        column_names=tuple(doc["column_names"]),
        train_config=TrainConfig.from_dict(cfg) if cfg else None,
    )


def dumps(model):
    return json.dumps(model_to_dict(model), indent=1) + "\n"


def save_model(model, path):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(dumps(model))
    os.replace(tmp, path)


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
