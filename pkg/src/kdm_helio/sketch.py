"""Mergeable quantile sketch (merging t-digest with the arcsine scale function)."""
from __future__ import annotations

import math

import numpy as np


class QuantileSketch:
    """Compressed, mergeable summary of a stream of reals.

    Values are kept as weighted centroids sorted by mean.  A centroid may
    span at most one unit of ``k(q) = delta / pi * asin(2q - 1)``, so
    centroids are small near the tails and the total count stays below
    about ``delta``.  Sketches merge by pooling centroids and recompressing;
    the rank-error bound holds for any split of the input.
    """

    def __init__(self, delta=500.0):
        if not delta > 0:
            raise ValueError("delta must be positive")
        self.delta = float(delta)
        self.means = np.empty(0)
        self.weights = np.empty(0)
        self.min = math.nan
        self.max = math.nan

    @property
    def count(self):
        return int(round(float(self.weights.sum()))) if self.weights.size else 0

    def __len__(self):
        return self.means.size

    def __repr__(self):
        return f"<QuantileSketch n={self.count} centroids={len(self)} delta={self.delta:g}>"

    def copy(self):
        out = QuantileSketch(self.delta)
        out.means = self.means.copy()
        out.weights = self.weights.copy()
        out.min, out.max = self.min, self.max
        return out

    def update(self, values):
        """Add an array of values; NaNs are ignored."""
        v = np.asarray(values, dtype=np.float64).reshape(-1)
        v = v[~np.isnan(v)]
        if v.size == 0:
            return self
        v = np.sort(v)
        self._absorb(v, np.ones(v.size), float(v[0]), float(v[-1]))
        return self

    def merge(self, other):
        """Return a new sketch summarizing both inputs."""
        out = self.copy()
        if other.means.size:
            out._absorb(other.means, other.weights, other.min, other.max)
        return out

    def _absorb(self, means, weights, lo, hi):
        m = np.concatenate([self.means, means])
        w = np.concatenate([self.weights, weights])
        # (mean, weight) order makes the pooled list independent of argument order
        order = np.lexsort((w, m))
        self.means, self.weights = _compress(m[order], w[order], self.delta)
        self.min = lo if math.isnan(self.min) else min(self.min, lo)
        self.max = hi if math.isnan(self.max) else max(self.max, hi)

    def quantile(self, q):
        """Estimated value at cumulative fraction ``q`` (scalar or array)."""
        if not self.means.size:
            raise ValueError("quantile of an empty sketch")
        qa = np.asarray(q, dtype=np.float64)
        if np.any((qa < 0) | (qa > 1)):
            raise ValueError("q must lie in [0, 1]")
        total = float(self.weights.sum())
        # anchor points: (rank, value) at min, at each centroid centre and at max
        cum = np.cumsum(self.weights) - 0.5 * self.weights
        ranks = np.concatenate([[0.0], cum, [total]])
        vals = np.concatenate([[self.min], self.means, [self.max]])
        out = np.interp(qa * total, ranks, vals)
        return float(out) if qa.ndim == 0 else out

    def cdf(self, x):
        """Estimated fraction of values <= ``x``."""
        if not self.means.size:
            raise ValueError("cdf of an empty sketch")
        total = float(self.weights.sum())
        cum = np.cumsum(self.weights) - 0.5 * self.weights
        ranks = np.concatenate([[0.0], cum, [total]])
        vals = np.concatenate([[self.min], self.means, [self.max]])
        return np.interp(x, vals, ranks) / total


def _compress(means, weights, delta):
    """Greedy single pass over sorted centroids, one k-unit per output centroid."""
    n = means.size
    if n <= 1:
        return means.copy(), weights.copy()
    total = float(weights.sum())
    cum = np.cumsum(weights)
    k_scale = delta / math.pi
    k_right = k_scale * np.arcsin(np.clip(2.0 * cum / total - 1.0, -1.0, 1.0))
    starts = []
    i = 0
    q_left = 0.0
    while i < n:
        starts.append(i)
        limit = k_scale * math.asin(max(-1.0, min(1.0, 2.0 * q_left / total - 1.0))) + 1.0
        # last index whose right edge stays within one k-unit; always take at least one
        j = int(np.searchsorted(k_right, limit, side="right"))
        j = max(j, i + 1)
        q_left = float(cum[j - 1])
        i = j
    starts = np.asarray(starts)
    w = np.add.reduceat(weights, starts)
    s = np.add.reduceat(weights * means, starts)
    mu = s / w
    # weighted means can drift past neighbours by rounding; keep them ordered
    mu = np.maximum.accumulate(mu)
    return mu, w
