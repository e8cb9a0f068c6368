"""Binned boxplot statistics over chunked data.

Every chunk reduces to a :class:`PartialSummary`; summaries merge
associatively and commutatively, so chunks can be processed in any order on
a worker pool and combined by any reduction tree.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ._threads import worker_count
from .errors import EmptyBinError, InvalidArgumentError
from .sketch import QuantileSketch

SKETCH_DELTA = 500.0
# bins up to this many values keep raw values and get exact quantiles
EXACT_LIMIT = 10_000_000


@dataclass(frozen=True)
class BinSpec:
    """Radial-distance bin edges in AU; ``[e_i, e_i+1)`` with the last bin closed."""

    edges: tuple = tuple(round(0.1 * i, 12) for i in range(11))

    def __post_init__(self):
        e = tuple(float(v) for v in self.edges)
        if len(e) < 2:
            raise InvalidArgumentError("a BinSpec needs at least two edges")
        if not all(math.isfinite(v) for v in e) or any(b <= a for a, b in zip(e, e[1:])):
            raise InvalidArgumentError(f"bin edges must be finite and strictly increasing: {e}")
        object.__setattr__(self, "edges", e)

    @classmethod
    def parse(cls, text):
        """Parse ``"start:stop:step"`` or a comma-separated edge list."""
        text = text.strip()
        if ":" in text:
            try:
                start, stop, step = (float(t) for t in text.split(":"))
            except ValueError:
                raise InvalidArgumentError(f"cannot parse bins {text!r}; expected start:stop:step")
            if step <= 0 or stop <= start:
                raise InvalidArgumentError(f"invalid bin range {text!r}")
            nbins = int(round((stop - start) / step))
            if nbins < 1 or abs(start + nbins * step - stop) > 1e-9 * max(1.0, abs(stop)):
                raise InvalidArgumentError(f"step does not divide the range in {text!r}")
            return cls(tuple(round(start + i * step, 12) for i in range(nbins + 1)))
        try:
            return cls(tuple(float(t) for t in text.split(",")))
        except ValueError:
            raise InvalidArgumentError(f"cannot parse bins {text!r}")

    @property
    def n_bins(self):
        return len(self.edges) - 1

    def label(self, i):
        return f"{self.edges[i]:g}-{self.edges[i + 1]:g}AU"

    @property
    def labels(self):
        return [self.label(i) for i in range(self.n_bins)]

    def index_of_label(self, label):
        text = label if label.endswith("AU") else f"{label}AU"
        try:
            lo, hi = (float(t) for t in text[:-2].split("-"))
        except ValueError:
            raise InvalidArgumentError(f"cannot parse bin label {label!r}")
        for i in range(self.n_bins):
            if math.isclose(lo, self.edges[i], abs_tol=1e-9) and math.isclose(hi, self.edges[i + 1], abs_tol=1e-9):
                return i
        raise InvalidArgumentError(f"bin {label!r} is not one of {self.labels}")

    def assign(self, radius):
        """Bin index per radius; -1 for NaN or out-of-range radii."""
        r = np.asarray(radius, dtype=np.float64)
        edges = np.asarray(self.edges)
        idx = np.searchsorted(edges, r, side="right") - 1
        idx[r == edges[-1]] = self.n_bins - 1
        idx[(r < edges[0]) | (r > edges[-1]) | np.isnan(r)] = -1
        return idx


@dataclass
class PartialSummary:
    """Mergeable per-chunk accumulator for one parameter.

    ``min``/``max``/``mean`` are NaN while ``count`` is 0.  Raw values are
    kept in ``exact`` as long as the total stays within ``exact_limit`` so
    small bins get exact order statistics; the sketch is always maintained.
    """

    count: int = 0
    min: float = math.nan
    max: float = math.nan
    mean: float = math.nan
    m2: float = 0.0
    sketch: QuantileSketch = field(default_factory=lambda: QuantileSketch(SKETCH_DELTA), repr=False)
    exact: np.ndarray | None = field(default_factory=lambda: np.empty(0), repr=False)
    exact_limit: int = EXACT_LIMIT

    @property
    def variance(self):
        return self.m2 / self.count if self.count else math.nan

    @property
    def std(self):
        return math.sqrt(self.variance) if self.count else math.nan


def chunk_summary(values, mask=None, exact_limit=EXACT_LIMIT, delta=SKETCH_DELTA):
    """Summarize one chunk; only entries that are finite and flagged valid count."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    valid = np.isfinite(v)
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool).reshape(-1)
    v = v[valid]
    p = PartialSummary(sketch=QuantileSketch(delta), exact_limit=exact_limit)
    if v.size == 0:
        return p
    # in-chunk moments by two passes; chunks then combine with the pooled update
    mean = float(np.mean(v))
    dev = v - mean
    p.count = int(v.size)
    p.min = float(v.min())
    p.max = float(v.max())
    p.mean = mean
    p.m2 = float(np.dot(dev, dev))
    p.sketch.update(v)
    p.exact = v.copy() if v.size <= exact_limit else None
    return p


def merge_summaries(a, b):
    """Pooled summary of ``a`` and ``b``; neither input is modified."""
    if b.count == 0:
        return replace(a, sketch=a.sketch.copy(), exact=None if a.exact is None else a.exact.copy())
    if a.count == 0:
        return replace(b, sketch=b.sketch.copy(), exact=None if b.exact is None else b.exact.copy(),
                       exact_limit=min(a.exact_limit, b.exact_limit))
    n = a.count + b.count
    delta = b.mean - a.mean
    # symmetric forms keep merge(a, b) and merge(b, a) bit-identical
    mean = (a.count * a.mean + b.count * b.mean) / n
    m2 = a.m2 + b.m2 + delta * delta * (a.count * b.count / n)
    limit = min(a.exact_limit, b.exact_limit)
    exact = None
    if a.exact is not None and b.exact is not None and n <= limit:
        exact = np.concatenate([a.exact, b.exact])
    if a.sketch.delta != b.sketch.delta:
        raise InvalidArgumentError("cannot merge sketches with different delta")
    return PartialSummary(
        count=n,
        min=min(a.min, b.min),
        max=max(a.max, b.max),
        mean=mean,
        m2=m2,
        sketch=a.sketch.merge(b.sketch),
        exact=exact,
        exact_limit=limit,
    )


def tree_reduce(items, fn, shape="balanced"):
    """Reduce ``items`` with ``fn`` along a left fold, right fold or balanced tree."""
    items = list(items)
    if not items:
        raise InvalidArgumentError("nothing to reduce")
    if shape == "left":
        acc = items[0]
        for it in items[1:]:
            acc = fn(acc, it)
        return acc
    if shape == "right":
        acc = items[-1]
        for it in reversed(items[:-1]):
            acc = fn(it, acc)
        return acc
    if shape != "balanced":
        raise InvalidArgumentError(f"unknown tree shape {shape!r}")
    while len(items) > 1:
        nxt = [fn(items[i], items[i + 1]) for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


@dataclass(frozen=True)
class SummaryStats:
    count: int
    min: float
    max: float
    mean: float
    std: float
    q1: float
    median: float
    q3: float
    whisker_low: float
    whisker_high: float
    n_outliers: int | None
    quantile_method: str

    def as_dict(self):
        return asdict(self)


def count_outliers(values, low, high):
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    return int(np.count_nonzero((v < low) | (v > high)))


def finalize(p, n_outliers=None):
    """Boxplot statistics from a summary.

    Quartiles are exact (linear interpolation between order statistics)
    when raw values were retained, and read from the sketch otherwise.
    Whiskers follow Tukey's 1.5 IQR rule clamped to the observed range.  On
    the sketch path the outlier count needs a second pass over the data;
    pass it as ``n_outliers`` or leave it as ``None``.
    """
    if p.count == 0:
        raise EmptyBinError("cannot finalize an empty summary")
    if p.exact is not None and p.exact.size == p.count:
        q1, med, q3 = (float(v) for v in np.quantile(p.exact, [0.25, 0.5, 0.75]))
        method = "exact"
    else:
        q1, med, q3 = (float(v) for v in p.sketch.quantile(np.array([0.25, 0.5, 0.75])))
        method = "sketch"
    # interpolation can only land inside [min, max]; clamping guards rounding
    q1, med, q3 = (min(max(v, p.min), p.max) for v in (q1, med, q3))
    iqr = q3 - q1
    lo = max(p.min, q1 - 1.5 * iqr)
    hi = min(p.max, q3 + 1.5 * iqr)
    if method == "exact":
        n_outliers = count_outliers(p.exact, lo, hi)
    return SummaryStats(
        count=p.count,
        min=p.min,
        max=p.max,
        mean=p.mean,
        std=p.std,
        q1=q1,
        median=med,
        q3=q3,
        whisker_low=lo,
        whisker_high=hi,
        n_outliers=n_outliers,
        quantile_method=method,
    )


@dataclass
class BinnedPartials:
    """Per-bin summaries for one parameter plus the tallies of dropped rows."""

    summaries: list
    invalid: list  # per bin: rows in range whose value was invalid
    rejected: int = 0  # rows whose radius was invalid or out of range

    def merge(self, other):
        return BinnedPartials(
            [merge_summaries(a, b) for a, b in zip(self.summaries, other.summaries)],
            [a + b for a, b in zip(self.invalid, other.invalid)],
            self.rejected + other.rejected,
        )


def group_by_bin(radius, values, spec=None, radius_mask=None, value_mask=None,
                 exact_limit=EXACT_LIMIT):
    """Route one chunk of ``(radius, value)`` records into per-bin summaries."""
    spec = spec or BinSpec()
    r = np.asarray(radius, dtype=np.float64).reshape(-1)
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if r.shape != v.shape:
        raise InvalidArgumentError("radius and values must have the same length")
    r_ok = np.isfinite(r) if radius_mask is None else np.isfinite(r) & np.asarray(radius_mask, bool)
    v_ok = np.isfinite(v) if value_mask is None else np.isfinite(v) & np.asarray(value_mask, bool)
    idx = spec.assign(np.where(r_ok, r, np.nan))
    summaries, invalid = [], []
    for b in range(spec.n_bins):
        in_bin = idx == b
        summaries.append(chunk_summary(v[in_bin & v_ok], exact_limit=exact_limit))
        invalid.append(int(np.count_nonzero(in_bin & ~v_ok)))
    return BinnedPartials(summaries, invalid, int(np.count_nonzero(idx < 0)))


def parallel_reduce(func, items, merge, threads=None, shape="balanced"):
    """Map ``func`` over ``items`` on a thread pool, then tree-merge the results in input order."""
    items = list(items)
    threads = threads or worker_count()
    if threads == 1 or len(items) <= 1:
        parts = [func(it) for it in items]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(func, items))
    return tree_reduce(parts, merge, shape)


# ---------------------------------------------------------------------------
# store-level statistics


@dataclass
class StatsReport:
    """Finalized statistics keyed by parameter, then bin label."""

    spec: BinSpec
    parameters: dict  # name -> {"bins": {label: SummaryStats | None}, "invalid": {...}, "rejected": int}

    def to_dict(self):
        out = {"bin_edges": list(self.spec.edges), "parameters": {}}
        for name, entry in self.parameters.items():
            bins = {}
            for label, st in entry["bins"].items():
                row = st.as_dict() if st is not None else {"count": 0}
                row["invalid"] = entry["invalid"][label]
                bins[label] = row
            out["parameters"][name] = {"rejected": entry["rejected"], "bins": bins}
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, allow_nan=False, default=_none) + "\n"

    CSV_FIELDS = ("parameter", "bin", "count", "invalid", "min", "whisker_low", "q1", "median",
                  "q3", "whisker_high", "max", "mean", "std", "n_outliers", "quantile_method")

    def csv_rows(self, parameter=None):
        rows = []
        for name, entry in self.parameters.items():
            if parameter is not None and name != parameter:
                continue
            for label, st in entry["bins"].items():
                d = st.as_dict() if st is not None else {"count": 0}
                d.update(parameter=name, bin=label, invalid=entry["invalid"][label])
                rows.append([_csv_cell(d.get(k)) for k in self.CSV_FIELDS])
        return rows

    def to_csv(self, parameter=None):
        lines = [",".join(self.CSV_FIELDS)]
        lines += [",".join(r) for r in self.csv_rows(parameter)]
        return "\n".join(lines) + "\n"


def _none(o):
    raise TypeError(f"not serializable: {o!r}")


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def binned_stats(store, parameters, spec=None, threads=None, exact_limit=EXACT_LIMIT):
    """Boxplot statistics per parameter and radial bin over a chunked store.

    Chunks are summarized in parallel and merged in chunk order.  Bins too
    large for exact quantiles get a second traversal to count outliers
    against the sketch-derived whiskers.
    """
    from .store import RADIUS_COLUMN  # local import: store imports stats for BinSpec

    spec = spec or BinSpec()
    result = {}
    for name in parameters:
        store.column_meta(name)  # raises NotFoundError early

        def summarize(k, name=name):
            r, r_mask = store.read_column(RADIUS_COLUMN, k)
            v, v_mask = store.read_column(name, k)
            return group_by_bin(r, v, spec, r_mask, v_mask, exact_limit=exact_limit)

        if store.n_chunks == 0:
            binned = BinnedPartials([PartialSummary(exact_limit=exact_limit) for _ in range(spec.n_bins)],
                                    [0] * spec.n_bins, 0)
        else:
            binned = parallel_reduce(summarize, range(store.n_chunks), BinnedPartials.merge, threads)
        stats = [finalize(p) if p.count else None for p in binned.summaries]

        pending = [i for i, st in enumerate(stats) if st is not None and st.n_outliers is None]
        if pending:
            def count_chunk(k, name=name):
                r, r_mask = store.read_column(RADIUS_COLUMN, k)
                v, v_mask = store.read_column(name, k)
                idx = spec.assign(np.where(r_mask, r, np.nan))
                ok = v_mask & np.isfinite(v)
                return [count_outliers(v[(idx == i) & ok], stats[i].whisker_low, stats[i].whisker_high)
                        for i in pending]

            counts = parallel_reduce(count_chunk, range(store.n_chunks),
                                     lambda a, b: [x + y for x, y in zip(a, b)], threads)
            for i, c in zip(pending, counts):
                stats[i] = replace(stats[i], n_outliers=c)

        labels = spec.labels
        result[name] = {
            "bins": dict(zip(labels, stats)),
            "invalid": dict(zip(labels, binned.invalid)),
            "rejected": binned.rejected,
        }
    return StatsReport(spec, result)
