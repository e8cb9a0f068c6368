"""Kernel Density Matrix estimation and chunked statistics for solar-wind time series."""
from .errors import (
    DataError,
    EmptyBinError,
    InvalidArgumentError,
    KdmHelioError,
    MissingDataError,
    NonConvergenceError,
    NotFoundError,
    ParseError,
    SchemaError,
    UnsupportedDimensionError,
)
from .kdm import (
    AnomalyMode,
    AnomalyThresholds,
    DensityGrid,
    Init,
    KdmModel,
    TrainConfig,
    anomaly_thresholds,
    cdf_eval,
    density_grid,
    fit,
    gradients,
    kernel_eval,
    load_model,
    log_density,
    log_likelihood,
    pdf,
    quantile,
    sample,
    save_model,
)
from .sketch import QuantileSketch
from .stats import (
    BinSpec,
    PartialSummary,
    SummaryStats,
    binned_stats,
    chunk_summary,
    finalize,
    group_by_bin,
    merge_summaries,
    tree_reduce,
)
from .store import ChunkedStore, StoreMeta, convert, open_store, read_column, stream_binned

__version__ = "0.1.0"
