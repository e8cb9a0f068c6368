"""kdm-helio command line: ingest, binned statistics, KDM fits and their products.

Every command accepts ``--config FILE`` (JSON); flags override config
values.  Failures print ``error: <category>: <detail>`` on stderr and exit
with 2 (usage), 3 (schema), 4 (data) or 5 (numeric non-convergence).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import kdm
from .errors import DataError, KdmHelioError, NotFoundError, StoreLockedError, UsageError
from .stats import BinSpec, binned_stats
from .store import RADIUS_COLUMN, collect_bin, convert, open_store
from .svg import block_average, boxplot_svg, curves_svg, heatmap_svg

DEFAULTS = {
    "out": "out",
    "bins": "0:1:0.1",
    "components": 400,
    "lr": 1e-3,
    "sigma_init": 0.1,
    "epochs": None,
    "batch_size": None,
    "seed": 0,
    "init": "subsample",
    "raw": False,
    "max_points": 0,
    "alpha": 0.001,
    "mode": "quantile",
    "points": 512,
    "nx": 128,
    "ny": 128,
    "n": 1000,
    "chunk_rows": 1_048_576,
    "exact_limit": 10_000_000,
    "min_points": None,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class Run:
    """Resolved options for one command plus artifact bookkeeping."""

    def __init__(self, args):
        cfg = {}
        if args.config:
            try:
                with open(args.config) as fh:
                    cfg = json.load(fh)
            except OSError as exc:
                raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from None
            except json.JSONDecodeError as exc:
                raise UsageError(f"config {args.config} is not valid JSON: {exc}") from None
            if not isinstance(cfg, dict):
                raise UsageError("config file must hold a JSON object")
        self.args = args
        self.cfg = cfg
        self.artifacts = []

    def get(self, key):
        v = getattr(self.args, key, None)
        if v is not None:
            return v
        if key in self.cfg:
            return self.cfg[key]
        return DEFAULTS.get(key)

    def require(self, key):
        v = self.get(key)
        if v is None or v == "":
            raise UsageError(f"--{key.replace('_', '-')} is required (flag or config)")
        return v

    @property
    def out(self):
        return self.get("out")

    def bins(self):
        spec = self.get("bins")
        if isinstance(spec, list):
            return BinSpec(tuple(spec))
        return BinSpec.parse(str(spec))

    def store(self):
        return open_store(self.require("store"))

    def path(self, *parts):
        p = os.path.join(self.out, *parts)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        return p

    def emit(self, path, text):
        with open(path, "w", newline="") as fh:
            fh.write(text)
        self.record(path)

    def record(self, path):
        self.artifacts.append(path)
        print(f"wrote {path}")

    def train_config(self):
        kw = {
            "n_components": int(self.get("components")),
            "learning_rate": float(self.get("lr")),
            "sigma_init": float(self.get("sigma_init")),
            "seed": int(self.get("seed")),
            "init": self.get("init"),
            "standardize": not bool(self.get("raw")),
        }
        if self.get("epochs") is not None:
            kw["epochs"] = int(self.get("epochs"))
        bs = self.get("batch_size")
        if bs is not None:
            try:
                kw["batch_size"] = bs if bs in ("full", "auto") else int(bs)
            except ValueError:
                raise UsageError(f"--batch-size must be 'auto', 'full' or an integer, got {bs!r}") from None
        return kdm.TrainConfig(**kw)


def _param_list(value):
    if isinstance(value, list):
        return [str(v) for v in value]
    return [p.strip() for p in str(value).split(",") if p.strip()]


def _model_name(columns, label):
    return f"{'+'.join(columns)}_{label}"


def _selected_bins(run, spec):
    sel = run.get("bin")
    if sel is None or sel == "all":
        return list(range(spec.n_bins)), False
    labels = _param_list(sel)
    return [spec.index_of_label(lab) for lab in labels], True


def _load(run, columns, label):
    path = os.path.join(run.out, "models", _model_name(columns, label) + ".json")
    if not os.path.isfile(path):
        raise NotFoundError(f"model not found ({path}); run `kdm-helio fit` first")
    return kdm.load_model(path)


def _fitted_bins(run, columns, spec):
    idx, explicit = _selected_bins(run, spec)
    out = []
    for i in idx:
        label = spec.label(i)
        path = os.path.join(run.out, "models", _model_name(columns, label) + ".json")
        if os.path.isfile(path) or explicit:
            out.append((i, label, _load(run, columns, label)))
    if not out:
        raise NotFoundError(f"model not found for {'+'.join(columns)} in {run.out}/models")
    return out


def _fmt(v):
    return repr(float(v))


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(run):
    fills = {}
    for item in run.get("fill") or []:
        col, _, vals = item.partition("=")
        if not vals:
            raise UsageError(f"--fill expects COL=VALUE[,VALUE], got {item!r}")
        try:
            fills[col] = tuple(float(v) for v in vals.split(","))
        except ValueError:
            raise UsageError(f"--fill value for {col!r} is not a number") from None
    units = {}
    for item in run.get("units") or []:
        col, _, u = item.partition("=")
        units[col] = u
    store = run.require("store")
    meta = convert(run.require("input"), store, chunk_rows=int(run.get("chunk_rows")),
                   fill_sentinels=fills, units=units)
    run.artifacts.append(os.path.join(store, "meta.json"))
    print(f"wrote {store} ({meta.row_count} rows, {meta.n_chunks} chunks, {len(meta.columns)} columns)")
    return 0


def cmd_stats(run):
    store = run.store()
    spec = run.bins()
    params = _param_list(run.get("params") or [c for c in store.column_names if c != RADIUS_COLUMN])
    report = binned_stats(store, params, spec, exact_limit=int(run.get("exact_limit")))
    os.makedirs(run.out, exist_ok=True)
    run.emit(run.path("stats.json"), report.to_json())
    run.emit(run.path("stats.csv"), report.to_csv())
    if not run.get("no_plots"):
        for p in params:
            units = store.column_meta(p).units
            rows = list(report.parameters[p]["bins"].items())
            run.emit(run.path(f"boxplot_{p}.csv"), report.to_csv(parameter=p))
            run.emit(run.path(f"boxplot_{p}.svg"),
                     boxplot_svg(rows, title=f"{p} by radial distance", ylabel=f"{p} [{units}]" if units else p,
                                 log_y=bool(run.get("log_y"))))
    return 0


def _fit_one(run, store, columns, spec, i, cfg, explicit):
    label = spec.label(i)
    data = collect_bin(store, columns, i, spec)
    max_points = int(run.get("max_points") or 0)
    if max_points and data.shape[0] > max_points:
        rng = np.random.default_rng(cfg.seed)
        data = data[np.sort(rng.choice(data.shape[0], size=max_points, replace=False))]
    min_points = run.get("min_points")
    need = max(cfg.n_components, int(min_points) if min_points else 0)
    if data.shape[0] < need:
        msg = f"bin {label} has {data.shape[0]} valid rows for {'+'.join(columns)}, need {need}"
        if explicit:
            raise DataError(msg)
        print(f"skipped {msg}")
        return None
    model = kdm.fit(data, cfg, column_names=tuple(columns))
    path = run.path("models", _model_name(columns, label) + ".json")
    kdm.save_model(model, path)
    run.record(path)
    return model


def cmd_fit(run):
    store = run.store()
    spec = run.bins()
    columns = _param_list(run.require("param"))
    if len(columns) not in (1, 2):
        raise UsageError("--param takes one column (univariate) or two comma-separated columns")
    for c in columns:
        store.column_meta(c)
    cfg = run.train_config()
    idx, explicit = _selected_bins(run, spec)
    fitted = [i for i in idx if _fit_one(run, store, columns, spec, i, cfg, explicit) is not None]
    if not fitted:
        raise DataError(f"no bin had enough data to fit {'+'.join(columns)}")
    return 0


def cmd_curves(run):
    spec = run.bins()
    columns = _param_list(run.require("param"))
    if len(columns) != 1:
        raise UsageError("curves need a single --param")
    models = _fitted_bins(run, columns, spec)
    n_points = int(run.get("points"))
    bounds = [kdm.default_bounds(m)[0] for _, _, m in models]
    lo, hi = min(b[0] for b in bounds), max(b[1] for b in bounds)
    pdf_series, cdf_series = [], []
    table = ["bin,x,pdf,cdf"]
    for _, label, model in models:
        xs, p, c = kdm.curve(model, n_points, (lo, hi))
        path = run.path("curves", _model_name(columns, label) + ".csv")
        kdm.write_curve_csv(path, xs, p, c)
        run.record(path)
        pdf_series.append((label, xs, p))
        cdf_series.append((label, xs, c))
        table += [f"{label},{_fmt(a)},{_fmt(b)},{_fmt(d)}" for a, b, d in zip(xs, p, c)]
    if not run.get("no_plots"):
        name = columns[0]
        run.emit(run.path(f"curves_{name}.csv"), "\n".join(table) + "\n")
        run.emit(run.path(f"curves_{name}_cdf.svg"),
                 curves_svg(cdf_series, title=f"CDF of {name}", xlabel=name, ylabel="CDF"))
        run.emit(run.path(f"curves_{name}_pdf.svg"),
                 curves_svg(pdf_series, title=f"PDF of {name}", xlabel=name, ylabel="PDF"))
    return 0


def cmd_grid(run):
    spec = run.bins()
    columns = _param_list(run.require("param"))
    if len(columns) != 2:
        raise UsageError("grid needs two comma-separated columns in --param")
    for _, label, model in _fitted_bins(run, columns, spec):
        grid = kdm.density_grid(model, int(run.get("nx")), int(run.get("ny")))
        stem = _model_name(columns, label)
        path = run.path("grids", stem + ".csv")
        kdm.write_grid_csv(path, grid)
        run.record(path)
        if not run.get("no_plots"):
            cells = block_average(grid)
            cell_path = run.path("grids", stem + "_cells.csv")
            kdm.write_grid_csv(cell_path, cells)
            run.record(cell_path)
            run.emit(run.path("grids", stem + ".svg"),
                     heatmap_svg(cells, title=f"{columns[0]} vs {columns[1]}, {label}",
                                 xlabel=columns[0], ylabel=columns[1]))
    return 0


def cmd_sample(run):
    spec = run.bins()
    columns = _param_list(run.require("param"))
    n = int(run.get("n"))
    if n < 0:
        raise UsageError("--n must be >= 0")
    for _, label, model in _fitted_bins(run, columns, spec):
        x = kdm.sample(model, n, int(run.get("seed")))
        lines = [",".join(model.column_names)]
        lines += [",".join(_fmt(v) for v in row) for row in x]
        run.emit(run.path("samples", _model_name(columns, label) + ".csv"), "\n".join(lines) + "\n")
    return 0


def cmd_anomaly(run):
    spec = run.bins()
    columns = _param_list(run.require("param"))
    alpha = float(run.get("alpha"))
    mode = kdm.AnomalyMode(run.get("mode"))
    store = None
    doc = {"parameter": "+".join(columns), "mode": mode.value, "alpha": alpha, "bins": {}}
    lines = ["bin,mode,alpha,lower,upper,density_floor"]
    for i, label, model in _fitted_bins(run, columns, spec):
        ld = None
        if mode == kdm.AnomalyMode.LOW_DENSITY:
            # saved models do not carry training densities; re-evaluate on the bin's rows
            store = store or run.store()
            ld = kdm.log_density(model, collect_bin(store, columns, i, spec))
        th = kdm.anomaly_thresholds(model, alpha, mode, train_log_density=ld)
        doc["bins"][label] = th.to_dict()
        cells = [th.lower, th.upper, th.density_floor]
        lines.append(",".join([label, mode.value, _fmt(alpha)] + ["" if v is None else _fmt(v) for v in cells]))
    stem = f"{'+'.join(columns)}_{mode.value}"
    run.emit(run.path("anomaly", stem + ".json"), json.dumps(doc, indent=1) + "\n")
    run.emit(run.path("anomaly", stem + ".csv"), "\n".join(lines) + "\n")
    return 0


def cmd_report(run):
    """Full pipeline from one config: stats, fits, curves, grids and thresholds."""
    store = run.store()
    params = _param_list(run.get("params") or [c for c in store.column_names if c != RADIUS_COLUMN])
    pairs = run.get("pairs") or []
    cmd_stats(run)
    sub = argparse.Namespace(**vars(run.args))
    for p in params:
        sub.param = p
        child = Run.__new__(Run)
        child.args, child.cfg, child.artifacts = sub, run.cfg, run.artifacts
        try:
            cmd_fit(child)
        except DataError as exc:
            print(f"skipped {p}: {exc}")
            continue
        cmd_curves(child)
        cmd_anomaly(child)
    for pair in pairs:
        sub.param = ",".join(pair) if isinstance(pair, list) else pair
        child = Run.__new__(Run)
        child.args, child.cfg, child.artifacts = sub, run.cfg, run.artifacts
        try:
            cmd_fit(child)
        except DataError as exc:
            print(f"skipped {sub.param}: {exc}")
            continue
        cmd_grid(child)
    index = {"artifacts": sorted(os.path.relpath(a, run.out) for a in run.artifacts)}
    run.emit(run.path("report.json"), json.dumps(index, indent=1) + "\n")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "stats": cmd_stats,
    "fit": cmd_fit,
    "curves": cmd_curves,
    "grid": cmd_grid,
    "sample": cmd_sample,
    "anomaly": cmd_anomaly,
    "report": cmd_report,
}


def build_parser():
    p = _Parser(prog="kdm-helio", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, store=True):
        sp.add_argument("--config", help="JSON config file; flags override it")
        sp.add_argument("--out", help="output directory (default ./out)")
        if store:
            sp.add_argument("--store", help="chunked store directory")
        sp.add_argument("--bins", help='radial bins, "start:stop:step" or comma-separated edges (default 0:1:0.1)')

    def kdm_flags(sp):
        sp.add_argument("--param", help="column, or two comma-separated columns for a 2-D model")
        sp.add_argument("--bin", help='bin label such as "0.2-0.3" (or "all", the default)')
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("ingest", help="convert a CSV table into a chunked store")
    sp.add_argument("--config")
    sp.add_argument("--input", help="input CSV with a header row")
    sp.add_argument("--store", help="output store directory")
    sp.add_argument("--chunk-rows", type=int)
    sp.add_argument("--fill", action="append", help="COL=VALUE[,VALUE] fill sentinels (repeatable)")
    sp.add_argument("--units", action="append", help="COL=UNITS (repeatable)")

    sp = sub.add_parser("stats", help="boxplot statistics per parameter and radial bin")
    common(sp)
    sp.add_argument("--params", help="comma-separated columns (default: all but the radius)")
    sp.add_argument("--exact-limit", type=int, help="largest bin that gets exact quantiles")
    sp.add_argument("--log-y", action="store_true", default=None)
    sp.add_argument("--no-plots", action="store_true", default=None)

    sp = sub.add_parser("fit", help="fit KDM models per bin")
    common(sp)
    kdm_flags(sp)
    sp.add_argument("--components", type=int, help="number of components; 400, 800 and 1600 are the usual presets")
    sp.add_argument("--lr", type=float)
    sp.add_argument("--sigma-init", type=float)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch-size")
    sp.add_argument("--init", choices=[i.value for i in kdm.Init])
    sp.add_argument("--raw", action="store_true", default=None, help="skip standardization")
    sp.add_argument("--max-points", type=int, help="seeded subsample cap per bin (0 = all rows)")
    sp.add_argument("--min-points", type=int, help="skip bins with fewer rows than this")

    sp = sub.add_parser("curves", help="PDF/CDF curves of fitted 1-D models")
    common(sp, store=False)
    kdm_flags(sp)
    sp.add_argument("--points", type=int)
    sp.add_argument("--no-plots", action="store_true", default=None)

    sp = sub.add_parser("grid", help="density grids of fitted 2-D models")
    common(sp, store=False)
    kdm_flags(sp)
    sp.add_argument("--nx", type=int)
    sp.add_argument("--ny", type=int)
    sp.add_argument("--no-plots", action="store_true", default=None)

    sp = sub.add_parser("sample", help="draw samples from fitted models")
    common(sp, store=False)
    kdm_flags(sp)
    sp.add_argument("--n", type=int)

    sp = sub.add_parser("anomaly", help="anomaly thresholds from fitted models")
    common(sp)
    kdm_flags(sp)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--mode", choices=[m.value for m in kdm.AnomalyMode])

    sp = sub.add_parser("report", help="run stats, fits, curves, grids and thresholds from a config")
    common(sp)
    kdm_flags(sp)
    sp.add_argument("--params")
    sp.add_argument("--components", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--sigma-init", type=float)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch-size")
    sp.add_argument("--init", choices=[i.value for i in kdm.Init])
    sp.add_argument("--raw", action="store_true", default=None)
    sp.add_argument("--max-points", type=int)
    sp.add_argument("--min-points", type=int)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--mode", choices=[m.value for m in kdm.AnomalyMode])
    sp.add_argument("--exact-limit", type=int)
    sp.add_argument("--points", type=int)
    sp.add_argument("--nx", type=int)
    sp.add_argument("--ny", type=int)
    sp.add_argument("--log-y", action="store_true", default=None)
    sp.add_argument("--no-plots", action="store_true", default=None)
    return p


def _log_run(run, command, status):
    if not os.path.isdir(run.out):
        return
    entry = {
        "utc": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
        "command": command,
        "argv": sys.argv[1:],
        "status": status,
        "artifacts": run.artifacts,
    }
    with open(os.path.join(run.out, "run_log.jsonl"), "a") as fh:
        fh.write(json.dumps(entry) + "\n")


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError(f"a command is required: {', '.join(COMMANDS)}")
        run = Run(args)
    except KdmHelioError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code

    lock = None
    status = 0
    try:
        if args.command != "ingest":
            os.makedirs(run.out, exist_ok=True)
            lock = os.path.join(run.out, ".lock")
            try:
                fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                os.close(fd)
            except FileExistsError:
                lock = None
                raise StoreLockedError(f"{run.out} is locked by another command (.lock present)") from None
        status = COMMANDS[args.command](run)
    except KdmHelioError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        status = exc.exit_code
    except OSError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        status = 4
    except (ValueError, TypeError) as exc:
        # config values bypass argparse typing; report them as usage errors
        print(f"error: usage: {exc}", file=sys.stderr)
        status = 2
    finally:
        if lock:
            os.remove(lock)
    if args.command != "ingest":
        _log_run(run, args.command, status)
    return status


if __name__ == "__main__":
    sys.exit(main())
