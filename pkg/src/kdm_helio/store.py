"""Chunked columnar on-disk store for solar-wind time series.

Layout::

    <store>/meta.json            written last, by atomic rename
    <store>/<column>/c<k>.f64    little-endian float64, one value per row
    <store>/<column>/c<k>.mask   packed validity bits, LSB first, 1 = valid
    <store>/.lock                present while a writer is active

A directory without ``meta.json`` is not a store, so an interrupted
conversion is never visible to readers.
"""
from __future__ import annotations

import csv
import json
import math
import os
import re
import shutil
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .errors import DataError, NotFoundError, ParseError, SchemaError, StoreLockedError
from .stats import BinSpec

STORE_VERSION = 1
RADIUS_COLUMN = "radial_distance_au"
DEFAULT_FILL = -1.0e31
DEFAULT_CHUNK_ROWS = 1_048_576
SENTINEL_RTOL = 1e-6

_COLUMN_RE = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9_.\-]*$")
_CHUNK_RE = re.compile(r"^c\d+\.(f64|mask)$")


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    units: str = ""
    fill_sentinels: tuple = (DEFAULT_FILL,)

    def to_dict(self):
        return {"name": self.name, "units": self.units, "fill_sentinels": list(self.fill_sentinels)}


@dataclass(frozen=True)
class StoreMeta:
    row_count: int
    chunk_rows: int
    columns: tuple
    created_utc: str = ""
    version: int = STORE_VERSION

    @property
    def n_chunks(self):
        return -(-self.row_count // self.chunk_rows)

    def chunk_length(self, k):
        return min(self.chunk_rows, self.row_count - k * self.chunk_rows)

    def to_dict(self):
        return {
            "version": self.version,
            "row_count": self.row_count,
            "chunk_rows": self.chunk_rows,
            "columns": [c.to_dict() for c in self.columns],
            "created_utc": self.created_utc,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            cols = tuple(ColumnMeta(c["name"], c.get("units", ""), tuple(float(s) for s in c["fill_sentinels"]))
                         for c in d["columns"])
            meta = cls(int(d["row_count"]), int(d["chunk_rows"]), cols, d.get("created_utc", ""), int(d["version"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed store metadata: {exc}") from None
        if meta.version != STORE_VERSION:
            raise SchemaError(f"unsupported store version {meta.version}")
        if meta.row_count < 0 or meta.chunk_rows < 1:
            raise SchemaError("store metadata has invalid row_count/chunk_rows")
        return meta


def validity_mask(values, sentinels=(DEFAULT_FILL,)):
    """True where a value is finite and does not match any fill sentinel."""
    v = np.asarray(values, dtype=np.float64)
    ok = np.isfinite(v)
    for s in sentinels:
        if s == 0:
            ok &= v != 0
        else:
            ok &= ~(np.abs(v - s) <= SENTINEL_RTOL * abs(s))
    return ok


def pack_mask(mask):
    return np.packbits(np.asarray(mask, dtype=bool), bitorder="little").tobytes()


def unpack_mask(raw, n):
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8), count=n, bitorder="little").astype(bool)


class _Lock:
    def __init__(self, path):
        self.path = path

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StoreLockedError(f"{self.path} exists; another writer is active") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        try:
            os.remove(self.path)
        except FileNotFoundError:
            pass


def _prepare_output(path, columns):
    """Make ``path`` an empty store directory, refusing to clobber foreign files."""
    os.makedirs(path, exist_ok=True)
    meta = os.path.join(path, "meta.json")
    if os.path.exists(meta):
        os.remove(meta)  # the old store becomes invisible before anything else changes
    for entry in os.listdir(path):
        full = os.path.join(path, entry)
        if entry in (".lock", "meta.json.tmp"):
            continue
        if os.path.isdir(full) and all(_CHUNK_RE.match(f) for f in os.listdir(full)):
            shutil.rmtree(full)
            continue
        raise DataError(f"{path} contains {entry!r} and is not a store; refusing to overwrite")
    for c in columns:
        os.makedirs(os.path.join(path, c), exist_ok=True)


def convert(input_csv, output, chunk_rows=DEFAULT_CHUNK_ROWS, fill_sentinels=None, units=None,
            created_utc=None):
    """Convert a CSV table into a chunked store and return its metadata.

    Every column of the CSV is stored; ``radial_distance_au`` and at least
    one parameter column are required.  Empty cells, non-finite values and
    values within 1e-6 relative of a column's fill sentinels are flagged
    invalid.  ``fill_sentinels`` and ``units`` map column names to
    overrides.
    """
    if chunk_rows < 1:
        raise SchemaError("chunk_rows must be >= 1")
    fill_sentinels = fill_sentinels or {}
    units = units or {}
    with open(input_csv, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{input_csv} is empty; a header row is required") from None
        if RADIUS_COLUMN not in header:
            raise SchemaError(f"missing required column {RADIUS_COLUMN!r}")
        if len(header) < 2:
            raise SchemaError("at least one parameter column is required besides the radius")
        if len(set(header)) != len(header):
            raise SchemaError(f"duplicate column names in header: {header}")
        for name in header:
            if not _COLUMN_RE.match(name):
                raise SchemaError(f"column name {name!r} is not usable as a directory name")
        for name in list(fill_sentinels) + list(units):
            if name not in header:
                raise SchemaError(f"option refers to unknown column {name!r}")
        columns = tuple(ColumnMeta(n, units.get(n, ""), tuple(float(s) for s in fill_sentinels.get(n, (DEFAULT_FILL,))))
                        for n in header)

        os.makedirs(output, exist_ok=True)
        with _Lock(os.path.join(output, ".lock")):
            _prepare_output(output, header)
            ncol = len(header)
            buf = [[] for _ in range(ncol)]
            k = 0
            rows = 0

            def flush():
                nonlocal k
                for col, vals in zip(columns, buf):
                    arr = np.array(vals, dtype="<f8")
                    base = os.path.join(output, col.name, f"c{k}")
                    with open(base + ".f64", "wb") as f:
                        f.write(arr.tobytes())
                    with open(base + ".mask", "wb") as f:
                        f.write(pack_mask(validity_mask(arr, col.fill_sentinels)))
                    vals.clear()
                k += 1

            for line_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != ncol:
                    raise SchemaError(f"row {line_no} has {len(row)} cells, expected {ncol}")
                for j, cell in enumerate(row):
                    cell = cell.strip()
                    if cell == "":
                        buf[j].append(math.nan)
                        continue
                    try:
                        buf[j].append(float(cell))
                    except ValueError:
                        raise ParseError(line_no, header[j], cell) from None
                rows += 1
                if rows % chunk_rows == 0:
                    flush()
            if buf[0]:
                flush()

            if created_utc is None:
                created_utc = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
            meta = StoreMeta(rows, chunk_rows, columns, created_utc)
            tmp = os.path.join(output, "meta.json.tmp")
            with open(tmp, "w") as f:
                f.write(json.dumps(meta.to_dict(), indent=1) + "\n")
            os.replace(tmp, os.path.join(output, "meta.json"))
    return meta


class ChunkedStore:
    """Read-only view of a converted store; construction validates the layout."""

    def __init__(self, path):
        self.path = path
        meta_path = os.path.join(path, "meta.json")
        if not os.path.isfile(meta_path):
            raise NotFoundError(f"no store at {path} (meta.json missing)")
        try:
            with open(meta_path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{meta_path}: {exc}") from None
        self.meta = StoreMeta.from_dict(doc)
        self._columns = {c.name: c for c in self.meta.columns}
        if RADIUS_COLUMN not in self._columns:
            raise SchemaError(f"store lacks the {RADIUS_COLUMN!r} column")
        for c in self.meta.columns:
            for k in range(self.meta.n_chunks):
                n = self.meta.chunk_length(k)
                base = os.path.join(path, c.name, f"c{k}")
                for ext, size in ((".f64", 8 * n), (".mask", -(-n // 8))):
                    try:
                        actual = os.path.getsize(base + ext)
                    except OSError:
                        raise SchemaError(f"store is incomplete: {base + ext} missing") from None
                    if actual != size:
                        raise SchemaError(f"{base + ext} has {actual} bytes, expected {size}")

    def __repr__(self):
        return f"ChunkedStore({self.path!r}, rows={self.row_count}, chunks={self.n_chunks})"

    @property
    def row_count(self):
        return self.meta.row_count

    @property
    def n_chunks(self):
        return self.meta.n_chunks

    @property
    def column_names(self):
        return [c.name for c in self.meta.columns]

    def column_meta(self, name):
        try:
            return self._columns[name]
        except KeyError:
            raise NotFoundError(f"unknown column {name!r}; store has {self.column_names}") from None

    def read_column(self, column, chunk_index):
        """Return ``(values, mask)`` for one chunk; invalid entries read as NaN."""
        self.column_meta(column)
        if not 0 <= chunk_index < self.n_chunks:
            raise NotFoundError(f"chunk {chunk_index} out of range [0, {self.n_chunks})")
        n = self.meta.chunk_length(chunk_index)
        base = os.path.join(self.path, column, f"c{chunk_index}")
        with open(base + ".f64", "rb") as fh:
            values = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
        with open(base + ".mask", "rb") as fh:
            mask = unpack_mask(fh.read(), n)
        values[~mask] = np.nan
        return values, mask

    def read_all(self, column):
        parts = [self.read_column(column, k) for k in range(self.n_chunks)]
        if not parts:
            return np.empty(0), np.empty(0, dtype=bool)
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def open_store(path):
    return ChunkedStore(path)


def read_column(store, column, chunk_index):
    return store.read_column(column, chunk_index)


def stream_binned(store, columns, spec=None):
    """Yield ``(bin_index, rows)`` per chunk and bin, rows as a (k, len(columns)) array.

    Only rows whose radius and every requested column are valid are
    yielded; bin assignment matches :meth:`BinSpec.assign`.
    """
    spec = spec or BinSpec()
    columns = list(columns)
    for c in columns:
        store.column_meta(c)
    for k in range(store.n_chunks):
        r, ok = store.read_column(RADIUS_COLUMN, k)
        cols = []
        for c in columns:
            v, m = store.read_column(c, k)
            cols.append(v)
            ok = ok & m
        idx = spec.assign(np.where(ok, r, np.nan))
        block = np.column_stack(cols) if cols else np.empty((r.size, 0))
        for b in range(spec.n_bins):
            sel = idx == b
            if sel.any():
                yield b, block[sel]


def collect_bin(store, columns, bin_index, spec=None):
    """All jointly-valid rows of one bin, concatenated in store order."""
    spec = spec or BinSpec()
    parts = [rows for b, rows in stream_binned(store, columns, spec) if b == bin_index]
    if not parts:
        return np.empty((0, len(columns)))
    return np.concatenate(parts)
