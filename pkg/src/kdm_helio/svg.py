"""Minimal SVG emitter for boxplots, line curves and density heatmaps.

Output is plain text with fixed number formatting so that identical
inputs give byte-identical files.
"""
from __future__ import annotations

import math
from html import escape

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


class Canvas:
    def __init__(self, width=640, height=420, margin=(50, 20, 60, 70)):
        self.width = width
        self.height = height
        # top, right, bottom, left
        self.mt, self.mr, self.mb, self.ml = margin
        self.parts = []

    @property
    def plot_w(self):
        return self.width - self.ml - self.mr

    @property
    def plot_h(self):
        return self.height - self.mt - self.mb

    def add(self, s):
        self.parts.append(s)

    def line(self, x1, y1, x2, y2, stroke="#000", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.add(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
                 f'stroke="{stroke}" stroke-width="{width:g}"{d}/>')

    def rect(self, x, y, w, h, fill="none", stroke="none", width=1.0):
        self.add(f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{h:.2f}" '
                 f'fill="{fill}" stroke="{stroke}" stroke-width="{width:g}"/>')

    def circle(self, x, y, r, fill="#000"):
        self.add(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r:g}" fill="{fill}"/>')

    def polyline(self, pts, stroke="#000", width=1.5):
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
        self.add(f'<polyline points="{coords}" fill="none" stroke="{stroke}" stroke-width="{width:g}"/>')

    def text(self, x, y, s, size=11, anchor="middle", rotate=None):
        tr = f' transform="rotate({rotate} {x:.2f} {y:.2f})"' if rotate is not None else ""
        self.add(f'<text x="{x:.2f}" y="{y:.2f}" font-family="sans-serif" font-size="{size}" '
                 f'text-anchor="{anchor}"{tr}>{escape(str(s))}</text>')

    def render(self):
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
                f'viewBox="0 0 {self.width} {self.height}">')
        body = "\n".join(self.parts)
        return f'{head}\n<rect width="100%" height="100%" fill="#fff"/>\n{body}\n</svg>\n'


class Axis:
    """Maps data values to pixel coordinates, linear or log10."""

    def __init__(self, lo, hi, p0, p1, log=False):
        if log:
            if lo <= 0:
                raise ValueError("log axis needs positive limits")
            lo, hi = math.log10(lo), math.log10(hi)
        if hi <= lo:
            hi = lo + 1.0
        self.lo, self.hi, self.p0, self.p1, self.log = lo, hi, p0, p1, log

    def __call__(self, v):
        v = np.asarray(v, dtype=np.float64)
        if self.log:
            v = np.log10(np.maximum(v, 10.0 ** self.lo))
        return self.p0 + (v - self.lo) / (self.hi - self.lo) * (self.p1 - self.p0)

    def ticks(self, n=5):
        if self.log:
            return [10.0 ** e for e in range(math.floor(self.lo), math.ceil(self.hi) + 1)
                    if self.lo - 1e-9 <= e <= self.hi + 1e-9]
        return list(np.linspace(self.lo, self.hi, n))


def _fmt_tick(v):
    return f"{v:.3g}"


def _frame(c, xaxis, yaxis, title, xlabel, ylabel, xticks=True):
    c.rect(c.ml, c.mt, c.plot_w, c.plot_h, stroke="#000")
    c.text(c.width / 2, c.mt - 20, title, size=14)
    c.text(c.ml + c.plot_w / 2, c.height - 15, xlabel, size=12)
    c.text(18, c.mt + c.plot_h / 2, ylabel, size=12, rotate=-90)
    for t in yaxis.ticks():
        y = float(yaxis(t))
        c.line(c.ml - 4, y, c.ml, y)
        c.text(c.ml - 6, y + 4, _fmt_tick(t), size=10, anchor="end")
    if xticks and xaxis is not None:
        for t in xaxis.ticks():
            x = float(xaxis(t))
            c.line(x, c.mt + c.plot_h, x, c.mt + c.plot_h + 4)
            c.text(x, c.mt + c.plot_h + 16, _fmt_tick(t), size=10)


def boxplot_svg(rows, title="", ylabel="", log_y=False):
    """Boxplots from ``(label, stats)`` pairs; ``stats`` needs the SummaryStats fields."""
    rows = [(lab, st) for lab, st in rows if st is not None]
    c = Canvas(width=max(320, 80 + 60 * len(rows)))
    if not rows:
        c.text(c.width / 2, c.height / 2, "no data")
        return c.render()
    lo = min(st.min for _, st in rows)
    hi = max(st.max for _, st in rows)
    if log_y and lo <= 0:
        log_y = False
    yaxis = Axis(lo, hi, c.mt + c.plot_h, c.mt, log=log_y)
    _frame(c, None, yaxis, title, "radial distance bin", ylabel, xticks=False)
    slot = c.plot_w / len(rows)
    for i, (label, st) in enumerate(rows):
        xc = c.ml + slot * (i + 0.5)
        half = min(18.0, slot * 0.3)
        y = {k: float(yaxis(getattr(st, k))) for k in
             ("min", "max", "whisker_low", "q1", "median", "q3", "whisker_high")}
        c.line(xc, y["whisker_low"], xc, y["q1"])
        c.line(xc, y["q3"], xc, y["whisker_high"])
        c.line(xc - half / 2, y["whisker_low"], xc + half / 2, y["whisker_low"])
        c.line(xc - half / 2, y["whisker_high"], xc + half / 2, y["whisker_high"])
        c.rect(xc - half, y["q3"], 2 * half, y["q1"] - y["q3"], fill="#cfe2f3", stroke="#000")
        c.line(xc - half, y["median"], xc + half, y["median"], stroke="#d62728", width=2)
        # extremes stand in for the individual outliers
        if st.max > st.whisker_high:
            c.circle(xc, y["max"], 2.5)
        if st.min < st.whisker_low:
            c.circle(xc, y["min"], 2.5)
        c.text(xc, c.mt + c.plot_h + 16, label.replace("AU", ""), size=9)
    return c.render()


def curves_svg(series, title="", xlabel="", ylabel="", log_y=False):
    """Overlayed polylines; ``series`` is a list of ``(label, xs, ys)``."""
    c = Canvas(width=680, margin=(50, 130, 60, 70))
    if not series:
        c.text(c.width / 2, c.height / 2, "no data")
        return c.render()
    xs_all = np.concatenate([np.asarray(s[1]) for s in series])
    ys_all = np.concatenate([np.asarray(s[2]) for s in series])
    if log_y:
        pos = ys_all[ys_all > 0]
        ylo = float(pos.min()) if pos.size else 1e-12
        ylo = max(ylo, float(ys_all.max()) * 1e-6)
    else:
        ylo = min(0.0, float(ys_all.min()))
    xaxis = Axis(float(xs_all.min()), float(xs_all.max()), c.ml, c.ml + c.plot_w)
    yaxis = Axis(ylo, float(ys_all.max()), c.mt + c.plot_h, c.mt, log=log_y)
    _frame(c, xaxis, yaxis, title, xlabel, ylabel)
    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        px, py = xaxis(xs), yaxis(ys)
        c.polyline(zip(px, py), stroke=color)
        ly = c.mt + 14 + 16 * i
        c.line(c.ml + c.plot_w + 10, ly - 4, c.ml + c.plot_w + 30, ly - 4, stroke=color, width=2)
        c.text(c.ml + c.plot_w + 34, ly, label, size=10, anchor="start")
    return c.render()


def _viridis_like(t):
    # piecewise-linear dark-blue -> teal -> yellow ramp
    stops = np.array([[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]], float)
    t = min(max(t, 0.0), 1.0) * (len(stops) - 1)
    i = min(int(t), len(stops) - 2)
    rgb = stops[i] + (stops[i + 1] - stops[i]) * (t - i)
    return "#%02x%02x%02x" % tuple(int(round(v)) for v in rgb)


def block_average(grid, max_cells=96):
    """Coarsen a density grid by block means so each axis has at most ``max_cells`` cells."""
    from .kdm import DensityGrid

    vals = np.asarray(grid.values, dtype=np.float64)
    fx = max(1, -(-vals.shape[0] // max_cells))
    fy = max(1, -(-vals.shape[1] // max_cells))
    nx, ny = vals.shape[0] // fx, vals.shape[1] // fy
    v = vals[:nx * fx, :ny * fy].reshape(nx, fx, ny, fy).mean(axis=(1, 3))
    xs = np.asarray(grid.x_axis)[:nx * fx].reshape(nx, fx).mean(axis=1)
    ys = np.asarray(grid.y_axis)[:ny * fy].reshape(ny, fy).mean(axis=1)
    return DensityGrid(xs, ys, v)


def heatmap_svg(grid, title="", xlabel="", ylabel="", log_color=True):
    """One coloured cell per grid node; coarsen large grids with :func:`block_average` first."""
    v = np.asarray(grid.values, dtype=np.float64)
    xs, ys = np.asarray(grid.x_axis), np.asarray(grid.y_axis)
    nx, ny = v.shape
    c = Canvas(width=600, height=520, margin=(50, 30, 60, 80))
    xaxis = Axis(float(xs[0]), float(xs[-1]), c.ml, c.ml + c.plot_w)
    yaxis = Axis(float(ys[0]), float(ys[-1]), c.mt + c.plot_h, c.mt)
    vmax = float(v.max()) if v.size else 0.0
    if vmax <= 0:
        norm = np.zeros_like(v)
    elif log_color:
        floor = vmax * 1e-4
        norm = (np.log10(np.maximum(v, floor)) - math.log10(floor)) / (math.log10(vmax) - math.log10(floor))
    else:
        norm = v / vmax
    cw, ch = c.plot_w / nx, c.plot_h / ny
    for i in range(nx):
        for j in range(ny):
            c.rect(c.ml + i * cw, c.mt + c.plot_h - (j + 1) * ch, cw + 0.3, ch + 0.3,
                   fill=_viridis_like(float(norm[i, j])))
    _frame(c, xaxis, yaxis, title, xlabel, ylabel)
    return c.render()
