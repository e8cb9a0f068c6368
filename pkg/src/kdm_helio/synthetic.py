"""Seeded synthetic solar-wind tables for tests and demos.

The generator mimics the qualitative structure of inner-heliosphere plasma
data: speed rising with distance, density falling roughly as r^-2 and
anti-correlated with speed, occasional fill values and blank cells.  It is
a fixture, not a physical model.
"""
from __future__ import annotations

import numpy as np

from .store import DEFAULT_FILL, RADIUS_COLUMN

COLUMNS = (RADIUS_COLUMN, "vp_fit", "np_fit", "wp_fit")


def solar_wind_table(n_rows, seed=0, fill_rate=0.01, blank_rate=0.005):
    """Return a dict of column arrays; invalid cells are ``DEFAULT_FILL`` or NaN (blank)."""
    rng = np.random.default_rng(seed)
    # perihelion passes dominate the sample count, as for a highly eccentric orbit
    r = 0.05 + 0.95 * rng.beta(1.3, 2.2, n_rows)
    slow = rng.random(n_rows) < 0.7
    speed = np.where(slow, rng.normal(300 + 150 * r, 40), rng.normal(550 + 100 * r, 70))
    speed = np.clip(speed, 120.0, None)
    density = 7.0 / r**2 * (400.0 / speed) ** 1.5 * rng.lognormal(0.0, 0.35, n_rows)
    thermal = rng.lognormal(np.log(40 + 80 * (speed - 200) / 400), 0.3)
    cols = {RADIUS_COLUMN: r, "vp_fit": speed, "np_fit": density, "wp_fit": thermal}
    for name in COLUMNS[1:]:
        v = cols[name]
        v[rng.random(n_rows) < fill_rate] = DEFAULT_FILL
        v[rng.random(n_rows) < blank_rate] = np.nan
    return cols


def write_csv(path, table):
    """Write a table from :func:`solar_wind_table`; NaN becomes an empty cell."""
    names = list(table)
    cols = [table[n] for n in names]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(names) + "\n")
        for row in zip(*cols):
            fh.write(",".join("" if v != v else repr(float(v)) for v in row) + "\n")
    return path
