"""
Speed versus density on a grid
==============================

Fit a 2-D model to jointly valid (speed, density) rows of one radial bin and
evaluate it on a regular grid.
"""

import os
import tempfile

import numpy as np

from kdm_helio import kdm, synthetic
from kdm_helio.stats import BinSpec
from kdm_helio.store import collect_bin, convert, open_store
from kdm_helio.svg import block_average, heatmap_svg

work = tempfile.mkdtemp(prefix="kdm_helio_grid_")
src = synthetic.write_csv(os.path.join(work, "t.csv"), synthetic.solar_wind_table(50_000, seed=5))
convert(src, os.path.join(work, "store"))
store = open_store(os.path.join(work, "store"))

spec = BinSpec()
rows = collect_bin(store, ["vp_fit", "np_fit"], spec.index_of_label("0.2-0.3"), spec)
print(f"{rows.shape[0]} jointly valid rows in 0.2-0.3AU")

# density spans decades; fit it on a log scale
data = np.column_stack([rows[:, 0], np.log10(rows[:, 1])])
model = kdm.fit(data, kdm.TrainConfig(n_components=200, epochs=100), column_names=("vp_fit", "log10_np_fit"))

grid = kdm.density_grid(model, 256, 256)
print(f"Riemann sum over the padded box: {grid.riemann_sum():.4f}")
i, j = np.unravel_index(np.argmax(grid.values), grid.values.shape)
print(f"mode near v = {grid.x_axis[i]:.0f} km/s, n = {10 ** grid.y_axis[j]:.1f} cm^-3")

svg_path = os.path.join(work, "grid.svg")
with open(svg_path, "w") as fh:
    fh.write(heatmap_svg(block_average(grid), title="0.2-0.3AU", xlabel="vp_fit", ylabel="log10 np_fit"))
print("heatmap written to", svg_path)
