"""
The whole pipeline through the command line
===========================================

Drive ingest, statistics, fits and derived products with ``kdm-helio``
using one JSON config.  Equivalent shell commands are printed as we go.
"""

import json
import os
import tempfile

from kdm_helio import synthetic
from kdm_helio.cli import main

work = tempfile.mkdtemp(prefix="kdm_helio_cli_")
src = synthetic.write_csv(os.path.join(work, "psp_like.csv"), synthetic.solar_wind_table(30_000, seed=11))


def run(*argv):
    print("$ kdm-helio", " ".join(argv))
    code = main(list(argv))
    assert code == 0, code


run("ingest", "--input", src, "--store", os.path.join(work, "store"), "--units", "vp_fit=km/s",
    "--units", "np_fit=cm^-3", "--units", "wp_fit=km/s")

config = {
    "store": os.path.join(work, "store"),
    "out": os.path.join(work, "out"),
    "params": ["vp_fit", "wp_fit"],
    "pairs": [["vp_fit", "np_fit"]],
    "bin": "0.1-0.2,0.2-0.3",
    "components": 400,
    "epochs": 60,
    "alpha": 0.001,
}
cfg_path = os.path.join(work, "run.json")
with open(cfg_path, "w") as fh:
    json.dump(config, fh, indent=1)

run("report", "--config", cfg_path)

with open(os.path.join(work, "out", "report.json")) as fh:
    print(len(json.load(fh)["artifacts"]), "artifacts under", os.path.join(work, "out"))
