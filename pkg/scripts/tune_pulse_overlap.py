#!/usr/bin/env python3
"""Grid-search the drive parameters that overlap the two photon shapes.

The temporal shape of the emitted photon follows the drive Rabi
frequency and detuning, so the weaker transition's pulse can be tuned
to match the stronger one. Writes out/overlap/overlap.csv with the
Bhattacharyya overlap on a small (Rabi scale x detuning offset) grid.
"""

import json
import sys

from ioncavity.cli import main

CONFIG = {
    "lasers": {"drive": {"rabi_2pi_mhz": 106.0, "polarization": "sigma_minus"}},
    "overlap": {
        "rabi_2pi_mhz": 106.0,
        "duration_us": 30.0,
        "bin_ns": 400.0,
        "rabi_scale_grid": [0.9, 1.0, 1.12],
        "detuning_offset_2pi_mhz": [-0.1, 0.0, 0.1],
    },
}

if __name__ == "__main__":
    path = "out/overlap_config.json"
    import pathlib

    pathlib.Path("out").mkdir(exist_ok=True)
    pathlib.Path(path).write_text(json.dumps(CONFIG, indent=2))
    sys.exit(main(["--config", path, "--out", "out/overlap", "overlap"]))
