"""
Following one pixel through a disturbance
=========================================

A stack of frames records a patch that degrades, recovers, and has one bad
acquisition in between.  The per-pixel anomaly series tracks the change and
robust LOESS smoothing discards the single-frame outlier.
"""

import io
import tempfile
from pathlib import Path

import numpy as np

from mlkl.app import FilterConfig, cmd_fit, cmd_sequence, simulate

spec = {
    "rows": 30, "cols": 30, "q": 2, "frames": 60, "noise": 0.0005,
    "spectrum": {"geometric": {"scale": 2.0, "ratio": 0.6, "count": 40}},
    "anomalies": [
        {"kind": "step", "start": 25, "stop": 45, "region": [10, 20, 10, 20], "amplitude": -0.3},
        {"kind": "ramp", "start": 45, "stop": 50, "region": [10, 20, 10, 20], "amplitude": -0.25, "end_amplitude": -0.05},
        {"kind": "spike", "frames": [35], "region": [10, 20, 10, 20], "amplitude": 1.0},
    ],
}
stack, _ = simulate(spec, seed=3)

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "filter.npz"
    cmd_fit(stack, FilterConfig(M=15), path, train_range="0:20", stream=io.StringIO())
    days, raw, smooth = cmd_sequence(stack, path, (15, 15), Path(tmp) / "seq.csv", span=0.3)

###############################################################################
# Band 0 around the disturbance: the outlier at frame 35 is gone once smoothed.

for i in range(23, 53, 3):
    print("frame %2d (day %2d)  anomaly %+.3f  smoothed %+.3f" % (i, days[i], raw[i, 0], smooth[i, 0]))
print("frame 35: raw %+.3f, smoothed %+.3f" % (raw[35, 0], smooth[35, 0]))
