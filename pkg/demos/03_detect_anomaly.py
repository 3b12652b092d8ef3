"""
Flagging an anomaly with distribution-free tests
================================================

Projecting a new frame onto the detail functions removes the natural
variability.  Each detail coefficient has variance at most t_M, so the
Chebyshev bound gives a p-value per tree cell without any distributional
assumption.
"""

import numpy as np

from mlkl import AnomalyFilter, build_grid_domain
from mlkl.app.simulate import SyntheticField

rng = np.random.default_rng(2)
domain = build_grid_domain(24, 24, q=2)
field = SyntheticField.random(domain, 0.6 ** np.arange(60), rng, mean=[1.0, 0.5], distribution="student_t3")
filt = AnomalyFilter(field.kl_basis(20), n0=4)

###############################################################################
# A typical frame is not rejected; adding a bump to a 6 x 6 patch is.

clean = field.draw(1, rng)[0]
bumped = clean.copy().reshape(24, 24, 2)
bumped[4:10, 12:18, 0] += 0.5
for name, frame in (("clean", clean), ("bumped", bumped.reshape(-1, 2))):
    report = filt.score(frame, alpha=0.01)
    print("%-7s anomaly norm %.3f, rejected cells %d" % (name, report.anomaly_norm, len(report.rejections)))

###############################################################################
# The anomaly map locates the change.

w = report.anomaly.values[:, 0].reshape(24, 24)
r, c = np.unravel_index(np.argmax(np.abs(w)), w.shape)
print("largest anomaly at pixel", (int(r), int(c)))
