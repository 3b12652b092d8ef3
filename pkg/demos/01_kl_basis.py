"""
Estimating a Karhunen-Loeve basis from snapshots
================================================

A vector field on a grid is observed many times.  The method of snapshots
recovers its mean, leading eigenvalues and eigenfields from an S x S Gram
matrix, so the cost does not depend on the number of pixels.
"""

import numpy as np

from mlkl import SnapshotSet, build_grid_domain, fit_snapshots, truncate_reconstruct, PiecewiseField
from mlkl.app.simulate import SyntheticField

rng = np.random.default_rng(0)

# a 30 x 30 raster with two bands and a geometric spectrum
domain = build_grid_domain(30, 30, cell_measure=1.0, q=2)
lambdas = 4.0 * 0.8 ** np.arange(40)
field = SyntheticField.random(domain, lambdas, rng, mean=[0.2, 0.5])

###############################################################################
# Fit from 200 snapshots and keep the first 10 modes.

kl = fit_snapshots(SnapshotSet(domain, field.draw(200, rng)), M=10)
print("true lambdas     ", np.round(lambdas[:5], 3))
print("estimated lambdas", np.round(kl.lambdas[:5], 3))
print("tail sum t_M = %.4f (true %.4f)" % (kl.t_M, lambdas[10:].sum()))

###############################################################################
# The truncated expansion is the best rank-10 approximation: its mean squared
# error on fresh draws is close to the eigenvalue tail.

fresh = [PiecewiseField(domain, v) for v in field.draw(300, rng)]
err = np.mean([(f - truncate_reconstruct(f, kl)).norm() ** 2 for f in fresh])
print("mean truncation error^2 = %.4f" % err)
