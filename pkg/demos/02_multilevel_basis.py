"""
A multilevel basis adapted to the KL subspace
=============================================

A kd-tree splits the cells at the median of the widest coordinate.  Working
bottom-up, an SVD at every node separates functions that still see the KL
eigenfields from detail functions that are orthogonal to all of them.
"""

import numpy as np

from mlkl import build_grid_domain, build_multilevel, make_tree
from mlkl.app.simulate import SyntheticField

rng = np.random.default_rng(1)
domain = build_grid_domain(16, 16, q=3)
field = SyntheticField.random(domain, 0.7 ** np.arange(50), rng)
kl = field.kl_basis(12)

tree = make_tree(domain, n0=4)
basis = build_multilevel(tree, domain, kl)
print("tree depth", tree.depth, "with", len(tree.leaves), "leaves")
print("basis functions", basis.n_functions, "= N*q =", domain.n_dofs)
print("detail functions per level", basis.details_per_level())
print("SVD splits", basis.svd_calls)

###############################################################################
# The whole basis is orthonormal and the details never see the KL modes.

B = basis.dense()
print("max |B^T B - I| = %.1e" % np.abs(B.T @ B - np.eye(domain.n_dofs)).max())
print("max |(phi, psi)| = %.1e" % np.abs(kl.coords.T @ basis.detail_matrix).max())
