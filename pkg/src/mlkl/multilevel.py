"""Multilevel orthonormal basis adapted to a truncated KL subspace.

Working bottom-up through the kd-tree, each node collects a set of
orthonormal functions (indicator functions at the leaves, the children's
carried functions elsewhere), forms their moments against the KL
eigenfields and splits them with an SVD.  Right singular vectors with
non-zero singular values give the *carried* functions passed to the parent;
the remaining ones span the nullspace of the moment matrix and give the
*detail* functions, which are orthogonal to every eigenfield.  The details
of all nodes together with the root's carried functions form an
orthonormal basis of the whole piecewise-constant field space.

All functions are stored in indicator coordinates as dense blocks over the
degrees of freedom of their node: ``dofs`` lists the coordinates and each
column of the block is one function.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DomainMismatchError, InvalidArgumentError, PreconditionError
from .geometry import IndicatorBasis, PiecewiseField, SimplicialDomain
from .partition import PartitionTree, TreeNode
from .spectral import KLBasis

__all__ = [
    "SparseFunction",
    "CellBasis",
    "MultilevelBasis",
    "local_moment_matrix",
    "svd_split",
    "build_multilevel",
    "DEFAULT_RANK_TOL",
]

DEFAULT_RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SparseFunction:
    """A field given by its coefficients on a subset of indicator functions."""

    dofs: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        dofs = np.asarray(self.dofs, dtype=np.int64).reshape(-1)
        coeffs = np.asarray(self.coeffs, dtype=np.float64).reshape(-1)
        if dofs.size != coeffs.size:
            raise InvalidArgumentError("dofs and coeffs must have equal length")
        object.__setattr__(self, "dofs", dofs)
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def indicator(cls, cell: int, band: int, q: int) -> "SparseFunction":
        return cls([cell * q + band], [1.0])

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def to_coords(self, n_dofs: int) -> np.ndarray:
        out = np.zeros(n_dofs)
        np.add.at(out, self.dofs, self.coeffs)
        return out

    def to_field(self, domain: SimplicialDomain) -> PiecewiseField:
        return PiecewiseField.from_coords(domain, self.to_coords(domain.n_dofs))


@dataclass(frozen=True, eq=False)
class CellBasis:
    """SVD split of one tree node.

    ``carried`` and ``details`` are (len(dofs), a) and (len(dofs), s - a)
    coefficient blocks; ``singular_values`` are those of the moment matrix.
    """

    level: int
    index: int
    dofs: np.ndarray
    carried: np.ndarray
    details: np.ndarray
    singular_values: np.ndarray

    @property
    def a(self) -> int:
        return self.carried.shape[1]

    @property
    def n_details(self) -> int:
        return self.details.shape[1]

    def _functions(self, block):
        return [SparseFunction(self.dofs, block[:, j]) for j in range(block.shape[1])]

    @property
    def carried_functions(self) -> list[SparseFunction]:
        return self._functions(self.carried)

    @property
    def detail_functions(self) -> list[SparseFunction]:
        return self._functions(self.details)


def _as_block(functions) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(functions, tuple) and len(functions) == 2:
        dofs, block = functions
        return np.asarray(dofs, dtype=np.int64), np.asarray(block, dtype=np.float64)
    functions = list(functions)
    if not functions:
        raise InvalidArgumentError("need at least one function")
    dofs = np.unique(np.concatenate([f.dofs for f in functions]))
    block = np.zeros((dofs.size, len(functions)))
    for j, f in enumerate(functions):
        np.add.at(block[:, j], np.searchsorted(dofs, f.dofs), f.coeffs)
    return dofs, block


def local_moment_matrix(functions, kl: KLBasis) -> np.ndarray:
    """Inner products of every eigenfield (rows) with every function (columns)."""
    dofs, block = _as_block(functions)
    if dofs.size and dofs.max() >= kl.domain.n_dofs:
        raise DomainMismatchError("function support exceeds the KL domain")
    return kl.coords[dofs].T @ block


def _split_svd(moments: np.ndarray, tol: float):
    """Return (V, a, singular values) for a moment matrix of shape (M, s)."""
    s = moments.shape[1]
    if moments.shape[0] == 0 or s == 0:
        return np.eye(s), 0, np.zeros(0)
    _, sigma, vt = np.linalg.svd(moments, full_matrices=True)
    if sigma.size == 0 or sigma[0] == 0.0:
        return np.eye(s), 0, sigma
    a = int(np.sum(sigma > tol * sigma[0]))
    return vt.T, a, sigma


def svd_split(functions, kl: KLBasis, tol: float = DEFAULT_RANK_TOL, level: int = -1, index: int = -1) -> CellBasis:
    """Split orthonormal local functions into carried and detail functions.

    Parameters
    ----------
    functions : sequence of SparseFunction, or a ``(dofs, block)`` pair
        Mutually orthonormal functions supported on one tree node.
    kl : KLBasis
    tol : float
        Singular values at or below ``tol * sigma_1`` count as zero.

    Raises
    ------
    PreconditionError
        If the input functions are not orthonormal to 1e-8.
    """
    dofs, block = _as_block(functions)
    gram = block.T @ block
    if block.shape[1] and np.max(np.abs(gram - np.eye(block.shape[1]))) > 1e-8:
        raise PreconditionError("svd_split input functions are not orthonormal")
    moments = local_moment_matrix((dofs, block), kl)
    V, a, sigma = _split_svd(moments, tol)
    new = block @ V
    return CellBasis(level, index, dofs, new[:, :a], new[:, a:], sigma)


class MultilevelBasis:
    """Orthonormal basis ``V0 + W0 + ... + Wn`` of the piecewise-constant fields.

    Attributes
    ----------
    cells : list of CellBasis
        One per tree node, breadth-first (level, then k).
    root : CellBasis
        The root node; its carried functions span the KL subspace.
    detail_labels : (n_details, 3) int array
        ``(level, k, p)`` for every detail function in canonical order
        (level ascending, then k, then p).
    svd_calls : int
        Number of SVD splits performed (one per tree node).
    """

    def __init__(self, tree: PartitionTree, kl: KLBasis, cells: Sequence[CellBasis], tol: float, svd_calls: int):
        self.tree = tree
        self.kl = kl
        self.domain = kl.domain
        self.tol = float(tol)
        self.cells = list(cells)
        self.svd_calls = int(svd_calls)
        self._by_label = {(c.level, c.index): c for c in self.cells}
        self.root = self._by_label[(0, 0)]
        labels = [
            (c.level, c.index, p) for c in self.cells for p in range(c.n_details)
        ]
        self.detail_labels = np.array(labels, dtype=np.int64).reshape(-1, 3)
        self._offsets = {}
        offset = 0
        for c in self.cells:
            self._offsets[(c.level, c.index)] = offset
            offset += c.n_details
        self._matrix = None

    def cell(self, level: int, index: int) -> CellBasis:
        return self._by_label[(level, index)]

    def detail_slice(self, level: int, index: int) -> slice:
        start = self._offsets[(level, index)]
        return slice(start, start + self._by_label[(level, index)].n_details)

    @property
    def n_details(self) -> int:
        return self.detail_labels.shape[0]

    @property
    def n_functions(self) -> int:
        return self.n_details + self.root.a

    def details_per_level(self) -> list[int]:
        counts = [0] * (self.tree.depth + 1)
        for c in self.cells:
            counts[c.level] += c.n_details
        return counts

    @property
    def detail_matrix(self) -> sp.csc_matrix:
        """Sparse (N*q, n_details) matrix whose columns are the detail functions."""
        if self._matrix is None:
            rows, cols, data = [], [], []
            col = 0
            for c in self.cells:
                k = c.n_details
                if k == 0:
                    continue
                rows.append(np.repeat(c.dofs, k))
                cols.append(np.tile(np.arange(col, col + k), c.dofs.size))
                data.append(c.details.reshape(-1))
                col += k
            n = self.domain.n_dofs
            if rows:
                mat = sp.csc_matrix(
                    (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                    shape=(n, col),
                )
            else:
                mat = sp.csc_matrix((n, 0))
            self._matrix = mat
        return self._matrix

    def root_carried_coords(self) -> np.ndarray:
        out = np.zeros((self.domain.n_dofs, self.root.a))
        out[self.root.dofs] = self.root.carried
        return out

    def dense(self) -> np.ndarray:
        """All basis functions as columns: root carried first, then details."""
        return np.hstack([self.root_carried_coords(), self.detail_matrix.toarray()])

    def detail_field(self, column: int) -> PiecewiseField:
        vec = self.detail_matrix[:, column].toarray().ravel()
        return PiecewiseField.from_coords(self.domain, vec)


def _leaf_dofs(node: TreeNode, q: int) -> np.ndarray:
    return (node.member_ids[:, None] * q + np.arange(q)).reshape(-1)


def _process(node: TreeNode, done: dict, phi: np.ndarray, q: int, tol: float) -> CellBasis:
    if node.is_leaf:
        dofs = _leaf_dofs(node, q)
        moments = phi[dofs].T
        V, a, sigma = _split_svd(moments, tol)
        new = V
    else:
        left, right = (done[(ch.level, ch.index)] for ch in node.children)
        dofs = np.concatenate([left.dofs, right.dofs])
        # block-diagonal input: moments and products taken per child block
        moments = np.hstack([phi[left.dofs].T @ left.carried, phi[right.dofs].T @ right.carried])
        V, a, sigma = _split_svd(moments, tol)
        al = left.a
        new = np.vstack([left.carried @ V[:al], right.carried @ V[al:]])
    return CellBasis(node.level, node.index, dofs, new[:, :a], new[:, a:], sigma)


def build_multilevel(
    tree: PartitionTree,
    indicator: IndicatorBasis | SimplicialDomain,
    kl: KLBasis,
    tol: float = DEFAULT_RANK_TOL,
    max_workers: int | None = None,
) -> MultilevelBasis:
    """Construct the multilevel basis for ``tree`` adapted to ``kl``.

    Nodes of one level are independent and are split concurrently when
    ``max_workers > 1``; levels are processed deepest first.
    """
    domain = indicator.domain if isinstance(indicator, IndicatorBasis) else indicator
    if not domain.same_as(kl.domain):
        raise DomainMismatchError("tree domain and KL domain differ")
    if tree.n_cells != domain.n_cells:
        raise DomainMismatchError("tree was built on a different number of cells")
    if kl.M >= domain.n_dofs:
        raise PreconditionError(f"need N*q > M, got N*q={domain.n_dofs}, M={kl.M}")
    if not 0 < tol < 1:
        raise InvalidArgumentError("rank tolerance must lie in (0, 1)")
    phi = np.ascontiguousarray(kl.coords)
    q = domain.q
    done: dict[tuple[int, int], CellBasis] = {}
    pool = ThreadPoolExecutor(max_workers) if max_workers and max_workers > 1 else None
    try:
        for level in reversed(tree.levels):
            if pool is None:
                results = [_process(n, done, phi, q, tol) for n in level]
            else:
                results = list(pool.map(lambda n: _process(n, done, phi, q, tol), level))
            for res in results:
                done[(res.level, res.index)] = res
    finally:
        if pool is not None:
            pool.shutdown()
    cells = [done[(n.level, n.index)] for n in tree.nodes]
    return MultilevelBasis(tree, kl, cells, tol, svd_calls=len(cells))
