"""Measured cell domains, piecewise-constant vector fields and the L2 inner product.

A domain is a list of cells (grid pixels or simplices) carrying a positive
measure and a barycenter.  Fields are piecewise constant: one q-vector per
cell.  Internally most of the package works in *indicator coordinates*,
the coefficients of a field in the orthonormal basis of normalized
per-cell, per-band indicator functions.  In those coordinates the domain
inner product is the Euclidean dot product.

Coordinates are flattened cell-major with bands innermost, i.e. degree of
freedom ``i * q + j`` belongs to cell ``i`` and band ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainMismatchError, EmptyDomainError, InvalidArgumentError

__all__ = [
    "Cell",
    "SimplicialDomain",
    "IndicatorBasis",
    "PiecewiseField",
    "build_grid_domain",
    "inner_product",
    "restrict",
]


@dataclass(frozen=True)
class Cell:
    id: int
    measure: float
    barycenter: tuple


@dataclass(frozen=True, eq=False)
class SimplicialDomain:
    """Ordered collection of measured cells.

    Parameters
    ----------
    measures : (N,) array
        Positive cell measures (area, volume, ...).
    barycenters : (N, d) array
        Cell barycenters.
    band_count : int
        Number of field components ``q``.
    grid_shape : (rows, cols) or None
        Set for raster domains built by :func:`build_grid_domain` so that
        cell ids can be mapped back to pixel coordinates.
    source_ids : (N,) int array or None
        For restricted domains, the id of each cell in the parent domain.
    """

    measures: np.ndarray
    barycenters: np.ndarray
    band_count: int = 1
    grid_shape: tuple | None = None
    source_ids: np.ndarray | None = field(default=None)

    def __post_init__(self):
        measures = np.array(self.measures, dtype=np.float64).reshape(-1)
        bary = np.array(self.barycenters, dtype=np.float64)
        if bary.ndim == 1:
            bary = bary.reshape(-1, 1)
        if measures.size == 0:
            raise EmptyDomainError("a domain needs at least one cell")
        if bary.shape[0] != measures.size:
            raise InvalidArgumentError(
                f"{measures.size} measures but {bary.shape[0]} barycenters"
            )
        if not np.all(np.isfinite(measures)) or np.any(measures <= 0):
            raise InvalidArgumentError("cell measures must be finite and positive")
        if not np.all(np.isfinite(bary)):
            raise InvalidArgumentError("barycenters must be finite")
        if int(self.band_count) < 1:
            raise InvalidArgumentError("band_count must be >= 1")
        measures.setflags(write=False)
        bary.setflags(write=False)
        object.__setattr__(self, "measures", measures)
        object.__setattr__(self, "barycenters", bary)
        object.__setattr__(self, "band_count", int(self.band_count))
        if self.source_ids is not None:
            src = np.array(self.source_ids, dtype=np.int64)
            src.setflags(write=False)
            object.__setattr__(self, "source_ids", src)

    @classmethod
    def from_cells(cls, cells: Sequence[Cell], band_count: int = 1) -> "SimplicialDomain":
        cells = list(cells)
        if not cells:
            raise EmptyDomainError("a domain needs at least one cell")
        for expected, cell in enumerate(cells):
            if cell.id != expected:
                raise InvalidArgumentError(
                    f"cell ids must be 0..N-1 in order; found {cell.id} at position {expected}"
                )
        return cls(
            measures=[c.measure for c in cells],
            barycenters=[tuple(c.barycenter) for c in cells],
            band_count=band_count,
        )

    @property
    def n_cells(self) -> int:
        return self.measures.size

    @property
    def spatial_dim(self) -> int:
        return self.barycenters.shape[1]

    @property
    def q(self) -> int:
        return self.band_count

    @property
    def n_dofs(self) -> int:
        return self.n_cells * self.band_count

    @property
    def total_measure(self) -> float:
        return float(self.measures.sum())

    @property
    def cells(self) -> list[Cell]:
        return [
            Cell(i, float(m), tuple(float(x) for x in b))
            for i, (m, b) in enumerate(zip(self.measures, self.barycenters))
        ]

    def same_as(self, other: "SimplicialDomain") -> bool:
        if self is other:
            return True
        return (
            isinstance(other, SimplicialDomain)
            and self.band_count == other.band_count
            and self.measures.shape == other.measures.shape
            and self.barycenters.shape == other.barycenters.shape
            and np.array_equal(self.measures, other.measures)
            and np.array_equal(self.barycenters, other.barycenters)
        )

    def dof_weights(self) -> np.ndarray:
        """sqrt(measure) repeated per band, in coordinate order."""
        return np.repeat(np.sqrt(self.measures), self.band_count)

    def to_coords(self, values: np.ndarray) -> np.ndarray:
        """Indicator coordinates of an (N, q) value array (or a stack (..., N, q))."""
        values = np.asarray(values, dtype=np.float64)
        w = np.sqrt(self.measures)[:, None]
        lead = values.shape[:-2]
        return (values * w).reshape(*lead, self.n_dofs)

    def from_coords(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.float64)
        lead = coords.shape[:-1]
        vals = coords.reshape(*lead, self.n_cells, self.band_count)
        return vals / np.sqrt(self.measures)[:, None]

    def pixel_of(self, cell_id: int) -> tuple[int, int]:
        if self.grid_shape is None:
            raise InvalidArgumentError("domain has no grid layout")
        src = int(cell_id if self.source_ids is None else self.source_ids[cell_id])
        return divmod(src, self.grid_shape[1])


def build_grid_domain(rows: int, cols: int, cell_measure: float = 1.0, q: int = 1) -> SimplicialDomain:
    """Raster domain of ``rows x cols`` square pixels in row-major order.

    Pixel ``(r, c)`` is cell ``r * cols + c`` with barycenter
    ``((c + 1/2) h, (r + 1/2) h)`` where ``h = sqrt(cell_measure)``.
    """
    if int(rows) < 1 or int(cols) < 1:
        raise InvalidArgumentError(f"grid dimensions must be positive, got {rows}x{cols}")
    if not np.isfinite(cell_measure) or cell_measure <= 0:
        raise InvalidArgumentError("cell_measure must be positive")
    if int(q) < 1:
        raise InvalidArgumentError("q must be >= 1")
    rows, cols = int(rows), int(cols)
    h = np.sqrt(float(cell_measure))
    r, c = np.divmod(np.arange(rows * cols), cols)
    bary = np.column_stack([(c + 0.5) * h, (r + 0.5) * h])
    return SimplicialDomain(
        measures=np.full(rows * cols, float(cell_measure)),
        barycenters=bary,
        band_count=q,
        grid_shape=(rows, cols),
    )


class IndicatorBasis:
    """Normalized per-cell, per-band indicator functions.

    The function for cell ``i`` and band ``j`` equals ``measure_i ** -0.5``
    on cell ``i`` in band ``j`` and zero elsewhere.  Coefficients are
    implicit; :meth:`function` materializes one as a field.
    """

    def __init__(self, domain: SimplicialDomain):
        self.domain = domain

    def __len__(self):
        return self.domain.n_dofs

    @property
    def coefficients(self) -> np.ndarray:
        """(N, q) array of ``measure ** -0.5``."""
        c = 1.0 / np.sqrt(self.domain.measures)
        return np.repeat(c[:, None], self.domain.q, axis=1)

    def function(self, cell: int, band: int) -> "PiecewiseField":
        values = np.zeros((self.domain.n_cells, self.domain.q))
        values[cell, band] = 1.0 / np.sqrt(self.domain.measures[cell])
        return PiecewiseField(self.domain, values)

    def gram(self) -> np.ndarray:
        # Materialized on purpose: a direct check of orthonormality, not a shortcut.
        n = len(self)
        values = np.zeros((n, self.domain.n_cells, self.domain.q))
        c = self.coefficients
        for i in range(self.domain.n_cells):
            for j in range(self.domain.q):
                values[i * self.domain.q + j, i, j] = c[i, j]
        flat = values.reshape(n, -1)
        w = np.repeat(self.domain.measures, self.domain.q)
        return (flat * w) @ flat.T


@dataclass(frozen=True, eq=False)
class PiecewiseField:
    """Piecewise-constant vector field: row ``i`` holds the q band values on cell ``i``."""

    domain: SimplicialDomain
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim == 1 and self.domain.q == 1:
            vals = vals.reshape(-1, 1)
        if vals.shape != (self.domain.n_cells, self.domain.q):
            raise InvalidArgumentError(
                f"field values have shape {vals.shape}, expected "
                f"({self.domain.n_cells}, {self.domain.q})"
            )
        if not np.all(np.isfinite(vals)):
            raise InvalidArgumentError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, domain: SimplicialDomain) -> "PiecewiseField":
        return cls(domain, np.zeros((domain.n_cells, domain.q)))

    @classmethod
    def from_coords(cls, domain: SimplicialDomain, coords: np.ndarray) -> "PiecewiseField":
        return cls(domain, domain.from_coords(coords))

    def coords(self) -> np.ndarray:
        return self.domain.to_coords(self.values)

    def _check(self, other):
        if not self.domain.same_as(other.domain):
            raise DomainMismatchError("fields are defined on different domains")

    def __add__(self, other):
        if isinstance(other, PiecewiseField):
            self._check(other)
            return PiecewiseField(self.domain, self.values + other.values)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, PiecewiseField):
            self._check(other)
            return PiecewiseField(self.domain, self.values - other.values)
        return NotImplemented

    def __mul__(self, scalar):
        return PiecewiseField(self.domain, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return PiecewiseField(self.domain, -self.values)

    def norm(self) -> float:
        return float(np.sqrt(inner_product(self, self)))


def inner_product(u: PiecewiseField, v: PiecewiseField) -> float:
    """``sum_i measure_i * <u_i, v_i>`` over cells."""
    if not u.domain.same_as(v.domain):
        raise DomainMismatchError("inner product of fields on different domains")
    return float(np.einsum("i,ij,ij->", u.domain.measures, u.values, v.values))


def restrict(domain: SimplicialDomain, valid_mask) -> tuple[SimplicialDomain, dict[int, int]]:
    """Sub-domain of the cells where ``valid_mask`` is true.

    Returns the restricted domain and the map from old to new cell ids.
    Measures, barycenters and relative order are preserved.
    """
    mask = np.asarray(valid_mask, dtype=bool).reshape(-1)
    if mask.size != domain.n_cells:
        raise InvalidArgumentError(
            f"mask has {mask.size} entries for a domain of {domain.n_cells} cells"
        )
    keep = np.flatnonzero(mask)
    if keep.size == 0:
        raise EmptyDomainError("mask leaves no valid cells")
    parent_ids = keep if domain.source_ids is None else domain.source_ids[keep]
    sub = SimplicialDomain(
        measures=domain.measures[keep],
        barycenters=domain.barycenters[keep],
        band_count=domain.q,
        grid_shape=domain.grid_shape,
        source_ids=parent_ids,
    )
    return sub, {int(old): new for new, old in enumerate(keep)}
