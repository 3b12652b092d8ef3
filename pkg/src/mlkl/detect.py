"""Anomaly scoring with a fitted multilevel filter.

A field is centered by the training mean and projected onto the detail
functions of the multilevel basis.  Under the nominal model every detail
coefficient has zero mean and variance at most the KL tail sum ``t_M``,
so Chebyshev's inequality turns each coefficient into a distribution-free
p-value.  Summing squared coefficients per node gives the local anomaly
energy; synthesizing the coefficients gives the anomaly map.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, DomainMismatchError, InvalidArgumentError
from .geometry import PiecewiseField, SimplicialDomain, restrict
from .multilevel import DEFAULT_RANK_TOL, MultilevelBasis, build_multilevel
from .partition import make_tree
from .smoothing import robust_smooth
from .spectral import KLBasis

__all__ = [
    "CoefficientTable",
    "CellScore",
    "DetectionReport",
    "AnomalyFilter",
    "THRESHOLD_MODES",
    "project",
    "coefficient_p_values",
    "rejection_threshold",
    "cell_scores",
    "anomaly_map",
    "anomaly_norm_bounds",
    "region_p_value",
    "anomaly_sequence",
    "restrict_kl",
    "robust_smooth",
]

THRESHOLD_MODES = ("chebyshev", "paper-literal")


@dataclass(frozen=True, eq=False)
class CoefficientTable:
    """Detail coefficients ``d[l, k, p]`` of one observation.

    ``labels`` is an (n, 3) int array of ``(level, k, p)`` aligned with
    ``values``; ``cells`` lists every tree node ``(level, k)`` in
    breadth-first order, including nodes without details.
    """

    labels: np.ndarray
    values: np.ndarray
    cells: tuple
    frame: object = None

    def __len__(self):
        return self.values.size

    def cell_values(self) -> dict:
        out = {c: [] for c in self.cells}
        for (l, k, _), d in zip(self.labels, self.values):
            out[(int(l), int(k))].append(d)
        return {c: np.asarray(v) for c, v in out.items()}


@dataclass(frozen=True)
class CellScore:
    level: int
    index: int
    energy: float
    p_value: float
    reject: bool
    n_coefficients: int = 0


@dataclass(eq=False)
class DetectionReport:
    table: CoefficientTable
    scores: list
    anomaly: PiecewiseField
    anomaly_norm: float
    lower: float
    upper: float
    config: dict = field(default_factory=dict)
    n_cells: int = 0
    restricted: bool = False

    @property
    def rejections(self) -> list:
        return [s for s in self.scores if s.reject]

    def scores_by_level(self) -> dict:
        out: dict = {}
        for s in self.scores:
            out.setdefault(s.level, []).append(s)
        return out


def _table_from_coeffs(basis: MultilevelBasis, values, frame=None) -> CoefficientTable:
    cells = tuple((c.level, c.index) for c in basis.cells)
    values = np.asarray(values, dtype=np.float64)
    values.setflags(write=False)
    return CoefficientTable(basis.detail_labels, values, cells, frame)


def project(field: PiecewiseField, basis: MultilevelBasis, frame=None) -> CoefficientTable:
    """Detail coefficients of ``field - mean``; ``frame`` is an opaque label."""
    if not field.domain.same_as(basis.domain):
        raise DomainMismatchError("field is not defined on the filter's domain")
    centered = (field - basis.kl.mean).coords()
    return _table_from_coeffs(basis, basis.detail_matrix.T @ centered, frame)


def coefficient_p_values(values, tail_sum: float, mode: str = "chebyshev") -> np.ndarray:
    """Chebyshev p-values ``min(1, t_M / d^2)`` (or ``min(1, t_M^2 / d^2)`` in paper-literal mode)."""
    if mode not in THRESHOLD_MODES:
        raise InvalidArgumentError(f"threshold mode must be one of {THRESHOLD_MODES}")
    d2 = np.asarray(values, dtype=np.float64) ** 2
    bound = tail_sum if mode == "chebyshev" else tail_sum**2
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(d2 > 0, np.minimum(1.0, bound / d2), 1.0)
    return p


def rejection_threshold(tail_sum: float, alpha: float, mode: str = "chebyshev") -> float:
    """Coefficient magnitude at which the p-value reaches ``alpha``."""
    if mode == "chebyshev":
        return float(np.sqrt(tail_sum / alpha))
    return float(tail_sum / np.sqrt(alpha))


def _check_alpha(alpha):
    if not 0 < alpha <= 1:
        raise InvalidArgumentError(f"alpha must lie in (0, 1], got {alpha}")


def cell_scores(table: CoefficientTable, kl: KLBasis, alpha: float = 0.01, mode: str = "chebyshev") -> list[CellScore]:
    """Energy, minimum p-value and rejection decision for every tree node.

    A node is rejected when its smallest coefficient p-value is strictly
    below ``alpha``.
    """
    _check_alpha(alpha)
    p_all = coefficient_p_values(table.values, kl.tail_sum, mode)
    groups: dict = {c: [] for c in table.cells}
    for i, (l, k, _) in enumerate(table.labels):
        groups[(int(l), int(k))].append(i)
    scores = []
    for (l, k), idx in groups.items():
        if idx:
            d = table.values[idx]
            energy = float(np.sqrt(np.dot(d, d)))
            p = float(p_all[idx].min())
        else:
            energy, p = 0.0, 1.0
        scores.append(CellScore(l, k, energy, p, bool(p < alpha), len(idx)))
    return scores


def anomaly_map(table: CoefficientTable, basis: MultilevelBasis) -> PiecewiseField:
    """Synthesize ``sum d[l,k,p] psi[l,k,p]`` as a field."""
    if len(table) != basis.n_details or not np.array_equal(table.labels, basis.detail_labels):
        raise DimensionError("coefficient table does not match the multilevel basis")
    return PiecewiseField.from_coords(basis.domain, basis.detail_matrix @ table.values)


def anomaly_norm_bounds(table: CoefficientTable, kl: KLBasis) -> tuple[float, float, float]:
    """Anomaly norm and the tail-perturbed interval for the summed squared coefficients.

    Returns ``(norm, lower, upper)`` with ``norm = sqrt(sum d^2)`` and
    ``lower, upper = norm^2 (1 -/+ 2 s_M) + t_M``.
    """
    sq = float(np.dot(table.values, table.values))
    lower = sq * (1.0 - 2.0 * kl.tail_root_sum) + kl.tail_sum
    upper = sq * (1.0 + 2.0 * kl.tail_root_sum) + kl.tail_sum
    return float(np.sqrt(sq)), lower, upper


def region_p_value(w: PiecewiseField, region: Iterable[int], kl: KLBasis) -> float:
    """Chebyshev p-value for the integral of the anomaly map over a set of cells.

    The band-averaged integral ``s`` is compared with the variance bound
    ``t_M * (measure of the region)``: ``p = min(1, bound / s^2)``.
    """
    region = np.unique(np.asarray(list(region), dtype=np.int64))
    if region.size == 0:
        raise InvalidArgumentError("region must contain at least one cell")
    if region.min() < 0 or region.max() >= w.domain.n_cells:
        raise InvalidArgumentError("region contains unknown cell ids")
    meas = w.domain.measures[region]
    s = abs(float(np.dot(meas, w.values[region].mean(axis=1))))
    bound = kl.tail_sum * float(meas.sum())
    if s == 0.0:
        return 1.0
    return float(min(1.0, bound / s**2))


def restrict_kl(kl: KLBasis, sub: SimplicialDomain, keep: np.ndarray, tol: float = DEFAULT_RANK_TOL) -> KLBasis:
    """KL data carried onto a sub-domain for detection.

    The eigenfields restricted to the valid cells are no longer orthonormal;
    they are replaced by an orthonormal basis of their span, which is all the
    multilevel construction needs.  Eigenvalues and tail statistics are kept.
    """
    q = kl.domain.q
    dofs = (keep[:, None] * q + np.arange(q)).reshape(-1)
    rows = kl.coords[dofs]
    if rows.shape[1]:
        u, sigma, _ = np.linalg.svd(rows, full_matrices=False)
        r = int(np.sum(sigma > tol * sigma[0])) if sigma.size and sigma[0] > 0 else 0
        # keep N*q > M on tiny sub-domains
        r = min(r, sub.n_dofs - 1)
        coords = np.ascontiguousarray(u[:, :r])
    else:
        coords = np.zeros((sub.n_dofs, 0))
    coords.setflags(write=False)
    lambdas = np.array(kl.lambdas[: coords.shape[1]])
    return KLBasis(
        domain=sub,
        mean=PiecewiseField(sub, kl.mean.values[keep]),
        lambdas=lambdas,
        coords=coords,
        tail_sum=kl.tail_sum,
        tail_root_sum=kl.tail_root_sum,
        spectrum=kl.spectrum,
        tail_mode=kl.tail_mode,
    )


class AnomalyFilter:
    """A KL basis plus the multilevel bases used to score frames.

    Frames with missing cells are scored on the valid sub-domain with a
    tree and basis rebuilt there; those bases are cached by mask digest.
    The cache is guarded by a lock so one filter can serve several threads.
    """

    def __init__(self, kl: KLBasis, n0: int = 2, tol: float = DEFAULT_RANK_TOL, basis: MultilevelBasis | None = None):
        self.kl = kl
        self.n0 = int(n0)
        self.tol = float(tol)
        self.domain = kl.domain
        if basis is None:
            basis = build_multilevel(make_tree(kl.domain, self.n0), kl.domain, kl, tol=self.tol)
        self.basis = basis
        self._cache: dict[str, tuple] = {}
        self._lock = threading.Lock()

    @staticmethod
    def mask_key(mask: np.ndarray) -> str:
        return hashlib.sha256(np.packbits(np.asarray(mask, dtype=bool)).tobytes()).hexdigest()

    def basis_for(self, mask=None) -> tuple[MultilevelBasis, dict | None]:
        """Basis for the valid cells of ``mask`` and the old-to-new id map."""
        if mask is None or np.all(mask):
            return self.basis, None
        mask = np.asarray(mask, dtype=bool)
        key = self.mask_key(mask)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        sub, index_map = restrict(self.domain, mask)
        keep = np.flatnonzero(mask)
        kl_sub = restrict_kl(self.kl, sub, keep, self.tol)
        basis = build_multilevel(make_tree(sub, self.n0), sub, kl_sub, tol=self.tol)
        with self._lock:
            # first writer wins so every caller sees the same object
            hit = self._cache.setdefault(key, (basis, index_map))
        return hit

    def score(self, values, mask=None, alpha: float = 0.01, mode: str = "chebyshev", frame=None) -> DetectionReport:
        """Score one frame given as an (N, q) array or a field on the filter domain."""
        _check_alpha(alpha)
        if isinstance(values, PiecewiseField):
            values = values.values
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.domain.n_cells, self.domain.q):
            raise DimensionError(
                f"frame has shape {values.shape}, filter expects ({self.domain.n_cells}, {self.domain.q})"
            )
        basis, index_map = self.basis_for(mask)
        if index_map is None:
            field_ = PiecewiseField(self.domain, values)
        else:
            field_ = PiecewiseField(basis.domain, values[np.asarray(mask, dtype=bool)])
        table = project(field_, basis, frame)
        scores = cell_scores(table, basis.kl, alpha, mode)
        w = anomaly_map(table, basis)
        norm, lower, upper = anomaly_norm_bounds(table, basis.kl)
        config = {
            "M": self.kl.M,
            "alpha": alpha,
            "tol": self.tol,
            "n0": self.n0,
            "tail_mode": self.kl.tail_mode,
            "threshold_mode": mode,
        }
        return DetectionReport(
            table=table,
            scores=scores,
            anomaly=w,
            anomaly_norm=norm,
            lower=lower,
            upper=upper,
            config=config,
            n_cells=basis.domain.n_cells,
            restricted=index_map is not None,
        )

    def pixel_anomaly(self, values, pixel: int, mask=None) -> np.ndarray:
        """Anomaly map value at one cell (all bands); NaN if the cell is masked."""
        if not 0 <= pixel < self.domain.n_cells:
            raise InvalidArgumentError(f"unknown cell id {pixel}")
        if mask is not None and not np.asarray(mask, dtype=bool)[pixel]:
            return np.full(self.domain.q, np.nan)
        basis, index_map = self.basis_for(mask)
        if index_map is None:
            field_ = PiecewiseField(self.domain, values)
            local = pixel
        else:
            field_ = PiecewiseField(basis.domain, np.asarray(values)[np.asarray(mask, dtype=bool)])
            local = index_map[pixel]
        w = anomaly_map(project(field_, basis), basis)
        return w.values[local].copy()


def anomaly_sequence(
    frames: Sequence,
    basis: MultilevelBasis | AnomalyFilter,
    kl: KLBasis | None = None,
    pixel: int = 0,
    masks: Sequence | None = None,
) -> np.ndarray:
    """Anomaly map value at ``pixel`` for every frame, one column per band.

    ``frames`` holds fields or (N, q) arrays; ``None`` entries (frames that
    could not be ingested) and frames where the pixel is masked yield NaN
    rows as gap markers.
    """
    if isinstance(basis, AnomalyFilter):
        filt = basis
    else:
        kl = basis.kl if kl is None else kl
        filt = AnomalyFilter(kl, n0=basis.tree.leaf_capacity, tol=basis.tol, basis=basis)
    if not 0 <= int(pixel) < filt.domain.n_cells:
        raise InvalidArgumentError(f"unknown cell id {pixel}")
    out = np.full((len(frames), filt.domain.q), np.nan)
    for i, frame in enumerate(frames):
        if frame is None:
            continue
        values = frame.values if isinstance(frame, PiecewiseField) else np.asarray(frame, dtype=np.float64)
        mask = None if masks is None else masks[i]
        out[i] = filt.pixel_anomaly(values, int(pixel), mask)
    return out
