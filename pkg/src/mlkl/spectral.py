"""Truncated vector Karhunen-Loeve basis estimated by the method of snapshots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainMismatchError, InvalidArgumentError, RankDeficientError
from .geometry import PiecewiseField, SimplicialDomain

__all__ = [
    "SnapshotSet",
    "KLBasis",
    "fit_snapshots",
    "kl_coefficients",
    "truncate_reconstruct",
    "TAIL_MODES",
]

TAIL_MODES = ("data", "lambda_m")


class SnapshotSet:
    """S realizations of a field on a common domain.

    Parameters
    ----------
    domain : SimplicialDomain
    frames : sequence of PiecewiseField, or array of shape (S, N, q)
    """

    def __init__(self, domain: SimplicialDomain, frames):
        self.domain = domain
        if isinstance(frames, np.ndarray):
            values = np.array(frames, dtype=np.float64)
            if values.ndim == 2 and domain.q == 1:
                values = values[:, :, None]
        else:
            frames = list(frames)
            for f in frames:
                if not f.domain.same_as(domain):
                    raise DomainMismatchError("snapshot defined on a different domain")
            values = np.array([f.values for f in frames], dtype=np.float64)
        if values.ndim != 3 or values.shape[1:] != (domain.n_cells, domain.q):
            raise InvalidArgumentError(
                f"snapshot array has shape {values.shape}, expected (S, {domain.n_cells}, {domain.q})"
            )
        if values.shape[0] < 1:
            raise InvalidArgumentError("need at least one snapshot")
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("snapshot values must be finite")
        values.setflags(write=False)
        self.values = values

    def __len__(self):
        return self.values.shape[0]

    @property
    def frames(self) -> list[PiecewiseField]:
        return [PiecewiseField(self.domain, v) for v in self.values]

    @property
    def mean(self) -> PiecewiseField:
        return PiecewiseField(self.domain, self.values.mean(axis=0))


@dataclass(frozen=True, eq=False)
class KLBasis:
    """Mean field, leading eigenpairs and tail statistics of a vector random field.

    ``coords`` holds the eigenfields in indicator coordinates, one column per
    mode, so ``coords.T @ coords`` is the identity.  ``spectrum`` keeps every
    eigenvalue estimated from the data (the first ``M`` equal ``lambdas``).
    """

    domain: SimplicialDomain
    mean: PiecewiseField
    lambdas: np.ndarray
    coords: np.ndarray
    tail_sum: float
    tail_root_sum: float
    spectrum: np.ndarray | None = None
    tail_mode: str = "data"

    @property
    def M(self) -> int:
        return self.lambdas.size

    @property
    def eigenfields(self) -> list[PiecewiseField]:
        return [PiecewiseField.from_coords(self.domain, self.coords[:, k]) for k in range(self.M)]

    @property
    def t_M(self) -> float:
        return self.tail_sum

    @property
    def s_M(self) -> float:
        return self.tail_root_sum

    @classmethod
    def from_eigenpairs(cls, domain, mean, lambdas, eigenfields, tail_sum=0.0, tail_root_sum=None):
        """Wrap known eigenpairs (e.g. from a synthetic generator).

        ``eigenfields`` is a sequence of fields or an (N*q, M) coordinate array.
        They must be orthonormal.
        """
        lambdas = np.array(lambdas, dtype=np.float64).reshape(-1)
        if isinstance(eigenfields, np.ndarray):
            coords = np.array(eigenfields, dtype=np.float64).reshape(domain.n_dofs, -1)
        else:
            coords = np.column_stack([f.coords() for f in eigenfields]) if len(eigenfields) else np.zeros((domain.n_dofs, 0))
        if coords.shape[1] != lambdas.size:
            raise InvalidArgumentError("one eigenfield per eigenvalue required")
        if lambdas.size and np.max(np.abs(coords.T @ coords - np.eye(lambdas.size))) > 1e-10:
            raise InvalidArgumentError("eigenfields are not orthonormal")
        if mean is None:
            mean = PiecewiseField.zeros(domain)
        if tail_root_sum is None:
            tail_root_sum = float(np.sqrt(tail_sum))
        coords.setflags(write=False)
        lambdas.setflags(write=False)
        return cls(domain, mean, lambdas, coords, float(tail_sum), float(tail_root_sum))


def _sign_fix(domain: SimplicialDomain, coords: np.ndarray) -> np.ndarray:
    # largest-magnitude field value of each mode made positive
    vals = coords / domain.dof_weights()[:, None]
    idx = np.argmax(np.abs(vals), axis=0)
    signs = np.sign(vals[idx, np.arange(coords.shape[1])])
    signs[signs == 0] = 1.0
    return coords * signs


def fit_snapshots(snapshots: SnapshotSet, M: int, tail_mode: str = "data", rank_rtol: float | None = None) -> KLBasis:
    """Estimate the mean and the first ``M`` KL eigenpairs from snapshots.

    The centered snapshots are compared pairwise through the domain inner
    product to form the S x S Gram matrix ``G = X X^T / S``; its
    eigenvalues are the covariance eigenvalues and the eigenfields are the
    corresponding normalized combinations of centered snapshots.

    Parameters
    ----------
    snapshots : SnapshotSet
    M : int
        Truncation order, at most the numerical rank of the centered snapshots.
    tail_mode : {"data", "lambda_m"}
        ``"data"`` sets ``t_M`` to the sum of the estimated eigenvalues past
        ``M`` (falling back to ``lambda_M`` when that sum is zero);
        ``"lambda_m"`` uses ``lambda_M`` alone.
    rank_rtol : float, optional
        Eigenvalues below ``rank_rtol * lambda_1`` count as zero.

    Raises
    ------
    RankDeficientError
        If ``M`` exceeds the numerical rank; ``err.rank`` is the achievable M.
    """
    if tail_mode not in TAIL_MODES:
        raise InvalidArgumentError(f"tail_mode must be one of {TAIL_MODES}")
    M = int(M)
    if M < 0:
        raise InvalidArgumentError("M must be non-negative")
    domain = snapshots.domain
    S = len(snapshots)
    mean_vals = snapshots.values.mean(axis=0)
    X = domain.to_coords(snapshots.values - mean_vals)
    G = (X @ X.T) / S
    G = 0.5 * (G + G.T)
    evals, evecs = np.linalg.eigh(G)
    order = np.argsort(evals, kind="stable")[::-1]
    evals, evecs = evals[order], evecs[:, order]
    top = evals[0] if evals.size else 0.0
    if rank_rtol is None:
        rank_rtol = max(1e-12, 10.0 * S * np.finfo(float).eps)
    rank = int(np.sum(evals > rank_rtol * top)) if top > 0 else 0
    if M > rank:
        raise RankDeficientError(M, rank)
    spectrum = np.clip(evals[:rank], 0.0, None)

    phi = X.T @ evecs[:, :M]
    if M:
        phi /= np.linalg.norm(phi, axis=0)
        # one Householder pass keeps orthonormality at roundoff for small modes
        Q, R = np.linalg.qr(phi)
        phi = Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))
        phi = _sign_fix(domain, phi)

    lambdas = spectrum[:M].copy()
    if tail_mode == "data":
        rest = spectrum[M:]
        t_M = float(rest.sum())
        s_M = float(np.sqrt(rest).sum())
        if t_M == 0.0 and M > 0:
            t_M = float(lambdas[-1])
            s_M = float(np.sqrt(lambdas[-1]))
    else:
        t_M = float(lambdas[-1]) if M else float(spectrum.sum())
        s_M = float(np.sqrt(t_M))

    phi.setflags(write=False)
    lambdas.setflags(write=False)
    spectrum.setflags(write=False)
    return KLBasis(
        domain=domain,
        mean=PiecewiseField(domain, mean_vals),
        lambdas=lambdas,
        coords=phi,
        tail_sum=t_M,
        tail_root_sum=s_M,
        spectrum=spectrum,
        tail_mode=tail_mode,
    )


def kl_coefficients(field: PiecewiseField, basis: KLBasis) -> np.ndarray:
    """Normalized KL coordinates ``Y_k`` of a field; NaN for zero-variance modes."""
    if not field.domain.same_as(basis.domain):
        raise DomainMismatchError("field and KL basis live on different domains")
    proj = basis.coords.T @ (field - basis.mean).coords()
    out = np.full(basis.M, np.nan)
    pos = basis.lambdas > 0
    out[pos] = proj[pos] / np.sqrt(basis.lambdas[pos])
    return out


def truncate_reconstruct(field: PiecewiseField, basis: KLBasis) -> PiecewiseField:
    """Mean plus the orthogonal projection of ``field - mean`` onto the eigenfields."""
    if not field.domain.same_as(basis.domain):
        raise DomainMismatchError("field and KL basis live on different domains")
    centered = (field - basis.mean).coords()
    proj = basis.coords @ (basis.coords.T @ centered)
    return basis.mean + PiecewiseField.from_coords(basis.domain, proj)

