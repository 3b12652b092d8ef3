from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

from ..detect import THRESHOLD_MODES
from ..errors import InvalidArgumentError
from ..spectral import TAIL_MODES


@dataclass(frozen=True)
class FilterConfig:
    """Settings for fitting and applying a multilevel filter.

    ``M`` KL modes, leaf capacity ``n0``, SVD rank tolerance ``tol``,
    significance ``alpha``, tail and threshold modes and the relative span
    of the robust smoother.
    """

    M: int = 40
    alpha: float = 0.01
    n0: int = 2
    tol: float = 1e-10
    tail_mode: str = "data"
    threshold_mode: str = "chebyshev"
    span: float = 0.3

    def __post_init__(self):
        if int(self.M) < 1:
            raise InvalidArgumentError("M must be >= 1")
        if not 0 < float(self.alpha) <= 1:
            raise InvalidArgumentError("alpha must lie in (0, 1]")
        if int(self.n0) < 2:
            raise InvalidArgumentError("n0 must be >= 2")
        if not 0 < float(self.tol) <= 1e-4:
            raise InvalidArgumentError("tol must lie in (0, 1e-4]")
        if self.tail_mode not in TAIL_MODES:
            raise InvalidArgumentError(f"tail_mode must be one of {TAIL_MODES}")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise InvalidArgumentError(f"threshold_mode must be one of {THRESHOLD_MODES}")
        if not 0 < float(self.span) <= 1:
            raise InvalidArgumentError("span must lie in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "FilterConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


def content_hash(fit_settings: dict, dims: dict) -> str:
    """Digest of the fit settings and domain dimensions a filter was built for."""
    blob = json.dumps({"config": fit_settings, "dims": dims}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
