"""Synthetic random fields with a prescribed KL spectrum and scripted anomalies.

Simulation specs are plain dicts (usually loaded from JSON)::

    {
      "rows": 16, "cols": 16, "q": 1, "frames": 100,
      "cell_measure": 1.0,
      "spectrum": [0.5, 0.25, 0.125]          # or {"geometric": {"scale": 1, "ratio": 0.5, "count": 8}}
      "coefficients": "gaussian",             # | "student_t3" | "alternating"
      "mean": 0.0,                            # scalar or one value per band
      "noise": 0.0,                           # std of white noise added per value
      "day_start": 1, "day_step": 1,
      "anomalies": [
        {"kind": "step", "start": 40, "stop": 50, "region": [r0, r1, c0, c1],
         "bands": [0], "amplitude": 2.0},
        {"kind": "ramp", "start": 50, "stop": 60, "region": [...],
         "amplitude": 2.0, "end_amplitude": 0.0},
        {"kind": "spike", "frames": [65], "region": [...], "amplitude": 10.0}
      ],
      "missing": [{"frames": [70], "fraction": 0.1}, {"frames": [71], "region": [...]}]
    }

Frame indices are 0-based, ``start``/``stop`` and regions are half-open.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidArgumentError
from ..geometry import PiecewiseField, SimplicialDomain, build_grid_domain
from ..spectral import KLBasis
from .formats import FrameStack

DISTRIBUTIONS = ("gaussian", "student_t3", "alternating")


def draw_coefficients(rng: np.random.Generator, size, distribution: str = "gaussian") -> np.ndarray:
    """Zero-mean, unit-variance KL coefficients."""
    if distribution == "gaussian":
        return rng.standard_normal(size)
    if distribution == "student_t3":
        # Var(t_3) = 3
        return rng.standard_t(3, size) / np.sqrt(3.0)
    if distribution == "alternating":
        size = (size,) if np.isscalar(size) else tuple(size)
        signs = np.where(np.arange(size[0]) % 2 == 0, 1.0, -1.0)
        return np.broadcast_to(signs.reshape((-1,) + (1,) * (len(size) - 1)), size).copy()
    raise InvalidArgumentError(f"unknown coefficient distribution {distribution!r}")


class SyntheticField:
    """Random field ``mean + sum_k sqrt(lambda_k) Y_k phi_k`` with orthonormal ``phi_k``.

    ``coords`` holds the eigenfields in indicator coordinates (N*q, K).
    """

    def __init__(self, domain: SimplicialDomain, lambdas, coords, mean=None, distribution="gaussian"):
        self.domain = domain
        self.lambdas = np.asarray(lambdas, dtype=np.float64).reshape(-1)
        self.coords = np.asarray(coords, dtype=np.float64)
        if self.coords.shape != (domain.n_dofs, self.lambdas.size):
            raise InvalidArgumentError("need one eigenfield column per eigenvalue")
        if np.any(self.lambdas < 0):
            raise InvalidArgumentError("eigenvalues must be non-negative")
        if mean is None:
            mean = np.zeros((domain.n_cells, domain.q))
        mean = np.asarray(mean, dtype=np.float64)
        if mean.ndim <= 1:
            mean = np.broadcast_to(mean, (domain.n_cells, domain.q)).copy()
        self.mean = mean
        if distribution not in DISTRIBUTIONS:
            raise InvalidArgumentError(f"distribution must be one of {DISTRIBUTIONS}")
        self.distribution = distribution

    @classmethod
    def random(cls, domain: SimplicialDomain, lambdas, rng, mean=None, distribution="gaussian"):
        """Eigenfields from the QR factor of a Gaussian matrix (Haar-random orthonormal)."""
        rng = np.random.default_rng(rng)
        lambdas = np.asarray(lambdas, dtype=np.float64).reshape(-1)
        if lambdas.size > domain.n_dofs:
            raise InvalidArgumentError("more modes than degrees of freedom")
        g = rng.standard_normal((domain.n_dofs, lambdas.size))
        Q, R = np.linalg.qr(g)
        Q = Q * np.sign(np.diag(R))
        return cls(domain, lambdas, Q, mean, distribution)

    @property
    def K(self) -> int:
        return self.lambdas.size

    def draw_coords(self, n: int, rng, distribution: str | None = None) -> np.ndarray:
        """Centered realizations in indicator coordinates, shape (n, N*q)."""
        Y = draw_coefficients(np.random.default_rng(rng), (n, self.K), distribution or self.distribution)
        return (Y * np.sqrt(self.lambdas)) @ self.coords.T

    def draw(self, n: int, rng, distribution: str | None = None) -> np.ndarray:
        """Realizations as an (n, N, q) value array."""
        return self.domain.from_coords(self.draw_coords(n, rng, distribution)) + self.mean

    def kl_basis(self, M: int) -> KLBasis:
        """The exact truncated KL basis with the true tail statistics."""
        rest = self.lambdas[M:]
        return KLBasis.from_eigenpairs(
            self.domain,
            PiecewiseField(self.domain, self.mean),
            self.lambdas[:M],
            self.coords[:, :M],
            tail_sum=float(rest.sum()),
            tail_root_sum=float(np.sqrt(rest).sum()),
        )


def spectrum_from_spec(spec) -> np.ndarray:
    if isinstance(spec, dict):
        if "geometric" not in spec:
            raise InvalidArgumentError("spectrum dict must have a 'geometric' entry")
        g = spec["geometric"]
        scale, ratio, count = float(g.get("scale", 1.0)), float(g["ratio"]), int(g["count"])
        return scale * ratio ** np.arange(1, count + 1)
    lam = np.asarray(spec, dtype=np.float64).reshape(-1)
    if lam.size == 0 or np.any(lam < 0):
        raise InvalidArgumentError("spectrum must be a non-empty list of non-negative values")
    return lam


def _frames_of(entry, S):
    if "frames" in entry:
        frames = [int(f) for f in entry["frames"]]
    elif "start" in entry:
        frames = list(range(int(entry["start"]), int(entry.get("stop", entry["start"] + 1))))
    else:
        raise InvalidArgumentError("anomaly/missing entry needs 'frames' or 'start'/'stop'")
    for f in frames:
        if not 0 <= f < S:
            raise InvalidArgumentError(f"frame index {f} out of range 0..{S - 1}")
    return frames


def _region_cells(region, rows, cols) -> np.ndarray:
    if region is None:
        return np.arange(rows * cols)
    r0, r1, c0, c1 = (int(v) for v in region)
    if not (0 <= r0 < r1 <= rows and 0 <= c0 < c1 <= cols):
        raise InvalidArgumentError(f"region {region} outside the {rows}x{cols} grid")
    rr, cc = np.meshgrid(np.arange(r0, r1), np.arange(c0, c1), indexing="ij")
    return (rr * cols + cc).reshape(-1)


def anomaly_fields(spec: dict, S: int, rows: int, cols: int, q: int) -> np.ndarray:
    """Additive anomaly values (S, N, q) scripted by ``spec['anomalies']``."""
    out = np.zeros((S, rows * cols, q))
    for entry in spec.get("anomalies", []):
        kind = entry.get("kind", "step")
        frames = _frames_of(entry, S)
        cells = _region_cells(entry.get("region"), rows, cols)
        bands = np.asarray(entry.get("bands", list(range(q))), dtype=np.int64)
        amp = float(entry.get("amplitude", 1.0))
        if kind in ("step", "spike"):
            amps = np.full(len(frames), amp)
        elif kind == "ramp":
            end = float(entry.get("end_amplitude", 0.0))
            amps = np.linspace(amp, end, len(frames)) if len(frames) > 1 else np.array([amp])
        else:
            raise InvalidArgumentError(f"unknown anomaly kind {kind!r}")
        for f, a in zip(frames, amps):
            out[f][np.ix_(cells, bands)] += a
    return out


def simulate(spec: dict, seed: int = 0) -> tuple[FrameStack, SyntheticField]:
    """Draw a frame stack from a simulation spec; returns the stack and its generator."""
    rows, cols, q = int(spec["rows"]), int(spec["cols"]), int(spec.get("q", 1))
    S = int(spec["frames"])
    if S < 1:
        raise InvalidArgumentError("frames must be >= 1")
    domain = build_grid_domain(rows, cols, float(spec.get("cell_measure", 1.0)), q)
    rng = np.random.default_rng(seed)
    lambdas = spectrum_from_spec(spec["spectrum"])
    mean = np.broadcast_to(np.asarray(spec.get("mean", 0.0), dtype=np.float64), (q,))
    gen = SyntheticField.random(domain, lambdas, rng, mean=mean, distribution=spec.get("coefficients", "gaussian"))
    values = gen.draw(S, rng)
    noise = float(spec.get("noise", 0.0))
    if noise > 0:
        values = values + noise * rng.standard_normal(values.shape)
    values = values + anomaly_fields(spec, S, rows, cols, q)

    masks = None
    if spec.get("missing"):
        masks = np.ones((S, rows * cols), dtype=bool)
        for entry in spec["missing"]:
            for f in _frames_of(entry, S):
                if "region" in entry:
                    masks[f, _region_cells(entry["region"], rows, cols)] = False
                else:
                    frac = float(entry.get("fraction", 0.1))
                    n_off = int(round(frac * rows * cols))
                    masks[f, rng.choice(rows * cols, size=n_off, replace=False)] = False
        values = np.where(masks[:, :, None], values, np.nan)

    start, step = int(spec.get("day_start", 1)), int(spec.get("day_step", 1))
    if step < 1:
        raise InvalidArgumentError("day_step must be >= 1")
    days = start + step * np.arange(S)
    return FrameStack(rows, cols, q, days, values, masks), gen
