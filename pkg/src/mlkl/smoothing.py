"""Robust locally weighted linear regression for anomaly time series."""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError

__all__ = ["robust_smooth"]


def _tricube(u):
    return np.where(u < 1.0, (1.0 - u**3) ** 3, 0.0)


def _fit_at(t, y, w, i, idx, span):
    """Weighted local linear value at t[i] from the points ``idx``, or None if no weight."""
    ti, yi = t[idx], y[idx]
    if np.all(yi == yi[0]) and np.any(w[idx] > 0):
        # flat window: return it exactly instead of a rounded weighted mean
        return yi[0]
    d = np.abs(ti - t[i])
    h = d.max()
    k = np.ones(idx.size)
    if h > 0:
        # Cleveland's cut-offs: full weight very close in, zero at the window edge
        k = np.where(d <= 0.001 * h, 1.0, np.where(d <= 0.999 * h, _tricube(d / h), 0.0))
    k = k * w[idx]
    sw = k.sum()
    if sw <= 0.0:
        return None
    k /= sw
    tbar = np.dot(k, ti)
    dt = ti - tbar
    c = np.dot(k, dt * dt)
    if np.sqrt(c) > 0.001 * span:
        slope = np.dot(k, dt * yi) / c
        return np.dot(k, yi) + slope * (t[i] - tbar)
    return np.dot(k, yi)


def _local_fit(t, y, weights, k):
    n = t.size
    fitted = np.empty(n)
    span = t[-1] - t[0]
    left = 0
    for i in range(n):
        # slide the k-point window so it holds the k nearest neighbours of t[i]
        while left + k < n and t[i] - t[left] > t[left + k] - t[i]:
            left += 1
        value = _fit_at(t, y, weights, i, np.arange(left, left + k), span)
        if value is None:
            # every neighbour was rejected as an outlier: use the k nearest
            # points that still carry weight
            keep = np.flatnonzero(weights > 0)
            if keep.size == 0:
                value = y[i]
            else:
                near = np.argsort(np.abs(t[keep] - t[i]), kind="stable")[:k]
                value = _fit_at(t, y, weights, i, np.sort(keep[near]), span)
                if value is None:
                    value = y[i]
        fitted[i] = value
    return fitted


def robust_smooth(t, y, span: float = 0.3, iterations: int = 4) -> np.ndarray:
    """Robust LOESS smoothing of ``y`` sampled at ``t``.

    Each point is fitted by a weighted linear regression over its
    ``floor(span * n)`` nearest neighbours with tricube distance weights.
    The fit is then repeated ``iterations`` times with bisquare robustness
    weights computed from the residuals, scaled by six times their median
    absolute value, so isolated outliers lose all influence.

    Parameters
    ----------
    t, y : array_like
        Sample locations (need not be sorted) and values.
    span : float in (0, 1]
        Fraction of the points used for each local fit.
    iterations : int
        Number of robustness reweighting passes after the initial fit.

    Returns
    -------
    ndarray
        Smoothed values, aligned with the input order.
    """
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if t.size != y.size:
        raise InvalidArgumentError("t and y must have the same length")
    n = t.size
    if n < 3:
        raise InvalidArgumentError("robust_smooth needs at least 3 points")
    if not 0 < span <= 1:
        raise InvalidArgumentError("span must lie in (0, 1]")
    k = int(np.floor(span * n + 1e-10))
    if k < 2:
        raise InvalidArgumentError(f"span {span} gives fewer than 2 neighbours for {n} points")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
        raise InvalidArgumentError("series values must be finite")

    order = np.argsort(t, kind="stable")
    ts, ys = t[order], y[order]
    weights = np.ones(n)
    fitted = _local_fit(ts, ys, weights, k)
    for _ in range(int(iterations)):
        resid = np.abs(ys - fitted)
        scale = 6.0 * np.median(resid)
        tiny = 1e-12 * max(np.mean(np.abs(ys)), 1e-300)
        if scale <= tiny:
            if np.all(resid <= tiny):
                break
            # more than half the points are fitted exactly: keep only those
            weights = (resid <= tiny).astype(float)
        else:
            u = resid / scale
            weights = np.where(u <= 0.001, 1.0, np.where(u < 0.999, (1.0 - u**2) ** 2, 0.0))
        fitted = _local_fit(ts, ys, weights, k)
    out = np.empty(n)
    out[order] = fitted
    return out
