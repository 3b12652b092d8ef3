"""Implementations behind the command-line subcommands.

Each ``cmd_*`` function takes already-parsed inputs, so the same code
paths are usable from Python and tested without a subprocess.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ..detect import AnomalyFilter, DetectionReport, rejection_threshold
from ..errors import DimensionError, InvalidArgumentError
from ..geometry import build_grid_domain
from ..multilevel import build_multilevel
from ..partition import make_tree
from ..smoothing import robust_smooth
from ..spectral import SnapshotSet, fit_snapshots
from .config import FilterConfig
from .filterfile import load_filter, save_filter
from .formats import FrameStack, write_frame_stack
from .simulate import simulate

log = logging.getLogger(__name__)


def thread_count() -> int | None:
    """Parallelism cap from ``MLKL_THREADS`` (unset or invalid: no cap)."""
    raw = os.environ.get("MLKL_THREADS")
    if not raw:
        return None
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring non-integer MLKL_THREADS=%r", raw)
        return None


def parse_range(text: str | None, n: int) -> slice:
    """``"a:b"`` (0-based, half-open, either end optional) as a slice over n frames."""
    if text is None or text == "":
        return slice(0, n)
    parts = text.split(":")
    if len(parts) != 2:
        raise InvalidArgumentError(f"range must look like 'start:stop', got {text!r}")
    start = int(parts[0]) if parts[0] else 0
    stop = int(parts[1]) if parts[1] else n
    if not 0 <= start < stop <= n:
        raise InvalidArgumentError(f"range {text!r} is empty or outside 0..{n}")
    return slice(start, stop)


def stack_dims(stack: FrameStack) -> dict:
    return {"rows": stack.rows, "cols": stack.cols, "q": stack.q, "N": stack.n_cells}


def fit_filter(stack: FrameStack, config: FilterConfig, train: slice | None = None):
    """Fit a filter on the training frames; returns ``(filter, fit_settings)``."""
    train = slice(0, len(stack)) if train is None else train
    idx = np.arange(len(stack))[train]
    if stack.masks is not None:
        complete = stack.masks[idx].all(axis=1)
        if not complete.all():
            log.warning("skipping %d training frames with missing pixels", int((~complete).sum()))
        idx = idx[complete]
    if idx.size < 2:
        raise InvalidArgumentError("need at least 2 complete training frames")
    domain = build_grid_domain(stack.rows, stack.cols, 1.0, stack.q)
    kl = fit_snapshots(SnapshotSet(domain, stack.values[idx]), config.M, tail_mode=config.tail_mode)
    tree = make_tree(domain, config.n0)
    basis = build_multilevel(tree, domain, kl, tol=config.tol, max_workers=thread_count())
    filt = AnomalyFilter(kl, n0=config.n0, tol=config.tol, basis=basis)
    settings = {
        "M": config.M,
        "n0": config.n0,
        "tol": config.tol,
        "tail_mode": config.tail_mode,
        "train_days": [int(stack.days[i]) for i in idx],
    }
    return filt, settings


def cmd_fit(stack: FrameStack, config: FilterConfig, out, train_range: str | None = None, stream=None) -> AnomalyFilter:
    """Fit and save a filter, then print its spectrum and tail sum."""
    stream = sys.stdout if stream is None else stream
    filt, settings = fit_filter(stack, config, parse_range(train_range, len(stack)))
    digest = save_filter(out, filt, settings, stack_dims(stack))
    kl = filt.kl
    print(f"trained on {len(settings['train_days'])} frames, M = {kl.M}", file=stream)
    for k, lam in enumerate(kl.lambdas, start=1):
        print(f"lambda_{k} = {lam:.17g}", file=stream)
    print(f"t_M = {kl.tail_sum:.17g}", file=stream)
    print(f"s_M = {kl.tail_root_sum:.17g}", file=stream)
    print(f"basis functions = {filt.basis.n_functions}", file=stream)
    print(f"filter hash = {digest}", file=stream)
    return filt


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _check_dims(meta: dict, stack: FrameStack):
    want = meta["dims"]
    have = stack_dims(stack)
    if any(want[k] != have[k] for k in ("rows", "cols", "q")):
        raise DimensionError(
            f"filter was built for {want['rows']}x{want['cols']}x{want['q']} frames, "
            f"input has {have['rows']}x{have['cols']}x{have['q']}"
        )


def _write_report(outdir: Path, prefix: str, report: DetectionReport, stack: FrameStack, extra: dict) -> dict:
    table = report.table
    lines = ["level,k,p,d"]
    lines += [f"{l},{k},{p},{_fmt(d)}" for (l, k, p), d in zip(table.labels, table.values)]
    (outdir / f"{prefix}_coefficients.csv").write_text("\n".join(lines) + "\n")

    lines = ["level,k,energy,p_value,reject"]
    lines += [
        f"{s.level},{s.index},{_fmt(s.energy)},{_fmt(s.p_value)},{int(s.reject)}" for s in report.scores
    ]
    (outdir / f"{prefix}_scores.csv").write_text("\n".join(lines) + "\n")

    dom = report.anomaly.domain
    src = np.arange(dom.n_cells) if dom.source_ids is None else dom.source_ids
    rr, cc = np.divmod(src, stack.cols)
    lines = ["row,col,band,w"]
    w = report.anomaly.values
    for i in range(dom.n_cells):
        for b in range(dom.q):
            lines.append(f"{rr[i]},{cc[i]},{b},{_fmt(w[i, b])}")
    (outdir / f"{prefix}_anomaly.csv").write_text("\n".join(lines) + "\n")

    summary = {
        "anomaly_norm": report.anomaly_norm,
        "bounds": [report.lower, report.upper],
        "config": report.config,
        "n_cells": report.n_cells,
        "n_cells_total": stack.n_cells,
        "restricted": report.restricted,
        "n_coefficients": len(table),
        "n_rejected_cells": len(report.rejections),
        "rejected_cells": [[s.level, s.index] for s in report.rejections],
        **extra,
    }
    (outdir / f"{prefix}_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def cmd_detect(
    stack: FrameStack,
    filter_path,
    outdir,
    alpha: float = 0.01,
    threshold_mode: str = "chebyshev",
    frame_range: str | None = None,
) -> list[dict]:
    """Score every selected frame and write per-frame CSV/JSON reports.

    Files are named ``day_<day>_{coefficients,scores,anomaly}.csv`` and
    ``day_<day>_summary.json``; ``summary.json`` indexes all frames.
    """
    filt, meta = load_filter(filter_path)
    _check_dims(meta, stack)
    FilterConfig(M=max(filt.kl.M, 1), alpha=alpha, threshold_mode=threshold_mode, n0=filt.n0, tol=filt.tol)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    idx = np.arange(len(stack))[parse_range(frame_range, len(stack))]

    def run(i):
        return filt.score(stack.values[i], stack.mask(i), alpha=alpha, mode=threshold_mode, frame=int(stack.days[i]))

    workers = thread_count()
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            reports = list(pool.map(run, idx))
    else:
        reports = [run(i) for i in idx]

    threshold = rejection_threshold(filt.kl.tail_sum, alpha, threshold_mode)
    summaries = []
    for i, report in zip(idx, reports):
        day = int(stack.days[i])
        extra = {
            "day": day,
            "frame": int(i),
            "t_M": filt.kl.tail_sum,
            "s_M": filt.kl.tail_root_sum,
            "threshold": threshold,
            "filter_hash": meta["content_hash"],
        }
        summaries.append(_write_report(outdir, f"day_{day}", report, stack, extra))
        if report.restricted:
            log.info("day %d scored on %d of %d cells", day, report.n_cells, stack.n_cells)
    index = [
        {k: s[k] for k in ("day", "frame", "anomaly_norm", "n_rejected_cells", "n_cells", "restricted")}
        for s in summaries
    ]
    (outdir / "summary.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return summaries


def anomaly_series(stack: FrameStack, filt: AnomalyFilter, pixel: int, frame_range: str | None = None):
    idx = np.arange(len(stack))[parse_range(frame_range, len(stack))]
    values = np.full((idx.size, stack.q), np.nan)
    for j, i in enumerate(idx):
        values[j] = filt.pixel_anomaly(stack.values[i], pixel, stack.mask(i))
    return stack.days[idx], values


def smooth_series(days, values, span: float) -> np.ndarray:
    """Robust-smooth each band over its non-gap frames; gaps stay NaN."""
    out = np.full_like(values, np.nan)
    for b in range(values.shape[1]):
        ok = np.isfinite(values[:, b])
        try:
            out[ok, b] = robust_smooth(days[ok], values[ok, b], span=span)
        except InvalidArgumentError as exc:
            log.warning("band %d not smoothed: %s", b, exc)
    return out


def cmd_sequence(stack: FrameStack, filter_path, pixel: tuple[int, int], out, span: float = 0.3, frame_range: str | None = None):
    """Write ``day,band,anomaly,smoothed`` rows for one pixel; gaps are empty fields."""
    filt, meta = load_filter(filter_path)
    _check_dims(meta, stack)
    r, c = pixel
    if not (0 <= r < stack.rows and 0 <= c < stack.cols):
        raise InvalidArgumentError(f"pixel {pixel} outside the {stack.rows}x{stack.cols} grid")
    days, values = anomaly_series(stack, filt, r * stack.cols + c, frame_range)
    smoothed = smooth_series(days, values, span)
    lines = ["day,band,anomaly,smoothed"]
    for j, day in enumerate(days):
        for b in range(stack.q):
            a, s = values[j, b], smoothed[j, b]
            lines.append(
                f"{int(day)},{b},{'' if np.isnan(a) else _fmt(a)},{'' if np.isnan(s) else _fmt(s)}"
            )
    Path(out).write_text("\n".join(lines) + "\n")
    return days, values, smoothed


def cmd_simulate(spec: dict, seed: int, out) -> FrameStack:
    stack, _ = simulate(spec, seed)
    write_frame_stack(stack, out)
    return stack
