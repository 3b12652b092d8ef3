"""``mlkl`` command line: fit, detect, sequence and simulate.

Exit status is 0 on success, 2 for unreadable or malformed input files,
3 for dimension or rank problems and 1 for any other invalid argument.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from ..errors import DimensionError, DomainMismatchError, FormatError, MLKLError, RankDeficientError
from .commands import cmd_detect, cmd_fit, cmd_sequence, cmd_simulate
from .config import FilterConfig
from .formats import load_stack

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FORMAT = 2
EXIT_DIMENSION = 3


def _pixel(text: str) -> tuple[int, int]:
    try:
        r, c = (int(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"pixel must look like 'row,col', got {text!r}") from exc
    return r, c


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mlkl", description="Multilevel KL anomaly detection on raster stacks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="estimate a KL basis and build the multilevel filter")
    fit.add_argument("--input", required=True, help="MLAF file or CSV manifest.json")
    fit.add_argument("--train-range", default=None, help="frames 'start:stop', 0-based half-open (default: all)")
    fit.add_argument("--M", type=int, default=FilterConfig.M)
    fit.add_argument("--n0", type=int, default=FilterConfig.n0)
    fit.add_argument("--tol", type=float, default=FilterConfig.tol)
    fit.add_argument("--tail-mode", choices=("data", "lambda_m"), default=FilterConfig.tail_mode)
    fit.add_argument("--out", required=True, help="filter file to write")

    det = sub.add_parser("detect", help="score frames against a filter")
    det.add_argument("--filter", required=True)
    det.add_argument("--input", required=True)
    det.add_argument("--alpha", type=float, default=FilterConfig.alpha)
    det.add_argument("--threshold-mode", choices=("chebyshev", "paper-literal"), default=FilterConfig.threshold_mode)
    det.add_argument(
        "--paper-literal-threshold",
        action="store_true",
        help="shorthand for --threshold-mode paper-literal",
    )
    det.add_argument("--frames", default=None, help="frames 'start:stop' to score (default: all)")
    det.add_argument("--outdir", required=True)

    seq = sub.add_parser("sequence", help="anomaly time series at one pixel")
    seq.add_argument("--filter", required=True)
    seq.add_argument("--input", required=True)
    seq.add_argument("--pixel", type=_pixel, required=True, help="'row,col', 0-based")
    seq.add_argument("--span", type=float, default=FilterConfig.span)
    seq.add_argument("--frames", default=None)
    seq.add_argument("--out", required=True)

    sim = sub.add_parser("simulate", help="draw a synthetic frame stack")
    sim.add_argument("--spec", required=True, help="JSON simulation spec")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True, help="MLAF file to write")
    return p


def run(args: argparse.Namespace) -> None:
    if args.command == "fit":
        config = FilterConfig(M=args.M, n0=args.n0, tol=args.tol, tail_mode=args.tail_mode)
        cmd_fit(load_stack(args.input), config, args.out, train_range=args.train_range)
    elif args.command == "detect":
        mode = "paper-literal" if args.paper_literal_threshold else args.threshold_mode
        summaries = cmd_detect(
            load_stack(args.input), args.filter, args.outdir, alpha=args.alpha, threshold_mode=mode,
            frame_range=args.frames,
        )
        flagged = sum(1 for s in summaries if s["n_rejected_cells"])
        print(f"scored {len(summaries)} frames, {flagged} with rejected cells; reports in {args.outdir}")
    elif args.command == "sequence":
        FilterConfig(span=args.span)
        cmd_sequence(load_stack(args.input), args.filter, args.pixel, args.out, span=args.span, frame_range=args.frames)
    elif args.command == "simulate":
        try:
            with open(args.spec) as fh:
                spec = json.load(fh)
        except (OSError, ValueError) as exc:
            raise FormatError(f"cannot read simulation spec {args.spec}: {exc}", section="spec") from exc
        stack = cmd_simulate(spec, args.seed, args.out)
        print(f"wrote {len(stack)} frames of {stack.rows}x{stack.cols}x{stack.q} to {args.out}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        run(args)
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (DimensionError, DomainMismatchError) as exc:
        print(f"dimension error: {exc}", file=sys.stderr)
        return EXIT_DIMENSION
    except RankDeficientError as exc:
        print(f"rank error: {exc}", file=sys.stderr)
        return EXIT_DIMENSION
    except (MLKLError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
