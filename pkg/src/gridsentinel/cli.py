"""Command-line entry point: ``gridsentinel simulate|calibrate|spectrum``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import gossip
from .config import load_config
from .detector import save_calibration
from .errors import GridSentinelError
from .harness import (
    build_region_graph,
    detector_config,
    ensure_calibrated,
    region_model,
    run_scenario,
    saturated_snapshot,
    write_outputs,
)

log = logging.getLogger("gridsentinel")


def _u64(text):
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def cmd_simulate(args):
    config = load_config(args.config, seed=args.seed, trials_bg=args.bg_trials)
    result = run_scenario(config, with_bg=not args.no_bg)
    comparison, written = write_outputs(result, args.out, figures=not args.no_figures)

    def show(v):
        return "not detected" if v is None else v

    print(f"beta = {result.beta:.6g}")
    print(f"ledger crossing epoch: {show(comparison.chain_cross)}")
    if not args.no_bg:
        print(f"BG median crossing epoch: {show(comparison.bg_median_cross)}")
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_calibrate(args):
    config = load_config(args.config, seed=args.seed)
    detector = ensure_calibrated(config.with_(calibration_file=""), detector_config(config))
    target = args.out or config.calibration_file
    if target:
        save_calibration(detector, target)
        print(f"wrote {target}")
    print(f"alpha = {detector.alpha_target!r}")
    print(f"window_len = {detector.window_len}")
    print(f"median = {detector.center!r}")
    print(f"tau = {detector.threshold!r}")
    for mag, beta in sorted(detector.betas.items()):
        print(f"beta@{mag:g} = {beta!r}")
    return 0


def cmd_spectrum(args):
    config = load_config(args.config, seed=args.seed)
    if config.n_regions < 2:
        raise GridSentinelError("spectrum needs at least two regions")
    graph = build_region_graph(config, np.random.default_rng(np.random.SeedSequence(config.seed).spawn(4)[1]))
    if args.beta is not None:
        beta = args.beta
    else:
        beta = ensure_calibrated(config, model=region_model(config)).beta(config.magnitude)
    xs, ys = saturated_snapshot(config, beta)
    du, dy = gossip.initial_errors(xs, ys)
    d_star = gossip.precision_threshold(beta, config.n_regions, graph.r, du, dy)
    print(f"topology = {config.topology} (n = {graph.n}, gamma = {graph.gamma:g})")
    print(f"lambda_n-2 = {graph.lambda_second_smallest:.12g}")
    print(f"lambda_1 = {graph.lambda_largest:.12g}")
    print(f"r = {graph.r:.12g}")
    print(f"beta = {beta:.6g}")
    print(f"D* = {d_star:.6g}")
    print(f"D = {config.D} ({'ledger' if config.D > d_star else 'gossip'} more precise)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="gridsentinel", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a scenario and write CSV metrics")
    sim.add_argument("--config", required=True, type=Path)
    sim.add_argument("--out", type=Path, default=Path("out"))
    sim.add_argument("--seed", type=_u64)
    sim.add_argument("--bg-trials", type=_positive, dest="bg_trials")
    sim.add_argument("--no-bg", action="store_true", help="skip the broadcast-gossip benchmark")
    sim.add_argument("--no-figures", action="store_true", help="write CSV only")
    sim.set_defaults(func=cmd_simulate)

    cal = sub.add_parser("calibrate", help="calibrate the residual detector")
    cal.add_argument("--config", required=True, type=Path)
    cal.add_argument("--out", type=Path, help="calibration file (defaults to detector.calibration_file)")
    cal.add_argument("--seed", type=_u64)
    cal.set_defaults(func=cmd_calibrate)

    spc = sub.add_parser("spectrum", help="Laplacian spectrum, mixing rate and precision threshold")
    spc.add_argument("--config", required=True, type=Path)
    spc.add_argument("--seed", type=_u64)
    spc.add_argument("--beta", type=float, help="skip calibration and use this miss rate")
    spc.set_defaults(func=cmd_spectrum)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except GridSentinelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
