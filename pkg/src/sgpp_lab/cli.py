"""Command line entry point: ``sgpp-lab {run,verify,plot}``."""

from __future__ import annotations

import argparse
import logging
import sys
from importlib import resources
from pathlib import Path

from . import __version__, plotting
from .config import load_config
from .errors import SGPPError
from .runner import (
    EXIT_INVALID,
    EXIT_OK,
    build_testbed,
    resolve_out_dir,
    run_experiment,
    run_verification_suite,
)

log = logging.getLogger("sgpp_lab")


def bundled_config(name):
    """Path of a config shipped with the package, e.g. ``fig1c_sgpp``."""
    return Path(str(resources.files("sgpp_lab") / "configs" / f"{name}.ini"))


def bundled_configs():
    root = Path(str(resources.files("sgpp_lab") / "configs"))
    return sorted(p.stem for p in root.glob("*.ini"))


def _config_path(value):
    p = Path(value)
    if p.exists() or p.suffix:
        return p
    return bundled_config(value)


def _u64(value):
    v = int(value, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(value):
    v = int(value)
    if v < 1:
        raise argparse.ArgumentTypeError("--jobs must be >= 1")
    return v


def build_parser():
    ap = argparse.ArgumentParser(prog="sgpp-lab", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", required=True, type=_config_path,
                       help="config file, or the name of a bundled config")
        p.add_argument("--out", help="run directory (default: $SGPP_LAB_OUT/<name>)")
        if seed:
            p.add_argument("--seed", type=_u64, help="override seed.master_seed")
        p.add_argument("--jobs", type=_positive, default=1, help="worker threads per ensemble")

    common(sub.add_parser("run", help="run an experiment config"))
    common(sub.add_parser("verify", help="run the property checks"), seed=False)
    p = sub.add_parser("plot", help="render SVGs from an existing run directory")
    p.add_argument("--config", required=True, type=_config_path)
    p.add_argument("--out", help="run directory holding trajectories.csv")
    p.add_argument("--no-paths", action="store_true", help="terminal markers only")
    sub.add_parser("list", help="list bundled configs")
    return ap


def _plot(args):
    try:
        cfg = load_config(args.config)
    except SGPPError as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_INVALID
    out_dir = resolve_out_dir(cfg, args.out)
    csv_path = out_dir / "trajectories.csv"
    if not csv_path.exists():
        log.error("no trajectories.csv in %s", out_dir)
        return EXIT_INVALID
    m, _ = build_testbed(cfg)
    outline = m.outline() if m is not None else []
    try:
        for p in plotting.render_plot(csv_path, out_dir, outline, polylines=not args.no_paths):
            print(p)
    except SGPPError as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return run_experiment(args.config, args.out, args.seed, args.jobs)
    if args.command == "verify":
        return run_verification_suite(args.config, args.out, args.jobs)
    if args.command == "plot":
        return _plot(args)
    for name in bundled_configs():
        print(name)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
