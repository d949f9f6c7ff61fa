"""
main.py — pat-resolve command line.

    python main.py phantom          [-c CONFIG] [--out DIR] [--seed N]
    python main.py simulate         [-c CONFIG] [--subsample N]
    python main.py reconstruct      [SINOGRAM] [--method tikhonov|l1pos]
    python main.py sampling-report  [--probe] [--sweep 1,2,4,8]

Exit codes:
  0  success
  2  invalid configuration, arguments or mismatched data dimensions
  3  a solver stopped at its iteration cap, or another numerical failure
  4  unreadable or malformed input file, or an output that cannot be written
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import List, Optional

_engine_dir = os.path.join(os.path.dirname(os.path.abspath(__file__)), "engine")
if _engine_dir not in sys.path:
    sys.path.insert(0, _engine_dir)

from geometry_types import GridMismatchError, PatError

from config import METHODS, ConfigError, ExperimentConfig
from pipeline_service import cmd_phantom, cmd_reconstruct, cmd_sampling_report, cmd_simulate
from raster_io import RasterFormatError

log = logging.getLogger("pat-resolve")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _parse_factors(text: str) -> List[float]:
    try:
        factors = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError("sampling.sweep_factors", f"cannot parse {text!r}: {e}") from e
    if not factors:
        raise ConfigError("sampling.sweep_factors", "empty factor list")
    return factors


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="YAML/JSON experiment config (default: PATRESOLVE_CONFIG or configs/default.json)")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="random seed for phantoms and probes")
    common.add_argument("--subsample", type=int, help="keep every n-th sensor")
    common.add_argument("--timestamp", action="store_true", help="record the creation time in file headers")
    common.add_argument("--verbose", "-v", action="store_true", help="Verbose logging")

    parser = argparse.ArgumentParser(prog="pat-resolve", description="2D photoacoustic resolution toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("phantom", parents=[common], help="rasterize the configured phantom")
    sub.add_parser("simulate", parents=[common], help="simulate filtered, sampled data")
    rec = sub.add_parser("reconstruct", parents=[common], help="reconstruct from a sinogram file")
    rec.add_argument("sinogram", nargs="?", help="sinogram file (default: <out>/sinogram.sino)")
    rec.add_argument("--method", default=METHODS[0], help=f"one of {', '.join(METHODS)}")
    rep = sub.add_parser("sampling-report", parents=[common], help="Nyquist bookkeeping and stability probe")
    rep.add_argument("--probe", action="store_true", help="estimate σ_min/σ_max on a downscaled copy")
    rep.add_argument("--sweep", nargs="?", const="", default=None, metavar="FACTORS",
                     help="angular sweep, comma-separated undersampling factors (default from config)")
    return parser


def _setup_logging(verbose: bool) -> None:
    level_name = os.getenv("PATRESOLVE_LOG_LEVEL", "DEBUG" if verbose else "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )


def _load_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_file(args.config)
    else:
        cfg = ExperimentConfig.from_env()
    sweep = getattr(args, "sweep", None)
    return cfg.with_overrides(
        output_dir=args.out,
        seed=args.seed,
        subsample=args.subsample,
        write_timestamp=True if args.timestamp else None,
        sweep_factors=_parse_factors(sweep) if sweep else None,
    )


def _dispatch(args) -> int:
    cfg = _load_config(args)
    if args.command == "phantom":
        cmd_phantom(cfg)
    elif args.command == "simulate":
        cmd_simulate(cfg)
    elif args.command == "reconstruct":
        path = args.sinogram or str(cfg.output_path / "sinogram.sino")
        outcome = cmd_reconstruct(cfg, path, args.method)
        if not outcome.converged:
            log.error("%s stopped after %d iterations without converging", args.method, outcome.iterations)
            return EXIT_NUMERIC
    else:
        cmd_sampling_report(cfg, probe=args.probe, sweep=args.sweep is not None)
    return EXIT_OK


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    _setup_logging(args.verbose)
    try:
        return _dispatch(args)
    except (ConfigError, GridMismatchError) as e:
        log.error("%s", e)
        return EXIT_CONFIG
    except RasterFormatError as e:
        log.error("%s", e)
        return EXIT_IO
    except PatError as e:
        log.error("%s", e)
        return EXIT_NUMERIC
    except OSError as e:
        log.error("%s", e)
        return EXIT_IO
    except ValueError as e:
        log.error("invalid input: %s", e)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
