"""
cosseratflow - Main Entry Point
Routes the command line to verify, run, bench-stiffness and stokes-probe.
"""

import argparse
import logging
import sys
from typing import List, Optional

from .backend.errors import ConfigParseError, ConfigValidationError, CosseratError
from .config import parse_config, with_overrides


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_ERROR = 3

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cosseratflow",
                                     description="Cosserat rod swimmers in regularized Stokes flow")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("config", help="key = value configuration file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="random seed")
        p.add_argument("--stride", type=int, default=None, help="trace record stride")

    # the suite is fixed; it takes no config, seed or stride
    verify = sub.add_parser("verify", help="run the property suite")
    verify.add_argument("--out", default=None, help="output directory")
    add_common(sub.add_parser("run", help="simulate a swimmer scenario"))
    add_common(sub.add_parser("bench-stiffness", help="stable step of both steppers"))
    add_common(sub.add_parser("stokes-probe", help="probe a regularized Stokeslet field"))
    return parser


def _verify(args) -> int:
    from .commands.verify import cmd_verify

    report = cmd_verify(output_dir=args.out or "out")
    for check in report.checks:
        print(f"{'PASS' if check.passed else 'FAIL'}  {check.name:<24} "
              f"{check.measured:.6g} (tol {check.tolerance:.3g})")
    print(f"overall: {report.status}")
    return EXIT_OK if report.passed else EXIT_VERIFY_FAILED


def _run(args, config) -> int:
    from .commands.run_swimmer import cmd_run

    trace, metrics = cmd_run(config, config.output_dir)
    print(f"status: {trace.status}")
    print(f"frames: {len(trace)}")
    print(f"distance: {metrics.distance:.6g}")
    print(f"mean speed: {metrics.mean_speed:.6g}")
    print(f"base roll rate: {metrics.base_roll_rate:.6g}")
    print(f"axis angle: {metrics.axis_angle:.3g} deg")
    return EXIT_OK if trace.status == "completed" else EXIT_NUMERICAL_ERROR


def _bench(args, config) -> int:
    from .commands.bench_stiffness import cmd_bench_stiffness

    report = cmd_bench_stiffness(config, output_dir=config.output_dir)
    for stepper, dt in report.dt_max.items():
        print(f"{stepper}: dt_max {dt:.6g}")
    print(f"ratio: {report.ratio:.6g} (required {report.required_ratio:g})")
    return EXIT_OK if report.passed else EXIT_VERIFY_FAILED


def _probe(args, config) -> int:
    from .commands.stokes_probe import cmd_stokes_probe

    df = cmd_stokes_probe(config, config.output_dir)
    print(f"points: {len(df)}")
    print(f"max |div u|: {df['divergence'].abs().max():.3e}")
    return EXIT_OK


COMMANDS = {"run": _run, "bench-stiffness": _bench, "stokes-probe": _probe}


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point; returns the exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format=LOG_FORMAT)

    try:
        if args.command == "verify":
            return _verify(args)
        config = with_overrides(parse_config(args.config), output_dir=args.out,
                                seed=args.seed, record_stride=args.stride)
        return COMMANDS[args.command](args, config)
    except (ConfigParseError, ConfigValidationError) as e:
        logger.error("configuration error: %s", e)
        return EXIT_CONFIG_ERROR
    except OSError as e:
        logger.error("cannot read configuration: %s", e)
        return EXIT_CONFIG_ERROR
    except ValueError as e:
        logger.error("inconsistent configuration: %s", e)
        return EXIT_CONFIG_ERROR
    except CosseratError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_NUMERICAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
