"""``taylor-pn <experiment> [--seed U64] [--out DIR] [--set key=value ...]``

Exit codes: 0 success, 1 invalid configuration, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import TaylorPNError
from .experiments import EXPERIMENTS, ConfigError, ExperimentConfig, parse_overrides, run

log = logging.getLogger("taylorpn")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="taylor-pn", description="Probabilistic Taylor expansion experiments.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--seed", type=int, default=0, help="unsigned 64-bit seed (default 0)")
    p.add_argument("--out", default="out", help="output directory (default ./out)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override an experiment setting; repeatable")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            log.setLevel(logging.INFO)
        cfg = ExperimentConfig(args.experiment, args.seed, args.out, parse_overrides(args.overrides))
        cfg.params()
    except ConfigError as exc:
        print(f"taylor-pn: {exc}", file=sys.stderr)
        return 1
    try:
        manifest = run(cfg)
    except ConfigError as exc:
        print(f"taylor-pn: {exc}", file=sys.stderr)
        return 1
    except (TaylorPNError, ArithmeticError, FloatingPointError) as exc:
        print(f"taylor-pn: numerical failure: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"taylor-pn: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"taylor-pn: {exc}", file=sys.stderr)
        return 1
    log.info("%s finished in %.2fs", cfg.experiment, manifest["runtime_seconds"])
    for item in manifest["outputs"]:
        print(cfg.out / item["file"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
