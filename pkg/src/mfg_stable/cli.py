"""``mfg-stable --config <path> --out <dir>``

Exit status: 0 on success, 2 for an invalid configuration, 3 when a solver fails.
"""

import argparse
import logging
import sys

from .config import load_config
from .errors import SolverError, ValidationError
from .experiments import run

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3


def build_parser():
    p = argparse.ArgumentParser(prog="mfg-stable", description="Run a declarative MFG experiment.")
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", required=True, help="output directory (created if missing)")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver iterations")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        summary = run(cfg, args.out)
    except ValidationError as exc:
        print(f"mfg-stable: invalid configuration [{exc.field}]: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SolverError as exc:
        print(f"mfg-stable: solver failure ({exc.kind}): {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"{cfg.experiment}: {summary['status']} -> {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
