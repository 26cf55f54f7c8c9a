import argparse
import sys

from .errors import BeaconError
from .run.main import init_proof_args, init_service_args
from .run.analysis import init_entropy_args


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="nizkbeacon")
    subparsers = parser.add_subparsers(required=True)
    init_service_args(subparsers)
    init_proof_args(subparsers)
    init_entropy_args(subparsers)
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except BeaconError as e:
        print(f"Error: {e}", file=sys.stderr, flush=True)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
