"""Serve the toy backend over the wire protocol on stdio.

Run as `python -m branchbench.toyserver --protocol 1`. The advertised
protocol version is settable so clients' handshake checks can be tested.
"""

import argparse
import sys

from . import wire
from .backend import BackendConfig, ToyBackend


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="branchbench-toyserver")
    parser.add_argument("--protocol", type=int, default=wire.PROTOCOL_VERSION)
    args = parser.parse_args(argv)
    backend = ToyBackend(BackendConfig(kind="toy"))
    wire.serve(backend, protocol_version=args.protocol)
    return 0


if __name__ == "__main__":
    sys.exit(main())
