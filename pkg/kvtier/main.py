"""
kvtier
Trace-driven simulator and optimizer for decode-stage KV-cache placement
across HBM and off-package DRAM.

Command-line entry point: `python -m kvtier.main <command> ...`.
"""
import sys
from typing import List, Optional

from kvtier.cli.router import dispatch


def main(argv: Optional[List[str]] = None) -> int:
    return dispatch(argv)


if __name__ == "__main__":
    sys.exit(main())
