"""Console entry point.

Math-library thread pools must be pinned before numpy is first imported,
so this module peeks at ``--threads`` (default 1, the deterministic
setting) and exports the usual environment knobs before pulling in the
real CLI.
"""

import os
import sys


def _requested_threads(argv: list[str]) -> str:
    threads = "1"
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif arg.startswith("--threads="):
            threads = arg.split("=", 1)[1]
    return threads


def entrypoint() -> int:
    threads = _requested_threads(sys.argv[1:])
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, threads)
    from .cli import main

    return main(sys.argv[1:])
