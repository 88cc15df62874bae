#!/usr/bin/env python3

# Single-run driver: fit, train, control, robustness, bench and report subcommands. See skclib/cli.py.

import sys

from skclib.cli import main

if __name__ == '__main__':
    sys.exit(main())
