#!/usr/bin/env python3
"""
Einstein Viscosity Lab — Main entry point.

Generates particle configurations, runs the invariant self-tests and drives
the convergence study comparing the microscopic suspension flow with its
homogenized (Einstein) approximation. See ``cli/commands.py`` for the
subcommands.
"""

import sys

from cli.commands import run_cli


def main() -> int:
    return run_cli(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
