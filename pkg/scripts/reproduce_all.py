#!/usr/bin/env python3
"""Regenerate every bundled figure dataset into ./out/figures.

Runs the CLI `reproduce` subcommand for each bundled configuration.
The spectrum and pulse figures run master-equation solves and take a
few minutes each; pass figure ids as arguments to run a subset.
"""

import sys

from ioncavity.cli import REPRODUCE_COMMAND, main

FIGURES = list(REPRODUCE_COMMAND)


def run(figures, out="out/figures", plot=True):
    failures = {}
    for figure in figures:
        argv = ["--out", out]
        if plot:
            argv.append("--plot")
        argv += ["reproduce", figure]
        print(f"=== {figure} ===")
        code = main(argv)
        if code != 0:
            failures[figure] = code
    return failures


if __name__ == "__main__":
    wanted = sys.argv[1:] or FIGURES
    unknown = sorted(set(wanted) - set(FIGURES))
    if unknown:
        sys.exit(f"unknown figure ids: {unknown}; choose from {FIGURES}")
    failures = run(wanted)
    if failures:
        sys.exit(f"failed: {failures}")
    print("all figures reproduced")
