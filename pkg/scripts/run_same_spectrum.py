#!/usr/bin/env python3
"""Desk-scale same-spectrum benchmark: train the matcher alone on planar
constant-disparity scenes and compare it against the block-matching oracle.

Example:
    python3 scripts/run_same_spectrum.py --pairs 64 --epochs 200
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from xstereo.benchmarks import run_same_spectrum_benchmark


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=64)
    ap.add_argument("--size", type=int, default=64, help="square image size")
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="checkpoint/log directory")
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args()

    result = run_same_spectrum_benchmark(
        num_pairs=args.pairs, size=(args.size, args.size), epochs=args.epochs,
        seed=args.seed, out_dir=args.out, quiet=not args.verbose)
    for line in result.lines():
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
