#!/usr/bin/env python3
"""Run the verification suites (finite-difference gradient checks, analytic
invariants, block-matching oracle, training-schedule audit) and print one
PASS/FAIL line per check.

Example:
    python3 scripts/run_verification.py grad
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from xstereo.cli import main

if __name__ == "__main__":
    sys.exit(main(["check"] + sys.argv[1:]))
