#!/usr/bin/env python3
"""Run the ten acceptance checks outside pytest; exit status 0 iff all pass."""

import sys

from nfww.acceptance import run_all

if __name__ == "__main__":
    results = run_all()
    for res in results:
        print(res.line())
    sys.exit(0 if all(r.passed for r in results) else 1)
