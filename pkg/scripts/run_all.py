#!/usr/bin/env python3
"""Run every builtin scenario and print the sweep assertion flags.

Writes the usual result bundles under --out and exits nonzero if any run
failed numerically or any flag came out false.
"""

import argparse
import sys

from fbmm.harness import run_scenario
from fbmm.scenarios import builtin_scenarios


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--jobs", type=int, default=2, help="concurrent runs per scenario")
    args = ap.parse_args()

    bad = 0
    for name, cfg in sorted(builtin_scenarios().items()):
        result = run_scenario(cfg, args.out, jobs=args.jobs)
        failed_runs = sum(not r.ok for r in result.runs)
        print(f"{name}: {len(result.runs)} runs ({failed_runs} failed), summary -> {result.summary_path}")
        for flag, ok in sorted(result.flags.items()):
            print(f"  {flag}: {'pass' if ok else 'FAIL'}")
            bad += 0 if ok else 1
        bad += failed_runs
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
