"""Run bundled scenarios and print one line per check.

    python3 scripts/run_scenarios.py                 # everything but the 1e6-path run
    python3 scripts/run_scenarios.py --all           # include ou_trajectorial
    python3 scripts/run_scenarios.py ou_debruijn hwi
"""
import argparse
import sys
import time
import warnings

from langevin_entropy.cli import run_scenario
from langevin_entropy.config import bundled_scenarios, load_config

SLOW = {"ou_trajectorial"}


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("names", nargs="*")
    ap.add_argument("--all", action="store_true")
    ap.add_argument("--out", default="runs")
    args = ap.parse_args(argv)
    names = args.names or [n for n in bundled_scenarios() if args.all or n not in SLOW]
    failed = 0
    for name in names:
        t = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            code, rep = run_scenario(load_config(name), out_dir=f"{args.out}/{name}",
                                     log=lambda s: None)
        print(f"{name}  ({time.perf_counter() - t:.0f}s, exit {code})")
        for c in rep["checks"]:
            mark = "PASS" if c["pass"] else "FAIL"
            print(f"  [{mark}] {c['name']:28s} gap={c['gap']:.3g} tol={c['tolerance']:.3g}")
        failed += code != 0
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
