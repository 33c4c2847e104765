"""Refinement study for the binned trajectorial displacement identity.

Runs the forward ledger at several (paths, dt) levels, each level having four
times the paths and half the step of the previous one, and reports the
per-bin discrepancy.  Memory use is bounded by the shard size.

    python3 scripts/displacement_refinement.py --levels 3 --base-paths 15625
"""
import argparse

from langevin_entropy.checks import Run
from langevin_entropy.config import CheckConfig, load_config
from langevin_entropy.reversal import trajectorial_displacement_check


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--scenario", default="ou_trajectorial")
    ap.add_argument("--levels", type=int, default=3)
    ap.add_argument("--base-paths", type=int, default=15625)
    ap.add_argument("--base-dt", type=float, default=0.004)
    ap.add_argument("--t", type=float, default=0.5)
    ap.add_argument("--bins", type=int, default=32)
    args = ap.parse_args(argv)

    base = load_config(args.scenario)
    check = CheckConfig("trajectorial_displacement", params={"t": args.t})
    prev = None
    print(f"{'paths':>9} {'dt':>8} {'bins':>5} {'max':>8} {'rms':>8} {'ratio':>6}")
    for k in range(args.levels):
        cfg = base.with_overrides(ensemble_size=args.base_paths * 4 ** k,
                                  dt=args.base_dt / 2 ** k)
        _, _, S = Run(cfg, [check]).trajectorial()
        rep = trajectorial_displacement_check(S, args.t, bins=args.bins)
        rms = rep.details["rms_discrepancy"]
        ratio = "" if prev is None else f"{prev / rms:6.2f}"
        print(f"{cfg.ensemble_size:9d} {cfg.dt:8.4g} {rep.details['bins_used']:5d} "
              f"{rep.gap:8.4f} {rms:8.4f} {ratio:>6}")
        prev = rms


if __name__ == "__main__":
    main()
