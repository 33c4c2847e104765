"""Command line entry point.

Exit codes: 0 all selected checks pass, 1 some check failed, 2 invalid
configuration, 3 numerical or precondition failure inside a module.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
import time
import traceback
from pathlib import Path

from .checks import CHECKS, Run, list_checks, run_check
from .config import CheckConfig, bundled_scenarios, load_config, output_dir
from .errors import ConfigError, LabError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
_PKG_DIR = os.path.dirname(os.path.abspath(__file__))


def _select(cfg, only):
    if not only:
        return list(cfg.checks)
    configured = {c.name: c for c in cfg.checks}
    out = []
    for name in only:
        if name not in CHECKS:
            raise ConfigError(f"--only: unknown check {name!r}")
        c = configured.get(name, CheckConfig(name))
        problem = CHECKS[name].validate(cfg, c)
        if problem:
            raise ConfigError(f"--only: {problem}")
        out.append(c)
    return out


def run_scenario(cfg, only=None, dump=False, out_dir=None, log=print):
    """Run the selected checks; returns ``(exit_code, report_dict)``.

    Writes ``report.json`` and ``entropy.csv`` (plus ``density.bin`` with
    ``dump``) into the output directory.  Library errors propagate.
    """
    selected = sorted(_select(cfg, only), key=lambda c: c.name)
    run = Run(cfg, selected)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    wall = {}
    reports = []
    for c in selected:
        t = time.perf_counter()
        rep = run_check(run, c)
        wall[c.name] = round(time.perf_counter() - t, 3)
        reports.append(rep)
        log(rep.summary_line())

    out = Path(out_dir) if out_dir else output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    sol = run.solution()
    run.entropy(sol).to_csv(out / "entropy.csv")
    if dump:
        from .container import save_grid
        save_grid(sol, out / "density.bin", cfg.digest())

    report = {
        "scenario": cfg.scenario,
        "seed": cfg.seed,
        "checks": [r.to_dict() for r in reports],
        "timings": dict(run.counters),
        "timestamp": {"started": started, "wall_seconds": wall},
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    code = EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL
    return code, report


def _origin(exc) -> str:
    tb = exc.__traceback__
    mod = None
    while tb is not None:
        fname = tb.tb_frame.f_code.co_filename
        if os.path.dirname(os.path.abspath(fname)) == _PKG_DIR:
            mod = os.path.splitext(os.path.basename(fname))[0]
        tb = tb.tb_next
    return mod or "?"


def _cmd_run(args):
    cfg = load_config(args.config)
    only = [s for part in (args.only or []) for s in part.split(",") if s]
    code, report = run_scenario(cfg, only or None, args.dump)
    passed = sum(c["pass"] for c in report["checks"])
    print(f"{cfg.scenario}: {passed}/{len(report['checks'])} checks passed")
    return code


def _cmd_list(args):
    for name, op, desc, anchor in list_checks():
        print(f"{name:30s} {op:45s} {desc} [{anchor}]")
    return EXIT_OK


def _cmd_export(args):
    cfg = load_config(args.config)
    run = Run(cfg)
    rep = run.entropy(run.solution())
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    if args.format == "csv":
        path = out / "entropy.csv"
        rep.to_csv(path)
    else:
        path = out / "entropy.json"
        path.write_text(rep.to_json() + "\n")
    print(path)
    return EXIT_OK


def _cmd_scenarios(args):
    for name in bundled_scenarios():
        print(name)
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="langevin-entropy",
                                 description="Entropy identities for Langevin diffusions.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run every check of a scenario")
    r.add_argument("config", help="YAML file or bundled scenario name")
    r.add_argument("--dump", action="store_true", help="also write density.bin")
    r.set_defaults(fn=_cmd_run, only=None)
    c = sub.add_parser("check", help="run selected checks of a scenario")
    c.add_argument("config")
    c.add_argument("--only", action="append", required=True,
                   help="comma separated check names (repeatable)")
    c.add_argument("--dump", action="store_true")
    c.set_defaults(fn=_cmd_run)
    lc = sub.add_parser("list-checks", help="list registered checks")
    lc.set_defaults(fn=_cmd_list)
    e = sub.add_parser("export", help="write the entropy series of a scenario")
    e.add_argument("config")
    e.add_argument("--format", choices=("csv", "json"), default="csv")
    e.set_defaults(fn=_cmd_export)
    s = sub.add_parser("scenarios", help="list bundled scenarios")
    s.set_defaults(fn=_cmd_scenarios)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LabError as exc:
        print(f"numerical error in {_origin(exc)}: {exc}", file=sys.stderr)
        if os.environ.get("LANGEVIN_ENTROPY_DEBUG"):
            traceback.print_exc()
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
