"""Command line entry point.

Subcommands::

    dynlgp plan      --scenario F --mode single|dynamic --seed N --out DIR
    dynlgp batch     --suite DIR --repeats K --seeds FILE --out DIR [--workers W]
    dynlgp irl-train --mdp F --demos F --out MODEL
    dynlgp predict   --model F --scenario F --seed N --out CSV

Log verbosity comes from the ``DYNLGP_LOG_LEVEL`` environment variable
(default ``WARNING``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

LOG_ENV = "DYNLGP_LOG_LEVEL"

log = logging.getLogger("dynlgp")


def _cmd_plan(args) -> int:
    from .harness.batch import MetricsTable, run_scenario
    from .harness.report import emit_report
    from .harness.scenario import load_scenario

    sc = load_scenario(args.scenario)
    modes = ("single",) if args.mode == "single" else ("dynamic",)
    recs = run_scenario(sc, args.seed, modes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for r in recs:
        if r.report is not None:
            r.report.write(out, f"{sc.name}_{r.mode}_{args.seed}")
    emit_report(MetricsTable(recs), out)
    rec = recs[0]
    print(f"{sc.name} {rec.mode} seed={args.seed} success={rec.success} steps={rec.steps} "
          f"path={rec.path_length:.3f} replans={rec.replan_count}")
    return 0 if rec.success else 1


def _cmd_batch(args) -> int:
    from .harness.batch import read_seeds, run_batch, suite_paths
    from .harness.report import emit_report

    seeds = read_seeds(args.seeds) if args.seeds else None
    table = run_batch(suite_paths(args.suite), args.repeats, seeds, workers=args.workers)
    paths = emit_report(table, args.out)
    summary = json.loads(paths["summary"].read_text())
    for mode, m in summary["modes"].items():
        ratio = m["path_ratio"]["mean"]
        print(f"{mode}: success {m['success_rate']:.3f} path ratio "
              f"{'n/a' if ratio is None else f'{ratio:.3f}'} runs {m['runs']}")
    return 0


def _cmd_irl_train(args) -> int:
    from .prediction.irl import irl_fit
    from .prediction.mdp import load_demonstrations, load_mdp

    mdp = load_mdp(args.mdp)
    model = irl_fit(load_demonstrations(args.demos), mdp, method=args.method)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    model.save(args.out)
    print(f"gap {model.gap:.3e} after {model.iterations} iterations, converged={model.converged}")
    return 0 if model.converged else 1


def _cmd_predict(args) -> int:
    from .harness.scenario import load_scenario
    from .prediction.irl import IrlModel
    from .prediction.sources import compose_prediction

    sc = load_scenario(args.scenario)
    comp = compose_prediction(IrlModel.load(args.model), sc.snapshot(), args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    comp.source.predicted.to_csv(args.out)
    print(" ".join(":".join(a) for a in comp.actions))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynlgp", description="Dynamic task and motion planning with human prediction")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("plan", help="run one scenario in one mode")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--mode", choices=("single", "dynamic"), default="dynamic")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_plan)

    sp = sub.add_parser("batch", help="run a scenario suite in both modes")
    sp.add_argument("--suite", required=True, help="directory of scenario JSON files")
    sp.add_argument("--repeats", type=int, default=5)
    sp.add_argument("--seeds", help="text file of integer seeds (whitespace or comma separated)")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_batch)

    sp = sub.add_parser("irl-train", help="fit a maximum entropy IRL model")
    sp.add_argument("--mdp", required=True)
    sp.add_argument("--demos", required=True)
    sp.add_argument("--method", choices=("lbfgs", "gradient"), default="lbfgs")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_irl_train)

    sp = sub.add_parser("predict", help="write a hierarchical human motion prediction as CSV")
    sp.add_argument("--model", required=True)
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_predict)
    return p


def configure_logging() -> int:
    name = os.environ.get(LOG_ENV, "WARNING").upper()
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        raise ValueError(f"{LOG_ENV}={name!r} is not a logging level")
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(level)
    return level


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        configure_logging()
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
