"""Command-line front end.

Subcommands:
  run             execute an experiment config, writing traces and summaries
  summarize       recompute the summary table from a results directory
  bench-figure    extract progressive-mean learning-curve data to one CSV
  serve-objective launch a reference external-objective child process

MPD_LOG controls log verbosity (debug | info | warning).  Exit codes:
0 success, 1 one or more runs failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError


def _setup_logging():
    level = {"debug": logging.DEBUG, "info": logging.INFO, "warning": logging.WARNING}.get(
        os.environ.get("MPD_LOG", "warning").lower(), logging.WARNING
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _cmd_run(args) -> int:
    from .harness import load_config, run_experiment

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, start_seed=args.seed)
    if args.parallel is not None:
        cfg = replace(cfg, parallel=args.parallel)
    out_dir = Path(args.out) if args.out else Path(f"results-{cfg.hash()}")
    run_experiment(cfg, out_dir)
    manifest = json.loads((out_dir / "manifest.json").read_text())
    failures = manifest.get("failures", [])
    print(f"results written to {out_dir}")
    if failures:
        for item in failures:
            print(f"run failed: {item['policy']} run {item['run']}: {item['error']}", file=sys.stderr)
        return 1
    return 0


def _cmd_summarize(args) -> int:
    from .harness import corrupt_traces, summarize, summary_text

    rows = summarize(args.indir)
    bad = corrupt_traces(args.indir)
    if args.format == "csv":
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(["policy", "objective", "mean_terminal", "stderr", "terminals_json"])
        for row in rows:
            writer.writerow([row.policy, row.objective, repr(row.mean_terminal), repr(row.stderr),
                             json.dumps(list(row.terminals))])
        for name in bad:
            print(f"warning: excluded corrupt trace {name}", file=sys.stderr)
    else:
        sys.stdout.write(summary_text(rows, bad))
    return 0


def _cmd_bench_figure(args) -> int:
    from .harness import progressive_table

    rows = progressive_table(args.indir)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["policy", "eval_index", "mean_best", "stderr"])
        for policy, idx, mean, err in rows:
            writer.writerow([policy, idx, repr(mean), repr(err)])
    print(f"wrote {args.out}")
    return 0


def _cmd_serve_objective(args) -> int:
    from .external import serve_demo

    return serve_demo(args.demo)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpdopt", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="output directory (default results-<hash>)")
    p_run.add_argument("--seed", type=int, default=None, help="override start_seed")
    p_run.add_argument("--parallel", type=int, default=None, help="worker count (0 = all cores)")
    p_run.set_defaults(func=_cmd_run)

    p_sum = sub.add_parser("summarize", help="summarize a results directory")
    p_sum.add_argument("--in", dest="indir", required=True)
    p_sum.add_argument("--format", choices=["csv", "text"], default="text")
    p_sum.set_defaults(func=_cmd_summarize)

    p_fig = sub.add_parser("bench-figure", help="extract progressive-mean curves to CSV")
    p_fig.add_argument("--in", dest="indir", required=True)
    p_fig.add_argument("--out", required=True)
    p_fig.set_defaults(func=_cmd_bench_figure)

    p_srv = sub.add_parser("serve-objective", help="run a demo external-objective server")
    p_srv.add_argument("--demo", required=True)
    p_srv.set_defaults(func=_cmd_serve_objective)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
