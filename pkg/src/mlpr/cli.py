"""Command-line entry point: ``mlpr <subcommand> [options]``.

Exit status is 0 on success, 1 on a contract or numeric failure and 2 on an
I/O failure. ``MLPR_THREADS`` caps BLAS and data-generation workers.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

from . import harness
from .config import SWEEPS, load_config, sweep_configs
from .errors import MLPRError

log = logging.getLogger("mlpr")


def _checkpoint_arg(value):
    name, sep, path = value.partition("=")
    if not sep:
        return Path(value).stem, value
    return name, path


def build_parser():
    p = argparse.ArgumentParser(prog="mlpr", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", help="named preset (default, desk, small, tiny, overfit, bench)")
    p.add_argument("--seed", type=int, help="overrides every seed in the config")
    p.add_argument("--out", default="runs", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", help="generate, filter and split a synthetic funnel dataset")

    t = sub.add_parser("train", help="train the configured variant")
    t.add_argument("--data", required=True, help="directory with train/val/test TSVs")
    t.add_argument("--name", default="model")
    t.add_argument("--sweep", choices=sorted(SWEEPS),
                   help="train one model per sweep value, named <name>.<value>")

    e = sub.add_parser("eval", help="per-task AUC and NDCG@1/5 on the test split")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", action="append", default=[], type=_checkpoint_arg,
                   help="[NAME=]PATH; repeat to compare runs")
    e.add_argument("--baseline", action="append", default=[], choices=["oracle", "random"])
    e.add_argument("--by-impression-percentile", action="store_true")

    a = sub.add_parser("ablate", help="six-variant incremental component ablation")
    a.add_argument("--data", required=True)

    b = sub.add_parser("bench-latency", help="P99 per-query ranking time")
    b.add_argument("--data", required=True)
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--mode", choices=["precompute", "recompute", "both"], default="both")
    b.add_argument("--queries", type=int, default=200)
    b.add_argument("--candidates", type=int, default=100)
    b.add_argument("--repeats", type=int, default=3)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    gc.add_argument("--points", type=int, default=10)
    return p


def _thread_limit():
    n = os.environ.get("MLPR_THREADS")
    if not n:
        return nullcontext(), None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(int(n)), int(n)


def run(args):
    if args.command in ("eval", "bench-latency"):
        cfg = None
    else:
        cfg = load_config(args.config, args.preset or ("tiny" if args.command == "gradcheck" else None))
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    limit, n_threads = _thread_limit()
    if cfg is not None and n_threads:
        cfg.data.funnel.workers = n_threads
    out = Path(args.out)
    with limit:
        if args.command == "gen-data":
            harness.cmd_gen_data(cfg, out)
        elif args.command == "train":
            runs = [(args.name, cfg)]
            if args.sweep:
                runs = [(f"{args.name}.{label}", c) for label, c in sweep_configs(cfg, args.sweep)]
            for name, c in runs:
                res = harness.cmd_train(c, args.data, out, name)
                print(f"{name}: trained {res.steps} steps over {res.epochs} epochs; "
                      f"best validation loss {res.best_val:.5f}; checkpoint {out / (name + '.ckpt')}")
        elif args.command == "eval":
            if not args.checkpoint and not args.baseline:
                raise SystemExit("eval: give at least one --checkpoint or --baseline")
            rows = harness.cmd_eval(dict(args.checkpoint), args.data, out,
                                    args.by_impression_percentile, args.baseline,
                                    seed=args.seed or 0)
            for r in rows:
                label = r["metric"] + (f"@{r['k']}" if r["k"] != "" else "")
                print(f"{r['model_variant']:<16}{r['task']:<10}{label:<8}{r['value']:.4f}")
        elif args.command == "ablate":
            rows = harness.cmd_ablate(cfg, args.data, out)
            print(f"ablation report: {len(rows)} rows -> {out / 'ablation.csv'}")
        elif args.command == "bench-latency":
            modes = ("precompute", "recompute") if args.mode == "both" else (args.mode,)
            rows = harness.cmd_bench_latency(args.checkpoint, args.data, out, modes,
                                             args.queries, args.candidates, args.repeats)
            for r in rows:
                print(f"{r['mode']:<11} P99 {r['p99_ms']:.3f} ms  (median {r['p50_ms']:.3f} ms)")
        elif args.command == "gradcheck":
            _, ok, _ = harness.cmd_gradcheck(out, args.points, cfg=cfg)
            return 0 if ok else 1
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return run(args)
    except MLPRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
