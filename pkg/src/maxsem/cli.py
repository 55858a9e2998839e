"""Command-line interface: ``maxsem <subcommand> [options]``.

Subcommands
-----------
simulate      draw a dataset and write ``data.csv`` + ``data.json``
fit           fit SEM (and optionally comparators) to a dataset CSV
run-scenario  run a simulation scenario, write raw.csv / summary.json
timing        wall time of SEM versus dimension (CSV: dim,mean_seconds)
gibbs-trace   block-count traces from several initial partitions
em-trace      centred parameter traces over EM iterations

A JSON config file (``--config``) provides defaults; explicit flags win.
Scenario files are a JSON object with a ``scenarios`` list (or a single
scenario object) whose keys mirror :class:`maxsem.experiments.Scenario`.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .experiments import (Scenario, em_trace_study, gibbs_diagnostics, resolve_workers,
                          run_scenario, settle_iteration, timing_curve, write_centred_traces)
from .likelihood import mle_fit
from .models import make_model
from .sem import SemConfig, sem_fit
from .simulate import Dataset, random_sites, sample_model


def _params(args) -> tuple:
    if args.family == "logistic":
        return (args.theta if args.theta is not None else 0.6,)
    return (args.range if args.range is not None else 1.5,
            args.smooth if args.smooth is not None else 1.5)


def _sem_config(args) -> SemConfig:
    cfg = SemConfig()
    kw = {}
    if args.em_iters is not None:
        kw["n_iter"] = args.em_iters
        kw["avg_window"] = min(cfg.avg_window, args.em_iters)
    if args.gibbs_keep is not None:
        kw["n_keep"] = args.gibbs_keep
    return replace(cfg, **kw)


def _config_defaults(argv) -> dict:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return {}
    conf = json.loads(Path(known.config).read_text())
    return {k.replace("-", "_"): v for k, v in conf.items()}


def _seed(args) -> int:
    return 0 if args.seed is None else int(args.seed)


def cmd_simulate(args) -> int:
    rng = np.random.default_rng(_seed(args))
    sites = None
    if args.family == "brown_resnick":
        sites = random_sites(args.dim, rng).coords
    model = make_model(args.family, _params(args), dim=args.dim, sites=sites)
    ds = sample_model(model, args.replicates, rng, with_partition=args.family != "logistic")
    ds.seed = _seed(args)
    ds.truth = {"family": args.family, "params": list(_params(args))}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds.to_csv(out / "data.csv")
    print(out / "data.csv")
    return 0


def cmd_fit(args) -> int:
    ds = Dataset.from_csv(args.data)
    start = _params(args)
    model = make_model(args.family, start, dim=ds.dim, sites=ds.sites)
    cfg = replace(_sem_config(args), theta0=start)
    trace = sem_fit(model, ds, cfg, master_seed=_seed(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = ["theta"] if args.family == "logistic" else ["range", "smoothness"]
    trace.to_csv(out / "trace.csv", names)
    summary = trace.summary(cfg)
    summary["parameters"] = names
    for obj in args.compare:
        res = mle_fit(obj, model, ds, start)
        summary[obj] = {"estimate": res.params.tolist(), "loglik": res.loglik,
                        "converged": res.converged}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps({"estimate": summary["estimate"]}))
    return 0


def _load_scenarios(args) -> list[Scenario]:
    if args.scenario_file:
        conf = json.loads(Path(args.scenario_file).read_text())
        items = conf.get("scenarios", [conf]) if isinstance(conf, dict) else conf
        out = [Scenario.from_dict(d) for d in items]
    else:
        est = ("sem", "mle_full") if args.family == "logistic" else ("sem", "pairwise")
        out = [Scenario(args.name or f"{args.family}_D{args.dim}", args.family, _params(args),
                        args.dim, n_replicates=args.replicates, repetitions=args.repetitions,
                        estimators=tuple(args.estimators or est), sem=_sem_config(args))]
    return [replace(s, seed=args.seed) if args.seed is not None else s for s in out]


def cmd_run_scenario(args) -> int:
    workers = resolve_workers(args.workers)
    for sc in _load_scenarios(args):
        res = run_scenario(sc, workers=workers, out_dir=args.out)
        print(json.dumps({"scenario": sc.name,
                          **{e: m.to_dict() for e, m in res.metrics.items()}}))
    return 0


def cmd_timing(args) -> int:
    dims = [int(d) for d in args.dims.split(",")]
    rows = timing_curve(args.family, _params(args), dims, _sem_config(args),
                        n_replicates=args.replicates, runs=args.runs, seed=_seed(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dim", "mean_seconds"])
        w.writerows(rows)
    print(out / "timing.csv")
    return 0


def cmd_gibbs_trace(args) -> int:
    rng = np.random.default_rng(_seed(args))
    sites = random_sites(args.dim, rng).coords if args.family == "brown_resnick" else None
    model = make_model(args.family, _params(args), dim=args.dim, sites=sites)
    n_iter = args.iterations or 110 * args.dim
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traces = gibbs_diagnostics(model, n_iter, inits=tuple(args.inits), seed=_seed(args))
    with open(out / "gibbs_trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "init", "block_count"])
        for init, tr in traces.items():
            for t, k in enumerate(tr):
                w.writerow([t + 1, init, int(k)])
    print(out / "gibbs_trace.csv")
    return 0


def cmd_em_trace(args) -> int:
    sc = _load_scenarios(args)[0]
    n_iter = args.em_iters or 50
    centred = em_trace_study(sc, args.runs, n_iter=n_iter, window=(min(30, n_iter), n_iter),
                             workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_centred_traces(centred, out / "em_trace.csv", sc.param_names)
    s = settle_iteration(centred)
    print(json.dumps({"median_settle_iteration": float(np.median(s))}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with option defaults")
    common.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    common.add_argument("--workers", type=int, default=None,
                        help="worker processes (default: $MAXSEM_WORKERS or 1)")
    common.add_argument("--out", default="out")
    common.add_argument("--family", choices=["logistic", "brown_resnick"], default="logistic")
    common.add_argument("--theta", type=float)
    common.add_argument("--range", type=float)
    common.add_argument("--smooth", type=float)
    common.add_argument("--dim", type=int, default=10)
    common.add_argument("--replicates", type=int, default=20)
    common.add_argument("--repetitions", type=int, default=128)
    common.add_argument("--gibbs-keep", type=int)
    common.add_argument("--em-iters", type=int)

    p = argparse.ArgumentParser(prog="maxsem", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    p.subcommands = sub.choices
    sub.add_parser("simulate", parents=[common]).set_defaults(func=cmd_simulate)
    f = sub.add_parser("fit", parents=[common])
    f.add_argument("data", help="dataset CSV written by 'simulate'")
    f.add_argument("--compare", nargs="*", default=[], choices=["full", "full_recursive", "pairwise"])
    f.set_defaults(func=cmd_fit)
    for name, func in (("run-scenario", cmd_run_scenario), ("em-trace", cmd_em_trace)):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--scenario-file")
        s.add_argument("--name")
        s.add_argument("--estimators", nargs="*", choices=["sem", "mle_full", "pairwise"])
        s.add_argument("--runs", type=int, default=100)
        s.set_defaults(func=func)
    t = sub.add_parser("timing", parents=[common])
    t.add_argument("--dims", default="10,25,50")
    t.add_argument("--runs", type=int, default=5)
    t.set_defaults(func=cmd_timing)
    g = sub.add_parser("gibbs-trace", parents=[common])
    g.add_argument("--iterations", type=int)
    g.add_argument("--inits", nargs="*", default=["singletons", "one_block"])
    g.set_defaults(func=cmd_gibbs_trace)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    defaults = _config_defaults(argv if argv is not None else sys.argv[1:])
    if defaults:
        for sp in parser.subcommands.values():
            sp.set_defaults(**defaults)
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
