"""Simulation-study harness: scenarios, repetitions, metrics and diagnostics.

Seeds are split as master seed -> scenario hash -> repetition index, so any
repetition can be recomputed in isolation and results do not depend on the
number of workers.  The hash covers only the data-generating fields, which
pairs datasets across scenarios that differ in estimator settings.  Raw estimate files never contain wall times (those go to
a separate timings file), which keeps them byte-identical across runs.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .gibbs import GibbsConfig, gibbs_run
from .likelihood import mle_fit
from .models import BrownResnickModel, LogisticModel, MaxStableModel
from .mvn import QmcRule
from .sem import SemConfig, sem_fit
from .simulate import random_sites, sample_brown_resnick, sample_logistic

ESTIMATORS = ("sem", "mle_full", "pairwise")
WORKERS_ENV = "MAXSEM_WORKERS"


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    return max(1, int(workers))


@dataclass(frozen=True)
class Scenario:
    """One cell of a simulation study."""

    name: str
    family: str
    params: tuple
    dim: int
    n_replicates: int = 20
    repetitions: int = 128
    estimators: tuple = ("sem",)
    sem: SemConfig = field(default_factory=SemConfig)
    theta0: tuple | None = None
    seed: int = 0
    # Gaussian CDF rule for Brown-Resnick fits: points per randomization on the first pass and target SE
    qmc_start: int = 128
    cdf_accuracy: float = 1e-3

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        for e in self.estimators:
            if e not in ESTIMATORS:
                raise ValueError(f"unknown estimator {e!r}")
        if "mle_full" in self.estimators and self.family != "logistic":
            raise ValueError("mle_full is only implemented for the logistic family")
        if self.family not in ("logistic", "brown_resnick"):
            raise ValueError(f"unknown family {self.family!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in np.atleast_1d(self.params)))
        if self.theta0 is not None:
            object.__setattr__(self, "theta0", tuple(float(p) for p in np.atleast_1d(self.theta0)))

    @property
    def start(self) -> tuple:
        if self.theta0 is not None:
            return self.theta0
        return (0.6,) if self.family == "logistic" else (1.0, 1.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["estimators"] = list(self.estimators)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        sem = d.pop("sem", None) or {}
        if isinstance(sem, dict):
            sem = dict(sem)
            g = sem.pop("gibbs", None) or {}
            if "theta0" in sem and sem["theta0"] is not None:
                sem["theta0"] = tuple(sem["theta0"])
            sem = SemConfig(gibbs=GibbsConfig(**g), **sem)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        d["estimators"] = tuple(d.get("estimators", ("sem",)))
        return cls(sem=sem, **d)

    def hash(self) -> int:
        """Stable 32-bit hash of the data-generating fields.

        Estimator settings are excluded on purpose: scenarios that differ only
        in how they fit (e.g. Gibbs sample size) see identical datasets.
        """
        d = {"family": self.family, "params": list(self.params), "dim": self.dim,
             "n_replicates": self.n_replicates}
        return zlib.crc32(json.dumps(d, sort_keys=True).encode())

    def true_model(self, sites=None) -> MaxStableModel:
        if self.family == "logistic":
            return LogisticModel(self.dim, self.params[0])
        return BrownResnickModel(sites, self.params[0], self.params[1])

    def report_truth(self) -> np.ndarray:
        if self.family == "logistic":
            return np.array(self.params)
        return np.array([math.log(self.params[0]), self.params[1]])

    @property
    def param_names(self) -> list[str]:
        return ["theta"] if self.family == "logistic" else ["log_range", "smoothness"]


def repetition_seed(master_seed: int, scenario: Scenario, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), scenario.hash(), int(rep)])


def simulate_repetition(scenario: Scenario, rng: np.random.Generator):
    """Dataset and model template (sites included) for one repetition."""
    if scenario.family == "logistic":
        ds = sample_logistic(scenario.dim, scenario.params[0], scenario.n_replicates, rng)
        template = LogisticModel(scenario.dim, scenario.start[0])
    else:
        sites = random_sites(scenario.dim, rng)
        ds = sample_brown_resnick(sites, scenario.params[0], scenario.params[1],
                                  scenario.n_replicates, rng)
        template = BrownResnickModel(sites.coords, *scenario.start,
                                     qmc=QmcRule(n_start=scenario.qmc_start),
                                     accuracy=scenario.cdf_accuracy)
    return ds, template


def run_repetition(scenario: Scenario, rep: int) -> dict:
    """Estimates (report scale) and wall times of every estimator for one repetition."""
    ss = repetition_seed(scenario.seed, scenario, rep)
    data_ss, sem_ss = ss.spawn(2)
    out = {"rep": rep, "estimates": {}, "seconds": {}, "errors": {}}
    ds, template = simulate_repetition(scenario, np.random.default_rng(data_ss))
    for est in scenario.estimators:
        t0 = time.perf_counter()
        try:
            if est == "sem":
                cfg = replace(scenario.sem, theta0=scenario.start)
                tr = sem_fit(template, ds, cfg, master_seed=int(sem_ss.generate_state(1)[0]))
                theta = tr.estimate
                out["first_iteration_seconds"] = float(tr.wall_times[0])
            elif est == "mle_full":
                theta = mle_fit("full_recursive", template, ds, scenario.start).params
            else:
                theta = mle_fit("pairwise", template, ds, scenario.start).params
            rep_theta = template.report_params(theta)
            if not np.all(np.isfinite(rep_theta)):
                raise FloatingPointError("non-finite estimate")
            out["estimates"][est] = rep_theta.tolist()
        except Exception as err:  # recorded and counted, never silently dropped
            out["errors"][est] = f"{type(err).__name__}: {err}"
        out["seconds"][est] = time.perf_counter() - t0
    return out


def _run_rep_args(args):
    return run_repetition(*args)


@dataclass
class MetricsRecord:
    """Bias, SD (ddof=1), RMSE and relative error of one estimator."""

    bias: np.ndarray
    sd: np.ndarray
    rmse: np.ndarray
    re: np.ndarray | None
    estimates: np.ndarray
    wall_times: np.ndarray
    n_failed: int = 0
    sd_defined: bool = True

    @classmethod
    def from_estimates(cls, estimates, truth, reference=None, wall_times=None, n_failed=0):
        est = np.atleast_2d(np.asarray(estimates, float))
        if est.shape[0] == 1 and np.ndim(estimates) == 1 and np.size(truth) == 1:
            est = est.T
        err = est - np.asarray(truth, float)
        bias = err.mean(axis=0)
        n = est.shape[0]
        sd_defined = n >= 2
        sd = err.std(axis=0, ddof=1) if sd_defined else np.full(bias.shape, np.nan)
        rmse = np.sqrt(bias**2 + sd**2)
        re = None
        if reference is not None:
            ref = np.atleast_2d(np.asarray(reference, float)).reshape(est.shape)
            re = np.mean(np.abs((est - ref) / ref), axis=0)
        wt = np.asarray(wall_times if wall_times is not None else [], float)
        return cls(bias, sd, rmse, re, est, wt, n_failed, sd_defined)

    def to_dict(self) -> dict:
        def conv(a):
            return None if a is None else [None if not np.isfinite(v) else float(v) for v in np.ravel(a)]
        return {"bias": conv(self.bias), "sd": conv(self.sd), "rmse": conv(self.rmse),
                "re": conv(self.re), "n": int(self.estimates.shape[0]),
                "n_failed": self.n_failed, "sd_defined": self.sd_defined,
                "mean_seconds": float(self.wall_times.mean()) if self.wall_times.size else None}


@dataclass
class EfficiencyRecord:
    """``RMSE(sem) / RMSE(pairwise)`` in percent, per reported parameter."""

    percent: np.ndarray

    @classmethod
    def from_metrics(cls, sem: MetricsRecord, pair: MetricsRecord) -> "EfficiencyRecord":
        return cls(100.0 * sem.rmse / pair.rmse)


@dataclass
class ScenarioResult:
    scenario: Scenario
    rows: list
    metrics: dict
    efficiency: EfficiencyRecord | None
    n_failed: dict


def run_scenario(scenario: Scenario, workers: int | None = None, out_dir=None) -> ScenarioResult:
    """Run all repetitions, aggregate metrics, optionally persist outputs.

    Output directory layout: ``raw.csv`` (per-repetition estimates),
    ``timings.csv``, ``summary.json`` and ``config.json``.
    """
    workers = resolve_workers(workers)
    jobs = [(scenario, r) for r in range(scenario.repetitions)]
    if workers == 1:
        rows = [run_repetition(*j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_rep_args, jobs))
    truth = scenario.report_truth()
    metrics, failed = {}, {}
    ok_reps = {e: [r for r in rows if e in r["estimates"]] for e in scenario.estimators}
    for e in scenario.estimators:
        good = ok_reps[e]
        failed[e] = len(rows) - len(good)
        if not good:
            continue
        est = np.array([r["estimates"][e] for r in good])
        ref = None
        if e == "sem" and "mle_full" in scenario.estimators:
            both = [r for r in good if "mle_full" in r["estimates"]]
            if both:
                est_b = np.array([r["estimates"]["sem"] for r in both])
                ref_b = np.array([r["estimates"]["mle_full"] for r in both])
                ref = np.mean(np.abs((est_b - ref_b) / ref_b), axis=0)
        m = MetricsRecord.from_estimates(est, truth, wall_times=[r["seconds"][e] for r in good],
                                         n_failed=failed[e])
        m.re = ref
        metrics[e] = m
    eff = None
    if "sem" in metrics and "pairwise" in metrics:
        eff = EfficiencyRecord.from_metrics(metrics["sem"], metrics["pairwise"])
    result = ScenarioResult(scenario, rows, metrics, eff, failed)
    if out_dir is not None:
        write_scenario_outputs(result, out_dir)
    return result


def write_scenario_outputs(result: ScenarioResult, out_dir) -> Path:
    sc = result.scenario
    d = Path(out_dir) / sc.name
    d.mkdir(parents=True, exist_ok=True)
    names = sc.param_names
    with open(d / "raw.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rep", "estimator", *names, "status"])
        for r in result.rows:
            for e in sc.estimators:
                if e in r["estimates"]:
                    w.writerow([r["rep"], e, *[repr(v) for v in r["estimates"][e]], "ok"])
                else:
                    w.writerow([r["rep"], e, *([""] * len(names)), "failed"])
    with open(d / "timings.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rep", "estimator", "seconds"])
        for r in result.rows:
            for e in sc.estimators:
                w.writerow([r["rep"], e, repr(r["seconds"][e])])
    summary = {
        "scenario": sc.name,
        "parameters": names,
        "truth": sc.report_truth().tolist(),
        "metrics": {e: m.to_dict() for e, m in result.metrics.items()},
        "relative_efficiency_percent": None if result.efficiency is None
        else result.efficiency.percent.tolist(),
        "excluded_repetitions": result.n_failed,
    }
    (d / "summary.json").write_text(json.dumps(summary, indent=2))
    (d / "config.json").write_text(json.dumps(sc.to_dict(), indent=2, default=str))
    return d


def timing_curve(family: str, params, dims, config: SemConfig | None = None,
                 n_replicates: int = 20, runs: int = 5, seed: int = 0,
                 first_iteration_only: bool | None = None) -> list[tuple[int, float]]:
    """Mean wall-clock seconds of an SEM fit (or of its first iteration) per dimension.

    Brown-Resnick defaults to timing only the first EM iteration.
    """
    config = config or SemConfig()
    if first_iteration_only is None:
        first_iteration_only = family != "logistic"
    out = []
    for D in dims:
        sc = Scenario(f"timing_{family}_{D}", family, tuple(np.atleast_1d(params)), int(D),
                      n_replicates=n_replicates, repetitions=runs, sem=config, seed=seed)
        # compile and warm caches outside the timed region
        if family == "logistic":
            warm_ds, warm_t = simulate_repetition(sc, np.random.default_rng(0))
            sem_fit(warm_t, warm_ds, replace(config, n_iter=1, avg_window=1))
        secs = []
        for r in range(runs):
            ss = repetition_seed(seed, sc, r)
            ds, template = simulate_repetition(sc, np.random.default_rng(ss))
            cfg = replace(config, theta0=sc.start)
            if first_iteration_only:
                cfg = replace(cfg, n_iter=1, avg_window=1)
            t0 = time.perf_counter()
            sem_fit(template, ds, cfg, master_seed=r)
            secs.append(time.perf_counter() - t0)
        out.append((int(D), float(np.mean(secs))))
    return out


def loglog_slope(points) -> float:
    d = np.log([p[0] for p in points])
    t = np.log([p[1] for p in points])
    return float(np.polyfit(d, t, 1)[0])


def gibbs_diagnostics(model: MaxStableModel, n_iter: int, inits=("singletons", "one_block"),
                      seed: int = 0, z=None) -> dict[str, np.ndarray]:
    """Block-count traces of chains run from different initial partitions on one simulated vector."""
    rng = np.random.default_rng(seed)
    if z is None:
        from .simulate import sample_model

        z = sample_model(model, 1, rng).values[0]
    out = {}
    for k, init in enumerate(inits):
        cfg = GibbsConfig(n_keep=1, burn_in=n_iter - 1, thin=1, init=init)
        chain = gibbs_run(model, z, config=cfg, rng=np.random.default_rng([seed, k]))
        out[init] = chain.trace_sizes
    return out


def em_trace_study(scenario: Scenario, runs: int, n_iter: int = 50, window=(30, 50),
                   workers: int | None = None) -> np.ndarray:
    """Parameter traces ``(runs, n_iter + 1, p)`` centred by their mean over iterations in ``window``."""
    sc = replace(scenario, sem=replace(scenario.sem, n_iter=n_iter, avg_window=1),
                 repetitions=runs)
    workers = resolve_workers(workers)
    jobs = [(sc, r) for r in range(runs)]
    if workers == 1:
        traces = [_trace_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_trace_one, jobs))
    tr = np.stack(traces)
    lo, hi = window
    centre = tr[:, lo:hi + 1].mean(axis=1, keepdims=True)
    return tr - centre


def _trace_one(args):
    sc, r = args
    ss = repetition_seed(sc.seed, sc, r)
    data_ss, sem_ss = ss.spawn(2)
    ds, template = simulate_repetition(sc, np.random.default_rng(data_ss))
    cfg = replace(sc.sem, theta0=sc.start)
    tr = sem_fit(template, ds, cfg, master_seed=int(sem_ss.generate_state(1)[0]))
    return np.array([template.report_params(t) for t in tr.thetas])


def settle_iteration(centred: np.ndarray, tol: float = 0.02) -> np.ndarray:
    """First iteration after which each centred trace stays within ``tol`` (first parameter)."""
    x = np.abs(centred[..., 0]) if centred.ndim == 3 else np.abs(centred)
    n = x.shape[1]
    out = np.empty(x.shape[0], dtype=int)
    for i, row in enumerate(x):
        bad = np.flatnonzero(row > tol)
        out[i] = 0 if bad.size == 0 else (bad[-1] + 1 if bad[-1] + 1 < n else n)
    return out


def write_centred_traces(centred: np.ndarray, path, names=("theta",)):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "iteration", *names])
        for r, tr in enumerate(centred):
            for it, row in enumerate(tr):
                w.writerow([r, it, *[repr(float(v)) for v in np.atleast_1d(row)]])
