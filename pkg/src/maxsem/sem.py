"""Stochastic EM with Gibbs-sampled partitions as the missing data.

Each iteration draws ``N`` partitions per replicate from the conditional
partition law at the current parameters, then maximizes the Monte Carlo
average of the completed log-likelihood.  The estimate is the mean of the
last ``avg_window`` iterates.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .gibbs import GibbsChain, GibbsConfig, gibbs_run
from .models import LogisticModel, MaxStableModel
from .optim import maximize


@dataclass(frozen=True)
class SemConfig:
    """Iteration counts, Gibbs settings and optimizer tolerance.

    ``n_keep`` overrides ``gibbs.n_keep``.  ``theta0=None`` starts from the
    model's own parameters.
    """

    n_iter: int = 30
    n_keep: int = 100
    avg_window: int = 5
    gibbs: GibbsConfig = field(default_factory=GibbsConfig)
    theta0: tuple | None = None
    xatol: float = 1e-5
    warm_start: bool = False

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        if not 1 <= self.avg_window <= self.n_iter:
            raise ValueError("avg_window must lie in [1, n_iter]")
        if self.n_keep < 1:
            raise ValueError("n_keep must be >= 1")

    @property
    def gibbs_config(self) -> GibbsConfig:
        return replace(self.gibbs, n_keep=self.n_keep)


@dataclass
class SemTrace:
    thetas: np.ndarray
    q_values: np.ndarray
    estimate: np.ndarray
    wall_times: np.ndarray
    converged: np.ndarray
    seed: int | None = None

    def to_csv(self, path, names=None):
        p = self.thetas.shape[1]
        names = names or [f"param_{i + 1}" for i in range(p)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", *names, "q_hat", "wall_time"])
            for r, th in enumerate(self.thetas):
                q = "" if r == 0 else repr(float(self.q_values[r - 1]))
                t = "" if r == 0 else repr(float(self.wall_times[r - 1]))
                w.writerow([r, *[repr(float(v)) for v in th], q, t])

    def summary(self, config: SemConfig | None = None) -> dict:
        out = {"estimate": self.estimate.tolist(), "seed": self.seed,
               "iterations": int(self.thetas.shape[0] - 1),
               "total_seconds": float(self.wall_times.sum())}
        if config is not None:
            out["config"] = json.loads(json.dumps(asdict(config), default=str))
        return out


def _values(data) -> np.ndarray:
    return np.atleast_2d(np.asarray(getattr(data, "values", data), dtype=float))


def chain_stream(master_seed: int, iteration: int, replicate: int) -> np.random.Generator:
    """Random stream of the chain for ``replicate`` at EM ``iteration``."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(iteration, replicate)))


def e_step_sample(model: MaxStableModel, data, theta_prev, config: SemConfig,
                  rngs, init_labels=None) -> list[GibbsChain]:
    """One Gibbs chain per replicate at ``theta_prev``."""
    z = _values(data)
    m = model.with_params(theta_prev)
    gc = config.gibbs_config
    chains = []
    for i, row in enumerate(z):
        init = None if init_labels is None else init_labels[i]
        chains.append(gibbs_run(m, row, config=gc, rng=rngs[i], init_labels=init))
    return chains


def _kept(sample) -> np.ndarray:
    return sample.kept if isinstance(sample, GibbsChain) else np.atleast_2d(np.asarray(sample))


def _unique_rows(bm: np.ndarray):
    """First-occurrence indices and inverse map of distinct boolean rows."""
    D = bm.shape[1]
    if D <= 62:
        key = bm.astype(np.int64) @ (np.int64(1) << np.arange(D, dtype=np.int64))
        _, first, inv = np.unique(key, return_index=True, return_inverse=True)
    else:
        _, first, inv = np.unique(bm, axis=0, return_index=True, return_inverse=True)
    return first, np.ravel(inv)


class CompletedLikelihood:
    """Monte Carlo completed log-likelihood ``Q(theta)`` for fixed partition samples.

    Each replicate contributes ``-V(z) + (1/N) sum_i sum_{tau in pi_i} log(-V_tau(z))``;
    replicate terms are summed.  Repeated blocks are merged with their weights
    so every evaluation touches each distinct block once.  ``sample_weights``
    replaces the uniform ``1/N`` by arbitrary per-sample weights (normalized).
    """

    def __init__(self, model: MaxStableModel, data, samples, sample_weights=None):
        self.model = model
        self.z = _values(data)
        M, D = self.z.shape
        if len(samples) != M:
            raise ValueError("one sample set per replicate required")
        rep_idx, masks, weights = [], [], []
        for m, s in enumerate(samples):
            a = _kept(s)
            n = a.shape[0]
            if sample_weights is None:
                pw = np.full(n, 1.0 / n)
            else:
                pw = np.asarray(sample_weights[m], float)
                pw = pw / pw.sum()
            blk = a[:, None, :] == np.arange(D)[None, :, None]
            present = blk.any(axis=2)
            bm = blk[present]
            bw = np.broadcast_to(pw[:, None], present.shape)[present]
            first, inv = _unique_rows(bm)
            masks.append(bm[first])
            weights.append(np.bincount(inv, weights=bw, minlength=first.size))
            rep_idx.append(np.full(first.size, m))
        self.rep = np.concatenate(rep_idx)
        self.masks = np.concatenate(masks)
        self.weights = np.concatenate(weights)
        self._logistic = isinstance(model, LogisticModel)
        if self._logistic:
            logz = np.log(self.z)
            self._logz = logz
            self._sizes = self.masks.sum(axis=1)
            self._block_logz = np.where(self.masks, logz[self.rep], 0.0).sum(axis=1)

    def __call__(self, theta) -> float:
        m = self.model.with_params(theta)
        if self._logistic:
            a = -m.beta * self._logz
            amax = a.max(axis=1)
            log_s = amax + np.log(np.exp(a - amax[:, None]).sum(axis=1))
            k = self._sizes
            coef = m.log_coef(np.arange(self.z.shape[1] + 1))[k]
            lw = coef + (m.theta - k) * log_s[self.rep] - (1.0 + m.beta) * self._block_logz
            V = np.exp(m.theta * log_s)
        else:
            lw = m.log_neg_V_blocks(self.z[self.rep], self.masks)
            V = m.exponent_V(self.z)
        pos = self.weights > 0
        if np.any(np.isneginf(lw[pos])):
            return -np.inf
        return float(-V.sum() + np.dot(self.weights[pos], lw[pos]))


def q_hat(model: MaxStableModel, data, samples, theta, sample_weights=None) -> float:
    """Monte Carlo completed log-likelihood at ``theta`` given partition samples."""
    return CompletedLikelihood(model, data, samples, sample_weights)(theta)


def m_step(model: MaxStableModel, data, samples, theta_prev, xatol: float = 1e-5,
           sample_weights=None):
    """Maximize the completed log-likelihood over the parameter box.

    Returns ``(theta_new, q_value, converged)``; never returns a point with a
    lower objective than ``theta_prev``.
    """
    Q = CompletedLikelihood(model, data, samples, sample_weights)

    def fun(x):
        try:
            return Q(model.from_opt(x))
        except (ValueError, np.linalg.LinAlgError):
            return -np.inf

    res = maximize(fun, model.to_opt(theta_prev), model.opt_bounds(), xatol=xatol)
    return model.from_opt(res.x), res.fun, res.converged


def sem_fit(model: MaxStableModel, data, config: SemConfig | None = None,
            master_seed: int = 0) -> SemTrace:
    """Run stochastic EM for ``config.n_iter`` rounds and average the tail."""
    config = config or SemConfig()
    z = _values(data)
    M = z.shape[0]
    theta = model.params if config.theta0 is None else np.atleast_1d(np.asarray(config.theta0, float))
    model = model.with_params(theta)
    thetas = [theta]
    qs, times, conv = [], [], []
    warm = None
    for r in range(1, config.n_iter + 1):
        t0 = time.perf_counter()
        rngs = [chain_stream(master_seed, r, m) for m in range(M)]
        chains = e_step_sample(model, z, theta, config, rngs, init_labels=warm)
        theta, q, ok = m_step(model, z, chains, theta, config.xatol)
        times.append(time.perf_counter() - t0)
        thetas.append(theta)
        qs.append(q)
        conv.append(ok)
        if config.warm_start:
            warm = [np.asarray(c.current.assignment) for c in chains]
    thetas = np.array(thetas)
    estimate = thetas[-config.avg_window:].mean(axis=0)
    return SemTrace(thetas, np.array(qs), estimate, np.array(times), np.array(conv), master_seed)
