"""Likelihoods for max-stable vectors.

``st_loglik`` is the joint density of an observation and a known partition;
the full likelihood sums it over every partition, either by brute-force
enumeration (any model, small D) or, for the logistic family, by a
coefficient recursion that is exact at any dimension.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .models import LogisticModel, MaxStableModel
from .optim import maximize
from .partition import MAX_ENUM_DIM, Partition, iter_assignments

_CHUNK = 1 << 16


def _values(data) -> np.ndarray:
    v = getattr(data, "values", data)
    return np.atleast_2d(np.asarray(v, dtype=float))


def _check_positive(z):
    if not np.all(np.asarray(z) > 0):
        raise ValueError("observations must be strictly positive")


def st_loglik(model: MaxStableModel, z, partition: Partition) -> float:
    """Log joint density of ``z`` and its partition: ``-V(z) + sum log(-V_tau(z))``."""
    z = np.asarray(z, dtype=float).ravel()
    _check_positive(z)
    if partition.dim != z.size:
        raise ValueError("partition and observation dimensions differ")
    lw = model.log_neg_V_blocks(z[None, :], partition.block_matrix())
    return float(-model.exponent_V(z) + lw.sum())


@lru_cache(maxsize=4)
def _assignment_array(dim: int) -> np.ndarray:
    return np.array(list(iter_assignments(dim)), dtype=np.int8)


def _assignment_chunks(dim: int):
    if dim <= 10:
        yield _assignment_array(dim)
        return
    it = iter_assignments(dim)
    while True:
        chunk = list(itertools.islice(it, _CHUNK))
        if not chunk:
            return
        yield np.array(chunk, dtype=np.int8)


def _block_value_table(model: MaxStableModel, z: np.ndarray) -> np.ndarray:
    """``log(-V_tau(z))`` for every nonempty subset, indexed by bitmask."""
    D = z.size
    codes = np.arange(1, 2**D)
    masks = (codes[:, None] >> np.arange(D)) & 1
    table = np.full(2**D, -np.inf)
    table[0] = 0.0
    table[1:] = model.log_neg_V_blocks(z[None, :], masks.astype(bool))
    return table


def full_loglik_bruteforce(model: MaxStableModel, z) -> float:
    """Full log-likelihood by summing the joint density over all partitions."""
    z = np.asarray(z, dtype=float).ravel()
    _check_positive(z)
    D = z.size
    if D > MAX_ENUM_DIM:
        raise ValueError(f"brute-force enumeration supports D <= {MAX_ENUM_DIM}")
    table = _block_value_table(model, z)
    weights = (1 << np.arange(D)).astype(np.int64)
    acc = -np.inf
    for a in _assignment_chunks(D):
        total = np.zeros(a.shape[0])
        for k in range(D):
            code = ((a == k) * weights).sum(axis=1)
            total += np.where(code > 0, table[code], 0.0)
        acc = np.logaddexp(acc, logsumexp(total))
    return float(acc - model.exponent_V(z))


@lru_cache(maxsize=256)
def _logistic_log_coefs(theta: float, dim: int) -> np.ndarray:
    # c[1,1] = theta;  c[n+1,k] = theta c[n,k-1] + (n - theta k) c[n,k]; all terms are >= 0
    c = np.full(dim + 1, -np.inf)
    c[1] = math.log(theta)
    k = np.arange(dim + 1, dtype=float)
    for n in range(1, dim):
        with np.errstate(divide="ignore"):
            stay = c + np.log(np.maximum(n - theta * k, 0.0))
        grow = np.concatenate(([-np.inf], c[:-1])) + math.log(theta)
        c = np.logaddexp(stay, grow)
        c[0] = -np.inf
    return c[1:]


def logistic_full_loglik_recursive(theta: float, z) -> float | np.ndarray:
    """Exact logistic full log-likelihood for one row or a stack of rows.

    The density is ``exp(-s^theta) prod_j(z_j^(-1/theta-1) / theta)
    sum_k c[D,k] s^(theta k - D)`` with ``s = sum_j z_j^(-1/theta)``.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    z2 = np.atleast_2d(np.asarray(z, dtype=float))
    _check_positive(z2)
    D = z2.shape[1]
    logz = np.log(z2)
    log_s = logsumexp(-logz / theta, axis=1)
    logc = _logistic_log_coefs(float(theta), D)
    k = np.arange(1, D + 1)
    series = logsumexp(logc[None, :] + (theta * k[None, :] - D) * log_s[:, None], axis=1)
    out = (-np.exp(theta * log_s) - (1.0 / theta + 1.0) * logz.sum(axis=1)
           - D * math.log(theta) + series)
    return out if np.ndim(z) == 2 else float(out[0])


def full_loglik(model: MaxStableModel, data) -> float:
    """Full log-likelihood summed over replicates (recursion for logistic, enumeration otherwise)."""
    z = _values(data)
    if isinstance(model, LogisticModel):
        return float(np.sum(logistic_full_loglik_recursive(model.theta, z)))
    return float(sum(full_loglik_bruteforce(model, row) for row in z))


@dataclass(frozen=True)
class PairWeighting:
    """Pairs of coordinates and their nonnegative weights."""

    pairs: tuple[tuple[int, int], ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.pairs) == 0:
            raise ValueError("pair list is empty")
        if len(self.weights) != len(self.pairs):
            raise ValueError("one weight per pair required")
        w = np.asarray(self.weights, float)
        if np.any(w < 0) or not np.any(w > 0):
            raise ValueError("weights must be nonnegative with at least one positive")
        for i, j in self.pairs:
            if i == j:
                raise ValueError("a pair needs two distinct coordinates")

    @classmethod
    def all_pairs(cls, dim: int, weight: float = 1.0) -> "PairWeighting":
        pairs = tuple(itertools.combinations(range(dim), 2))
        return cls(pairs, (float(weight),) * len(pairs))

    def scaled(self, factor: float) -> "PairWeighting":
        return PairWeighting(self.pairs, tuple(factor * w for w in self.weights))


def bivariate_loglik(model: MaxStableModel, z2: np.ndarray) -> np.ndarray:
    """Row-wise bivariate full log-density ``-V + log(V_1 V_2 - V_12)``."""
    z2 = np.atleast_2d(z2)
    n = z2.shape[0]
    masks = np.array([[True, False], [False, True], [True, True]])
    lw = model.log_neg_V_blocks(np.repeat(z2, 3, axis=0), np.tile(masks, (n, 1))).reshape(n, 3)
    return -model.exponent_V(z2) + np.logaddexp(lw[:, 0] + lw[:, 1], lw[:, 2])


def pairwise_loglik(model: MaxStableModel, data, weighting: PairWeighting | None = None) -> float:
    """Weighted sum over pairs and replicates of bivariate log-densities."""
    z = _values(data)
    _check_positive(z)
    if z.shape[1] < 2:
        raise ValueError("pairwise likelihood needs D >= 2")
    weighting = weighting or PairWeighting.all_pairs(z.shape[1])
    total = 0.0
    for (i, j), w in zip(weighting.pairs, weighting.weights):
        if w == 0:
            continue
        sub = model.subset([i, j])
        total += w * float(np.sum(bivariate_loglik(sub, z[:, [i, j]])))
    return total


@dataclass
class FitResult:
    params: np.ndarray
    loglik: float
    converged: bool
    n_evals: int
    trace: list = field(default_factory=list, repr=False)


def mle_fit(objective: str, model: MaxStableModel, data, theta0=None,
            weighting: PairWeighting | None = None, xatol: float = 1e-5,
            maxiter: int = 500) -> FitResult:
    """Box-constrained maximum (composite) likelihood.

    Parameters
    ----------
    objective : {"full", "full_recursive", "pairwise"}
        ``full_recursive`` requires the logistic family.
    model : MaxStableModel
        Supplies the family, fixed structure (sites) and default start.
    theta0 : array_like, optional
        Starting natural parameters; defaults to ``model.params``.
    """
    z = _values(data)
    if objective == "full_recursive" and not isinstance(model, LogisticModel):
        raise ValueError("the recursive likelihood is only available for the logistic family")
    if objective in ("full", "full_recursive"):
        def loglik(m):
            return full_loglik(m, z)
    elif objective == "pairwise":
        def loglik(m):
            return pairwise_loglik(m, z, weighting)
    else:
        raise ValueError(f"unknown objective {objective!r}")

    theta0 = model.params if theta0 is None else np.atleast_1d(np.asarray(theta0, float))
    trace = []

    def fun(x):
        try:
            v = loglik(model.with_params(model.from_opt(x)))
        except (ValueError, np.linalg.LinAlgError):
            v = -np.inf
        trace.append((np.array(x), v))
        return v

    res = maximize(fun, model.to_opt(theta0), model.opt_bounds(), xatol=xatol, maxiter=maxiter)
    return FitResult(model.from_opt(res.x), float(res.fun), res.converged, res.nfev, trace)


def exact_partition_posterior(model: MaxStableModel, z) -> tuple[list[Partition], np.ndarray]:
    """All partitions of ``range(D)`` with their exact conditional probabilities given ``z``."""
    z = np.asarray(z, dtype=float).ravel()
    D = z.size
    table = _block_value_table(model, z)
    parts, logw = [], []
    for a in iter_assignments(D):
        p = Partition._trusted(a)
        parts.append(p)
        logw.append(sum(table[m] for m in p.masks))
    logw = np.asarray(logw)
    return parts, np.exp(logw - logsumexp(logw))


def exact_q(model: MaxStableModel, z, theta_prev, theta) -> float:
    """Conditional expectation of the joint log-density at ``theta`` given ``z`` under ``theta_prev``."""
    z = np.asarray(z, dtype=float).ravel()
    parts, probs = exact_partition_posterior(model.with_params(theta_prev), z)
    m = model.with_params(theta)
    table = _block_value_table(m, z)
    vals = np.array([sum(table[k] for k in p.masks) for p in parts])
    keep = probs > 0
    return float(np.sum(probs[keep] * vals[keep]) - m.exponent_V(z))


def exact_partition_table(model, z, partitions: Sequence[Partition]) -> np.ndarray:
    """Unnormalized log-weights ``sum log(-V_tau)`` of the given partitions."""
    table = _block_value_table(model, np.asarray(z, float).ravel())
    return np.array([sum(table[m] for m in p.masks) for p in partitions])
