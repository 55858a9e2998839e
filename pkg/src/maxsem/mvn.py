"""Multivariate Gaussian CDF and log-density.

The CDF uses the separation-of-variables transform (variables reordered by
standardized limit, then Cholesky) integrated with randomized quasi-Monte
Carlo: several independently scrambled Sobol' point sets give both the
estimate and its standard error.  A :class:`QmcRule` fixes the point sets, so
the estimate is a deterministic, smooth function of the limits and the
covariance for a given rule; this is what keeps likelihood surfaces stable
under numerical optimization.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

LOG_2PI = math.log(2.0 * math.pi)
_TINY = np.finfo(float).tiny
_ONE_MINUS = 1.0 - 2.0**-53


@dataclass(frozen=True)
class CdfEstimate:
    value: float
    std_error: float
    n_points: int = 0
    budget_exhausted: bool = False


@dataclass(eq=False)
class QmcRule:
    """Cached scrambled Sobol' point sets, one independent scrambling per shift.

    Parameters
    ----------
    seed : int
        Root seed for the scramblings.
    n_shifts : int
        Number of independent randomizations (error estimation needs >= 2).
    n_start : int
        Points per randomization on the first pass; doubled until the target
        accuracy is met.
    max_points : int
        Cap on points per randomization.
    """

    seed: int = 0
    n_shifts: int = 8
    n_start: int = 512
    max_points: int = 100_000
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.n_shifts < 2:
            raise ValueError("need at least two randomizations")

    def levels(self):
        m = max(int(math.ceil(math.log2(self.n_start))), 1)
        while 2**m <= self.max_points:
            yield m
            m += 1

    def points(self, dim: int, m: int) -> np.ndarray:
        """Array of shape ``(n_shifts, 2**m, dim)``."""
        key = (dim, m)
        pts = self._cache.get(key)
        if pts is None:
            pts = np.empty((self.n_shifts, 2**m, dim))
            for s in range(self.n_shifts):
                ss = np.random.SeedSequence([self.seed, dim, s])
                eng = qmc.Sobol(dim, scramble=True, seed=np.random.default_rng(ss))
                pts[s] = eng.random_base2(m)
            self._cache[key] = pts
        return pts


_default_rule = QmcRule()


def _chol_psd(cov: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Cholesky factor tolerating (near-)zero pivots; raises on negative ones."""
    q = cov.shape[0]
    L = np.zeros_like(cov)
    scale = max(float(np.max(np.abs(np.diag(cov)))), 1.0)
    for i in range(q):
        d = cov[i, i] - L[i, :i] @ L[i, :i]
        if d < -tol * scale:
            raise np.linalg.LinAlgError("covariance matrix is not positive semi-definite")
        if d <= tol * scale:
            continue
        L[i, i] = math.sqrt(d)
        L[i + 1:, i] = (cov[i + 1:, i] - L[i + 1:, :i] @ L[i, :i]) / L[i, i]
    return L


def _reorder(b: np.ndarray, cov: np.ndarray):
    sd = np.sqrt(np.clip(np.diagonal(cov, axis1=-2, axis2=-1), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        key = np.where(sd > 0, b / np.where(sd > 0, sd, 1.0), np.inf)
    perm = np.argsort(key, axis=-1, kind="stable")
    bp = np.take_along_axis(b, perm, axis=-1)
    rows = np.arange(b.shape[0])[:, None, None]
    covp = cov[rows, perm[:, :, None], perm[:, None, :]]
    return bp, covp


def _factor(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return np.stack([_chol_psd(c) for c in cov])


def _sov(b: np.ndarray, L: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Separation-of-variables integrand averaged per randomization.

    ``b`` is ``(B, q)``, ``L`` is ``(B, q, q)`` and ``w`` is ``(S, n, q-1)``;
    returns ``(B, S)`` per-randomization estimates.
    """
    B, q = b.shape
    S, n = w.shape[:2]
    f = np.ones((B, S, n))
    ys = []
    for i in range(q):
        s = np.zeros((B, S, n))
        for j, y in enumerate(ys):
            s += L[:, i, j, None, None] * y
        d = L[:, i, i, None, None]
        t = b[:, i, None, None] - s
        with np.errstate(divide="ignore", invalid="ignore"):
            e = np.where(d > 0, ndtr(t / np.where(d > 0, d, 1.0)), (t >= 0).astype(float))
        f *= e
        if i < q - 1:
            ys.append(ndtri(np.clip(w[None, :, :, i] * e, _TINY, _ONE_MINUS)))
    return f.mean(axis=-1)


def mvn_cdf_batch(upper: np.ndarray, cov: np.ndarray, rule: QmcRule | None = None,
                  accuracy: float = 1e-4):
    """Vectorized Gaussian orthant probabilities ``Pr(X <= upper)``, ``X ~ N(0, cov)``.

    Parameters
    ----------
    upper : (B, q) array
    cov : (B, q, q) or (q, q) array
    rule : QmcRule, optional
    accuracy : float
        Target absolute standard error per problem.

    Returns
    -------
    values, std_errors : (B,) arrays
    exhausted : (B,) bool array, True where the point budget ran out first
    n_points : (B,) int array, total points used (all randomizations)
    """
    rule = rule or _default_rule
    b = np.atleast_2d(np.asarray(upper, dtype=float))
    B, q = b.shape
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 2:
        cov = np.broadcast_to(cov, (B, q, q))
    if q == 0:
        return np.ones(B), np.zeros(B), np.zeros(B, bool), np.zeros(B, int)
    if q == 1:
        sd = np.sqrt(cov[:, 0, 0])
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.where(sd > 0, ndtr(b[:, 0] / np.where(sd > 0, sd, 1.0)), (b[:, 0] >= 0) * 1.0)
        return val, np.zeros(B), np.zeros(B, bool), np.zeros(B, int)

    bp, covp = _reorder(b, cov)
    L = _factor(covp)
    vals = np.empty(B)
    ses = np.empty(B)
    exhausted = np.ones(B, bool)
    npts = np.zeros(B, int)
    todo = np.arange(B)
    for m in rule.levels():
        w = rule.points(q - 1, m)
        est = _sov(bp[todo], L[todo], w)
        vals[todo] = est.mean(axis=1)
        ses[todo] = est.std(axis=1, ddof=1) / math.sqrt(est.shape[1])
        npts[todo] = w.shape[0] * w.shape[1]
        done = ses[todo] <= accuracy
        exhausted[todo[done]] = False
        todo = todo[~done]
        if todo.size == 0:
            break
    return vals, ses, exhausted, npts


def mvn_cdf(upper, cov, accuracy: float = 1e-4, rng: np.random.Generator | None = None,
            n_shifts: int = 8, max_points: int = 100_000) -> CdfEstimate:
    """Estimate ``Pr(X <= upper)`` for ``X ~ N(0, cov)``.

    ``rng`` seeds the randomizations; without it a fixed default rule is used.
    Infinite upper limits are integrated out exactly.
    """
    b = np.asarray(upper, dtype=float).ravel()
    cov = np.asarray(cov, dtype=float)
    q = b.size
    if q == 0:
        raise ValueError("dimension must be at least 1")
    if cov.shape != (q, q):
        raise ValueError(f"covariance shape {cov.shape} does not match {q} limits")
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
        raise ValueError("covariance matrix is not symmetric")
    _chol_psd(cov)  # raises if not PSD
    if np.any(np.isneginf(b)):
        return CdfEstimate(0.0, 0.0)
    keep = ~np.isposinf(b)
    b, cov = b[keep], cov[np.ix_(keep, keep)]
    if b.size == 0:
        return CdfEstimate(1.0, 0.0)
    if rng is None and (n_shifts, max_points) == (_default_rule.n_shifts, _default_rule.max_points):
        rule = _default_rule
    elif rng is None:
        rule = QmcRule(n_shifts=n_shifts, max_points=max_points)
    else:
        rule = QmcRule(seed=int(rng.integers(2**63)), n_shifts=n_shifts, max_points=max_points)
    val, se, ex, npts = mvn_cdf_batch(b[None, :], cov[None], rule, accuracy)
    return CdfEstimate(float(np.clip(val[0], 0.0, 1.0)), float(se[0]), int(npts[0]), bool(ex[0]))


def mvn_logpdf(x, mean, cov) -> float:
    """Exact Gaussian log-density via Cholesky; raises on singular ``cov``."""
    x = np.asarray(x, dtype=float).ravel()
    mean = np.asarray(mean, dtype=float).ravel()
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    q = x.size
    if mean.size != q or cov.shape != (q, q):
        raise ValueError("dimension mismatch")
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as err:
        raise np.linalg.LinAlgError("covariance matrix is singular or not positive definite") from err
    diag = np.diag(L)
    if np.any(diag <= 1e-150):
        raise np.linalg.LinAlgError("covariance matrix is singular")
    r = np.linalg.solve(L, x - mean)
    return float(-0.5 * (q * LOG_2PI + r @ r) - np.log(diag).sum())
