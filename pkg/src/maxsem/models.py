"""Parametric max-stable families on unit Fréchet margins.

Every model exposes the exponent function ``V``, the negated block partial
derivatives ``-V_tau`` (in log space, batched over rows), the point-process
intensity and the density of its spectral vector.  Blocks are given as
boolean masks over the ``D`` coordinates; indices are 0-based.

Brown-Resnick partial derivatives are evaluated with the first coordinate of
the block as the conditioning origin: a Gaussian log-density over the other
block members times a Gaussian orthant probability over the complement.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .mvn import LOG_2PI, QmcRule, mvn_cdf_batch, mvn_logpdf

# numerical box used by optimizers; the open ends of the parameter space are excluded
LOGISTIC_THETA_MIN = 0.01
BR_LOG_RANGE_BOUNDS = (math.log(1e-3), math.log(1e3))
BR_SMOOTH_BOUNDS = (0.05, 1.99)


def _as_rows(z, dim: int) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    z2 = np.atleast_2d(z)
    if z2.shape[-1] != dim:
        raise ValueError(f"expected vectors of length {dim}, got shape {z.shape}")
    if not np.all(z2 > 0):
        raise ValueError("all coordinates must be strictly positive")
    return z2


def _rows_and_masks(z, masks, dim: int):
    z2 = _as_rows(z, dim)
    m = np.atleast_2d(np.asarray(masks, dtype=bool))
    if m.shape[-1] != dim:
        raise ValueError("mask length does not match dimension")
    if not np.all(m.any(axis=1)):
        raise ValueError("blocks must be nonempty")
    n = max(z2.shape[0], m.shape[0])
    return np.broadcast_to(z2, (n, dim)), np.broadcast_to(m, (n, dim))


def block_mask(tau: Sequence[int], dim: int) -> np.ndarray:
    """Boolean mask of an index set; rejects empty sets and duplicates."""
    tau = [int(t) for t in tau]
    if not tau:
        raise ValueError("index set must be nonempty")
    if len(set(tau)) != len(tau):
        raise ValueError("duplicate indices in block")
    if min(tau) < 0 or max(tau) >= dim:
        raise IndexError("block index out of range")
    m = np.zeros(dim, bool)
    m[tau] = True
    return m


class MaxStableModel(ABC):
    """Interface shared by the max-stable families."""

    family: str
    dim: int

    @property
    @abstractmethod
    def params(self) -> np.ndarray: ...

    @abstractmethod
    def with_params(self, params) -> "MaxStableModel": ...

    @abstractmethod
    def to_opt(self, params) -> np.ndarray:
        """Map natural parameters to optimizer coordinates."""

    @abstractmethod
    def from_opt(self, x) -> np.ndarray: ...

    @abstractmethod
    def opt_bounds(self) -> list[tuple[float, float]]: ...

    @abstractmethod
    def report_params(self, params) -> np.ndarray:
        """Parameters on the scale used for performance metrics."""

    @abstractmethod
    def log_neg_V_blocks(self, z, masks) -> np.ndarray:
        """``log(-V_tau(z))`` for each row of ``z`` and each block mask."""

    @abstractmethod
    def subset(self, idx: Sequence[int]) -> "MaxStableModel":
        """The model for the sub-vector at coordinates ``idx``."""

    @abstractmethod
    def spectral_density(self, w) -> float: ...

    @abstractmethod
    def sample_tilted(self, j: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Spectral vector divided by its ``j``-th coordinate, under the measure tilted by it.

        Returns shape ``(D,)``, or ``(size, D)`` when ``size`` is given.
        """

    def additive_block_table(self, z) -> np.ndarray | None:
        """Table ``A`` with ``log(-V_tau) = A[|tau|] + sum_j c_j`` when such a form exists."""
        return None

    # derived quantities

    def exponent_V(self, z) -> float | np.ndarray:
        """``V(z)`` via Euler's identity ``V = sum_j z_j (-V_j)``."""
        z2 = _as_rows(z, self.dim)
        B, D = z2.shape
        eye = np.eye(D, dtype=bool)
        lw = self.log_neg_V_blocks(np.repeat(z2, D, axis=0), np.tile(eye, (B, 1)))
        out = np.exp(lw + np.log(z2).ravel()).reshape(B, D).sum(axis=1)
        return out if np.ndim(z) == 2 else float(out[0])

    def log_neg_V_partial(self, z, tau: Sequence[int]) -> float:
        mask = block_mask(tau, self.dim)
        return float(self.log_neg_V_blocks(np.asarray(z, float)[None, :], mask[None, :])[0])

    def neg_V_partial(self, z, tau: Sequence[int]) -> float:
        """``-dV/dz_tau`` at ``z``."""
        return math.exp(self.log_neg_V_partial(z, tau))

    def log_intensity(self, z) -> float:
        return self.log_neg_V_partial(z, range(self.dim))

    def intensity(self, z) -> float:
        """Point-process intensity, the full mixed partial derivative of ``-V``."""
        return math.exp(self.log_intensity(z))


@dataclass(frozen=True)
class LogisticModel(MaxStableModel):
    """Symmetric logistic model, ``V(z) = (sum_j z_j^(-1/theta))^theta``, ``0 < theta <= 1``."""

    dim: int
    theta: float
    family: str = field(default="logistic", init=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"logistic theta must lie in (0, 1], got {self.theta}")

    @property
    def params(self) -> np.ndarray:
        return np.array([self.theta])

    @property
    def beta(self) -> float:
        return 1.0 / self.theta

    def with_params(self, params) -> "LogisticModel":
        return replace(self, theta=float(np.ravel(params)[0]))

    def to_opt(self, params):
        return np.asarray(params, float).ravel()

    def from_opt(self, x):
        return np.asarray(x, float).ravel()

    def opt_bounds(self):
        return [(LOGISTIC_THETA_MIN, 1.0)]

    def report_params(self, params):
        return np.asarray(params, float).ravel()

    def subset(self, idx):
        return LogisticModel(len(idx), self.theta)

    def log_coef(self, k) -> np.ndarray:
        """``log(beta^(k-1) Gamma(k - 1/beta) / Gamma(1 - 1/beta))`` for block sizes ``k``."""
        k = np.asarray(k, dtype=float)
        th = self.theta
        if th == 1.0:
            # independence limit: only singleton blocks carry mass
            return np.where(k == 1, 0.0, -np.inf)
        return (k - 1) * math.log(self.beta) + gammaln(k - th) - gammaln(1.0 - th)

    def log_S(self, z) -> np.ndarray:
        """``log(sum_j z_j^(-1/theta))`` row-wise."""
        return logsumexp(-self.beta * np.log(z), axis=-1)

    def exponent_V(self, z):
        z2 = _as_rows(z, self.dim)
        out = np.exp(self.theta * self.log_S(z2))
        return out if np.ndim(z) == 2 else float(out[0])

    def log_neg_V_blocks(self, z, masks):
        z2, m = _rows_and_masks(z, masks, self.dim)
        logz = np.log(z2)
        k = m.sum(axis=1)
        return (self.log_coef(k) + (self.theta - k) * self.log_S(z2)
                - (1.0 + self.beta) * np.where(m, logz, 0.0).sum(axis=1))

    def additive_block_table(self, z):
        z2 = _as_rows(z, self.dim)
        k = np.arange(self.dim + 2, dtype=float)
        A = self.log_coef(np.maximum(k, 1)) + (self.theta - k) * self.log_S(z2[0])
        A[0] = 0.0
        return A

    def spectral_density(self, w) -> float:
        """Product of Fréchet(beta, c_beta) densities with ``c_beta = 1/Gamma(1 - theta)``."""
        w = _as_rows(w, self.dim)[0]
        if self.theta >= 1.0:
            raise ValueError("the spectral density is degenerate at theta = 1")
        b = self.beta
        logc = -gammaln(1.0 - self.theta)
        x = np.log(w) - logc
        logf = math.log(b) - logc - (1.0 + b) * x - np.exp(-b * x)
        return float(np.exp(logf.sum()))

    def sample_tilted(self, j, rng, size=None):
        # W_k = c E_k^(-theta) and the size-biased W_j = c G^(-theta), G ~ Gamma(1 - theta)
        n = 1 if size is None else size
        if self.theta >= 1.0:
            y = np.zeros((n, self.dim))
        else:
            e = rng.exponential(size=(n, self.dim))
            g = rng.gamma(1.0 - self.theta, size=(n, 1))
            y = (g / e) ** self.theta
        y[:, j] = 1.0
        return y[0] if size is None else y


@dataclass(frozen=True)
class Variogram:
    """Power semi-variogram ``gamma(h) = (h / range_)**smoothness``."""

    range_: float
    smoothness: float

    def __post_init__(self):
        if not self.range_ > 0:
            raise ValueError("range must be positive")
        if not 0.0 < self.smoothness <= 2.0:
            raise ValueError("smoothness must lie in (0, 2]")

    def __call__(self, h):
        return (np.asarray(h, dtype=float) / self.range_) ** self.smoothness


@dataclass(frozen=True, eq=False)
class BrownResnickModel(MaxStableModel):
    """Brown-Resnick process observed at ``sites`` with a power variogram.

    ``qmc`` fixes the quasi-Monte Carlo point sets used for Gaussian orthant
    probabilities, so every evaluation is deterministic given the parameters.
    """

    sites: np.ndarray
    range_: float
    smoothness: float
    qmc: QmcRule = field(default_factory=QmcRule, repr=False)
    accuracy: float = 1e-4
    family: str = field(default="brown_resnick", init=False)

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.sites, dtype=float))
        if s.shape[0] == 1 and np.ndim(self.sites) == 1 and s.shape[1] > 1:
            s = s.T  # 1-d coordinates given as a flat list
        object.__setattr__(self, "sites", s)
        Variogram(self.range_, self.smoothness)
        d = self.distances
        if np.any(d[~np.eye(len(s), dtype=bool)] <= 0):
            raise ValueError("sites must be pairwise distinct")

    @property
    def dim(self) -> int:
        return self.sites.shape[0]

    @property
    def variogram(self) -> Variogram:
        return Variogram(self.range_, self.smoothness)

    @cached_property
    def distances(self) -> np.ndarray:
        diff = self.sites[:, None, :] - self.sites[None, :, :]
        return np.sqrt((diff**2).sum(-1))

    @cached_property
    def gamma_matrix(self) -> np.ndarray:
        return self.variogram(self.distances)

    @property
    def params(self) -> np.ndarray:
        return np.array([self.range_, self.smoothness])

    def with_params(self, params) -> "BrownResnickModel":
        p = np.ravel(params)
        return replace(self, range_=float(p[0]), smoothness=float(p[1]))

    def to_opt(self, params):
        p = np.asarray(params, float).ravel()
        return np.array([math.log(p[0]), p[1]])

    def from_opt(self, x):
        x = np.asarray(x, float).ravel()
        return np.array([math.exp(x[0]), x[1]])

    def opt_bounds(self):
        return [BR_LOG_RANGE_BOUNDS, BR_SMOOTH_BOUNDS]

    def report_params(self, params):
        p = np.asarray(params, float).ravel()
        return np.array([math.log(p[0]), p[1]])

    def subset(self, idx):
        return replace(self, sites=self.sites[list(idx)])

    def origin_covariance(self, origin: int) -> np.ndarray:
        """Covariance of ``eps(s_k) - eps(s_origin)`` over all ``k`` (row/col ``origin`` is zero)."""
        G = self.gamma_matrix
        g0 = G[origin]
        return g0[:, None] + g0[None, :] - G

    def log_neg_V_blocks(self, z, masks, origin: str = "first"):
        """Batched ``log(-V_tau)``.

        ``origin="last"`` conditions on the last block member instead of the
        first; the value is origin-invariant up to quadrature error.
        """
        z2, m = _rows_and_masks(z, masks, self.dim)
        logz = np.log(z2)
        G = self.gamma_matrix
        out = np.empty(m.shape[0])
        pending: dict[int, list] = {}
        uniq, inv = np.unique(m, axis=0, return_inverse=True)
        inv = np.ravel(inv)
        for u, mask in enumerate(uniq):
            rows = np.flatnonzero(inv == u)
            members = np.flatnonzero(mask)
            j0 = members[0] if origin == "first" else members[-1]
            rest = members[members != j0]
            comp = np.flatnonzero(~mask)
            g0 = G[j0]
            lz = logz[rows]
            x = lz - lz[:, j0:j0 + 1] + g0[None, :]
            base = -2.0 * lz[:, j0] - lz[:, rest].sum(axis=1)
            if rest.size:
                S_rr = g0[rest, None] + g0[None, rest] - G[np.ix_(rest, rest)]
                L = np.linalg.cholesky(S_rr)
                alpha_half = np.linalg.solve(L, x[:, rest].T)  # L^-1 x
                base += (-0.5 * (alpha_half**2).sum(axis=0) - np.log(np.diag(L)).sum()
                         - 0.5 * rest.size * LOG_2PI)
            if comp.size:
                S_cc = g0[comp, None] + g0[None, comp] - G[np.ix_(comp, comp)]
                if rest.size:
                    S_cr = g0[comp, None] + g0[None, rest] - G[np.ix_(comp, rest)]
                    K = np.linalg.solve(L, S_cr.T)  # L^-1 S_rc
                    mean = (K.T @ alpha_half).T
                    cond = S_cc - K.T @ K
                    cond = 0.5 * (cond + cond.T)
                else:
                    mean = 0.0
                    cond = S_cc
                upper = x[:, comp] - mean
                pending.setdefault(comp.size, []).append((rows, upper, cond))
            out[rows] = base
        for q, items in pending.items():
            rows = np.concatenate([it[0] for it in items])
            upper = np.concatenate([it[1] for it in items])
            cov = np.concatenate([np.broadcast_to(it[2], (len(it[0]), q, q)) for it in items])
            vals, _, _, _ = mvn_cdf_batch(upper, cov, self.qmc, self.accuracy)
            with np.errstate(divide="ignore"):
                out[rows] += np.log(np.clip(vals, 0.0, 1.0))
        return out

    def spatial_covariance(self) -> np.ndarray:
        """Covariance of ``eps`` at the sites when ``eps`` vanishes at the spatial origin."""
        g = self.variogram(np.sqrt((self.sites**2).sum(axis=1)))
        return g[:, None] + g[None, :] - self.gamma_matrix

    def spectral_density(self, w) -> float:
        """Log-Gaussian density of ``W(s) = exp(eps(s) - gamma(s))`` at the sites."""
        w = _as_rows(w, self.dim)[0]
        g = self.variogram(np.sqrt((self.sites**2).sum(axis=1)))
        lw = np.log(w)
        return math.exp(mvn_logpdf(lw, -g, self.spatial_covariance()) - lw.sum())

    @cached_property
    def _tilted_factors(self) -> list[np.ndarray]:
        out = []
        for j in range(self.dim):
            C = self.origin_covariance(j)
            vals, vecs = np.linalg.eigh(C)
            out.append(vecs * np.sqrt(np.clip(vals, 0.0, None)))
        return out

    def sample_tilted(self, j, rng, size=None):
        F = self._tilted_factors[j]
        n = 1 if size is None else size
        x = rng.standard_normal((n, self.dim)) @ F.T
        x[:, j] = 0.0
        y = np.exp(x - self.gamma_matrix[j])
        return y[0] if size is None else y


def make_model(family: str, params, dim: int | None = None, sites=None, **kwargs) -> MaxStableModel:
    """Build a model from a family name and natural parameters."""
    p = np.atleast_1d(np.asarray(params, dtype=float))
    if family == "logistic":
        if dim is None:
            raise ValueError("logistic model needs a dimension")
        return LogisticModel(int(dim), float(p[0]))
    if family in ("brown_resnick", "br"):
        if sites is None:
            raise ValueError("brown_resnick model needs site coordinates")
        return BrownResnickModel(np.asarray(sites, float), float(p[0]), float(p[1]), **kwargs)
    raise ValueError(f"unknown family {family!r}")
