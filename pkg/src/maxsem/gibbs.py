"""Single-site Gibbs sampler over set partitions.

Each update removes one uniformly chosen coordinate from its block and puts
it back into one of the remaining blocks or a new singleton, with
probabilities proportional to the product of ``-V_tau(z)`` over the blocks of
the resulting partition.  Only the blocks touched by the move enter the
weights: joining block ``b`` scores ``log(-V_{b+l}) - log(-V_b)`` and a new
singleton scores ``log(-V_{l})``.

The hot loop is a numba kernel driven by a lookup table of block values,
either by block size (logistic) or by subset bitmask (any model with
``D <= TABLE_MAX_DIM``).  Larger generic models fall back to a Python loop
with a lazily filled bitmask cache; it consumes random inputs identically.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .models import MaxStableModel
from .partition import Partition, canonicalize, gibbs_moves

TABLE_MAX_DIM = 12
INITS = ("singletons", "one_block", "unconditional")


@dataclass(frozen=True)
class GibbsConfig:
    """Run length and initialization; ``None`` burn-in/thin resolve to ``10*D`` and ``D``."""

    n_keep: int = 100
    burn_in: int | None = None
    thin: int | None = None
    init: str = "singletons"

    def __post_init__(self):
        if self.n_keep < 1:
            raise ValueError("n_keep must be >= 1")
        if self.burn_in is not None and self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.thin is not None and self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}")

    def resolve(self, dim: int) -> tuple[int, int]:
        burn = 10 * dim if self.burn_in is None else self.burn_in
        thin = dim if self.thin is None else self.thin
        return burn, thin

    def n_updates(self, dim: int) -> int:
        burn, thin = self.resolve(dim)
        return burn + self.n_keep * thin


@dataclass
class GibbsChain:
    """Outcome of one run: final state, kept samples (canonical label rows) and block-count trace."""

    current: Partition
    kept: np.ndarray
    trace_sizes: np.ndarray

    @property
    def kept_partitions(self) -> list[Partition]:
        return [Partition._trusted(tuple(int(v) for v in row)) for row in self.kept]

    def frequencies(self) -> dict[Partition, float]:
        rows, counts = np.unique(self.kept, axis=0, return_counts=True)
        n = self.kept.shape[0]
        return {Partition._trusted(tuple(int(v) for v in r)): c / n for r, c in zip(rows, counts)}


def conditional_log_weights(model: MaxStableModel, z, partition: Partition, site: int):
    """Candidates of a single-site update at ``site`` and their log-weights.

    Log-weights equal ``sum_blocks log(-V_tau)`` of each candidate minus the
    shared contribution of the blocks not containing ``site``.
    """
    z = np.asarray(z, dtype=float).ravel()
    cands = gibbs_moves(partition, site)
    bit = 1 << site
    reduced = {m & ~bit for m in partition.masks} - {0}
    D = partition.dim
    need = sorted(reduced | {m | bit for m in reduced} | {bit})
    lv = dict(zip(need, model.log_neg_V_blocks(z[None, :], _bits(need, D))))
    out = []
    for c in cands:
        own = next(m for m in c.masks if m & bit)
        rest = own & ~bit
        if rest == 0:
            out.append(lv[bit])
        elif np.isneginf(lv[own]):
            out.append(-np.inf)
        else:
            out.append(lv[own] - lv[rest])
    return cands, np.asarray(out)


def _bits(masks, dim: int) -> np.ndarray:
    m = np.asarray(masks, dtype=np.int64)
    return ((m[:, None] >> np.arange(dim)) & 1).astype(bool)


@numba.njit(cache=True)
def _block_value(code, size, table, by_size):
    if by_size:
        return table[size]
    return table[code]


@numba.njit(cache=True)
def _gibbs_kernel(labels0, table, by_size, sites, u, burn_in, thin, n_keep):
    D = labels0.shape[0]
    total = sites.shape[0]
    labels = labels0.copy()
    sizes = np.zeros(D, np.int64)
    codes = np.zeros(D, np.int64)
    for j in range(D):
        sizes[labels[j]] += 1
        codes[labels[j]] |= 1 << j
    active = np.empty(D, np.int64)
    pos = np.full(D, -1, np.int64)
    n_active = 0
    for lab in range(D):
        if sizes[lab] > 0:
            active[n_active] = lab
            pos[lab] = n_active
            n_active += 1
    free = np.empty(D, np.int64)
    n_free = 0
    for lab in range(D - 1, -1, -1):
        if sizes[lab] == 0:
            free[n_free] = lab
            n_free += 1

    kept = np.empty((n_keep, D), np.int64)
    trace = np.empty(total, np.int64)
    logw = np.empty(D + 1)
    relabel = np.empty(D, np.int64)
    k_out = 0
    for t in range(total):
        site = sites[t]
        bit = 1 << site
        old = labels[site]
        sizes[old] -= 1
        codes[old] &= ~bit
        if sizes[old] == 0:
            last = active[n_active - 1]
            active[pos[old]] = last
            pos[last] = pos[old]
            pos[old] = -1
            n_active -= 1
            free[n_free] = old
            n_free += 1

        best = -np.inf
        for i in range(n_active):
            b = active[i]
            grown = _block_value(codes[b] | bit, sizes[b] + 1, table, by_size)
            if grown == -np.inf:
                logw[i] = -np.inf
            else:
                logw[i] = grown - _block_value(codes[b], sizes[b], table, by_size)
            if logw[i] > best:
                best = logw[i]
        logw[n_active] = _block_value(bit, 1, table, by_size)
        if logw[n_active] > best:
            best = logw[n_active]

        n_cand = n_active + 1
        choice = n_cand - 1
        if best == -np.inf:
            choice = min(int(u[t] * n_cand), n_cand - 1)
        else:
            acc = 0.0
            for i in range(n_cand):
                logw[i] = np.exp(logw[i] - best)
                acc += logw[i]
            target = u[t] * acc
            run = 0.0
            for i in range(n_cand):
                run += logw[i]
                if target < run and logw[i] > 0.0:
                    choice = i
                    break

        if choice == n_active:
            n_free -= 1
            lab = free[n_free]
            active[n_active] = lab
            pos[lab] = n_active
            n_active += 1
        else:
            lab = active[choice]
        labels[site] = lab
        sizes[lab] += 1
        codes[lab] |= bit
        trace[t] = n_active

        if t >= burn_in and (t - burn_in + 1) % thin == 0 and k_out < n_keep:
            relabel[:] = -1
            nxt = 0
            for j in range(D):
                if relabel[labels[j]] < 0:
                    relabel[labels[j]] = nxt
                    nxt += 1
                kept[k_out, j] = relabel[labels[j]]
            k_out += 1
    return labels, kept, trace


def _gibbs_lazy(labels0, lv_lookup, sites, u, burn_in, thin, n_keep):
    """Python mirror of the kernel; ``lv_lookup(codes)`` returns block values for bitmasks."""
    D = labels0.shape[0]
    labels = labels0.copy()
    codes = np.zeros(D, np.int64)
    for j in range(D):
        codes[labels[j]] |= 1 << j
    active = [lab for lab in range(D) if codes[lab]]
    free = [lab for lab in range(D - 1, -1, -1) if not codes[lab]]
    kept = np.empty((n_keep, D), np.int64)
    trace = np.empty(len(sites), np.int64)
    k_out = 0
    for t, site in enumerate(sites):
        site = int(site)
        bit = 1 << site
        old = labels[site]
        codes[old] &= ~bit
        if codes[old] == 0:
            i = active.index(old)
            active[i] = active[-1]
            active.pop()
            free.append(old)
        blocks = [int(codes[b]) for b in active]
        vals = lv_lookup([c | bit for c in blocks] + blocks + [bit])
        n = len(blocks)
        logw = np.empty(n + 1)
        for i in range(n):
            grown = vals[i]
            logw[i] = -np.inf if grown == -np.inf else grown - vals[n + i]
        logw[n] = vals[2 * n]
        best = logw.max()
        if best == -np.inf:
            choice = min(int(u[t] * (n + 1)), n)
        else:
            w = np.exp(logw - best)
            run = np.cumsum(w)
            hits = np.flatnonzero((u[t] * run[-1] < run) & (w > 0))
            choice = int(hits[0]) if hits.size else n
        if choice == n:
            lab = free.pop()
            active.append(lab)
        else:
            lab = active[choice]
        labels[site] = lab
        codes[lab] |= bit
        trace[t] = len(active)
        if t >= burn_in and (t - burn_in + 1) % thin == 0 and k_out < n_keep:
            kept[k_out] = canonicalize(labels).assignment
            k_out += 1
    return labels, kept, trace


class _LazyBlockCache:
    def __init__(self, model: MaxStableModel, z: np.ndarray):
        self.model = model
        self.z = z
        self.cache: dict[int, float] = {}

    def __call__(self, codes):
        miss = sorted({c for c in codes if c not in self.cache})
        if miss:
            vals = self.model.log_neg_V_blocks(self.z[None, :], _bits(miss, self.z.size))
            self.cache.update(zip(miss, vals))
        return [self.cache[c] for c in codes]


def subset_table(model: MaxStableModel, z) -> np.ndarray:
    """``log(-V_tau(z))`` for every bitmask ``tau`` (entry 0 unused)."""
    z = np.asarray(z, dtype=float).ravel()
    D = z.size
    codes = np.arange(1, 2**D)
    table = np.empty(2**D)
    table[0] = 0.0
    table[1:] = model.log_neg_V_blocks(z[None, :], _bits(codes, D))
    return table


def initial_labels(model: MaxStableModel, init: str, rng: np.random.Generator) -> np.ndarray:
    D = model.dim
    if init == "singletons":
        return np.arange(D, dtype=np.int64)
    if init == "one_block":
        return np.zeros(D, dtype=np.int64)
    if init == "unconditional":
        from .simulate import sample_with_partitions

        _, parts = sample_with_partitions(model, 1, rng)
        return np.asarray(parts[0].assignment, dtype=np.int64)
    raise ValueError(f"unknown init {init!r}")


def gibbs_run(model: MaxStableModel, z, theta=None, config: GibbsConfig | None = None,
              rng: np.random.Generator | None = None, init_labels=None,
              engine: str = "auto") -> GibbsChain:
    """Run one chain targeting the partition distribution given ``z``.

    Parameters
    ----------
    model : MaxStableModel
    z : (D,) array
    theta : array_like, optional
        Parameters to condition on; defaults to the model's own.
    config : GibbsConfig
    rng : numpy Generator
    init_labels : (D,) int array, optional
        Overrides ``config.init`` (used for warm starts).
    engine : {"auto", "kernel", "python"}
        ``python`` forces the lazy-cache mirror (for testing).
    """
    config = config or GibbsConfig()
    rng = rng if rng is not None else np.random.default_rng()
    if theta is not None:
        model = model.with_params(theta)
    z = np.asarray(z, dtype=float).ravel()
    if z.size != model.dim or not np.all(z > 0):
        raise ValueError("z must be a positive vector of the model's dimension")
    D = model.dim
    burn, thin = config.resolve(D)
    if init_labels is None:
        labels0 = initial_labels(model, config.init, rng)
    else:
        labels0 = np.asarray(canonicalize(init_labels).assignment, dtype=np.int64)
    total = burn + config.n_keep * thin
    sites = rng.integers(D, size=total)
    u = rng.random(total)

    table = None
    by_size = False
    if engine != "python":
        table = model.additive_block_table(z)
        if table is not None:
            by_size = True
            # additive tables drop per-coordinate terms that cancel in the weights
        elif D <= TABLE_MAX_DIM:
            table = subset_table(model, z)
    if table is not None and engine != "python":
        labels, kept, trace = _gibbs_kernel(labels0, np.asarray(table, float), by_size,
                                            sites, u, burn, thin, config.n_keep)
    else:
        labels, kept, trace = _gibbs_lazy(labels0, _LazyBlockCache(model, z), sites, u,
                                          burn, thin, config.n_keep)
    return GibbsChain(canonicalize(labels), kept, trace)
