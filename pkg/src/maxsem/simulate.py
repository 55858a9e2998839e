"""Exact simulation of max-stable vectors and their partitions.

Logistic vectors come from a positive-stable frailty.  Any model with a
tilted spectral sampler (both families here) can be simulated exactly with
the extremal-functions algorithm, which also reports which Poisson atom
attains each coordinate and hence the partition.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import BrownResnickModel, LogisticModel, MaxStableModel
from .partition import Partition, canonicalize


@dataclass(frozen=True)
class SiteSet:
    """Distinct observation locations, one row per site."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coords, dtype=float))
        object.__setattr__(self, "coords", c)
        if c.shape[0] < 1:
            raise ValueError("need at least one site")
        if np.unique(c, axis=0).shape[0] != c.shape[0]:
            raise ValueError("sites must be pairwise distinct")

    def __len__(self) -> int:
        return self.coords.shape[0]


def random_sites(dim: int, rng: np.random.Generator, extent=(0.0, 1.0), ndim: int = 2) -> SiteSet:
    """``dim`` iid uniform points in ``[lo, hi]^ndim``, redrawn on collision."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    lo, hi = extent
    while True:
        pts = rng.uniform(lo, hi, size=(dim, ndim))
        if np.unique(pts, axis=0).shape[0] == dim:
            return SiteSet(pts)


@dataclass
class Dataset:
    """``M x D`` matrix of observations on unit Fréchet margins with optional metadata."""

    values: np.ndarray
    sites: np.ndarray | None = None
    truth: dict | None = None
    partitions: list[Partition] | None = None
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError("dataset needs at least one replicate and one coordinate")
        if not np.all(v > 0):
            raise ValueError("all values must be strictly positive")
        self.values = v

    @property
    def n_replicates(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path) -> Path:
        """Write values (17 significant digits) plus a sidecar ``.json`` with metadata; returns ``path``."""
        path = Path(path)
        M, D = self.values.shape
        header = ",".join(["replicate"] + [f"site_{j + 1}" for j in range(D)])
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for m in range(M):
                fh.write(",".join([str(m)] + ["%.17g" % v for v in self.values[m]]) + "\n")
        meta = {
            "sites": None if self.sites is None else np.asarray(self.sites).tolist(),
            "truth": self.truth,
            "seed": self.seed,
            "partitions": None if self.partitions is None else [str(p) for p in self.partitions],
        }
        meta.update(self.extra)
        side = path.with_suffix(".json")
        side.write_text(json.dumps(meta, indent=2))
        return path

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        path = Path(path)
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        values = raw[:, 1:]
        side = path.with_suffix(".json")
        meta = json.loads(side.read_text()) if side.exists() else {}
        sites = meta.pop("sites", None)
        parts = meta.pop("partitions", None)
        return cls(values,
                   sites=None if sites is None else np.asarray(sites, float),
                   truth=meta.pop("truth", None),
                   partitions=None if parts is None else [Partition.from_string(p) for p in parts],
                   seed=meta.pop("seed", None),
                   extra=meta)


def sample_positive_stable(theta: float, rng: np.random.Generator, size=None):
    """Positive stable variates with Laplace transform ``exp(-t**theta)`` (Kanter's representation)."""
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    if theta == 1.0:
        return 1.0 if size is None else np.ones(size)
    u = rng.uniform(0.0, np.pi, size=size)
    e = rng.exponential(size=size)
    a = np.sin(theta * u) / np.sin(u) ** (1.0 / theta)
    b = (np.sin((1.0 - theta) * u) / e) ** ((1.0 - theta) / theta)
    return a * b


def sample_logistic(dim: int, theta: float, n: int, rng: np.random.Generator) -> Dataset:
    """Logistic vectors via ``Z_j = (S / E_j)^theta`` with positive stable ``S``."""
    s = sample_positive_stable(theta, rng, size=(n, 1))
    e = rng.exponential(size=(n, dim))
    z = (s / e) ** theta
    return Dataset(z, truth={"family": "logistic", "theta": theta})


def extremal_functions(model: MaxStableModel, n: int, rng: np.random.Generator):
    """Exact samples by the extremal-functions algorithm, vectorized over replicates.

    Returns
    -------
    values : (n, D) array
    owners : (n, D) int array
        Identifier of the Poisson atom attaining each coordinate.
    """
    D = model.dim
    Z = np.zeros((n, D))
    owner = np.full((n, D), -1, dtype=np.int64)
    next_id = np.zeros(n, dtype=np.int64)
    for j in range(D):
        arrival = rng.exponential(size=n)
        active = np.flatnonzero(1.0 / arrival > Z[:, j])
        while active.size:
            zeta = 1.0 / arrival[active]
            cand = zeta[:, None] * model.sample_tilted(j, rng, size=active.size)
            ok = np.all(cand[:, :j] < Z[active, :j], axis=1)
            rows = active[ok]
            if rows.size:
                c = cand[ok]
                upd = c > Z[rows]
                Z[rows] = np.where(upd, c, Z[rows])
                owner[rows] = np.where(upd, next_id[rows, None], owner[rows])
                next_id[rows] += 1
            arrival[active] += rng.exponential(size=active.size)
            still = 1.0 / arrival[active] > Z[active, j]
            active = active[still]
    return Z, owner


def sample_with_partitions(model: MaxStableModel, n: int, rng: np.random.Generator):
    """Values and true partitions from :func:`extremal_functions`."""
    z, owners = extremal_functions(model, n, rng)
    return z, [canonicalize(row) for row in owners]


def sample_logistic_spectral(dim: int, theta: float, n: int, rng: np.random.Generator,
                             with_partition: bool = False) -> Dataset:
    """Logistic vectors from the Fréchet spectral construction (independent check of the frailty path)."""
    model = LogisticModel(dim, theta)
    z, parts = sample_with_partitions(model, n, rng)
    return Dataset(z, truth={"family": "logistic", "theta": theta},
                   partitions=parts if with_partition else None)


def sample_brown_resnick(sites, range_: float, smoothness: float, n: int,
                         rng: np.random.Generator, with_partition: bool = False) -> Dataset:
    """Exact Brown-Resnick samples at ``sites`` with variogram ``(h / range_)**smoothness``."""
    coords = sites.coords if isinstance(sites, SiteSet) else np.asarray(sites, float)
    model = BrownResnickModel(coords, range_, smoothness)
    z, parts = sample_with_partitions(model, n, rng)
    return Dataset(z, sites=model.sites,
                   truth={"family": "brown_resnick", "range": range_, "smoothness": smoothness},
                   partitions=parts if with_partition else None)


def sample_model(model: MaxStableModel, n: int, rng: np.random.Generator,
                 with_partition: bool = False) -> Dataset:
    """Dispatch to the fastest exact sampler for the model's family."""
    if isinstance(model, LogisticModel) and not with_partition:
        return sample_logistic(model.dim, model.theta, n, rng)
    z, parts = sample_with_partitions(model, n, rng)
    truth = {"family": model.family, "params": model.params.tolist()}
    sites = getattr(model, "sites", None)
    return Dataset(z, sites=sites, truth=truth, partitions=parts if with_partition else None)
