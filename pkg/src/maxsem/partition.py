"""Set partitions of ``{0, ..., D-1}`` stored as restricted-growth strings.

A partition is identified with its canonical label sequence: ``a[0] == 0`` and
``a[j] <= 1 + max(a[:j])``.  Two partitions are equal exactly when their
canonical sequences are equal, which makes :class:`Partition` hashable and
cheap to count in empirical frequency tables.

Indices are 0-based throughout the package.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

import numpy as np

MAX_ENUM_DIM = 12


@dataclass(frozen=True, slots=True)
class Partition:
    """A set partition in canonical restricted-growth form."""

    assignment: tuple[int, ...]

    def __post_init__(self):
        a = self.assignment
        if len(a) == 0:
            raise ValueError("a partition needs at least one element")
        top = -1
        for lab in a:
            if lab < 0 or lab > top + 1:
                raise ValueError(f"not a restricted-growth string: {a}")
            top = max(top, lab)

    @classmethod
    def _trusted(cls, assignment: tuple[int, ...]) -> "Partition":
        # skips validation; callers guarantee canonical form
        obj = object.__new__(cls)
        object.__setattr__(obj, "assignment", assignment)
        return obj

    @classmethod
    def from_blocks(cls, blocks: Iterable[Iterable[int]], dim: int | None = None) -> "Partition":
        blocks = [sorted(set(b)) for b in blocks]
        if dim is None:
            dim = sum(len(b) for b in blocks)
        labels = [-1] * dim
        for k, block in enumerate(blocks):
            if not block:
                raise ValueError("empty block")
            for j in block:
                if not 0 <= j < dim or labels[j] != -1:
                    raise ValueError(f"blocks do not partition range({dim})")
                labels[j] = k
        if -1 in labels:
            raise ValueError(f"blocks do not cover range({dim})")
        return canonicalize(labels)

    @classmethod
    def from_string(cls, text: str) -> "Partition":
        return cls(tuple(int(t) for t in text.split(",")))

    @classmethod
    def singletons(cls, dim: int) -> "Partition":
        return cls._trusted(tuple(range(dim)))

    @classmethod
    def one_block(cls, dim: int) -> "Partition":
        return cls._trusted((0,) * dim)

    @property
    def dim(self) -> int:
        return len(self.assignment)

    @property
    def size(self) -> int:
        """Number of blocks."""
        return max(self.assignment) + 1

    @property
    def blocks(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in range(self.size)]
        for j, lab in enumerate(self.assignment):
            out[lab].append(j)
        return tuple(tuple(b) for b in out)

    @property
    def masks(self) -> tuple[int, ...]:
        """Blocks as integer bitmasks (bit ``j`` set when ``j`` is in the block)."""
        out = [0] * self.size
        for j, lab in enumerate(self.assignment):
            out[lab] |= 1 << j
        return tuple(out)

    def block_matrix(self) -> np.ndarray:
        """Boolean ``(size, dim)`` indicator matrix of the blocks."""
        a = np.asarray(self.assignment)
        return a[None, :] == np.arange(self.size)[:, None]

    def __str__(self) -> str:
        return ",".join(map(str, self.assignment))

    def __len__(self) -> int:
        return self.size


def canonicalize(labels: Sequence[int]) -> Partition:
    """Relabel an arbitrary label sequence into restricted-growth form.

    >>> canonicalize([5, 5, 2]).assignment
    (0, 0, 1)
    """
    if len(labels) == 0:
        raise ValueError("cannot canonicalize an empty label sequence")
    seen: dict[int, int] = {}
    out = []
    for lab in labels:
        lab = int(lab)
        if lab not in seen:
            seen[lab] = len(seen)
        out.append(seen[lab])
    return Partition._trusted(tuple(out))


def canonical_rows(labels: np.ndarray) -> np.ndarray:
    """Canonicalize every row of an integer label matrix."""
    labels = np.atleast_2d(labels)
    out = np.empty_like(labels)
    for i, row in enumerate(labels):
        out[i] = canonicalize(row).assignment
    return out


def bell_number(dim: int) -> int:
    """Bell number via the Bell triangle."""
    if dim < 0:
        raise ValueError("dim must be nonnegative")
    row = [1]
    for _ in range(dim):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
    return row[0]


@dataclass(frozen=True)
class PartitionUniverse:
    """All partitions of ``range(dim)``."""

    dim: int

    @property
    def count(self) -> int:
        return bell_number(self.dim)

    def __iter__(self) -> Iterator[Partition]:
        return enumerate_partitions(self.dim)

    def __len__(self) -> int:
        return self.count


@lru_cache(maxsize=None)
def _tails(length: int, used: int) -> tuple[tuple[int, ...], ...]:
    # all continuations of a restricted-growth string whose prefix already uses labels 0..used-1
    if length == 0:
        return ((),)
    out = []
    for lab in range(used + 1):
        nxt = max(used, lab + 1)
        for rest in _tails(length - 1, nxt):
            out.append((lab,) + rest)
    return tuple(out)


def iter_assignments(dim: int) -> Iterator[tuple[int, ...]]:
    """Yield canonical label tuples of every partition of ``range(dim)`` in lexicographic order."""
    if not 1 <= dim <= MAX_ENUM_DIM:
        raise ValueError(f"enumeration supports 1 <= dim <= {MAX_ENUM_DIM}, got {dim}")
    head = (dim + 1) // 2
    for rest in _tails(head - 1, 1):
        prefix = (0,) + rest
        used = max(prefix) + 1
        for tail in _tails(dim - head, used):
            yield prefix + tail


def enumerate_partitions(dim: int) -> Iterator[Partition]:
    """Lazily enumerate all ``Bell(dim)`` partitions of ``range(dim)``."""
    make = Partition._trusted
    for a in iter_assignments(dim):
        yield make(a)


def gibbs_moves(partition: Partition, site: int) -> list[Partition]:
    """Partitions that agree with ``partition`` once ``site`` is removed.

    Candidates place ``site`` into each block of the reduced partition (ordered
    by smallest member) and finally into a new singleton block.  The current
    partition is always among them.
    """
    a = partition.assignment
    if not 0 <= site < len(a):
        raise IndexError(f"site {site} out of range for dimension {len(a)}")
    order: list[int] = []
    for j, lab in enumerate(a):
        if j != site and lab not in order:
            order.append(lab)
    labels = list(a)
    out = []
    for lab in order:
        labels[site] = lab
        out.append(canonicalize(labels))
    labels[site] = -1
    out.append(canonicalize(labels))
    return out
