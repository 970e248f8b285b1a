"""Set partitions of [n], the one-parameter EPPF and the sequential seating sampler.

Partitions are stored canonically: each block sorted, blocks ordered by their
least element.  Elements are 1-based, matching the usual notation for [n].
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "StickyParam",
    "SetPartition",
    "eppf",
    "eppf_closed_form",
    "enumerate_partitions",
    "bell_number",
    "sample_crp",
    "sample_crp_labels",
    "restrict",
    "DEFAULT_N_MAX",
]

DEFAULT_N_MAX = 10


@dataclass(frozen=True)
class StickyParam:
    """Stickiness parameter tau in [0, 1].

    ``theta = (1 - tau) / tau`` is the concentration of the associated
    Dirichlet process; ``tau = 0`` maps to ``math.inf``.
    """

    tau: float

    def __post_init__(self):
        tau = float(self.tau)
        if not (0.0 <= tau <= 1.0) or math.isnan(tau):
            raise ValueError(f"tau must lie in [0, 1], got {self.tau!r}")
        object.__setattr__(self, "tau", tau)

    @property
    def theta(self) -> float:
        if self.tau == 0.0:
            return math.inf
        return (1.0 - self.tau) / self.tau

    def denominator(self, m: int) -> float:
        """Normalizer (1 - tau) + m tau of the seating step after m elements."""
        return (1.0 - self.tau) + m * self.tau

    def new_block_prob(self, m: int) -> float:
        """Probability that element m+1 opens a new block, given m seated elements."""
        if m == 0:
            return 1.0
        return (1.0 - self.tau) / self.denominator(m)


@dataclass(frozen=True)
class SetPartition:
    """A partition of {1, ..., n} in canonical form."""

    n: int
    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        n = int(self.n)
        if n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        blocks = [tuple(sorted(int(i) for i in b)) for b in self.blocks]
        if any(len(b) == 0 for b in blocks):
            raise ValueError("blocks must be nonempty")
        seen = [i for b in blocks for i in b]
        if len(seen) != len(set(seen)):
            raise ValueError("blocks must be pairwise disjoint")
        if sorted(seen) != list(range(1, n + 1)):
            raise ValueError(f"blocks must cover exactly {{1, ..., {n}}}")
        blocks.sort(key=lambda b: b[0])
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "blocks", tuple(blocks))

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "SetPartition":
        """Build from a block label per element (labels need not be canonical)."""
        groups: dict[int, list[int]] = {}
        for i, lab in enumerate(labels, start=1):
            groups.setdefault(int(lab), []).append(i)
        return cls(len(labels), tuple(tuple(g) for g in groups.values()))

    @classmethod
    def singletons(cls, n: int) -> "SetPartition":
        return cls(n, tuple((i,) for i in range(1, n + 1)))

    @classmethod
    def single_block(cls, n: int) -> "SetPartition":
        return cls(n, (tuple(range(1, n + 1)),))

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(b) for b in self.blocks)

    def labels(self) -> tuple[int, ...]:
        """Restricted growth string: 0-based block index of each element."""
        out = [0] * self.n
        for j, b in enumerate(self.blocks):
            for i in b:
                out[i - 1] = j
        return tuple(out)

    def to_list(self) -> list[list[int]]:
        return [list(b) for b in self.blocks]

    def to_json(self) -> str:
        return json.dumps(self.to_list())

    @classmethod
    def from_json(cls, text: str) -> "SetPartition":
        blocks = json.loads(text)
        n = sum(len(b) for b in blocks)
        return cls(n, tuple(tuple(b) for b in blocks))

    def __str__(self) -> str:
        return "{" + ",".join("{" + ",".join(map(str, b)) + "}" for b in self.blocks) + "}"


def _check_sizes(sizes: Iterable[int]) -> tuple[int, ...]:
    sizes = tuple(sizes)
    if not sizes:
        raise ValueError("sizes must be nonempty")
    for s in sizes:
        if int(s) != s or s <= 0:
            raise ValueError(f"block sizes must be positive integers, got {sizes}")
    return tuple(int(s) for s in sizes)


def eppf(sizes: Iterable[int], p: StickyParam) -> float:
    """EPPF p(n_1, ..., n_k) by sequential insertion.

    Blocks are filled one after another: the first element of each block
    contributes the new-singleton factor, every further element the factor
    for joining the last block.  Symmetry in the sizes is a property of the
    result, not something this routine relies on.
    """
    sizes = _check_sizes(sizes)
    tau = p.tau
    if tau == 0.0:
        return 1.0 if all(s == 1 for s in sizes) else 0.0
    if tau == 1.0:
        return 1.0 if len(sizes) == 1 else 0.0
    prob = 1.0
    m = 0
    for s in sizes:
        if m > 0:
            prob *= (1.0 - tau) / p.denominator(m)
        m += 1
        for current in range(1, s):
            prob *= current * tau / p.denominator(m)
            m += 1
    return prob


def eppf_closed_form(sizes: Iterable[int], p: StickyParam) -> float:
    """Product formula theta^k prod (n_j - 1)! / (theta)_n, rising factorial."""
    sizes = _check_sizes(sizes)
    if p.tau == 0.0:
        return 1.0 if all(s == 1 for s in sizes) else 0.0
    if p.tau == 1.0:
        return 1.0 if len(sizes) == 1 else 0.0
    theta = p.theta
    n = sum(sizes)
    num = theta ** len(sizes) * math.prod(math.factorial(s - 1) for s in sizes)
    den = math.prod(theta + i for i in range(n))
    return num / den


def bell_number(n: int) -> int:
    """Bell numbers via the Bell triangle."""
    row = [1]
    for _ in range(n - 1):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
    return row[-1] if n >= 1 else 1


def enumerate_partitions(n: int, n_max: int = DEFAULT_N_MAX) -> list[SetPartition]:
    """All partitions of [n], ordered lexicographically by restricted growth string."""
    if not 1 <= n <= n_max:
        raise ValueError(f"n must lie in [1, {n_max}], got {n}")
    out = []
    labels = [0] * n

    def rec(i: int, nblocks: int):
        if i == n:
            out.append(SetPartition.from_labels(labels))
            return
        for lab in range(nblocks + 1):
            labels[i] = lab
            rec(i + 1, max(nblocks, lab + 1))

    labels[0] = 0
    rec(1, 1)
    return out


def sample_crp(n: int, p: StickyParam, rng: np.random.Generator) -> SetPartition:
    """Seat n elements one at a time.

    After m elements, the next one opens a new block with probability
    (1-tau)/((1-tau)+m tau) and joins block B with probability
    |B| tau/((1-tau)+m tau).
    """
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if p.tau == 0.0:
        return SetPartition.singletons(n)
    if p.tau == 1.0:
        return SetPartition.single_block(n)
    blocks: list[list[int]] = [[1]]
    for m in range(1, n):
        u = rng.random() * p.denominator(m)
        for b in blocks:
            u -= len(b) * p.tau
            if u < 0:
                b.append(m + 1)
                break
        else:
            blocks.append([m + 1])
    return SetPartition(n, tuple(tuple(b) for b in blocks))


def sample_crp_labels(n: int, p: StickyParam, rng: np.random.Generator, size: int) -> np.ndarray:
    """Vectorized sampler returning canonical block labels, shape (size, n).

    Joining block B with probability proportional to |B| is realized by
    copying the label of a uniformly chosen earlier element.
    """
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    labels = np.zeros((size, n), dtype=np.int64)
    nblocks = np.ones(size, dtype=np.int64)
    rows = np.arange(size)
    for m in range(1, n):
        new = rng.random(size) < p.new_block_prob(m)
        donor = rng.integers(0, m, size=size)
        labels[:, m] = np.where(new, nblocks, labels[rows, donor])
        nblocks += new
    return labels


def restrict(partition: SetPartition, m: int) -> SetPartition:
    """Restriction of a partition of [n] to [m]."""
    if not 1 <= m <= partition.n:
        raise ValueError(f"m must lie in [1, {partition.n}], got {m}")
    blocks = tuple(tuple(i for i in b if i <= m) for b in partition.blocks)
    return SetPartition(m, tuple(b for b in blocks if b))
