"""Stationary random measure mu = sum_i P_i delta_{X_i} and samplers for m_n.

The circle is R/Z; all positions live in [0, 1).  Weights are generated by
stick-breaking with Beta(1, theta) sticks, which gives the Dirichlet-process
weight multiset in size-biased order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .partition import StickyParam

__all__ = [
    "WeightSequence",
    "AtomicMeasure",
    "AtomStatistics",
    "sample_gem",
    "sample_gem_batch",
    "sample_mu",
    "sample_mn_urn",
    "sample_paintbox_points",
    "atom_statistics",
]


@dataclass(frozen=True, eq=False)
class WeightSequence:
    weights: np.ndarray
    residual: float = 0.0
    order_tag: str = "size-biased"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1:
            raise ValueError("weights must be one-dimensional")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        if self.residual < 0:
            raise ValueError("residual must be nonnegative")
        if abs(w.sum() + self.residual - 1.0) > 1e-12:
            raise ValueError(f"weights plus residual must sum to 1, got {w.sum() + self.residual}")
        if self.order_tag not in ("size-biased", "ranked"):
            raise ValueError(f"unknown order tag {self.order_tag!r}")
        object.__setattr__(self, "weights", w)

    def ranked(self) -> "WeightSequence":
        return WeightSequence(np.sort(self.weights)[::-1].copy(), self.residual, "ranked")

    def __len__(self) -> int:
        return len(self.weights)


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    weights: WeightSequence
    atoms: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.shape != self.weights.weights.shape:
            raise ValueError("atoms and weights must have the same length")
        if np.any((atoms < 0) | (atoms >= 1)):
            raise ValueError("atoms must lie in [0, 1)")
        object.__setattr__(self, "atoms", atoms)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.weights.tolist(),
            "atoms": self.atoms.tolist(),
            "residual": self.weights.residual,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "AtomicMeasure":
        d = json.loads(text)
        return cls(WeightSequence(np.array(d["weights"]), float(d["residual"])), np.array(d["atoms"]))


def _check_gem_args(p: StickyParam, trunc_eps: float):
    if p.tau == 0.0:
        raise ValueError(
            "tau = 0 has no atomic stationary measure: the limit is Lebesgue measure itself"
        )
    if not 0.0 < trunc_eps < 1.0:
        raise ValueError(f"trunc_eps must lie in (0, 1), got {trunc_eps}")


def sample_gem(p: StickyParam, trunc_eps: float, rng: np.random.Generator) -> WeightSequence:
    """Stick-breaking weights, stopped once the unbroken remainder is below trunc_eps."""
    _check_gem_args(p, trunc_eps)
    if p.tau == 1.0:
        return WeightSequence(np.array([1.0]), 0.0)
    theta = p.theta
    weights = []
    residual = 1.0
    while residual >= trunc_eps:
        v = rng.beta(1.0, theta)
        w = v * residual
        if w > 0:
            weights.append(w)
        residual -= w
    return WeightSequence(np.array(weights), residual)


def sample_gem_batch(p: StickyParam, trunc_eps: float, rng: np.random.Generator, size: int,
                     with_atoms: bool = False):
    """Many independent stick-breaking sequences at once.

    Returns ``(weights, residual)`` with weights zero-padded to shape
    (size, K), plus an atom array of the same shape when ``with_atoms``.
    Stick j and atom j of every row are drawn from fixed columns of two
    separate child streams, so lowering ``trunc_eps`` only appends columns
    and leaves the earlier ones unchanged.
    """
    _check_gem_args(p, trunc_eps)
    stick_rng, atom_rng = rng.spawn(2)
    if p.tau == 1.0:
        w = np.ones((size, 1))
        res = np.zeros(size)
        if with_atoms:
            return w, res, atom_rng.random((size, 1))
        return w, res
    theta = p.theta
    residual = np.ones(size)
    cols, atom_cols = [], []
    while np.any(residual >= trunc_eps):
        active = residual >= trunc_eps
        v = stick_rng.beta(1.0, theta, size=size)
        col = np.where(active, v * residual, 0.0)
        residual = residual - col
        cols.append(col)
        if with_atoms:
            atom_cols.append(atom_rng.random(size))
    weights = np.stack(cols, axis=1)
    if with_atoms:
        return weights, residual, np.stack(atom_cols, axis=1)
    return weights, residual


def sample_mu(p: StickyParam, trunc_eps: float, rng: np.random.Generator) -> AtomicMeasure:
    weights = sample_gem(p, trunc_eps, rng)
    atoms = rng.random(len(weights))
    return AtomicMeasure(weights, atoms)


def sample_mn_urn(n: int, p: StickyParam, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw (x_1, ..., x_n) from m_n by the sequential urn.

    x_1 is uniform.  Given m coordinates, the next one is a fresh uniform
    with probability (1-tau)/((1-tau)+m tau), otherwise a copy of a
    uniformly chosen earlier coordinate (which is the same as picking an
    existing value with weight tau per occurrence).
    """
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    single = size is None
    size = 1 if single else size
    x = np.empty((size, n))
    x[:, 0] = rng.random(size)
    rows = np.arange(size)
    for m in range(1, n):
        fresh = rng.random(size)
        new = rng.random(size) < p.new_block_prob(m)
        donor = rng.integers(0, m, size=size)
        x[:, m] = np.where(new, fresh, x[rows, donor])
    return x[0] if single else x


def sample_paintbox_points(n: int, p: StickyParam, trunc_eps: float, rng: np.random.Generator,
                           size: int) -> np.ndarray:
    """For each of ``size`` independent draws of mu, sample n i.i.d. points from mu.

    Mass left in the truncation residual is sent to a fresh uniform point,
    the law of a draw from the unresolved dust of tiny atoms up to a bias
    of order trunc_eps.
    """
    weights_rng, pick_rng, dust_rng = rng.spawn(3)
    w, residual, atoms = sample_gem_batch(p, trunc_eps, weights_rng, size, with_atoms=True)
    cum = np.cumsum(w, axis=1)
    u = pick_rng.random((size, n))
    idx = np.empty((size, n), dtype=np.int64)
    for j in range(n):
        idx[:, j] = (cum < u[:, j : j + 1]).sum(axis=1)
    dust = dust_rng.random((size, n))
    k = w.shape[1]
    picked = np.take_along_axis(atoms, np.minimum(idx, k - 1), axis=1)
    return np.where(idx >= k, dust, picked)


@dataclass(frozen=True)
class AtomStatistics:
    num_atoms_99: int
    sum_sq: float
    max_weight: float


def atom_statistics(m: AtomicMeasure) -> AtomStatistics:
    ranked = m.weights.ranked().weights
    csum = np.cumsum(ranked)
    hits = np.nonzero(csum >= 0.99 - 1e-15)[0]
    k = int(hits[0]) + 1 if len(hits) else len(ranked)
    return AtomStatistics(k, float(np.sum(ranked**2)), float(ranked[0]))
