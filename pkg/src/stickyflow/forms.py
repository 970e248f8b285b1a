"""Grid measures m_n and sticky Dirichlet forms E_n on (Z_L)^n.

Functions on the grid are dense arrays of shape (L,) * n.  Bilinear forms are
represented by their matrix B_n in the counting inner product,
E_n(f, g) = <f, B_n g> = sum_x f(x) (B_n g)(x), and the reference measure by
its mass array M_n.  The generator is A_n = -M_n^{-1} B_n.

Two independent routes build B_n:

* superposition over strata, B_n = sum_pi p_pi R_pi^T B^(|pi|) R_pi, where
  R_pi restricts a function to the diagonal stratum of pi and B^(k) is the
  product form of k independent particles;
* the recursion in the number of particles, which adds particle n+1 either
  as a fresh independent particle or glued to one of the first n.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse.linalg as spla
from scipy.stats import poisson

from .partition import SetPartition, StickyParam, enumerate_partitions, eppf
from .spectral_levy import GridGenerator

__all__ = [
    "GridMeasure",
    "StratumMap",
    "FormOperator",
    "DegenerateStickinessError",
    "ConvergenceError",
    "assemble_mn",
    "mass_by_kernel",
    "product_form_action",
    "apply_B",
    "apply_B_recursive",
    "joint_form_action",
    "apply_semigroup",
    "apply_semigroup_adjoint",
    "resolvent",
    "project",
    "lift",
    "spectral_gap",
    "save_array",
    "load_array",
    "DEFAULT_N_MAX",
    "MAX_ENTRIES",
]

DEFAULT_N_MAX = 4
MAX_ENTRIES = 1 << 22


class DegenerateStickinessError(ValueError):
    """tau = 1: m_n lives on the full diagonal and L^2(m_n) collapses to L^2(lambda)."""


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


def _check_size(n: int, L: int, n_max: int):
    if n < 1 or n > n_max:
        raise ValueError(f"n must lie in [1, {n_max}], got {n}")
    if L < 4:
        raise ValueError(f"L must be at least 4, got {L}")
    if L**n > MAX_ENTRIES:
        raise ValueError(f"grid (Z_{L})^{n} has {L**n} points, above the limit {MAX_ENTRIES}")


@dataclass(frozen=True, eq=False)
class GridMeasure:
    n: int
    L: int
    mass: np.ndarray

    def total(self) -> float:
        return float(self.mass.sum())

    def integrate(self, f: np.ndarray) -> float:
        return float(np.sum(self.mass * f))

    def diagonal_mass(self, i: int = 0, j: int = 1) -> float:
        """Mass of {x_i = x_j}."""
        return float(np.trace(self.mass, axis1=i, axis2=j).sum())


class StratumMap:
    """Embedding phi_pi: (Z_L)^k -> (Z_L)^n of the stratum of a partition.

    ``index`` holds the flat (row-major) position of phi_pi(y) for every
    y in (Z_L)^k, itself laid out row-major.
    """

    def __init__(self, partition: SetPartition, L: int):
        self.partition = partition
        self.L = L
        self.n = partition.n
        self.k = len(partition)
        strides = L ** np.arange(self.n - 1, -1, -1)
        block_strides = np.array([strides[[i - 1 for i in b]].sum() for b in partition.blocks])
        grids = np.indices((L,) * self.k).reshape(self.k, -1)
        self.index = block_strides @ grids

    def embed(self, y) -> tuple[int, ...]:
        """phi_pi(y) as an n-tuple of grid points."""
        out = [0] * self.n
        for j, b in enumerate(self.partition.blocks):
            for i in b:
                out[i - 1] = int(y[j])
        return tuple(out)

    def pullback(self, f: np.ndarray) -> np.ndarray:
        """R_pi f = f o phi_pi, an array of shape (L,) * k."""
        return f.reshape(-1)[self.index].reshape((self.L,) * self.k)

    def push(self, h: np.ndarray) -> np.ndarray:
        """R_pi^T h: h placed on the stratum, zero elsewhere."""
        out = np.zeros(self.L**self.n)
        out[self.index] = h.reshape(-1)
        return out.reshape((self.L,) * self.n)


def _strata(n: int, p: StickyParam, L: int):
    out = []
    for pi in enumerate_partitions(n):
        # sorted sizes: one rounding of p per size multiset, so relabelled strata get equal weight
        w = eppf(sorted(pi.sizes, reverse=True), p)
        if w > 0:
            out.append((w, StratumMap(pi, L)))
    return out


def assemble_mn(n: int, p: StickyParam, L: int, n_max: int = DEFAULT_N_MAX) -> GridMeasure:
    """m_n = sum_pi p_pi lambda_pi, lambda_pi the image of uniform^|pi| under phi_pi."""
    _check_size(n, L, n_max)
    return GridMeasure(n, L, _mass_from_strata(_strata(n, p, L), n, L))


def _tie_codes(n: int, L: int) -> np.ndarray:
    """Code of the tie pattern of every grid point, as its restricted growth string in base n."""
    x = np.indices((L,) * n).reshape(n, -1)
    labels = np.zeros_like(x)
    count = np.ones(x.shape[1], dtype=x.dtype)
    for j in range(1, n):
        lab = count.copy()
        for i in range(j - 1, -1, -1):
            lab = np.where(x[i] == x[j], labels[i], lab)
        labels[j] = lab
        count += lab == count
    return (n ** np.arange(n)) @ labels


def _mass_from_strata(strata, n: int, L: int) -> np.ndarray:
    """Point masses of sum_pi p_pi lambda_pi.

    The mass at x only depends on the tie pattern of x: it is the sum of
    p_pi / L^|pi| over the pi finer than that pattern.  Each pattern value is
    a correctly rounded fsum, so the array is exactly permutation invariant.
    """
    codes = _tie_codes(n, L)
    mass = np.zeros(L**n)
    for kappa in enumerate_partitions(n):
        block_of = kappa.labels()
        terms = [w / L**st.k for w, st in strata
                 if all(len({block_of[i - 1] for i in b}) == 1 for b in st.partition.blocks)]
        code = sum(lab * n**j for j, lab in enumerate(block_of))
        mass[codes == code] = math.fsum(terms)
    return mass.reshape((L,) * n)


def _kernel_weights(x_shape_n: int, L: int, p: StickyParam) -> np.ndarray:
    """Array over (Z_L)^{n+1} of the one-step kernel pi_n(x_bar, y)."""
    n = x_shape_n
    counts = np.zeros((L,) * (n + 1))
    eye = np.eye(L)
    for i in range(n):
        shape = [1] * (n + 1)
        shape[i] = shape[n] = L
        counts = counts + eye.reshape(shape)
    return ((1.0 - p.tau) / L + p.tau * counts) / p.denominator(n)


def mass_by_kernel(n: int, p: StickyParam, L: int) -> np.ndarray:
    """m_n built as m_1 = lambda, m_{k+1} = m_k x pi_k (no partitions involved)."""
    mass = np.full(L, 1.0 / L)
    for m in range(1, n):
        mass = mass[..., None] * _kernel_weights(m, L, p)
    return mass


def product_form_action(gen: GridGenerator, h: np.ndarray) -> np.ndarray:
    """B^(k) h for the form of k independent particles on L^2(lambda^k)."""
    k = h.ndim
    out = np.zeros_like(h, dtype=float)
    for axis in range(k):
        out -= gen.apply(h, axis)
    return out / gen.L**k


class FormOperator:
    """Matrix-free B_n and M_n for the sticky form at level n.

    tau = 1 is rejected: the measure charges only the full diagonal, so the
    n-point space is just L^2(lambda) of a single particle.
    """

    def __init__(self, n: int, p: StickyParam, gen: GridGenerator, n_max: int = DEFAULT_N_MAX):
        if p.tau == 1.0:
            raise DegenerateStickinessError(
                "tau = 1 is not supported by the grid forms: m_n charges only the full "
                "diagonal and the n-point motion degenerates to a single particle"
            )
        _check_size(n, gen.L, n_max)
        self.n = n
        self.p = p
        self.gen = gen
        self.L = gen.L
        self.shape = (gen.L,) * n
        self.strata = _strata(n, p, gen.L)
        self.measure = GridMeasure(n, gen.L, _mass_from_strata(self.strata, n, gen.L))

    @property
    def mass(self) -> np.ndarray:
        return self.measure.mass

    def _check(self, f):
        f = np.asarray(f, dtype=float)
        if f.shape != self.shape:
            raise ValueError(f"expected an array of shape {self.shape}, got {f.shape}")
        return f

    def apply_B(self, f: np.ndarray) -> np.ndarray:
        f = self._check(f)
        out = np.zeros(self.L**self.n)
        for w, st in self.strata:
            out[st.index] += w * product_form_action(self.gen, st.pullback(f)).reshape(-1)
        return out.reshape(self.shape)

    def apply_M(self, f: np.ndarray) -> np.ndarray:
        return self.mass * self._check(f)

    def apply_generator(self, f: np.ndarray) -> np.ndarray:
        return -self.apply_B(f) / self.mass

    def energy(self, f: np.ndarray, g: np.ndarray | None = None) -> float:
        f = self._check(f)
        g = f if g is None else self._check(g)
        return float(np.sum(f * self.apply_B(g)))

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        """<f, g> in L^2(m_n)."""
        return float(np.sum(self.mass * f * g))

    @cached_property
    def diag_B(self) -> np.ndarray:
        q0 = self.gen.exit_rate
        out = np.zeros(self.L**self.n)
        for w, st in self.strata:
            out[st.index] += w * st.k * q0 / self.L**st.k
        return out.reshape(self.shape)

    @cached_property
    def max_exit_rate(self) -> float:
        return float(np.max(self.diag_B / self.mass))


def apply_B(op: FormOperator, f: np.ndarray) -> np.ndarray:
    return op.apply_B(f)


def joint_form_action(op: FormOperator, g: np.ndarray) -> np.ndarray:
    """Matrix of E_n (.) E on L^2(m_n x lambda): the level-n motion plus an independent particle."""
    g = np.asarray(g, dtype=float)
    if g.shape != op.shape + (op.L,):
        raise ValueError(f"expected an array of shape {op.shape + (op.L,)}, got {g.shape}")
    first = np.stack([op.apply_B(g[..., y]) for y in range(op.L)], axis=-1) / op.L
    return first - op.mass[..., None] * op.gen.apply(g, op.n) / op.L


def _rec_B(level: int, g: np.ndarray, p: StickyParam, gen: GridGenerator, masses: list[np.ndarray]):
    """B_level applied to the leading ``level`` axes of g; trailing axes are batch."""
    L = gen.L
    if level == 1:
        return -gen.apply(g, 0) / L
    m = level - 1
    batch = g.ndim - level
    # fresh particle: (B_m (x) lambda + m_m (x) B_1) g
    fresh = _rec_B(m, g, p, gen, masses) / L
    mass_m = masses[m - 1].reshape(masses[m - 1].shape + (1,) * (1 + batch))
    fresh = fresh - mass_m * gen.apply(g, m) / L
    # glued particle: sum_i S_i^T B_m S_i g with (S_i g)(x) = g(x, x_i)
    eye = np.eye(L)
    glued = np.zeros_like(g)
    for i in range(m):
        sub = np.moveaxis(np.diagonal(g, axis1=i, axis2=m), -1, i)
        bs = _rec_B(m, sub, p, gen, masses)
        shape = [1] * g.ndim
        shape[i] = shape[m] = L
        glued += np.expand_dims(bs, m) * eye.reshape(shape)
    return ((1.0 - p.tau) * fresh + p.tau * glued) / p.denominator(m)


def apply_B_recursive(n: int, p: StickyParam, gen: GridGenerator, g: np.ndarray) -> np.ndarray:
    """B_n g built from B_1 by repeatedly adding one particle.

    Level m+1 is ((1-tau) (E_m (.) E) + tau sum_i E_m(g^i)) / ((1-tau) + m tau),
    where E_m (.) E is the form of the level-m motion run alongside an
    independent particle and g^i substitutes x_{m+1} := x_i.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (gen.L,) * n:
        raise ValueError(f"expected an array of shape {(gen.L,) * n}, got {g.shape}")
    masses = [mass_by_kernel(m, p, gen.L) for m in range(1, n)]
    return _rec_B(n, g, p, gen, masses)


def lift(g: np.ndarray) -> np.ndarray:
    """g (x) 1: a function of n coordinates viewed as one of n+1."""
    g = np.asarray(g, dtype=float)
    L = g.shape[0]
    return np.broadcast_to(g[..., None], g.shape + (L,)).copy()


def project(f: np.ndarray, p: StickyParam) -> np.ndarray:
    """Conditional expectation pi_n: L^2(m_{n+1}) -> L^2(m_n).

    (pi_n f)(x) = ((1-tau) mean_y f(x, y) + tau sum_i f(x, x_i)) / ((1-tau) + n tau).
    """
    f = np.asarray(f, dtype=float)
    n = f.ndim - 1
    if n < 1 or len(set(f.shape)) != 1:
        raise ValueError(f"expected an array of shape (L,)*(n+1) with n >= 1, got {f.shape}")
    avg = f.mean(axis=n)
    glued = np.zeros(f.shape[:-1])
    for i in range(n):
        glued += np.moveaxis(np.diagonal(f, axis1=i, axis2=n), -1, i)
    return ((1.0 - p.tau) * avg + p.tau * glued) / p.denominator(n)


def _poisson_weights(mu: float, tol: float) -> np.ndarray:
    kmax = int(poisson.isf(tol, mu)) + 1
    while poisson.sf(kmax, mu) > tol:
        kmax += 1
    return poisson.pmf(np.arange(kmax + 1), mu)


def apply_semigroup(op: FormOperator, f: np.ndarray, t: float, tol: float = 1e-10) -> np.ndarray:
    """exp(t A_n) f by uniformization.

    With rate Lam >= max exit rate, K = I + A_n / Lam is a stochastic matrix
    and exp(t A_n) = sum_j Poisson(Lam t; j) K^j.  The series is cut where the
    Poisson tail drops below tol, so the sup-norm error is at most
    tol * ||f - f[0]||_inf.
    """
    f = op._check(f)
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if t == 0:
        return f.copy()
    c = f.flat[0]
    h = f - c
    lam = op.max_exit_rate
    weights = _poisson_weights(lam * t, tol)
    acc = weights[0] * h
    for w in weights[1:]:
        h = h + op.apply_generator(h) / lam
        acc += w * h
    return c + acc


def apply_semigroup_adjoint(op: FormOperator, nu: np.ndarray, t: float, tol: float = 1e-10) -> np.ndarray:
    """nu P_t for a measure nu on the grid, using M_n P_t = P_t^T M_n."""
    nu = op._check(nu)
    return op.mass * apply_semigroup(op, nu / op.mass, t, tol)


def resolvent(op: FormOperator, g: np.ndarray, alpha: float, tol: float = 1e-13,
              maxiter: int | None = None) -> np.ndarray:
    """G_alpha g: solves (alpha M_n + B_n) u = M_n g by Jacobi-preconditioned CG."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    g = op._check(g)
    c = g.flat[0]
    h = g - c
    N = op.L**op.n
    diag = (alpha * op.mass + op.diag_B).reshape(-1)

    def matvec(v):
        v = v.reshape(op.shape)
        return (alpha * op.mass * v + op.apply_B(v)).reshape(-1)

    A = spla.LinearOperator((N, N), matvec=matvec, dtype=float)
    P = spla.LinearOperator((N, N), matvec=lambda v: v / diag, dtype=float)
    b = (op.mass * h).reshape(-1)
    if not np.any(b):
        return np.full(op.shape, c / alpha)
    maxiter = maxiter if maxiter is not None else 20 * N
    u, info = spla.cg(A, b, rtol=tol, atol=0.0, maxiter=maxiter, M=P)
    res = float(np.linalg.norm(b - A @ u) / np.linalg.norm(b))
    if info != 0:
        raise ConvergenceError(f"CG did not converge in {maxiter} iterations", res)
    return c / alpha + u.reshape(op.shape)


def spectral_gap(op: FormOperator, seed: int = 0) -> float:
    """Smallest nonzero eigenvalue of -A_n.

    Lanczos on the symmetrized operator S = M^{-1/2} B M^{-1/2} with the
    known null vector M^{1/2} 1 shifted out of the way.  A nonpositive return
    value means S has a negative eigenvalue or a degenerate kernel.
    """
    N = op.L**op.n
    sq = np.sqrt(op.mass).reshape(-1)
    v = sq / np.linalg.norm(sq)
    shift = op.max_exit_rate * op.n + 1.0

    def matvec(x):
        x = np.ravel(x)
        y = op.apply_B((x / sq).reshape(op.shape)).reshape(-1) / sq
        return y + shift * v * (v @ x)

    S = spla.LinearOperator((N, N), matvec=matvec, dtype=float)
    if N <= 400:
        # small grids: the dense spectrum is cheap and exact
        dense = np.column_stack([matvec(e) for e in np.eye(N)])
        return float(np.linalg.eigvalsh(0.5 * (dense + dense.T))[0])
    v0 = np.random.default_rng(seed).standard_normal(N)
    vals = spla.eigsh(S, k=1, which="SA", v0=v0, tol=1e-12, ncv=min(N, 64),
                      maxiter=100 * N, return_eigenvectors=False)
    return float(vals[0])


def save_array(path: str, f: np.ndarray, header: dict) -> None:
    """Write ``path`` (little-endian float64, row-major) and ``path + '.json'``.

    The caller is responsible for atomic replacement; see the CLI.
    """
    f = np.ascontiguousarray(f, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(f.tobytes(order="C"))
    meta = dict(header)
    meta["shape"] = list(f.shape)
    with open(path + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_array(path: str) -> tuple[np.ndarray, dict]:
    with open(path + ".json") as fh:
        header = json.load(fh)
    data = np.fromfile(path, dtype="<f8")
    n, L = int(header["n"]), int(header["L"])
    if data.size != L**n:
        raise ValueError(f"{path}: {data.size} values, header says (Z_{L})^{n} = {L**n}")
    return data.reshape((L,) * n).astype(float), header
