"""Executable checks of the compatibility structure, stationarity and atom statistics.

Every check returns a :class:`CheckReport`.  Residuals are scale-relative
where the compared quantities have a natural magnitude (energies, B-actions):
``|a - b| / max(1, |a|, |b|)``; measure and semigroup residuals are absolute.
"""
from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import forms
from .forms import FormOperator, lift, project
from .paintbox import sample_gem_batch, sample_mn_urn, sample_paintbox_points
from .partition import StickyParam, enumerate_partitions, eppf
from .spectral_levy import LevySymbol, apply_semigroup_1d, grid_generator

__all__ = [
    "CheckReport",
    "MomentQuery",
    "moment_oracle",
    "DEFAULT_BATTERY",
    "check_form_identities",
    "check_intertwining",
    "check_tensor_limit",
    "RelaxationCurve",
    "relaxation_curve",
    "check_relaxation",
    "make_nu0",
    "MomentSuite",
    "mc_moment_suite",
    "atomicity_suite",
    "atomicity_ordering",
    "TOL_ALGEBRAIC",
    "TOL_ITERATIVE",
]

TOL_ALGEBRAIC = 1e-10
TOL_ITERATIVE = 1e-8
Z_LIMIT = 3.0


@dataclass
class CheckReport:
    name: str
    residuals: dict[str, float]
    tolerance: float
    metadata: dict = field(default_factory=dict)
    overrides: dict[str, float] = field(default_factory=dict)

    def tolerance_for(self, key: str) -> float:
        return self.overrides.get(key, self.tolerance)

    @property
    def passed(self) -> bool:
        # NaN never passes
        return all(v <= self.tolerance_for(k) for k, v in self.residuals.items())

    def failures(self) -> list[str]:
        return [k for k, v in self.residuals.items() if not v <= self.tolerance_for(k)]

    def to_dict(self, include_runtime: bool = True) -> dict:
        meta = dict(self.metadata)
        if not include_runtime:
            meta.pop("runtime", None)
        return {
            "name": self.name,
            "passed": self.passed,
            "tolerance": self.tolerance,
            "overrides": dict(self.overrides),
            "residuals": {k: _json_float(v) for k, v in self.residuals.items()},
            "metadata": meta,
        }

    def to_json(self, include_runtime: bool = True) -> str:
        return json.dumps(self.to_dict(include_runtime), indent=2, sort_keys=True)

    def to_text(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"[{status}] {self.name}"]
        width = max((len(k) for k in self.residuals), default=0)
        for k, v in self.residuals.items():
            mark = "ok" if v <= self.tolerance_for(k) else "!!"
            lines.append(f"    {k:<{width}}  {v:11.3e}  <= {self.tolerance_for(k):.1e}  {mark}")
        return "\n".join(lines)


def _json_float(v: float):
    v = float(v)
    if math.isfinite(v):
        return v
    return str(v)


def _rel(a, b) -> float:
    a, b = float(a), float(b)
    return abs(a - b) / max(1.0, abs(a), abs(b))


def _rel_vec(a, b) -> float:
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(a)), np.max(np.abs(b))))


def _meta(n, p, symbol, L, seed, **extra):
    out = {"n": n, "L": L, "tau": p.tau, "seed": seed}
    if symbol is not None:
        out["symbol"] = symbol.describe()
    out.update(extra)
    return out


@dataclass(frozen=True)
class MomentQuery:
    k: tuple[int, ...]
    K: int = 8

    def __post_init__(self):
        k = tuple(int(v) for v in self.k)
        if not k:
            raise ValueError("moment query needs at least one frequency")
        if any(abs(v) > self.K for v in k):
            raise ValueError(f"frequencies must satisfy |k_j| <= {self.K}, got {k}")
        object.__setattr__(self, "k", k)

    @property
    def n(self) -> int:
        return len(self.k)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """prod_j exp(2 pi i k_j x_j) on the first n columns of x."""
        return np.exp(2j * np.pi * (x[:, : self.n] @ np.array(self.k, dtype=float)))


def moment_oracle(q: MomentQuery, p: StickyParam) -> complex:
    """Exact integral of prod_j exp(2 pi i k_j x_j) against m_n.

    Under lambda_pi the coordinates in a block coincide and blocks are
    independent uniforms, so a partition contributes p_pi exactly when every
    block has zero frequency sum.
    """
    total = 0.0
    for pi in enumerate_partitions(q.n):
        if all(sum(q.k[i - 1] for i in b) == 0 for b in pi.blocks):
            total += eppf(pi.sizes, p)
    return complex(total)


DEFAULT_BATTERY: tuple[MomentQuery, ...] = tuple(
    MomentQuery(k)
    for k in [
        (1,), (2,),
        (1, -1), (2, -2), (1, 1), (2, -1), (0, 1),
        (1, 1, -2), (2, -1, -1), (1, -1, 0), (1, 0, -1), (0, 2, -2),
        (1, -2, 1), (1, -1, 1), (2, -2, 1), (0, 0, 0),
    ]
)


def _pairs(rng, shape_hi, shape_lo):
    """Random test functions plus the mandatory constant ones."""
    yield rng.standard_normal(shape_hi), rng.standard_normal(shape_lo)
    yield rng.standard_normal(shape_hi), np.ones(shape_lo)
    yield np.ones(shape_hi), rng.standard_normal(shape_lo)


def check_form_identities(n: int, p: StickyParam, symbol: LevySymbol, L: int, seed: int = 0,
                          tol: float = TOL_ALGEBRAIC) -> CheckReport:
    """Algebraic identity battery between levels n and n+1."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    gen = grid_generator(symbol, L)
    lo = FormOperator(n, p, gen)
    hi = FormOperator(n + 1, p, gen)
    res: dict[str, float] = {}

    def put(key, value):
        res[key] = max(res.get(key, 0.0), float(value))

    mass = hi.mass
    put("measure_total", abs(mass.sum() - 1.0))
    put("measure_two_routes", np.max(np.abs(mass - forms.mass_by_kernel(n + 1, p, L))))
    put("measure_rotation", np.max(np.abs(mass - np.roll(mass, 1, axis=tuple(range(n + 1))))))
    put("constants_killed", np.max(np.abs(hi.apply_B(np.ones(hi.shape)))))
    transpositions = list(itertools.combinations(range(n + 1), 2))
    for i, j in transpositions:
        put("measure_permutation", np.max(np.abs(mass - np.swapaxes(mass, i, j))))

    for f, g in _pairs(rng, hi.shape, lo.shape):
        g2 = rng.standard_normal(hi.shape)
        Bf = hi.apply_B(f)
        put("two_route_assembly", _rel_vec(Bf, forms.apply_B_recursive(n + 1, p, gen, f)))
        put("symmetry", _rel(np.sum(f * hi.apply_B(g2)), np.sum(g2 * Bf)))
        for i, j in transpositions:
            fs, gs = np.swapaxes(f, i, j), np.swapaxes(g2, i, j)
            put("exchangeability", _rel(np.sum(fs * hi.apply_B(gs)), np.sum(f * hi.apply_B(g2))))
        pf = project(f, p)
        put("projection_identity", _rel(np.sum(lift(g) * Bf), np.sum(g * lo.apply_B(pf))))
        e_full = np.sum(f * Bf)
        rest = f - lift(pf)
        put("pythagoras", _rel(e_full, lo.energy(pf) + hi.energy(rest)))
        put("lift_isometry", _rel(hi.energy(lift(g)), lo.energy(g)))
        put("projection_idempotent", np.max(np.abs(project(lift(pf), p) - pf)))
        put("projection_orthogonal", _rel(hi.inner(rest, lift(g)), 0.0))
        # E_n (.) E against a lifted function integrates E_n over the fresh coordinate
        joint = np.sum(f * forms.joint_form_action(lo, lift(g)))
        put("joint_form_marginal", _rel(joint, np.mean([lo.energy(f[..., y], g) for y in range(L)])))

    # product form of two particles, the k = 1 case of the marginal identity
    f = rng.standard_normal((L, L))
    h = rng.standard_normal(L)
    lhs = np.sum(f * forms.product_form_action(gen, lift(h)))
    rhs = np.mean([np.sum(f[:, y] * forms.product_form_action(gen, h)) for y in range(L)])
    put("mixed_form_marginal", _rel(lhs, rhs))

    gap = forms.spectral_gap(hi, seed=seed)
    # the chain on (Z_L)^{n+1} must have a nonnegative spectrum with a simple zero
    put("kernel_defect", 0.0 if gap > 1e-8 else 1.0)
    meta = _meta(n, p, symbol, L, seed, levels=[n, n + 1], spectral_gap=gap,
                 residual_scale="relative for energies and B-actions, absolute for measures",
                 runtime=time.perf_counter() - start)
    return CheckReport(f"form_identities n={n}->{n + 1}", res, tol, meta)


def check_intertwining(n: int, p: StickyParam, symbol: LevySymbol, L: int,
                       t_list=(0.05, 0.2, 1.0), alpha_list=(0.5, 2.0), seed: int = 0,
                       tol: float = TOL_ITERATIVE, solver_tol: float = 1e-12) -> CheckReport:
    """Sup-norm defects of P_t(g x 1) = (P_t g) x 1 and G_a(g x 1) = (G_a g) x 1."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    gen = grid_generator(symbol, L)
    lo = FormOperator(n, p, gen)
    hi = FormOperator(n + 1, p, gen)
    tests = [rng.standard_normal(lo.shape), np.ones(lo.shape)]
    res: dict[str, float] = {}
    for t in t_list:
        r = 0.0
        for g in tests:
            a = forms.apply_semigroup(hi, lift(g), t, solver_tol)
            b = lift(forms.apply_semigroup(lo, g, t, solver_tol))
            r = max(r, float(np.max(np.abs(a - b))))
        res[f"semigroup t={t:g}"] = r
    for alpha in alpha_list:
        r = 0.0
        for g in tests:
            a = forms.resolvent(hi, lift(g), alpha, min(solver_tol, 1e-13))
            b = lift(forms.resolvent(lo, g, alpha, min(solver_tol, 1e-13)))
            r = max(r, float(np.max(np.abs(a - b))))
        res[f"resolvent alpha={alpha:g}"] = r
    meta = _meta(n, p, symbol, L, seed, t_list=list(t_list), alpha_list=list(alpha_list),
                 runtime=time.perf_counter() - start)
    return CheckReport(f"intertwining n={n}->{n + 1}", res, tol, meta)


def check_tensor_limit(n: int, symbol: LevySymbol, L: int, t_list=(0.05, 0.2, 1.0), seed: int = 0,
                       tol: float = TOL_ITERATIVE) -> CheckReport:
    """tau = 0: P^(n)_t acts on g_1 x ... x g_n as P_t g_1 x ... x P_t g_n."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    gen = grid_generator(symbol, L)
    op = FormOperator(n, StickyParam(0.0), gen)
    factors = [rng.standard_normal(L) for _ in range(n)]
    res = {}
    for t in t_list:
        f = factors[0]
        g = apply_semigroup_1d(gen, factors[0], t)
        for h in factors[1:]:
            f = np.multiply.outer(f, h)
            g = np.multiply.outer(g, apply_semigroup_1d(gen, h, t))
        res[f"tensor t={t:g}"] = float(np.max(np.abs(forms.apply_semigroup(op, f, t, 1e-12) - g)))
    meta = _meta(n, StickyParam(0.0), symbol, L, seed, runtime=time.perf_counter() - start)
    return CheckReport(f"tensor_limit n={n}", res, tol, meta)


def make_nu0(law, L: int) -> np.ndarray:
    """Initial law on Z_L: 'uniform', 'point' / 'point:j', 'cosine', or an explicit vector."""
    if not isinstance(law, str):
        nu = np.asarray(law, dtype=float)
        if nu.shape != (L,) or np.any(nu < 0) or abs(nu.sum() - 1) > 1e-12:
            raise ValueError("nu0 must be a probability vector of length L")
        return nu
    name, _, arg = law.partition(":")
    if name == "uniform":
        return np.full(L, 1.0 / L)
    if name == "point":
        nu = np.zeros(L)
        nu[int(arg or 0) % L] = 1.0
        return nu
    if name == "cosine":
        return (1.0 + 0.5 * np.cos(2 * np.pi * np.arange(L) / L)) / L
    raise ValueError(f"unknown initial law {law!r}")


@dataclass
class RelaxationCurve:
    t: np.ndarray
    distance: np.ndarray
    fitted_rate: float
    lambda2: float
    fit_points: int

    def to_csv(self) -> str:
        lines = ["t,distance,fitted_rate,lambda2"]
        for t, d in zip(self.t, self.distance):
            lines.append(f"{t:.17g},{d:.17g},{self.fitted_rate:.17g},{self.lambda2:.17g}")
        return "\n".join(lines) + "\n"


def relaxation_curve(n: int, p: StickyParam, symbol: LevySymbol, L: int, nu0="point",
                     t_grid=None, tol: float = 1e-14, fit_window=(1e-11, 1e-4),
                     seed: int = 0) -> RelaxationCurve:
    """Total-variation distance from nu0^{(x)n} P_t to m_n along a time grid.

    The decay rate is a least-squares slope of log d(t) over the points whose
    distance lies inside ``fit_window``: after the fast modes have died out
    and above the floor set by the semigroup tolerance.
    """
    gen = grid_generator(symbol, L)
    op = FormOperator(n, p, gen)
    nu = make_nu0(nu0, L)
    lam2 = forms.spectral_gap(op, seed=seed)
    if t_grid is None:
        t_grid = np.linspace(0.0, 50.0 / lam2, 101)
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) < 0) or t_grid[0] < 0:
        raise ValueError("t_grid must be nondecreasing and nonnegative")
    cur = nu
    for _ in range(n - 1):
        cur = np.multiply.outer(cur, nu)
    dist = []
    prev = 0.0
    for t in t_grid:
        if t > prev:
            cur = forms.apply_semigroup_adjoint(op, cur, t - prev, tol)
            prev = t
        dist.append(0.5 * float(np.abs(cur - op.mass).sum()))
    dist = np.array(dist)
    lo, hi = fit_window
    sel = (dist >= lo) & (dist <= hi)
    if sel.sum() >= 2:
        slope = np.polyfit(t_grid[sel], np.log(dist[sel]), 1)[0]
        rate = -float(slope)
    else:
        rate = math.nan
    return RelaxationCurve(t_grid, dist, rate, lam2, int(sel.sum()))


def check_relaxation(n: int, p: StickyParam, symbol: LevySymbol, L: int, nu0="point",
                     final_tol: float = 1e-6, rate_tol: float = 0.05, seed: int = 0):
    """Distance at t = 50/lambda_2 and agreement of the fitted rate with lambda_2.

    Returns ``(report, curve)``.  If the curve never enters the fit window
    (e.g. a stationary start) only the distance criterion is applied.
    """
    start = time.perf_counter()
    curve = relaxation_curve(n, p, symbol, L, nu0)
    res = {"final_distance": float(curve.distance[-1])}
    over = {"final_distance": final_tol}
    if curve.fit_points >= 2:
        res["rate_rel_gap"] = abs(curve.fitted_rate - curve.lambda2) / curve.lambda2
        over["rate_rel_gap"] = rate_tol
    meta = _meta(n, p, symbol, L, seed, nu0=nu0 if isinstance(nu0, str) else "vector",
                 lambda2=curve.lambda2, fitted_rate=_json_float(curve.fitted_rate),
                 fit_points=curve.fit_points, t_final=float(curve.t[-1]),
                 runtime=time.perf_counter() - start)
    return CheckReport(f"relaxation n={n}", res, final_tol, meta, over), curve


def _route_estimate(values: np.ndarray):
    re = values.real
    est = float(re.mean())
    se = float(re.std(ddof=1) / math.sqrt(len(re))) if len(re) > 1 else math.inf
    return est, se


def _z(est, se, oracle):
    diff = abs(est - oracle)
    if se == 0:
        return 0.0 if diff <= 1e-12 else math.inf
    return diff / se


@dataclass
class MomentSuite:
    entries: list[CheckReport]
    summary: CheckReport

    @property
    def passed(self) -> bool:
        return self.summary.passed

    def to_csv(self) -> str:
        lines = ["statistic,estimate,std_error,oracle,z_score"]
        for e in self.entries:
            m = e.metadata
            lines.append(f"{e.name},{m['estimate']:.17g},{m['std_error']:.17g},"
                         f"{m['oracle']:.17g},{e.residuals['abs_z']:.17g}")
        return "\n".join(lines) + "\n"


def mc_moment_suite(n: int, p: StickyParam, samples: int = 100_000, seed: int = 0,
                    battery=None, trunc_eps: float = 1e-10, min_fraction: float = 0.95) -> MomentSuite:
    """Urn and paintbox Monte Carlo of Fourier moments of m_n against the oracle.

    Each entry passes at |z| <= 3.  The suite passes when at least
    ``min_fraction`` of the entries do; with 3 sigma per entry this allows
    roughly one stray entry in a battery of 30 at the expected false
    rejection rate.  The paintbox route is skipped at tau = 0.
    """
    if not 1 <= n <= 3:
        raise ValueError(f"moment suite supports 1 <= n <= 3, got {n}")
    if samples < 10_000:
        raise ValueError(f"need at least 10^4 samples, got {samples}")
    start = time.perf_counter()
    battery = DEFAULT_BATTERY if battery is None else tuple(battery)
    battery = [q for q in battery if q.n <= n]
    urn_rng, box_rng = np.random.default_rng(seed).spawn(2)
    routes = {"urn": sample_mn_urn(n, p, urn_rng, size=samples)}
    if p.tau > 0:
        routes["paintbox"] = sample_paintbox_points(n, p, trunc_eps, box_rng, samples)
    entries = []
    for q in battery:
        oracle = moment_oracle(q, p).real
        for route, x in routes.items():
            est, se = _route_estimate(q.evaluate(x))
            entries.append(CheckReport(
                f"{route} k={q.k}", {"abs_z": _z(est, se, oracle)}, Z_LIMIT,
                {"route": route, "k": list(q.k), "estimate": est, "std_error": se, "oracle": oracle},
            ))
    outside = sum(not e.passed for e in entries) / len(entries)
    summary = CheckReport(
        f"moments n={n}", {"fraction_outside_3se": outside}, 1.0 - min_fraction,
        _meta(n, p, None, None, seed, samples=samples, entries=len(entries),
              routes=list(routes), trunc_eps=trunc_eps,
              allowance=f"pass iff at least {min_fraction:.0%} of entries have |z| <= {Z_LIMIT:g}",
              runtime=time.perf_counter() - start),
    )
    return MomentSuite(entries, summary)


def atomicity_suite(p: StickyParam, samples: int = 100_000, seed: int = 0,
                    trunc_eps: float = 1e-10) -> CheckReport:
    """Mean sum of squared weights against tau, plus atom-count summary and residual audit."""
    if not 0.0 < p.tau <= 1.0:
        raise ValueError("atomicity suite needs tau in (0, 1]")
    start = time.perf_counter()
    w, residual = sample_gem_batch(p, trunc_eps, np.random.default_rng(seed), samples)
    sum_sq = np.sum(w**2, axis=1)
    est = float(sum_sq.mean())
    se = float(sum_sq.std(ddof=1) / math.sqrt(samples))
    ranked = -np.sort(-w, axis=1)
    counts = 1 + np.argmax(np.cumsum(ranked, axis=1) >= 0.99 - 1e-15, axis=1)
    res = {
        "abs_z_sum_sq": _z(est, se, p.tau),
        "mass_balance": float(np.max(np.abs(w.sum(axis=1) + residual - 1.0))),
        "residual_over_eps": float(residual.max() / trunc_eps),
    }
    over = {"mass_balance": 1e-12, "residual_over_eps": 1.0}
    meta = _meta(None, p, None, None, seed, samples=samples, trunc_eps=trunc_eps,
                 mean_sum_sq=est, std_error=se,
                 num_atoms_99={"mean": float(counts.mean()), "median": float(np.median(counts)),
                               "q90": float(np.quantile(counts, 0.9)), "max": int(counts.max())},
                 runtime=time.perf_counter() - start)
    return CheckReport(f"atomicity tau={p.tau:g}", res, Z_LIMIT, meta, over)


def atomicity_ordering(taus=(0.25, 0.5, 0.9), samples: int = 100_000, seed: int = 0) -> CheckReport:
    """Mean num_atoms_99 should decrease as tau grows."""
    start = time.perf_counter()
    means = [atomicity_suite(StickyParam(t), samples, seed).metadata["num_atoms_99"]["mean"]
             for t in sorted(taus)]
    violations = sum(b >= a for a, b in zip(means, means[1:]))
    meta = {"taus": sorted(taus), "mean_num_atoms_99": means, "samples": samples, "seed": seed,
            "runtime": time.perf_counter() - start}
    return CheckReport("atomicity ordering", {"monotonicity_violations": float(violations)}, 0.0, meta)
