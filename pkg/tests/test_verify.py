import itertools
import json
import math

import numpy as np
import pytest

from stickyflow import verify
from stickyflow.forms import FormOperator, assemble_mn
from stickyflow.partition import StickyParam
from stickyflow.spectral_levy import LevySymbol, grid_generator
from stickyflow.verify import (
    DEFAULT_BATTERY,
    CheckReport,
    MomentQuery,
    atomicity_suite,
    check_form_identities,
    check_intertwining,
    check_relaxation,
    mc_moment_suite,
    moment_oracle,
    relaxation_curve,
)

BROWNIAN = LevySymbol.brownian(1.0)
STABLE = LevySymbol.stable(1.5)


def grid_moment(k, p, L):
    """Integral of prod exp(2 pi i k_j x_j / L) against the grid m_n; exact once L > max |block sum|."""
    n = len(k)
    m = assemble_mn(n, p, L).mass
    x = np.indices((L,) * n)
    phase = np.tensordot(np.array(k, dtype=float), x, axes=1) / L
    return np.sum(m * np.exp(2j * np.pi * phase))


def test_oracle_examples():
    p = StickyParam(0.5)
    assert moment_oracle(MomentQuery((1, -1)), p) == pytest.approx(0.5, abs=1e-15)
    assert moment_oracle(MomentQuery((0, 0, 0)), p) == pytest.approx(1.0, abs=1e-15)
    assert moment_oracle(MomentQuery((0,)), p) == 1.0
    assert moment_oracle(MomentQuery((1, 1, -2)), p) == pytest.approx(1 / 3, abs=1e-15)
    assert isinstance(moment_oracle(MomentQuery((1,)), p), complex)


@pytest.mark.parametrize("tau", [0.0, 0.3, 0.5, 0.8, 1.0])
def test_oracle_against_grid_integration(tau):
    p = StickyParam(tau)
    for n, L in ((1, 8), (2, 8), (3, 8)):
        for k in itertools.product(range(-2, 3), repeat=n):
            ref = grid_moment(k, p, L)
            assert abs(moment_oracle(MomentQuery(k), p) - ref) < 1e-13


def test_oracle_against_grid_integration_n4():
    p = StickyParam(0.4)
    rng = np.random.default_rng(0)
    for _ in range(10):
        k = tuple(int(v) for v in rng.integers(-2, 3, size=4))
        assert abs(moment_oracle(MomentQuery(k), p) - grid_moment(k, p, 16)) < 1e-13


def test_oracle_symmetries():
    for tau in (0.25, 0.5, 0.75):
        p = StickyParam(tau)
        for q in DEFAULT_BATTERY:
            ref = moment_oracle(q, p)
            assert ref.imag == 0.0
            assert moment_oracle(MomentQuery(tuple(-v for v in q.k)), p) == ref
            for perm in itertools.permutations(q.k):
                assert abs(moment_oracle(MomentQuery(perm), p) - ref) < 1e-15


def test_battery_shape():
    assert len(DEFAULT_BATTERY) >= 12
    assert all(q.n <= 3 and max(abs(v) for v in q.k) <= 2 for q in DEFAULT_BATTERY)
    with pytest.raises(ValueError):
        MomentQuery((9,))
    with pytest.raises(ValueError):
        MomentQuery(())
    assert MomentQuery((9,), K=10).n == 1


def test_check_report():
    r = CheckReport("x", {"a": 1e-12, "b": 0.5}, 1e-10, {"runtime": 1.0}, {"b": 1.0})
    assert r.passed and r.failures() == []
    r2 = CheckReport("y", {"a": math.nan}, 1e-10)
    assert not r2.passed and r2.failures() == ["a"]
    d = r.to_dict(include_runtime=False)
    assert "runtime" not in d["metadata"] and d["overrides"] == {"b": 1.0}
    assert json.loads(r2.to_json())["residuals"]["a"] == "nan"
    text = CheckReport("z", {"a": 2.0}, 1.0).to_text()
    assert text.startswith("[FAIL] z") and "!!" in text


@pytest.mark.parametrize("sym", [BROWNIAN, STABLE], ids=["brownian", "stable"])
@pytest.mark.parametrize("tau", [0.0, 0.5])
def test_identity_battery(sym, tau):
    rep = check_form_identities(1, StickyParam(tau), sym, 8, seed=1)
    assert rep.passed, rep.to_text()
    assert all(math.isfinite(v) for v in rep.residuals.values())
    assert rep.metadata["spectral_gap"] > 0


def test_identity_battery_detects_breakage(monkeypatch):
    from stickyflow import forms

    original = forms.apply_B_recursive

    def broken(n, p, gen, g):
        return 1.01 * original(n, p, gen, g)

    monkeypatch.setattr(forms, "apply_B_recursive", broken)
    rep = check_form_identities(1, StickyParam(0.5), BROWNIAN, 8)
    assert not rep.passed and "two_route_assembly" in rep.failures()


@pytest.mark.parametrize("n", [1, 2])
def test_pythagoras_tau0(n):
    rep = check_form_identities(n, StickyParam(0.0), BROWNIAN, 8, seed=2)
    assert rep.residuals["pythagoras"] < 1e-12


def test_exchangeability_exact_for_symmetric_f():
    op = FormOperator(3, StickyParam(0.5), grid_generator(STABLE, 8))
    rng = np.random.default_rng(3)
    # f(x) = F(sorted x) is symmetric bit for bit
    table = rng.standard_normal(op.shape)
    f = table[tuple(np.sort(np.indices(op.shape), axis=0))]
    g = rng.standard_normal(op.shape)
    Bg = op.apply_B(g)
    for i, j in itertools.combinations(range(3), 2):
        fs = np.swapaxes(f, i, j)
        assert np.array_equal(fs, f)
        assert verify._rel(np.sum(fs * op.apply_B(fs)), np.sum(f * op.apply_B(f))) == 0.0
        # B commutes with coordinate swaps up to rounding for any g
        gs = np.swapaxes(g, i, j)
        assert np.max(np.abs(op.apply_B(gs) - np.swapaxes(Bg, i, j))) < 1e-14 * np.max(np.abs(Bg))


def test_intertwining_examples():
    rep = check_intertwining(1, StickyParam(0.5), BROWNIAN, 16, t_list=(0.2,), alpha_list=(1.0,))
    assert rep.passed and rep.residuals["semigroup t=0.2"] < 1e-8
    rep = check_intertwining(1, StickyParam(0.5), BROWNIAN, 16, t_list=(0.0,), alpha_list=())
    assert rep.residuals["semigroup t=0"] < 1e-14
    rep = check_intertwining(1, StickyParam(0.0), STABLE, 16, t_list=(0.2,), alpha_list=(2.0,))
    assert rep.passed


def test_relaxation_uniform_n1_is_zero():
    curve = relaxation_curve(1, StickyParam(0.5), BROWNIAN, 16, nu0="uniform")
    assert np.max(curve.distance) < 1e-12
    rep, _ = check_relaxation(1, StickyParam(0.5), BROWNIAN, 16, nu0="uniform")
    assert rep.passed and "rate_rel_gap" not in rep.residuals
    assert curve.to_csv().splitlines()[0] == "t,distance,fitted_rate,lambda2"


def test_make_nu0():
    assert verify.make_nu0("point:3", 8)[3] == 1.0
    assert verify.make_nu0("cosine", 8).sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        verify.make_nu0("gaussian", 8)
    with pytest.raises(ValueError):
        verify.make_nu0([0.5, 0.5], 8)


def test_moment_suite_limits():
    res = mc_moment_suite(3, StickyParam(0.0), 20_000, seed=4)
    assert res.passed
    assert all(e.metadata["route"] == "urn" for e in res.entries)
    res = mc_moment_suite(3, StickyParam(1.0), 20_000, seed=4)
    e = [e for e in res.entries if tuple(e.metadata["k"]) == (1, 1, -2)]
    assert all(abs(x.metadata["estimate"] - 1.0) < 1e-12 for x in e)
    assert res.passed
    header = res.to_csv().splitlines()[0]
    assert header == "statistic,estimate,std_error,oracle,z_score"
    with pytest.raises(ValueError):
        mc_moment_suite(4, StickyParam(0.5), 20_000)


def test_atomicity_limits():
    rep = atomicity_suite(StickyParam(1.0), 10_000, seed=5)
    assert rep.passed and rep.metadata["mean_sum_sq"] == 1.0 and rep.metadata["std_error"] == 0.0
    with pytest.raises(ValueError):
        atomicity_suite(StickyParam(0.0), 10_000)


def _data(report):
    return json.dumps(report.to_dict(include_runtime=False), sort_keys=True)


def test_determinism():
    p = StickyParam(0.5)
    runs = [
        lambda: check_form_identities(1, p, STABLE, 8, seed=7),
        lambda: check_intertwining(1, p, BROWNIAN, 8, seed=7),
        lambda: check_relaxation(2, p, BROWNIAN, 8, seed=7)[0],
        lambda: mc_moment_suite(2, p, 20_000, seed=7).summary,
        lambda: atomicity_suite(p, 20_000, seed=7),
    ]
    for run in runs:
        assert _data(run()) == _data(run())
    a = mc_moment_suite(2, p, 20_000, seed=7).to_csv()
    assert a == mc_moment_suite(2, p, 20_000, seed=7).to_csv()
    assert a != mc_moment_suite(2, p, 20_000, seed=8).to_csv()
