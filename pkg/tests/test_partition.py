import itertools
import math
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from stickyflow.partition import (
    SetPartition,
    StickyParam,
    bell_number,
    enumerate_partitions,
    eppf,
    eppf_closed_form,
    restrict,
    sample_crp,
    sample_crp_labels,
)

TAUS = (0.0, 0.25, 0.5, 0.75, 1.0)


def brute_partitions(items):
    """Set partitions by inserting the last item everywhere (independent of RGS order)."""
    if not items:
        yield []
        return
    head, rest = items[-1], items[:-1]
    for part in brute_partitions(rest):
        for j in range(len(part)):
            yield part[:j] + [part[j] + [head]] + part[j + 1:]
        yield part + [[head]]


def seating_probability(partition, tau: Fraction) -> Fraction:
    """Exact probability of the seating sequence, element by element in natural order."""
    lab = partition.labels()
    counts: dict[int, int] = {}
    prob = Fraction(1)
    for m, b in enumerate(lab):
        if m > 0:
            den = (1 - tau) + m * tau
            prob *= (counts[b] * tau if b in counts else 1 - tau) / den
        counts[b] = counts.get(b, 0) + 1
    return prob


# --- value examples -----------------------------------------------------------

@pytest.mark.parametrize("sizes,tau,expected", [
    ((1,), 0.0, 1.0),
    ((1,), 0.37, 1.0),
    ((1,), 1.0, 1.0),
    ((1, 1), 0.3, 0.7),
    ((2,), 0.5, 0.5),
    ((2, 1), 0.5, 1 / 6),
    ((1, 1, 1), 0.5, 1 / 6),
    ((3,), 1.0, 1.0),
    ((3,), 0.5, 1 / 3),
])
def test_eppf_examples(sizes, tau, expected):
    p = StickyParam(tau)
    assert eppf(sizes, p) == pytest.approx(expected, abs=1e-15)
    assert eppf_closed_form(sizes, p) == pytest.approx(expected, abs=1e-15)


def test_closed_form_theta():
    # theta/(theta+1) with theta = 7/3
    assert eppf_closed_form((1, 1), StickyParam(0.3)) == pytest.approx((7 / 3) / (10 / 3), abs=1e-15)


def test_limits_are_exact():
    assert eppf((1, 1, 1), StickyParam(0.0)) == 1.0
    assert eppf((2, 1), StickyParam(0.0)) == 0.0
    assert eppf((3,), StickyParam(1.0)) == 1.0
    assert eppf((2, 1), StickyParam(1.0)) == 0.0


@pytest.mark.parametrize("bad", [-0.1, 1.5, float("nan")])
def test_tau_validation(bad):
    with pytest.raises(ValueError):
        StickyParam(bad)


def test_theta_sentinel():
    assert StickyParam(0.0).theta == math.inf
    assert StickyParam(1.0).theta == 0.0
    assert StickyParam(0.25).theta == pytest.approx(3.0)


@pytest.mark.parametrize("sizes", [(), (0, 1), (1.5,), (-1,)])
def test_eppf_rejects_bad_sizes(sizes):
    with pytest.raises(ValueError):
        eppf(sizes, StickyParam(0.5))


# --- SetPartition -------------------------------------------------------------

def test_canonical_representation():
    a = SetPartition(3, ((2,), (3, 1)))
    b = SetPartition(3, ((1, 3), (2,)))
    assert a == b and hash(a) == hash(b)
    assert a.blocks == ((1, 3), (2,))
    assert str(a) == "{{1,3},{2}}"
    assert SetPartition.from_labels([5, 2, 5]) == a


@pytest.mark.parametrize("n,blocks", [
    (3, ((1, 2), (2, 3))),
    (3, ((1,), (2,))),
    (2, ((1,), (), (2,))),
    (2, ((1, 2, 3),)),
])
def test_partition_validation(n, blocks):
    with pytest.raises(ValueError):
        SetPartition(n, blocks)


def test_json_roundtrip():
    part = SetPartition(4, ((4, 2), (1,), (3,)))
    assert part.to_json() == "[[1], [2, 4], [3]]"
    assert SetPartition.from_json(part.to_json()) == part


@given(st.lists(st.integers(0, 4), min_size=1, max_size=8))
def test_labels_roundtrip(labels):
    part = SetPartition.from_labels(labels)
    assert SetPartition.from_labels(part.labels()) == part
    # canonical labels form a restricted growth string
    lab = part.labels()
    assert lab[0] == 0
    assert all(lab[i] <= max(lab[:i]) + 1 for i in range(1, len(lab)))


# --- enumeration ---------------------------------------------------------------

@pytest.mark.parametrize("n,count", [(1, 1), (3, 5), (4, 15)])
def test_enumeration_counts(n, count):
    assert len(enumerate_partitions(n)) == count


def test_enumeration_matches_brute_force():
    for n in range(1, 8):
        ours = enumerate_partitions(n)
        brute = {SetPartition(n, tuple(map(tuple, b))) for b in brute_partitions(list(range(1, n + 1)))}
        assert len(ours) == len(set(ours)) == len(brute) == bell_number(n)
        assert set(ours) == brute
        # lexicographic in restricted growth strings
        assert [q.labels() for q in ours] == sorted(q.labels() for q in ours)


def test_bell_numbers():
    assert [bell_number(n) for n in range(1, 11)] == [1, 2, 5, 15, 52, 203, 877, 4140, 21147, 115975]


def test_enumeration_guard():
    with pytest.raises(ValueError):
        enumerate_partitions(11)
    with pytest.raises(ValueError):
        enumerate_partitions(0)
    assert len(enumerate_partitions(11, n_max=11)) == 678570


# --- EPPF properties ------------------------------------------------------------

@pytest.mark.parametrize("tau", TAUS)
def test_normalization(tau):
    p = StickyParam(tau)
    for n in range(1, 9):
        total = math.fsum(eppf(q.sizes, p) for q in enumerate_partitions(n))
        assert abs(total - 1.0) < 1e-12


def test_matches_exact_seating_oracle():
    for tau in (Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), Fraction(1, 3)):
        p = StickyParam(float(tau))
        for n in range(1, 7):
            for q in enumerate_partitions(n):
                assert eppf(q.sizes, p) == pytest.approx(float(seating_probability(q, tau)),
                                                         rel=1e-13, abs=1e-16)


def _size_vectors(n_max):
    for n in range(1, n_max + 1):
        for q in enumerate_partitions(n):
            yield q.sizes


@pytest.mark.parametrize("tau", TAUS)
def test_consistency_identity(tau):
    p = StickyParam(tau)
    for sizes in _size_vectors(7):
        rhs = eppf(sizes + (1,), p)
        for j in range(len(sizes)):
            bumped = list(sizes)
            bumped[j] += 1
            rhs += eppf(bumped, p)
        assert abs(eppf(sizes, p) - rhs) < 1e-12


@pytest.mark.parametrize("tau", TAUS)
def test_symmetry_exhaustive(tau):
    p = StickyParam(tau)
    for sizes in set(_size_vectors(7)):
        ref = eppf(sizes, p)
        for perm in set(itertools.permutations(sizes)):
            assert abs(eppf(perm, p) - ref) < 1e-15


@settings(max_examples=200)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=6), st.floats(0.0, 1.0), st.randoms())
def test_symmetry_property(sizes, tau, rnd):
    p = StickyParam(tau)
    shuffled = list(sizes)
    rnd.shuffle(shuffled)
    assert eppf(shuffled, p) == pytest.approx(eppf(sizes, p), rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("tau", TAUS)
def test_oracle_agreement(tau):
    p = StickyParam(tau)
    for n in range(1, 9):
        for q in enumerate_partitions(n):
            assert abs(eppf(q.sizes, p) - eppf_closed_form(q.sizes, p)) < 1e-12


# --- samplers --------------------------------------------------------------------

def test_crp_limits():
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert sample_crp(6, StickyParam(0.0), rng) == SetPartition.singletons(6)
        assert sample_crp(6, StickyParam(1.0), rng) == SetPartition.single_block(6)
    lab = sample_crp_labels(5, StickyParam(1.0), rng, 100)
    assert np.all(lab == 0)
    lab = sample_crp_labels(5, StickyParam(0.0), rng, 100)
    assert np.all(lab == np.arange(5))


def _chi2_pvalue(observed_parts, n, p):
    parts = enumerate_partitions(n)
    index = {q: i for i, q in enumerate(parts)}
    counts = np.zeros(len(parts))
    for q in observed_parts:
        counts[index[q]] += 1
    expected = np.array([eppf(q.sizes, p) for q in parts]) * counts.sum()
    return stats.chisquare(counts, expected).pvalue


@pytest.mark.parametrize("tau", [0.25, 0.5, 0.75])
def test_crp_chi_square(tau):
    p = StickyParam(tau)
    rng = np.random.default_rng(20240 + int(100 * tau))
    draws = [sample_crp(4, p, rng) for _ in range(100_000)]
    assert _chi2_pvalue(draws, 4, p) > 0.01


@pytest.mark.parametrize("tau", [0.25, 0.5, 0.75])
def test_vectorized_crp_chi_square(tau):
    p = StickyParam(tau)
    lab = sample_crp_labels(4, p, np.random.default_rng(7), 100_000)
    draws = [SetPartition.from_labels(row) for row in lab.tolist()]
    assert _chi2_pvalue(draws, 4, p) > 0.01


def test_crp_reproducible():
    p = StickyParam(0.4)
    a = [sample_crp(6, p, np.random.default_rng(3)) for _ in range(3)]
    assert a[0] == a[1] == a[2]


def test_restrict_examples():
    assert restrict(SetPartition(3, ((1, 3), (2,))), 2) == SetPartition(2, ((1,), (2,)))
    for q in enumerate_partitions(5):
        assert restrict(q, 5) == q
    with pytest.raises(ValueError):
        restrict(SetPartition.singletons(3), 4)


def test_restriction_chi_square():
    p = StickyParam(0.5)
    rng = np.random.default_rng(11)
    restricted = [restrict(sample_crp(5, p, rng), 3) for _ in range(100_000)]
    direct = [sample_crp(3, p, rng) for _ in range(100_000)]
    assert _chi2_pvalue(restricted, 3, p) > 0.01
    parts = enumerate_partitions(3)
    counts = [Counter(sample) for sample in (restricted, direct)]
    table = np.array([[c[r] for r in parts] for c in counts])
    assert stats.chi2_contingency(table).pvalue > 0.01
