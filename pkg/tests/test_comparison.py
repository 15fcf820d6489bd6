import itertools
import math
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from cantordyn.comparison import (
    CuntzWitness,
    DiagonalElement,
    NotFound,
    SubequivalenceWitness,
    as_fraction,
    build_divisible_element,
    cut_down,
    cuntz_witness_diagonal,
    diagonal_from_function,
    diagonal_indicator,
    dynamical_compare,
    measure_gap_check,
    quarter_criterion,
    rank_compare_diagonal,
    window_threshold,
)
from cantordyn.crossed import LocallyConstant
from cantordyn.groupoids import GroupoidMatrixModel, build_groupoid, tower_shape_function
from cantordyn.systems import Clopen, FiniteCycle, Odometer, cylinder, exact_measure
from cantordyn.towers import kakutani_rokhlin


ODO = Odometer([2])


@pytest.fixture(scope="module")
def g16(odo):
    return build_groupoid(tower_shape_function(odo, cylinder(odo, "0000")))


@pytest.fixture(scope="module")
def m16(g16):
    return GroupoidMatrixModel(g16, 4)


def test_as_fraction_reads_decimal():
    assert as_fraction(0.3) == Fraction(3, 10)
    assert as_fraction(2) == 2
    assert as_fraction(Fraction(1, 3)) == Fraction(1, 3)


# --- dynamical subequivalence ----------------------------------------------------

def test_empty_source_gives_empty_witness(odo):
    w = dynamical_compare(odo, Clopen.empty(odo), cylinder(odo, "1"), [1])
    assert w.pieces == []
    assert w.validate(Clopen.empty(odo), cylinder(odo, "1"))["valid"]


def test_subset_uses_identity(fib):
    A, B = cylinder(fib, "aa"), cylinder(fib, "a")
    w = dynamical_compare(fib, A, B, range(-3, 4))
    assert [g for _, g in w.pieces] == [0]


def test_odometer_example(odo):
    A, B = cylinder(odo, "0000"), cylinder(odo, "11")
    w = dynamical_compare(odo, A, B, range(-4, 5))
    assert w.validate(A, B)["valid"]
    assert [g for _, g in w.pieces] == [-1]
    # the other translation landing in [11] is a witness as well
    assert SubequivalenceWitness([(A, 3)]).validate(A, B)["valid"]
    back = dynamical_compare(odo, B, A, range(-4, 5))
    assert isinstance(back, NotFound) and not back and back.exhaustive


def test_fibonacci_compare(fib):
    A, B = cylinder(fib, "aa"), cylinder(fib, "b")
    w = dynamical_compare(fib, A, B, range(-3, 4))
    assert w and w.validate(A, B)["valid"]
    # mu[b] < mu[a] so the reverse cannot exist with any window
    assert not dynamical_compare(fib, cylinder(fib, "a"), B, range(-6, 7))


def test_witness_validate_negative(odo):
    A = cylinder(odo, "0")
    v = SubequivalenceWitness([(A, 0)]).validate(A, cylinder(odo, "1"))
    assert not v["valid"] and not v["inside_B"]
    v = SubequivalenceWitness([(cylinder(odo, "00"), 1)]).validate(A, cylinder(odo, "1"))
    assert not v["partition"]


def test_empty_translations_rejected(odo):
    with pytest.raises(ValueError):
        dynamical_compare(odo, cylinder(odo, "0"), cylinder(odo, "1"), [])


def brute_cycle(n, A, B, T):
    """Oracle: any injective a -> b in B with b - a = g mod n for some g in T."""
    Ts = {g % n for g in T}
    for img in itertools.permutations(sorted(B), len(A)):
        if all((b - a) % n in Ts for a, b in zip(sorted(A), img)):
            return True
    return False


@given(st.integers(2, 7), st.data())
def test_cycle_agrees_with_brute_force(n, data):
    c = FiniteCycle(n)
    A = data.draw(st.sets(st.integers(0, n - 1), max_size=n))
    B = data.draw(st.sets(st.integers(0, n - 1), max_size=n))
    T = data.draw(st.sets(st.integers(-3, 3), min_size=1, max_size=4))
    EA = Clopen(c, 0, [c.alphabet[p] for p in A])
    EB = Clopen(c, 0, [c.alphabet[p] for p in B])
    res = dynamical_compare(c, EA, EB, T)
    assert bool(res) == brute_cycle(n, A, B, T)
    if res:
        assert res.validate(EA, EB)["valid"]
        assert all(g in T for _, g in res.pieces) or not A


@given(st.integers(0, 2 ** 16 - 1), st.integers(0, 2 ** 16 - 1))
def test_odometer_witnesses_validate(ma, mb):
    A = Clopen(ODO, 4, [ODO.encode(v, 4) for v in range(16) if ma >> v & 1]) if ma else Clopen.empty(ODO)
    B = Clopen(ODO, 4, [ODO.encode(v, 4) for v in range(16) if mb >> v & 1]) if mb else Clopen.empty(ODO)
    T = range(-8, 9)
    res = dynamical_compare(ODO, A, B, T)
    if res:
        assert res.validate(A, B)["valid"]
    else:
        # the window covers every residue, so failure means A has more cells than B
        assert len(A.at_radius(4).words) > len(B.at_radius(4).words)


def test_window_threshold(odo):
    assert window_threshold(kakutani_rokhlin(odo, cylinder(odo, "000"))) == 32


def test_substitution_budget(fib):
    A, B = cylinder(fib, "aab"), cylinder(fib, "aba")
    res = dynamical_compare(fib, A, B, range(-5, 6), budget=0)
    assert isinstance(res, NotFound) and not res.exhaustive
    assert dynamical_compare(fib, A, B, range(-5, 6)).validate(A, B)["valid"]


# --- quarter criterion and measure gap ----------------------------------------------

def test_quarter_examples(g16, odo):
    X, E0 = Clopen.full(odo), Clopen.empty(odo)
    assert quarter_criterion(g16, E0, X)["pass"]
    r = quarter_criterion(g16, cylinder(odo, "0000"), cylinder(odo, "1"))
    assert r["pass"] and r["slack_first"] == 1 and r["slack_second"] == Fraction(1, 16)
    r = quarter_criterion(g16, cylinder(odo, "00"), cylinder(odo, "1"))
    assert not r["first"]


@given(st.integers(0, 2 ** 16 - 1), st.integers(0, 2 ** 16 - 1))
def test_quarter_against_counts(me, mf):
    # oracle: every orbit is the 16 residues, so counts are popcounts
    g = build_groupoid(tower_shape_function(ODO, cylinder(ODO, "0000")))
    E = Clopen(ODO, 4, [ODO.encode(v, 4) for v in range(16) if me >> v & 1])
    F = Clopen(ODO, 4, [ODO.encode(v, 4) for v in range(16) if mf >> v & 1])
    nE, nF = bin(me).count("1"), bin(mf).count("1")
    r = quarter_criterion(g, E, F)
    assert r["first"] == (nE < Fraction(nF, 4))
    assert r["second"] == (Fraction(1, 16) < Fraction(nF, 64))


def test_measure_gap_examples(fib, odo):
    assert not measure_gap_check(fib, cylinder(fib, "b"), cylinder(fib, "a"), 0.25)
    assert measure_gap_check(fib, cylinder(fib, "bab"), cylinder(fib, "a"), 0.25)
    assert measure_gap_check(odo, cylinder(odo, "00"), Clopen.full(odo), 0.3)
    assert not measure_gap_check(odo, cylinder(odo, "00"), Clopen.full(odo), 0.25)


def test_quarter_implies_measure_gap(g16, odo):
    E, F = cylinder(odo, "0000"), cylinder(odo, "1")
    assert quarter_criterion(g16, E, F)["pass"]
    assert measure_gap_check(odo, E, F, Fraction(1, 4))


# --- diagonal ranks, cut-downs, witnesses --------------------------------------------

def test_rank_compare(m16, odo):
    a = diagonal_indicator(m16, cylinder(odo, "00"))
    b = diagonal_indicator(m16, cylinder(odo, "1"))
    r = rank_compare_diagonal(a, b)
    assert r["le_pass"] and not r["quarter_pass"]
    assert {row["rank_a"] for row in r["rows"]} == {4}
    r = rank_compare_diagonal(diagonal_indicator(m16, cylinder(odo, "0000")), b)
    assert r["quarter_pass"]


def test_rank_zero_cells_pass(m16, odo):
    a = diagonal_indicator(m16, Clopen.empty(odo))
    assert rank_compare_diagonal(a, a)["quarter_pass"]


def test_trace_is_measure(m16, odo):
    for w in ("0", "01", "0110"):
        assert diagonal_indicator(m16, cylinder(odo, w)).trace() == exact_measure(cylinder(odo, w))


def test_cut_down_example():
    a = DiagonalElement([2], {(0, "x"): (0.5, 0.1)}, {(0, "x"): 1})
    c = cut_down(a, 0.2)
    assert c.entries[(0, "x")][0] == pytest.approx(0.3)
    assert c.entries[(0, "x")][1] == 0
    with pytest.raises(ValueError):
        cut_down(a, -1)


@given(st.lists(st.fractions(0, 2), min_size=1, max_size=6), st.fractions(0, 1), st.fractions(0, 1))
def test_cut_down_composes(vals, e1, e2):
    a = DiagonalElement([len(vals)], {(0, 0): tuple(vals)}, {(0, 0): 1})
    assert cut_down(cut_down(a, e1), e2).entries == cut_down(a, e1 + e2).entries


def test_cut_down_function(odo):
    f = LocallyConstant(odo, 2, {"00": Fraction(1, 2), "01": Fraction(1, 10)})
    c = cut_down(f, Fraction(1, 5))
    assert c("00") == Fraction(3, 10) and c("01") == 0


@pytest.mark.parametrize("eps", [1e-6, 0.1, 0.4])
def test_cuntz_witness(m16, odo, eps):
    f = LocallyConstant(odo, 2, {"00": 1.0, "10": 0.5})
    a = diagonal_from_function(m16, f)
    b = diagonal_indicator(m16, cylinder(odo, "1"))
    w = cuntz_witness_diagonal(a, b, eps)
    assert isinstance(w, CuntzWitness)
    assert w.valid() and w.max_error <= eps + 1e-9 and w.max_norm <= 1 + 1e-9


def test_cuntz_witness_rank_failure(m16, odo):
    a = diagonal_indicator(m16, cylinder(odo, "0"))
    b = diagonal_indicator(m16, cylinder(odo, "00"))
    with pytest.raises(ValueError, match="rank"):
        cuntz_witness_diagonal(a, b, 0.1)


# --- divisible elements --------------------------------------------------------------

@pytest.mark.parametrize("word,r", [("0000", 0.3), ("0000", 1.0), ("00000", 2.5), ("000", Fraction(7, 3))])
def test_divisible(odo, word, r):
    td = kakutani_rokhlin(odo, cylinder(odo, word))
    h = build_divisible_element(odo, td, r, 0.05 if word != "000" else 0.2)
    rep = h.report
    assert rep["agree"] and rep["within_eps"] and rep["mu_F_ok"]
    assert h.ones == math.floor(as_fraction(r))


def test_divisible_fibonacci(fib):
    td = kakutani_rokhlin(fib, cylinder(fib, "abaab"))
    h = build_divisible_element(fib, td, 0.5, 0.25)
    assert h.report["agree"] and h.report["within_eps"]


def test_divisible_tower_too_short(odo):
    td = kakutani_rokhlin(odo, cylinder(odo, "00"))
    with pytest.raises(ValueError, match="too short"):
        build_divisible_element(odo, td, 0.3, 0.01)
