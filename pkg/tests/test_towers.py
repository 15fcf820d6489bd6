from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cantordyn.systems import Clopen, Odometer, ProductSystem, Substitution, cylinder, exact_measure, generate_window, invariance_defect
from cantordyn.towers import (
    Tiling,
    build_tower_from_level_function,
    check_partition,
    first_return_analysis,
    kakutani_rokhlin,
    perfect_level_function,
    tiling_from_returns,
    urp_towers,
    verify_tiling,
)

from conftest import FIB_RULES, TM_RULES


def window_returns(w, Y):
    """Oracle: first-return times to Y read straight off a long orbit segment."""
    lo, hi = w.valid_range(Y.radius)
    hits = [n for n in range(lo, hi) if w.member(Y, n)]
    return {b - a for a, b in zip(hits, hits[1:])}


def test_odometer_returns(odo):
    assert first_return_analysis(odo, cylinder(odo, "0")).heights == [2]
    assert first_return_analysis(odo, cylinder(odo, "00")).heights == [4]
    rd = first_return_analysis(odo, cylinder(odo, "0000"))
    assert rd.heights == [16]
    assert rd.kac_sum() == 1


def test_fibonacci_returns_to_a(fib):
    rd = first_return_analysis(fib, cylinder(fib, "a"))
    assert rd.heights == [1, 2]
    (_, Z1), (_, Z2) = rd.returns
    assert Z1 == cylinder(fib, "aa")
    assert Z2 == cylinder(fib, "ab")
    assert rd.kac_sum() == 1


def test_return_empty_rejected(fib):
    with pytest.raises(ValueError):
        first_return_analysis(fib, Clopen.empty(fib))


@pytest.mark.parametrize("word", ["a", "b", "aa", "ab", "aba", "abaab", "baab"])
def test_fibonacci_returns_match_window(fib, word):
    Y = cylinder(fib, word)
    w = generate_window(fib, 4000, seed=3)
    assert set(first_return_analysis(fib, Y).heights) == window_returns(w, Y)


@pytest.mark.parametrize("word", ["0", "01", "001", "0110"])
def test_thue_morse_returns_match_window(tm, word):
    Y = cylinder(tm, word)
    w = generate_window(tm, 6000, seed=5)
    rd = first_return_analysis(tm, Y)
    assert set(rd.heights) == window_returns(w, Y)
    assert rd.kac_sum() == 1


def test_cycle_returns(cyc5):
    rd = first_return_analysis(cyc5, Clopen(cyc5, 0, ["0", "2"]))
    assert rd.heights == [2, 3]
    assert rd.kac_sum() == 1


@pytest.mark.parametrize("n", range(1, 7))
def test_kr_odometer(odo, n):
    td = kakutani_rokhlin(odo, cylinder(odo, "0" * n))
    assert [t.height for t in td.towers] == [2 ** n]
    assert td.checks["partition"]["exact"]
    assert td.checks["w_sets_empty"]
    assert td.checks["kac_sum"] == 1


@given(st.sampled_from([Substitution(FIB_RULES), Substitution(TM_RULES), Odometer([3, 2])]), st.integers(0, 10**6), st.integers(1, 4))
def test_kr_partition_property(system, seed, m):
    import random
    rng = random.Random(seed)
    words = system.words(m)
    Y = Clopen(system, m, rng.sample(list(words), rng.randint(1, max(1, len(words) // 2))))
    td = kakutani_rokhlin(system, Y)
    assert td.checks["partition"]["exact"]
    assert td.checks["w_sets_empty"]
    assert td.checks["kac_sum"] == 1


def test_check_partition_negative(odo):
    # the tower over [0] with height 3 double-covers
    res = check_partition(odo, [(cylinder(odo, "0"), frozenset(range(3)))])
    assert not res["exact"] and res["overlapping"] > 0
    res = check_partition(odo, [(cylinder(odo, "00"), frozenset(range(3)))])
    assert not res["exact"] and res["uncovered"] > 0


def test_rows(odo):
    td = kakutani_rokhlin(odo, cylinder(odo, "0000"))
    assert td.rows() == [(0, 16, Fraction(1, 16), 1)]


# --- uniform Rokhlin property ---------------------------------------------------

URP_CASES = [(Odometer([2]), e) for e in (0.5, 0.1, 0.02)] + [(Substitution(FIB_RULES), e) for e in (0.5, 0.1, 0.02)]
# Thue-Morse at 0.02 needs a radius-1152 configuration table; too slow for the unit suite
URP_CASES += [(Substitution(TM_RULES), e) for e in (0.5, 0.1)]


@pytest.mark.parametrize("system,eps", URP_CASES)
def test_urp_invariance(system, eps):
    K = {-1, 0, 1}
    td = urp_towers(system, K, eps)
    assert td.checks["invariant"]
    assert all(invariance_defect(t.shape, K) < eps for t in td.towers)
    assert td.complement.is_empty()
    assert td.checks["partition"]["exact"]


def test_urp_product():
    P = ProductSystem([Odometer([2]), Odometer([3])])
    K = {(0, 0), (1, 0), (0, 1)}
    td = urp_towers(P, K, 0.5)
    assert all(invariance_defect(t.shape, K) < 0.5 for t in td.towers)
    # product of factor partitions; each factor is scanned
    assert all(c["partition"]["exact"] for c in td.checks["factor_checks"])
    assert sum(exact_measure(t.base) * len(t.shape) for t in td.towers) == 1
    with pytest.raises(ValueError):
        check_partition(P, [(t.base, t.shape) for t in td.towers])


def test_urp_rejects_cycle(cyc5):
    with pytest.raises(ValueError):
        urp_towers(cyc5, {0, 1}, 0.1)
    with pytest.raises(ValueError):
        urp_towers(Odometer([2]), {0, 1}, 0)


# --- level function towers ------------------------------------------------------

def test_perfect_level_function_gives_full_towers(odo):
    w = generate_window(odo, 2000, seed=0)
    n = perfect_level_function(w, cylinder(odo, "0000"))
    B, rep = build_tower_from_level_function(w, n, 10, delta=0.0)
    assert rep["bad_sites_F0"] == 0
    assert rep["complement_fraction"] == 0.0
    assert np.all(np.diff(B) == 10)


def test_level_function_with_defects_bound():
    # level function broken at sites spaced by 1/delta; complement stays under the bound
    rng = np.random.default_rng(0)
    L, N = 10_000, 10
    n = np.arange(L)
    breaks = np.sort(rng.choice(np.arange(100, L - 100), 20, replace=False))
    for b in breaks:
        n[b:] += 7
    delta = 20 / L
    B, rep = build_tower_from_level_function(None, n, N, delta=delta)
    assert rep["bad_sites_F0"] == 20
    assert rep["within_bound"]
    # oracle: every base is followed by N consecutive good levels
    for b in B[:50]:
        assert list(n[b:b + N] % N) == list(range(N))


def test_level_function_short_window():
    with pytest.raises(ValueError):
        build_tower_from_level_function(None, np.arange(10), 5)


# --- tilings ---------------------------------------------------------------------

def test_tiling_from_fibonacci_returns(fib):
    t = tiling_from_returns(first_return_analysis(fib, cylinder(fib, "aba")))
    res = verify_tiling(t, {-1, 0, 1}, 1.1, range(-3, 4), [generate_window(fib, 600, s) for s in range(3)])
    assert res["exact"] and res["equivariant"]
    assert res["points_checked"] > 1000


def test_tiling_negative_control(odo):
    t = tiling_from_returns(first_return_analysis(odo, cylinder(odo, "00")))
    bad = Tiling(t.system, t.radius, t.tiles, dict(t.assignment))
    key = sorted(bad.assignment)[1]
    k, i = bad.assignment[key]
    bad.assignment[key] = (k, (i + 1) % 4)
    res = verify_tiling(bad, {0, 1}, 1.0, range(0, 4), [generate_window(odo, 200, 0)])
    assert not res["exact"]
