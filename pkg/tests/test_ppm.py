import math

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given
from scipy import stats

from patterndp.matcher import Mode, PatternInstance, PatternQuery, PatternStream, PrivacyRole, detect
from patterndp.ppm import (MAX_VERIFY_M, BudgetAllocation, NotNeighborsError, SeededRng, apply_ppm,
                           composed_epsilon, epsilon_to_p, make_rng, p_to_epsilon, randomize,
                           uniform_allocate, verify_pattern_level_dp)
from patterndp.stream_model import Event
from patterndp.workload import Workload

from conftest import make_stream

LN3 = math.log(3)


def test_conversion_examples():
    assert epsilon_to_p(0) == 0.5
    assert epsilon_to_p(LN3) == pytest.approx(0.25, abs=1e-12)
    assert p_to_epsilon(0.25) == pytest.approx(LN3, abs=1e-12)
    assert p_to_epsilon(0.5) == 0.0
    with pytest.raises(ValueError):
        epsilon_to_p(-0.1)
    with pytest.raises(ValueError):
        p_to_epsilon(0.6)


@given(st.floats(0, 30))
def test_conversion_roundtrip(eps):
    p = epsilon_to_p(eps)
    assert 0 < p <= 0.5
    assert p_to_epsilon(p) == pytest.approx(eps, abs=1e-9)


def test_uniform_allocate():
    a = uniform_allocate(1.0, 4, "P")
    assert a.per_element == (0.25,) * 4
    assert uniform_allocate(0.0, 3).per_element == (0.0,) * 3
    with pytest.raises(ValueError):
        uniform_allocate(1.0, 0)
    with pytest.raises(ValueError):
        uniform_allocate(-1.0, 2)


@given(st.floats(0, 50), st.integers(1, 12))
def test_uniform_composes_to_total(eps, m):
    assert composed_epsilon(uniform_allocate(eps, m)) == pytest.approx(eps, abs=1e-9)


def test_composed_epsilon_two_quarter_elements():
    a = BudgetAllocation("P", 2 * LN3, (LN3, LN3))
    assert a.probs == pytest.approx((0.25, 0.25))
    assert composed_epsilon(a) == pytest.approx(2.1972245773, abs=1e-9)


def test_allocation_json_roundtrip():
    a = BudgetAllocation("P", 1.0, (0.2, 0.3, 0.5))
    assert BudgetAllocation.from_json(a.to_json()) == a


def test_randomize_tiny_p_never_flips():
    rng = make_rng(0)
    assert all(randomize(1, 1e-12, rng) == 1 for _ in range(10_000))


@pytest.mark.parametrize("p,tol", [(0.25, 0.005), (0.5, 0.006)])
def test_randomize_flip_rate(p, tol):
    rng = make_rng(1)
    flips = sum(randomize(1, p, rng) == 0 for _ in range(100_000))
    assert abs(flips / 100_000 - p) < tol


def test_seeded_rng_paths_are_independent_and_stable():
    a = SeededRng(7).child("cell", "uniform", 0, 3).generator().random(4)
    b = SeededRng(7).child("cell", "uniform", 0, 3).generator().random(4)
    c = SeededRng(7).child("cell", "uniform", 0, 4).generator().random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def _private_setup():
    s = make_stream([(0, "a"), (0, "b"), (0, "c"), (0, "x"), (1, "a"), (1, "b")])
    p = PatternQuery("P", ("a", "b", "c"), Mode.SET, 1, PrivacyRole.PRIVATE)
    t = PatternQuery("T", ("a", "b"), Mode.SET, 1, PrivacyRole.TARGET)
    return s, [p, t]


def test_apply_ppm_no_private_instance_is_noop():
    s = make_stream([(0, "a"), (0, "b")])
    qs = [PatternQuery("P", ("a", "z"), privacy_role=PrivacyRole.PRIVATE), PatternQuery("T", ("a", "b"), privacy_role=PrivacyRole.TARGET)]
    pats = detect(s, qs)
    table = apply_ppm(s, pats, {"P": uniform_allocate(0.0, 2)}, make_rng(0))
    assert table.surviving(s) == s
    assert table.responses == ()


def test_apply_ppm_only_touches_private_events():
    s, qs = _private_setup()
    pats = detect(s, qs)
    flips = np.zeros(len(s))
    for t in range(2000):
        table = apply_ppm(s, pats, {"P": uniform_allocate(0.0, 3)}, make_rng(3, t))
        flips += [1 - table.reported[e.key] for e in s]
    rate = flips / 2000
    assert rate[3] == rate[4] == rate[5] == 0
    assert np.all(np.abs(rate[:3] - 0.5) < 0.05)


def test_apply_ppm_huge_budget_keeps_everything():
    s, qs = _private_setup()
    pats = detect(s, qs)
    table = apply_ppm(s, pats, {"P": uniform_allocate(300.0, 3)}, make_rng(0))
    assert detect(table.surviving(s), qs).cells(["T"]) == pats.cells(["T"])


def test_apply_ppm_rejects_wrong_length():
    s, qs = _private_setup()
    with pytest.raises(ValueError, match="elements"):
        apply_ppm(s, detect(s, qs), {"P": uniform_allocate(1.0, 2)}, make_rng(0))


def test_apply_ppm_matches_batch_survival():
    s, qs = _private_setup()
    wl = Workload(s, qs)
    allocs = {"P": BudgetAllocation("P", 1.5, (0.2, 0.3, 1.0))}
    mem = wl.memberships(allocs)
    for t in range(20):
        table = apply_ppm(s, wl.ground, allocs, make_rng(11, t))
        u = make_rng(11, t).random(len(mem))
        assert wl.ppm_survival(mem, u)[0].tolist() == [bool(table.reported[e.key]) for e in s]


def test_shared_event_needs_every_response():
    # b sits in two private instances; it survives only if both keep it
    s = make_stream([(0, "a"), (0, "b"), (0, "c")])
    p1 = PatternQuery("P1", ("a", "b"), privacy_role=PrivacyRole.PRIVATE)
    p2 = PatternQuery("P2", ("b", "c"), privacy_role=PrivacyRole.PRIVATE)
    pats = detect(s, [p1, p2])
    p = epsilon_to_p(0.5)
    allocs = {"P1": uniform_allocate(1.0, 2), "P2": uniform_allocate(1.0, 2)}
    kept = [apply_ppm(s, pats, allocs, make_rng(5, t)).reported[s[1].key] for t in range(20_000)]
    assert abs(np.mean(kept) - (1 - p) ** 2) < 0.01


def test_responses_independent_across_elements():
    s, qs = _private_setup()
    pats = detect(s, qs)
    alloc = {"P": uniform_allocate(1.0, 3)}
    bits = np.array([[r.output_bit for r in apply_ppm(s, pats, alloc, make_rng(9, t)).responses]
                     for t in range(5000)])
    for i, j in [(0, 1), (0, 2), (1, 2)]:
        table = np.array([[np.sum((bits[:, i] == x) & (bits[:, j] == y)) for y in (0, 1)] for x in (0, 1)])
        assert stats.chi2_contingency(table)[1] > 0.001


# --- exact verification -----------------------------------------------------------

def _neighbors(m, differ=0):
    events = [Event("s", j + 1, 0, f"k{j}") for j in range(m)]
    other = Event("s", m + 1, 0, f"k{differ}")
    b_events = list(events)
    b_events[differ] = other
    query = PatternQuery("P", tuple(f"k{j}" for j in range(m)))
    a = PatternStream([PatternInstance("P", tuple(events), 0, 0)], {"P": 1})
    b = PatternStream([PatternInstance("P", tuple(b_events), 0, 0)], {"P": 1})
    return query, a, b


def test_verify_single_element():
    query, a, b = _neighbors(1)
    assert verify_pattern_level_dp(query, BudgetAllocation("P", LN3, (LN3,)), (a, b)) == pytest.approx(LN3)


def test_verify_two_elements_second_differs():
    query, a, b = _neighbors(2, differ=1)
    alloc = BudgetAllocation("P", 2 * LN3, (LN3, LN3))
    assert verify_pattern_level_dp(query, alloc, (a, b)) == pytest.approx(LN3)


def test_verify_zero_budget_is_perfectly_private():
    query, a, b = _neighbors(3, differ=2)
    assert verify_pattern_level_dp(query, uniform_allocate(0.0, 3), (a, b)) == pytest.approx(0.0, abs=1e-12)


def test_verify_rejects_non_neighbors():
    query, a, _ = _neighbors(3)
    with pytest.raises(NotNeighborsError, match="identical"):
        verify_pattern_level_dp(query, uniform_allocate(1.0, 3), (a, a))
    # two elements replaced
    fresh = tuple(Event("s", 10 + j, 0, f"k{j}") for j in range(3))
    c = PatternStream([PatternInstance("P", (fresh[0], fresh[1], a[0].events[2]), 0, 0)], {"P": 1})
    with pytest.raises(NotNeighborsError, match=r"clause \(1\)"):
        verify_pattern_level_dp(query, uniform_allocate(1.0, 3), (a, c))
    # two instances differ
    q2, a2, b2 = _neighbors(2)
    two_a = PatternStream([a2[0], a2[0]], {"P": 1})
    two_b = PatternStream([b2[0], b2[0]], {"P": 1})
    with pytest.raises(NotNeighborsError, match=r"clause \(2\)"):
        verify_pattern_level_dp(q2, uniform_allocate(1.0, 2), (two_a, two_b))


def test_verify_limits_m():
    query, a, b = _neighbors(MAX_VERIFY_M + 1)
    with pytest.raises(ValueError, match="limited"):
        verify_pattern_level_dp(query, uniform_allocate(1.0, MAX_VERIFY_M + 1), (a, b))


budgets = st.lists(st.floats(0, 8), min_size=1, max_size=6)


@given(budgets, st.data())
def test_verify_bound_and_tightness(per, data):
    m = len(per)
    differ = data.draw(st.integers(0, m - 1))
    query, a, b = _neighbors(m, differ)
    alloc = BudgetAllocation("P", sum(per), tuple(per))
    worst = verify_pattern_level_dp(query, alloc, (a, b))
    assert worst <= composed_epsilon(alloc) + 1e-9
    # the bound is attained by the element that differs
    assert worst == pytest.approx(per[differ], abs=1e-9)


@given(st.floats(0, 5), st.floats(0, 5))
def test_verify_monotone_in_budget(e1, e2):
    lo, hi = sorted((e1, e2))
    query, a, b = _neighbors(2)
    v_lo = verify_pattern_level_dp(query, uniform_allocate(lo, 2), (a, b))
    v_hi = verify_pattern_level_dp(query, uniform_allocate(hi, 2), (a, b))
    assert v_lo <= v_hi + 1e-12
