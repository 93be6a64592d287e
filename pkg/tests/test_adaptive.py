import math

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from patterndp.adaptive import (ConserveMode, OptimizerConfig, QualityEstimate, common_uniforms,
                                estimate_quality, optimize)
from patterndp.datasets import shared_element_scenario
from patterndp.matcher import PatternQuery, PrivacyRole
from patterndp.ppm import BudgetAllocation, uniform_allocate
from patterndp.workload import Workload

from conftest import make_stream


def flat(_alloc):
    return QualityEstimate(0.5, 0.0, 0.5, 0.5)


def peaked(center):
    """Analytic objective maximised when element 0 holds ``center``."""
    def fn(alloc):
        q = 1.0 - (alloc.per_element[0] - center) ** 2
        return QualityEstimate(q, 0.0, q, q)
    return fn


P3 = PatternQuery("P", ("a", "b", "c"), privacy_role=PrivacyRole.PRIVATE)


def test_m1_returns_uniform():
    q = PatternQuery("P", ("a",), privacy_role=PrivacyRole.PRIVATE)
    res = optimize(None, q, None, 2.0, OptimizerConfig(), quality_fn=flat)
    assert res.allocation.per_element == (2.0,)
    assert res.stop_reason == "no reallocation possible"


def test_flat_objective_stops_after_one_iteration():
    res = optimize(None, P3, None, 1.5, OptimizerConfig(), quality_fn=flat)
    assert res.iterations == 1 and res.stop_reason == "no improvement"
    assert res.allocation.per_element == pytest.approx((0.5,) * 3)


def test_conservation_and_monotone_incumbent():
    cfg = OptimizerConfig(delta_eps=0.05, max_iters=500)
    res = optimize(None, P3, None, 3.0, cfg, quality_fn=peaked(2.2))
    commits = [r for r in res.trace if r.get("committed") is not None]
    assert commits
    for r in commits:
        assert math.fsum(r["per_element"]) == pytest.approx(3.0, abs=1e-9)
        assert min(r["per_element"]) >= 0
    qs = [r["q"] for r in commits]
    assert qs == sorted(qs)
    assert res.allocation.per_element[0] == pytest.approx(2.2, abs=0.05)
    assert res.iterations <= cfg.max_iters


@settings(max_examples=30)
@given(st.floats(0.1, 5), st.floats(0, 1), st.integers(0, 30))
def test_termination_and_bounds(eps, frac, max_iters):
    cfg = OptimizerConfig(delta_eps=eps / 7, max_iters=max_iters)
    res = optimize(None, P3, None, eps, cfg, quality_fn=peaked(frac * eps * 1.5))
    assert res.iterations <= max_iters
    assert all(0 <= x <= eps + 1e-9 for x in res.allocation.per_element)
    assert math.fsum(res.allocation.per_element) == pytest.approx(eps, abs=1e-9)


def test_infeasible_probes_are_skipped():
    # element 0 wants everything; once the others hit 0 every probe is infeasible or worse
    cfg = OptimizerConfig(delta_eps=0.5, max_iters=50)
    res = optimize(None, P3, None, 1.5, cfg, quality_fn=peaked(10.0))
    assert any(r.get("infeasible") for r in res.trace)
    assert res.allocation.per_element == pytest.approx((1.5, 0.0, 0.0), abs=1e-9)


def test_literal_mode_total_grows():
    cfg = OptimizerConfig(delta_eps=0.3, max_iters=1, conserve_mode=ConserveMode.PAPER_LITERAL)
    res = optimize(None, P3, None, 3.0, cfg, quality_fn=peaked(2.0))
    # one commit: +delta on i, -delta/m on each of the other m-1 elements
    assert math.fsum(res.allocation.per_element) == pytest.approx(3.0 + 0.3 - 2 * 0.3 / 3, abs=1e-9)


def _single_event_workload(n=10_000):
    s = make_stream([(t, "a") for t in range(n)])
    qs = [PatternQuery("P", ("a",), privacy_role=PrivacyRole.PRIVATE),
          PatternQuery("T", ("a",), privacy_role=PrivacyRole.TARGET)]
    return Workload(s, qs)


def test_huge_budget_gives_perfect_quality():
    ds_stream, qs = shared_element_scenario(n_windows=200)
    est = estimate_quality(ds_stream, qs, {"private": uniform_allocate(2000.0, 2)}, OptimizerConfig(trials=20))
    assert est.q_mean == 1.0


def test_zero_budget_recall_is_half():
    wl = _single_event_workload()
    est = estimate_quality(wl, None, {"P": uniform_allocate(0.0, 1)}, OptimizerConfig(trials=10))
    assert abs(est.rec - 0.5) < 0.01
    assert est.prec == 1.0


def test_stderr_scales_with_trials():
    stream, qs = shared_element_scenario(n_windows=200)
    wl = Workload(stream, qs)
    alloc = {"private": uniform_allocate(1.0, 2)}
    se = [estimate_quality(wl, None, alloc, OptimizerConfig(trials=n, seed=4)).q_stderr for n in (400, 800)]
    assert se[1] / se[0] == pytest.approx(1 / math.sqrt(2), rel=0.2)


def test_no_ground_truth_is_an_error():
    s = make_stream([(0, "a")])
    qs = [PatternQuery("P", ("a",), privacy_role=PrivacyRole.PRIVATE),
          PatternQuery("T", ("z",), privacy_role=PrivacyRole.TARGET)]
    with pytest.raises(ValueError, match="ground-truth"):
        estimate_quality(s, qs, {"P": uniform_allocate(1.0, 1)}, OptimizerConfig(trials=2))


def test_shared_element_prefers_shared_element_and_matches_grid_oracle():
    stream, qs = shared_element_scenario(n_windows=1000, seed=3)
    wl = Workload(stream, qs)
    eps = 2.0
    cfg = OptimizerConfig(trials=100, seed=5)
    res = optimize(wl, qs[0], None, eps, cfg)
    e1, e2 = res.allocation.per_element
    assert e1 > e2

    delta = 2 * eps / 100
    uniforms = common_uniforms(wl, {"private": uniform_allocate(eps, 2)}, cfg.trials, cfg.seed)
    # oracle: exhaustive search over eps_1 on the optimizer's step lattice
    qualities = [estimate_quality(wl, None, {"private": BudgetAllocation("private", eps, (x, eps - x))},
                                  cfg, uniforms) for x in np.arange(0, 51) * delta]
    best = max(qualities, key=lambda q: q.q_mean)
    assert res.quality.q_mean >= best.q_mean - 2 * best.q_stderr
    uni = estimate_quality(wl, None, {"private": uniform_allocate(eps, 2)}, cfg, uniforms)
    assert res.quality.q_mean >= uni.q_mean - 2 * uni.q_stderr
