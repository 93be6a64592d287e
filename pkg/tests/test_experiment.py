import math

import numpy as np
import pytest

from patterndp.experiment import (CSV_COLUMNS, ExperimentPlan, PlanError, load_workload, run_experiment,
                                  summarize, write_csv)

SMALL = {"kind": "synthetic", "seed": 1, "n_windows": 200}


@pytest.fixture(scope="module")
def small_workload():
    return load_workload(SMALL)


def test_plan_validation():
    with pytest.raises(PlanError, match="unknown mechanisms"):
        ExperimentPlan(SMALL, mechanisms=("uniform", "magic"))
    with pytest.raises(PlanError):
        ExperimentPlan(SMALL, eps_grid=(1.0, 0.5))
    with pytest.raises(PlanError, match="unknown plan fields"):
        ExperimentPlan.from_json({"dataset": SMALL, "epochs": 3})
    with pytest.raises(PlanError, match="not found"):
        load_workload({"kind": "files", "events": "/nope/events.jsonl", "queries": "/nope/q.json"})


def test_row_count_and_columns(small_workload, tmp_path):
    plan = ExperimentPlan(SMALL, mechanisms=("uniform", "BD", "BA"), eps_grid=(0.5, 1.0), trials=4)
    rows = run_experiment(plan, small_workload)
    assert len(rows) == 3 * 2 * 4
    write_csv(rows, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].split(",") == list(CSV_COLUMNS) and len(lines) == 25


def test_mre_shrinks_with_budget(small_workload):
    plan = ExperimentPlan(SMALL, mechanisms=("uniform", "BD"), eps_grid=(0.1, 1.0, 10.0), trials=30)
    s = summarize(run_experiment(plan, small_workload))
    for mech in plan.mechanisms:
        curve = [s[(mech, e)].mre_mean for e in plan.eps_grid]
        assert curve[0] > curve[-1]


def test_run_is_deterministic_and_job_independent(small_workload):
    plan = ExperimentPlan(SMALL, mechanisms=("uniform", "LANDMARK"), eps_grid=(0.5, 2.0), trials=5, seed=3)
    a = run_experiment(plan, small_workload)
    b = run_experiment(plan, small_workload, jobs=2)
    assert [r.csv_row() for r in a] == [r.csv_row() for r in b]


def test_ppm_never_reports_false_positives(small_workload):
    plan = ExperimentPlan(SMALL, mechanisms=("uniform", "adaptive", "BD"), eps_grid=(0.5,), trials=3,
                          adaptive={"trials": 20})
    rows = run_experiment(plan, small_workload)
    assert all(r.fp == 0 for r in rows)
    assert all(0 <= r.prec <= 1 and 0 <= r.rec <= 1 for r in rows)


def test_huge_budget_recovers_ordinary_quality(small_workload):
    plan = ExperimentPlan(SMALL, mechanisms=("uniform", "BD", "BA", "LANDMARK"), eps_grid=(2000.0,), trials=3)
    assert all(abs(r.mre) < 1e-12 for r in run_experiment(plan, small_workload))


def test_summarize_skips_failed_rows():
    from patterndp.experiment import QualityReport
    rows = [QualityReport("BD", 1.0, 0, 0, 0, 0, math.nan, math.nan, math.nan, math.nan, failed=True),
            QualityReport("uniform", 1.0, 0, 1, 0, 0, 1.0, 1.0, 1.0, 0.0),
            QualityReport("uniform", 1.0, 1, 1, 0, 1, 1.0, 0.5, 0.75, 0.25)]
    s = summarize(rows)
    assert ("BD", 1.0) not in s
    assert s[("uniform", 1.0)].mre_mean == pytest.approx(0.125)
    assert s[("uniform", 1.0)].mre_stderr == pytest.approx(np.std([0, 0.25], ddof=1) / np.sqrt(2))
