"""Privacy budget sweeps: every mechanism at every budget, many trials.

Each (mechanism, eps, trial) cell draws from its own seed path
``(plan seed, "cell", mechanism, eps index, trial)``, so results do not
depend on how cells are scheduled across workers.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from patterndp import baselines as bl
from patterndp.adaptive import OptimizerConfig, optimize
from patterndp.datasets import (GridSpec, SynthConfig, TaxiSampleConfig, assign_areas,
                                generate_tdrive_sample, ingest_tdrive_dir, synthesize, taxi_queries)
from patterndp.matcher import read_queries
from patterndp.ppm import BudgetAllocation, SeededRng, epsilons_to_ps, uniform_allocate
from patterndp.stream_model import EventStream, read_events_jsonl
from patterndp.workload import Workload

PPM_MECHANISMS = ("uniform", "adaptive")
BASELINE_MECHANISMS = ("BD", "BA", "LANDMARK")
MECHANISMS = PPM_MECHANISMS + BASELINE_MECHANISMS
CSV_COLUMNS = ("mechanism", "eps", "trial", "tp", "fp", "fn", "prec", "rec", "q", "mre")


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentPlan:
    dataset: dict
    mechanisms: tuple[str, ...] = MECHANISMS
    eps_grid: tuple[float, ...] = (0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0)
    trials: int = 100
    alpha: float = 0.5
    seed: int = 0
    baseline_w: int = 10
    landmark_share: float = 0.5
    adaptive: dict = field(default_factory=dict)  # OptimizerConfig overrides

    def __post_init__(self):
        object.__setattr__(self, "mechanisms", tuple(self.mechanisms))
        object.__setattr__(self, "eps_grid", tuple(float(e) for e in self.eps_grid))
        unknown = set(self.mechanisms) - set(MECHANISMS)
        if unknown:
            raise PlanError(f"unknown mechanisms {sorted(unknown)}; choose from {list(MECHANISMS)}")
        if list(self.eps_grid) != sorted(self.eps_grid):
            raise PlanError("eps grid must be sorted ascending")
        if any(e < 0 for e in self.eps_grid):
            raise PlanError("budgets must be >= 0")
        if self.trials < 1:
            raise PlanError("trials must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise PlanError("alpha must lie in [0, 1]")

    @classmethod
    def from_json(cls, d: dict) -> "ExperimentPlan":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise PlanError(f"unknown plan fields {sorted(extra)}")
        if "dataset" not in d:
            raise PlanError("plan needs a 'dataset' entry")
        return cls(**d)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentPlan":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        ds = dict(d.get("dataset", {}))
        base = Path(path).parent
        for k in ("events", "queries", "dir"):
            if k in ds and not os.path.isabs(ds[k]):
                ds[k] = str(base / ds[k])
        d["dataset"] = ds
        return cls.from_json(d)


@dataclass(frozen=True)
class QualityReport:
    mechanism: str
    eps: float
    trial: int
    tp: int
    fp: int
    fn: int
    prec: float
    rec: float
    q: float
    mre: float
    alpha: float = 0.5
    seed_path: tuple = ()
    failed: bool = False

    def csv_row(self) -> list[str]:
        if self.failed:
            return [self.mechanism, repr(self.eps), str(self.trial), "", "", "",
                    "nan", "nan", "nan", "nan"]
        return [self.mechanism, repr(self.eps), str(self.trial), str(self.tp), str(self.fp),
                str(self.fn), repr(self.prec), repr(self.rec), repr(self.q), repr(self.mre)]


# --- datasets ------------------------------------------------------------------------

def load_workload(spec: dict) -> Workload:
    kind = spec.get("kind")
    if kind == "synthetic":
        fields = {k: v for k, v in spec.items() if k != "kind"}
        ds = synthesize(SynthConfig(**fields))
        return Workload(ds.stream, ds.queries)
    if kind == "files":
        for k in ("events", "queries"):
            if not os.path.exists(spec[k]):
                raise PlanError(f"dataset file not found: {spec[k]}")
        return Workload(read_events_jsonl(spec["events"]), read_queries(spec["queries"]),
                        by_source=bool(spec.get("by_source", False)))
    if kind in ("tdrive", "tdrive_sample"):
        grid = GridSpec(cell_size=float(spec.get("cell_size", GridSpec.cell_size)),
                        seed=int(spec.get("seed", 0)))
        if kind == "tdrive":
            if not os.path.isdir(spec["dir"]):
                raise PlanError(f"dataset directory not found: {spec['dir']}")
            stream, _ = ingest_tdrive_dir(spec["dir"], grid)
        else:
            sample = TaxiSampleConfig(n_taxis=int(spec.get("n_taxis", 100)),
                                      n_fixes=int(spec.get("n_fixes", 480)),
                                      seed=int(spec.get("seed", 0)), grid=grid)
            with tempfile.TemporaryDirectory() as tmp:
                generate_tdrive_sample(tmp, sample)
                stream, _ = ingest_tdrive_dir(tmp, grid)
        private, target = assign_areas({e.payload for e in stream}, grid)
        queries = taxi_queries(private, target, int(spec.get("window", 3540)))
        return Workload(stream, queries, by_source=True)
    raise PlanError(f"unknown dataset kind {kind!r}")


def fingerprint(stream: EventStream) -> str:
    h = hashlib.sha256()
    for e in stream:
        h.update(json.dumps(e.to_json(), sort_keys=True).encode())
    return h.hexdigest()


# --- mechanisms ----------------------------------------------------------------------

def uniform_allocs(wl: Workload, eps: float) -> dict[str, BudgetAllocation]:
    return {q.id: uniform_allocate(eps, q.m, q.id) for q in wl.private}


def adaptive_allocs(wl: Workload, eps: float, cfg: OptimizerConfig) -> tuple[dict[str, BudgetAllocation], list]:
    """Optimize the private queries one after another, the rest held fixed."""
    allocs = uniform_allocs(wl, eps)
    traces = []
    for q in wl.private:
        fixed = {k: v for k, v in allocs.items() if k != q.id}
        res = optimize(wl, q, None, eps, cfg, fixed=fixed)
        allocs[q.id] = res.allocation
        traces.append({"query_id": q.id, "stop_reason": res.stop_reason, "trace": res.trace})
    return allocs, traces


def baseline_event_eps(wl: Workload, mechanism: str, eps: float, w: int,
                       landmark_share: float = 0.5) -> np.ndarray:
    priv = wl.private_instances()
    cfg = bl.BaselineConfig(bl.Mechanism(mechanism), w=w, landmark_share=landmark_share,
                            landmark_set=bl.landmarks_from(priv)
                            if mechanism == "LANDMARK" else frozenset())
    cfg = bl.calibrate(cfg, wl.stream, priv, eps)
    return bl.allocate_baseline(wl.stream, cfg)


def _optimizer_cfg(plan: ExperimentPlan, eps_idx: int) -> OptimizerConfig:
    seed = int(SeededRng(plan.seed).child("adaptive", eps_idx).generator().integers(2**63))
    return OptimizerConfig(**{"alpha": plan.alpha, **plan.adaptive, "seed": seed})


def survival_masks(wl: Workload, plan: ExperimentPlan, mechanism: str, eps_idx: int) -> np.ndarray:
    """Boolean trials x events masks of the events reported present."""
    eps = plan.eps_grid[eps_idx]
    cells = [SeededRng(plan.seed).child("cell", mechanism, eps_idx, t) for t in range(plan.trials)]
    if mechanism in PPM_MECHANISMS:
        allocs = uniform_allocs(wl, eps) if mechanism == "uniform" else \
            adaptive_allocs(wl, eps, _optimizer_cfg(plan, eps_idx))[0]
        mem = wl.memberships(allocs)
        u = np.stack([c.generator().random(len(mem)) for c in cells])
        return wl.ppm_survival(mem, u)
    probs = epsilons_to_ps(baseline_event_eps(wl, mechanism, eps, plan.baseline_w, plan.landmark_share))
    u = np.stack([c.generator().random(wl.n_events) for c in cells])
    return wl.event_survival(probs, u)


def run_cell(wl: Workload, plan: ExperimentPlan, mechanism: str, eps_idx: int,
             q_ord: float) -> list[QualityReport]:
    eps = plan.eps_grid[eps_idx]
    try:
        counts = wl.counts(survival_masks(wl, plan, mechanism, eps_idx))
    except bl.CalibrationError:
        return [QualityReport(mechanism, eps, t, 0, 0, 0, math.nan, math.nan, math.nan, math.nan,
                              plan.alpha, (plan.seed, mechanism, eps_idx, t), failed=True)
                for t in range(plan.trials)]
    prec, rec = counts.precision(), counts.recall()
    q = plan.alpha * prec + (1 - plan.alpha) * rec
    return [QualityReport(mechanism, eps, t, int(counts.tp[t]), int(counts.fp[t]), int(counts.fn[t]),
                          float(prec[t]), float(rec[t]), float(q[t]), float((q_ord - q[t]) / q_ord),
                          plan.alpha, (plan.seed, mechanism, eps_idx, t))
            for t in range(plan.trials)]


_WORKER: dict = {}


def _init_worker(wl: Workload, plan: ExperimentPlan, q_ord: float) -> None:
    _WORKER.update(wl=wl, plan=plan, q_ord=q_ord)


def _run_task(task: tuple[str, int]) -> list[QualityReport]:
    return run_cell(_WORKER["wl"], _WORKER["plan"], task[0], task[1], _WORKER["q_ord"])


def run_experiment(plan: ExperimentPlan, workload: Workload | None = None,
                   jobs: int = 1) -> list[QualityReport]:
    """One row per (mechanism, eps, trial), in plan order."""
    wl = workload if workload is not None else load_workload(plan.dataset)
    if wl.n_ground == 0:
        raise PlanError("dataset has no ground-truth target detections")
    q_ord = wl.ordinary_quality(plan.alpha)
    tasks = [(m, i) for m in plan.mechanisms for i in range(len(plan.eps_grid))]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                 initargs=(wl, plan, q_ord)) as pool:
            parts = list(pool.map(_run_task, tasks))
    else:
        parts = [run_cell(wl, plan, m, i, q_ord) for m, i in tasks]
    return [r for part in parts for r in part]


def write_csv(rows: Iterable[QualityReport], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow(r.csv_row())


@dataclass(frozen=True)
class CellSummary:
    mechanism: str
    eps: float
    n: int
    mre_mean: float
    mre_stderr: float
    q_mean: float


def summarize(rows: Sequence[QualityReport]) -> dict[tuple[str, float], CellSummary]:
    groups: dict[tuple[str, float], list[QualityReport]] = {}
    for r in rows:
        if not r.failed:
            groups.setdefault((r.mechanism, r.eps), []).append(r)
    out = {}
    for key, rs in groups.items():
        m = np.array([r.mre for r in rs])
        se = float(m.std(ddof=1) / math.sqrt(len(m))) if len(m) > 1 else 0.0
        out[key] = CellSummary(key[0], key[1], len(m), float(m.mean()), se,
                               float(np.mean([r.q for r in rs])))
    return out
