"""Bidirectional stepwise budget distribution.

Starting from an even split, each outer iteration probes every element:
give it ``delta_eps`` more budget, take the compensation from the others,
and estimate the detection quality Q of the target queries on historical
data. The best probe is committed if it beats the incumbent by more than
``improve_tol``.

Quality is estimated by Monte Carlo over ``trials`` perturbation passes.
All evaluations in one run reuse the same uniforms (common random numbers),
so Q is a deterministic, monotone function of the allocation and probe
comparisons carry no sampling noise between them.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np

from patterndp.matcher import PatternQuery
from patterndp.ppm import BudgetAllocation, SeededRng, uniform_allocate
from patterndp.stream_model import EventStream
from patterndp.workload import Workload


class ConserveMode(str, Enum):
    CONSERVING = "CONSERVING"
    PAPER_LITERAL = "PAPER_LITERAL"


@dataclass(frozen=True)
class OptimizerConfig:
    delta_eps: float | None = None  # None -> m * eps / 100
    alpha: float = 0.5
    trials: int = 200
    max_iters: int = 200
    improve_tol: float = 1e-4
    conserve_mode: ConserveMode = ConserveMode.CONSERVING
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conserve_mode", ConserveMode(self.conserve_mode))
        if self.delta_eps is not None and self.delta_eps <= 0:
            raise ValueError(f"delta_eps must be > 0, got {self.delta_eps}")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.max_iters < 0:
            raise ValueError(f"max_iters must be >= 0, got {self.max_iters}")


@dataclass(frozen=True)
class QualityEstimate:
    q_mean: float
    q_stderr: float
    prec: float
    rec: float


def _as_workload(historical, queries, by_source=False) -> Workload:
    if isinstance(historical, Workload):
        return historical
    return Workload(historical, queries, by_source=by_source)


def common_uniforms(workload: Workload, allocs: Mapping[str, BudgetAllocation],
                    trials: int, seed: int) -> np.ndarray:
    """Uniform draws (trials x memberships), one independent stream per trial."""
    k = len(workload.memberships(allocs))
    root = SeededRng(seed).child("quality")
    return np.stack([root.child(t).generator().random(k) for t in range(trials)]) \
        if trials else np.zeros((0, k))


def estimate_quality(historical: EventStream | Workload, queries: Sequence[PatternQuery] | None,
                     allocs: Mapping[str, BudgetAllocation], cfg: OptimizerConfig,
                     uniforms: np.ndarray | None = None) -> QualityEstimate:
    """Monte-Carlo estimate of Q for the target queries under ``allocs``."""
    wl = _as_workload(historical, queries)
    if wl.n_ground == 0:
        raise ValueError("no ground-truth target detections in the historical data")
    mem = wl.memberships(allocs)
    if uniforms is None:
        uniforms = common_uniforms(wl, allocs, cfg.trials, cfg.seed)
    counts = wl.counts(wl.ppm_survival(mem, uniforms))
    q = counts.quality(cfg.alpha)
    n = len(q)
    stderr = float(np.std(q, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return QualityEstimate(float(q.mean()), stderr,
                           float(counts.precision().mean()), float(counts.recall().mean()))


@dataclass
class OptimizationResult:
    allocation: BudgetAllocation
    quality: QualityEstimate
    trace: list[dict] = field(default_factory=list)
    iterations: int = 0
    stop_reason: str = ""

    def write_trace(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for row in self.trace:
                fh.write(json.dumps(row, sort_keys=True) + "\n")


QualityFn = Callable[[BudgetAllocation], QualityEstimate]


def _probe(eps: np.ndarray, i: int, delta: float, mode: ConserveMode) -> np.ndarray:
    m = len(eps)
    out = eps.copy()
    comp = delta / (m - 1) if mode is ConserveMode.CONSERVING else delta / m
    out -= comp
    out[i] = eps[i] + delta
    return out


def optimize(historical: EventStream | Workload, private_query: PatternQuery,
             target_queries: Sequence[PatternQuery] | None, eps_total: float, cfg: OptimizerConfig,
             *, fixed: Mapping[str, BudgetAllocation] | None = None,
             quality_fn: QualityFn | None = None) -> OptimizationResult:
    """Search a per-element budget split for ``private_query``.

    ``fixed`` holds allocations of other private queries, which stay
    applied (unchanged) while this one is searched. ``quality_fn`` replaces
    the Monte-Carlo estimate, e.g. with an analytic objective.
    """
    if eps_total < 0:
        raise ValueError(f"budget must be >= 0, got {eps_total}")
    m = private_query.m
    start = uniform_allocate(eps_total, m, private_query.id)
    delta = cfg.delta_eps if cfg.delta_eps is not None else m * eps_total / 100.0

    if quality_fn is None:
        queries = None if isinstance(historical, Workload) else \
            [private_query, *(target_queries or ())]
        wl = _as_workload(historical, queries)
        base = dict(fixed or {})
        base[private_query.id] = start
        uniforms = common_uniforms(wl, base, cfg.trials, cfg.seed)

        def quality_fn(alloc: BudgetAllocation) -> QualityEstimate:
            allocs = dict(base)
            allocs[private_query.id] = alloc
            return estimate_quality(wl, None, allocs, cfg, uniforms)

    current = start
    est = quality_fn(current)
    result = OptimizationResult(current, est)
    result.trace.append({"iteration": 0, "probed": None, "q": est.q_mean,
                         "committed": None, "per_element": list(current.per_element)})
    if m == 1 or delta == 0:
        result.stop_reason = "no reallocation possible"
        return result

    eps = np.array(current.per_element)
    for it in range(1, cfg.max_iters + 1):
        result.iterations = it
        best_i, best_est, best_eps = None, None, None
        for i in range(m):
            cand = _probe(eps, i, delta, cfg.conserve_mode)
            if np.any(cand < -1e-12) or np.any(cand > eps_total + 1e-12):
                result.trace.append({"iteration": it, "probed": i, "q": None,
                                     "committed": None, "infeasible": True})
                continue
            cand = np.clip(cand, 0.0, None)  # only rounding residue below 0 remains here
            alloc = current.with_elements(cand, float(cand.sum()) if
                                          cfg.conserve_mode is ConserveMode.PAPER_LITERAL else None)
            q_i = quality_fn(alloc)
            result.trace.append({"iteration": it, "probed": i, "q": q_i.q_mean, "committed": None})
            if best_est is None or q_i.q_mean > best_est.q_mean:
                best_i, best_est, best_eps = i, q_i, cand
        if best_est is None:
            result.stop_reason = "all probes infeasible"
            break
        if not best_est.q_mean > est.q_mean + cfg.improve_tol:
            result.stop_reason = "no improvement"
            break
        eps = best_eps
        total = eps_total if cfg.conserve_mode is ConserveMode.CONSERVING else float(eps.sum())
        if cfg.conserve_mode is ConserveMode.CONSERVING:
            # fold float drift back so the split sums to the budget exactly
            eps[best_i] = eps_total - math.fsum(np.delete(eps, best_i))
        current = current.with_elements(eps, total)
        est = best_est
        result.trace.append({"iteration": it, "probed": None, "q": est.q_mean,
                             "committed": best_i, "per_element": list(current.per_element)})
    else:
        result.stop_reason = "max_iters"
    result.allocation = current
    result.quality = est
    return result
