"""Stream-level baselines adapted to binary responses.

BD (budget division) and BA (budget absorption) come from w-event privacy;
LANDMARK gives landmark timestamps their own share of each window's budget.
All of them assign a budget to every event, and events are then perturbed
with the same randomized response as the pattern-level mechanisms, so only
the allocation differs.

The time axis is the integer tick axis of the stream, starting at its first
timestamp. Every event inherits the budget of its tick.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from patterndp.matcher import PatternInstance
from patterndp.stream_model import EventStream


class Mechanism(str, Enum):
    BD = "BD"
    BA = "BA"
    LANDMARK = "LANDMARK"


@dataclass(frozen=True)
class BaselineConfig:
    mechanism: Mechanism
    w: int = 10
    eps_native: float = 1.0
    landmark_set: frozenset = field(default_factory=frozenset)  # ticks
    landmark_share: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "mechanism", Mechanism(self.mechanism))
        object.__setattr__(self, "landmark_set", frozenset(self.landmark_set))
        if self.w < 1:
            raise ValueError(f"w must be >= 1, got {self.w}")
        if self.eps_native < 0:
            raise ValueError(f"eps_native must be >= 0, got {self.eps_native}")
        if not 0.0 <= self.landmark_share <= 1.0:
            raise ValueError(f"landmark_share must lie in [0, 1], got {self.landmark_share}")


class CalibrationError(RuntimeError):
    pass


def tick_budgets(ticks: np.ndarray, cfg: BaselineConfig) -> np.ndarray:
    """Budget of each tick in ``ticks`` (sorted, unique, relative to the axis origin)."""
    ticks = np.asarray(ticks, dtype=np.int64)
    if cfg.mechanism is Mechanism.BD:
        return np.full(len(ticks), cfg.eps_native / cfg.w)
    if cfg.mechanism is Mechanism.BA:
        return cfg.eps_native / cfg.w * _absorbed_units(ticks, cfg.w)
    return _landmark_budgets(ticks, cfg)


def _absorbed_units(ticks: np.ndarray, w: int) -> np.ndarray:
    """Budget units (of eps/w) spent at each occupied tick under absorption.

    Ticks without events skip publication and leave their unit to be
    absorbed by the next publication, up to ``w`` units. A publication that
    absorbed ``k`` units nullifies the following ``k - 1`` ticks.
    """
    units = np.zeros(len(ticks))
    drained = int(ticks[0]) - 1 if len(ticks) else 0
    for n, t in enumerate(ticks):
        t = int(t)
        if t <= drained:
            continue
        k = min(t - drained, w)
        units[n] = k
        drained = t + k - 1
    return units


def _landmark_budgets(ticks: np.ndarray, cfg: BaselineConfig) -> np.ndarray:
    # Each tumbling block of w ticks spends eps_native: landmark_share of it
    # evenly over its landmark ticks, the rest evenly over the other ticks.
    w, eps = cfg.w, cfg.eps_native
    origin = int(ticks[0]) if len(ticks) else 0
    marks = np.array([t in cfg.landmark_set for t in ticks.tolist()], dtype=bool)
    block = (ticks - origin) // w
    out = np.empty(len(ticks))
    landmarks_in_block: dict[int, int] = {}
    for b, is_mark in zip(block.tolist(), marks.tolist()):
        if is_mark:
            landmarks_in_block[b] = landmarks_in_block.get(b, 0) + 1
    for n, (b, is_mark) in enumerate(zip(block.tolist(), marks.tolist())):
        n_mark = landmarks_in_block.get(b, 0)
        n_other = w - n_mark
        if n_mark == 0 or n_other == 0:
            out[n] = eps / w
        elif is_mark:
            out[n] = cfg.landmark_share * eps / n_mark
        else:
            out[n] = (1.0 - cfg.landmark_share) * eps / n_other
    return out


def allocate_baseline(stream: EventStream, cfg: BaselineConfig) -> np.ndarray:
    """Per-event budgets, aligned with ``stream``'s event order."""
    if not len(stream):
        return np.zeros(0)
    ts = np.fromiter((e.timestamp for e in stream), dtype=np.int64, count=len(stream))
    ticks, inverse = np.unique(ts, return_inverse=True)
    return tick_budgets(ticks, cfg)[inverse]


def tick_map(stream: EventStream, cfg: BaselineConfig) -> dict[int, float]:
    ts = sorted({e.timestamp for e in stream})
    return dict(zip(ts, tick_budgets(np.array(ts, dtype=np.int64), cfg).tolist()))


def write_tick_map_jsonl(tmap: dict[int, float], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t, eps in sorted(tmap.items()):
            fh.write(json.dumps({"timestamp": t, "eps": eps}) + "\n")


def pattern_level_epsilon_of(stream: EventStream, base_map: np.ndarray,
                             private_instances: Iterable[PatternInstance]) -> float:
    """Worst-case summed budget over the elements of any private instance."""
    pos = {e.key: i for i, e in enumerate(stream)}
    best = 0.0
    for inst in private_instances:
        best = max(best, math.fsum(float(base_map[pos[k]]) for k in inst.keys))
    return best


def landmarks_from(instances: Iterable[PatternInstance]) -> frozenset:
    """Landmark ticks: the timestamps of private-instance elements."""
    return frozenset(e.timestamp for inst in instances for e in inst.events)


def calibrate(cfg: BaselineConfig, stream: EventStream, private_instances: Sequence[PatternInstance],
              eps_target: float, tol: float = 1e-9) -> BaselineConfig:
    """Scale ``eps_native`` so the private pattern-level budget equals ``eps_target``.

    Uses bisection. The achieved pattern-level budget is within 1e-6 of the
    target (typically far closer).
    """
    if eps_target < 0:
        raise ValueError(f"target budget must be >= 0, got {eps_target}")
    if eps_target == 0:
        return replace(cfg, eps_native=0.0)
    if not private_instances:
        raise CalibrationError("no private instances: pattern-level budget is identically 0")
    pos = {e.key: i for i, e in enumerate(stream)}
    rows = [[pos[k] for k in inst.keys] for inst in private_instances]

    def level(x: float) -> float:
        base = allocate_baseline(stream, replace(cfg, eps_native=x))
        return max(math.fsum(base[r].tolist()) for r in rows)

    lo, hi = 0.0, max(eps_target, 1e-12)
    f_hi = level(hi)
    for _ in range(200):
        if f_hi >= eps_target:
            break
        if f_hi <= 0.0 and hi > 1e6 * eps_target:
            raise CalibrationError("pattern-level budget stays 0 however large eps_native is")
        lo, hi = hi, hi * 2.0
        f_hi = level(hi)
    else:
        raise CalibrationError("could not bracket the target budget")
    if level(lo) > eps_target:
        raise CalibrationError("pattern-level budget is not monotone in eps_native")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = level(mid)
        if abs(f_mid - eps_target) <= tol * max(1.0, eps_target):
            return replace(cfg, eps_native=mid)
        if f_mid < eps_target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    final = 0.5 * (lo + hi)
    if abs(level(final) - eps_target) > 1e-6:
        raise CalibrationError(f"bisection stalled at {level(final)} for target {eps_target}")
    return replace(cfg, eps_native=final)
