"""Batch evaluation of perturbed detections over many trials.

All mechanisms here only ever receive existence bits equal to 1 (events
that did occur), so a perturbation pass is fully described by a boolean
survival mask over the stream's events. ``Workload`` turns a stream and
its queries into sparse indicator matrices once, then re-detects the
target queries for a whole batch of masks with one sparse product.

Target queries the fast path cannot express (SEQUENCE mode with m >= 2, or
SET queries whose element predicates accept a common event) are re-detected
trial by trial with the reference matcher.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from patterndp.matcher import Mode, PatternQuery, detect
from patterndp.metrics import ConfusionCounts
from patterndp.ppm import BudgetAllocation, Memberships, memberships
from patterndp.stream_model import EventStream


@dataclass
class TrialCounts:
    """Per-trial confusion counts, each an int array of length ``trials``."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    def __len__(self) -> int:
        return len(self.tp)

    def trial(self, t: int) -> ConfusionCounts:
        return ConfusionCounts(int(self.tp[t]), int(self.fp[t]), int(self.fn[t]))

    def precision(self) -> np.ndarray:
        rep = self.tp + self.fp
        return np.where(rep > 0, self.tp / np.maximum(rep, 1), 0.0)

    def recall(self) -> np.ndarray:
        truth = self.tp + self.fn
        if np.any(truth == 0):
            raise ValueError("recall undefined: no ground-truth detections")
        return self.tp / truth

    def quality(self, alpha: float) -> np.ndarray:
        return alpha * self.precision() + (1.0 - alpha) * self.recall()


@dataclass
class _FastQuery:
    query: PatternQuery
    cols: slice  # column block in the indicator matrix: cell-major, element-minor
    n_cells: int
    ground: np.ndarray  # bool per cell


class Workload:
    def __init__(self, stream: EventStream, queries: Sequence[PatternQuery], *, by_source: bool = False):
        self.stream = stream
        self.queries = list(queries)
        self.by_source = by_source
        self.ground = detect(stream, self.queries, by_source=by_source)
        self.private = [q for q in self.queries if q.is_private]
        self.targets = [q for q in self.queries if q.is_target]
        self.n_events = len(stream)
        self._ground_cells = {q.id: self.ground.cells([q.id]) for q in self.targets}
        self._fast: list[_FastQuery] = []
        self._slow: list[PatternQuery] = []
        self._build_indicators()

    # -- construction ----------------------------------------------------------

    def _build_indicators(self) -> None:
        events = self.stream.events
        rows: list[int] = []
        cols: list[int] = []
        offset = 0
        for q in self.targets:
            accepts = [[p(e) for p in q.elements] for e in events]
            shared = any(sum(a) > 1 for a in accepts)
            if q.m > 1 and (q.mode is Mode.SEQUENCE or shared):
                self._slow.append(q)
                continue
            cell_ids: dict = {}
            for i, (e, acc) in enumerate(zip(events, accepts)):
                if not any(acc):
                    continue
                key = (e.stream_id if self.by_source else None, e.timestamp // q.window)
                c = cell_ids.setdefault(key, len(cell_ids))
                j = acc.index(True)
                rows.append(i)
                cols.append(offset + c * q.m + j)
            ground = np.zeros(len(cell_ids), dtype=bool)
            for src, _, w in self._ground_cells[q.id]:
                ground[cell_ids[(src, w)]] = True
            block = slice(offset, offset + len(cell_ids) * q.m)
            self._fast.append(_FastQuery(q, block, len(cell_ids), ground))
            offset = block.stop
        self._indicator = sp.csr_matrix(
            (np.ones(len(rows), dtype=np.float32), (rows, cols)), shape=(self.n_events, offset))
        self._indicator_t = self._indicator.T.tocsr()
        check = self.counts(np.ones((1, self.n_events), dtype=bool))
        if check.fp.any() or check.fn.any():
            raise AssertionError("batch detection disagrees with the reference matcher")

    # -- properties ------------------------------------------------------------

    @property
    def n_ground(self) -> int:
        return sum(len(c) for c in self._ground_cells.values())

    def private_instances(self):
        ids = {q.id for q in self.private}
        return [p for p in self.ground.instances if p.query_id in ids]

    def memberships(self, allocs: Mapping[str, BudgetAllocation]) -> Memberships:
        return memberships(self.stream, self.ground, allocs)

    # -- scoring ---------------------------------------------------------------

    def counts(self, survive: np.ndarray) -> TrialCounts:
        """Confusion counts of the target queries for each row of ``survive``."""
        survive = np.atleast_2d(survive)
        trials = survive.shape[0]
        tp = np.zeros(trials, dtype=np.int64)
        fp = np.zeros(trials, dtype=np.int64)
        fn = np.zeros(trials, dtype=np.int64)
        if self._fast:
            hits = (self._indicator_t @ survive.T.astype(np.float32)).T  # trials x columns
            for fq in self._fast:
                block = hits[:, fq.cols].reshape(trials, fq.n_cells, fq.query.m) > 0.5
                det = block.all(axis=2)
                g = fq.ground
                tp += (det & g).sum(axis=1)
                fp += (det & ~g).sum(axis=1)
                fn += (~det & g).sum(axis=1)
        for q in self._slow:
            truth = self._ground_cells[q.id]
            for t in range(trials):
                kept = EventStream(e for e, s in zip(self.stream, survive[t]) if s)
                got = detect(kept, [q], by_source=self.by_source).cells()
                tp[t] += len(got & truth)
                fp[t] += len(got - truth)
                fn[t] += len(truth - got)
        return TrialCounts(tp, fp, fn)

    def ppm_survival(self, mem: Memberships, uniforms: np.ndarray) -> np.ndarray:
        """Survival masks from per-membership uniforms (trials x memberships)."""
        uniforms = np.atleast_2d(uniforms)
        killed = uniforms < mem.prob
        survive = np.ones((uniforms.shape[0], self.n_events), dtype=bool)
        t_idx, k_idx = np.nonzero(killed)
        survive[t_idx, mem.event_pos[k_idx]] = False
        return survive

    def event_survival(self, probs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
        """Survival masks when every event gets its own response."""
        return np.atleast_2d(uniforms) >= probs

    def ordinary_quality(self, alpha: float) -> float:
        return float(self.counts(np.ones((1, self.n_events), dtype=bool)).quality(alpha)[0])
