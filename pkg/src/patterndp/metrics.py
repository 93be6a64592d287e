"""Detection quality: confusion counts, precision/recall, Q and MRE.

Comparisons are made per (source, query, window) cell: a cell is a true
positive when the target query is detected there in both the ground truth
and the released output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from patterndp.matcher import PatternQuery, PatternStream


class WindowingMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def precision(self) -> float:
        # zero reported detections count as precision 0 so Q stays defined
        reported = self.tp + self.fp
        return self.tp / reported if reported else 0.0

    @property
    def recall(self) -> float:
        truth = self.tp + self.fn
        if not truth:
            raise ValueError("recall undefined: no ground-truth detections")
        return self.tp / truth


def _ids(targets: Iterable[PatternQuery | str]) -> list[str]:
    return [t.id if isinstance(t, PatternQuery) else t for t in targets]


def confusion(ground: PatternStream, reported: PatternStream,
              targets: Iterable[PatternQuery | str]) -> ConfusionCounts:
    ids = _ids(targets)
    for q in ids:
        g, r = ground.windows.get(q), reported.windows.get(q)
        if g is not None and r is not None and g != r:
            raise WindowingMismatch(f"query {q!r}: window {g} in ground truth, {r} in output")
    g_cells, r_cells = ground.cells(ids), reported.cells(ids)
    return ConfusionCounts(len(g_cells & r_cells), len(r_cells - g_cells), len(g_cells - r_cells))


def quality(c: ConfusionCounts, alpha: float = 0.5) -> float:
    """Q = alpha * Prec + (1 - alpha) * Rec."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if c.tp + c.fn == 0:
        raise ValueError("quality undefined: no ground-truth detections")
    return alpha * c.precision + (1.0 - alpha) * c.recall


def mre(q_ord: float, q_ppm: float) -> float:
    """Relative quality loss; negative when the mechanism happens to help."""
    if q_ord == 0:
        raise ValueError("relative error undefined for q_ord = 0")
    return (q_ord - q_ppm) / q_ord
