"""Randomized response over private-pattern events.

An element with budget ``eps_i`` is reported truthfully with probability
``1 - p_i`` and flipped with probability ``p_i = 1 / (1 + exp(eps_i))``.
Budgets of the elements of one pattern add up to the pattern-level budget.
"""

from __future__ import annotations

import itertools
import json
import math
import os
import zlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from patterndp.matcher import PatternInstance, PatternQuery, PatternStream
from patterndp.stream_model import EventKey, EventStream

MAX_VERIFY_M = 12


# --- seeding -----------------------------------------------------------------

def _key_int(k) -> int:
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError(f"seed key components must be non-negative, got {k}")
        return int(k)
    return zlib.crc32(str(k).encode())


@dataclass(frozen=True)
class SeededRng:
    """A seed plus a spawn path; ``generator()`` is reproducible across runs.

    Backed by numpy's PCG64 seeded through ``SeedSequence``, whose
    ``spawn_key`` gives independent child streams for any key path.
    """

    seed: int
    path: tuple[int, ...] = ()

    def child(self, *key) -> "SeededRng":
        return SeededRng(self.seed, self.path + tuple(_key_int(k) for k in key))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed & (2**64 - 1), spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(ss))


def make_rng(seed: int, *key) -> np.random.Generator:
    return SeededRng(seed).child(*key).generator()


# --- budgets -----------------------------------------------------------------

def epsilon_to_p(eps_i: float) -> float:
    if eps_i < 0 or math.isnan(eps_i):
        raise ValueError(f"per-element budget must be >= 0, got {eps_i}")
    # 1/(1+e^x) written to stay finite for large x
    return math.exp(-eps_i) / (1.0 + math.exp(-eps_i))


def p_to_epsilon(p: float) -> float:
    if not 0.0 < p <= 0.5:
        raise ValueError(f"flip probability must lie in (0, 1/2], got {p}")
    return math.log1p(-p) - math.log(p)


def epsilons_to_ps(eps: np.ndarray) -> np.ndarray:
    eps = np.asarray(eps, dtype=float)
    if np.any(eps < 0) or np.any(np.isnan(eps)):
        raise ValueError("per-element budgets must be >= 0")
    return 1.0 / (1.0 + np.exp(eps))


@dataclass(frozen=True)
class BudgetAllocation:
    query_id: str
    epsilon_total: float
    per_element: tuple[float, ...]

    def __post_init__(self):
        per = tuple(float(x) for x in self.per_element)
        object.__setattr__(self, "per_element", per)
        if not per:
            raise ValueError("allocation needs at least one element")
        for x in per:
            if x < 0 or math.isnan(x):
                raise ValueError(f"per-element budget must be >= 0, got {x}")

    @property
    def m(self) -> int:
        return len(self.per_element)

    @property
    def probs(self) -> tuple[float, ...]:
        return tuple(epsilon_to_p(e) for e in self.per_element)

    def with_elements(self, per_element: Sequence[float], epsilon_total: float | None = None) -> "BudgetAllocation":
        total = self.epsilon_total if epsilon_total is None else epsilon_total
        return BudgetAllocation(self.query_id, total, tuple(per_element))

    def to_json(self) -> dict:
        return {"query_id": self.query_id, "epsilon_total": self.epsilon_total,
                "per_element": list(self.per_element), "probs": list(self.probs),
                "composed_epsilon": composed_epsilon(self)}

    @classmethod
    def from_json(cls, d: dict) -> "BudgetAllocation":
        return cls(d["query_id"], float(d["epsilon_total"]), tuple(d["per_element"]))


def uniform_allocate(eps_total: float, m: int, query_id: str = "") -> BudgetAllocation:
    if m < 1:
        raise ValueError(f"pattern length must be >= 1, got {m}")
    if eps_total < 0:
        raise ValueError(f"budget must be >= 0, got {eps_total}")
    return BudgetAllocation(query_id, float(eps_total), (eps_total / m,) * m)


def composed_epsilon(alloc: BudgetAllocation) -> float:
    """Pattern-level budget guaranteed by the allocation: sum of ln((1-p)/p)."""
    # p underflows to 0 above eps ~ 745; the element budget is then exact anyway
    return math.fsum(p_to_epsilon(p) if p > 0 else e
                     for p, e in zip(alloc.probs, alloc.per_element))


# --- randomized response -----------------------------------------------------

def randomize(input_bit: int, p_i: float, rng: np.random.Generator) -> int:
    """Flip ``input_bit`` with probability ``p_i``; uses exactly one uniform draw."""
    return int(input_bit) ^ int(rng.random() < p_i)


@dataclass(frozen=True)
class BinaryResponse:
    event: EventKey
    instance_id: int
    element_index: int
    input_bit: int
    output_bit: int

    @property
    def flipped(self) -> bool:
        return self.input_bit != self.output_bit

    def to_json(self) -> dict:
        return {"instance_id": self.instance_id, "element_index": self.element_index,
                "input_bit": self.input_bit, "output_bit": self.output_bit}


@dataclass(frozen=True)
class PerturbedTable:
    """Outcome of one perturbation pass.

    ``reported`` holds the bit released for every event of the stream;
    ``responses`` keeps each per-instance response so evaluators can use a
    per-query view instead of the combined bit.
    """

    reported: dict[EventKey, int]
    responses: tuple[BinaryResponse, ...]

    def surviving(self, stream: EventStream) -> EventStream:
        return EventStream(e for e in stream if self.reported[e.key])

    def write_jsonl(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.responses:
                fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


@dataclass(frozen=True)
class Memberships:
    """Flat (instance, element) membership arrays, in draw order.

    ``event_pos`` indexes into the stream, ``instance`` into the pattern
    stream, ``prob`` is the flip probability of that membership.
    """

    event_pos: np.ndarray
    instance: np.ndarray
    element: np.ndarray
    prob: np.ndarray

    def __len__(self) -> int:
        return len(self.event_pos)


def _check_allocs(patterns: PatternStream, allocs: Mapping[str, BudgetAllocation]) -> None:
    for inst in patterns.instances:
        a = allocs.get(inst.query_id)
        if a is not None and a.m != len(inst.events):
            raise ValueError(f"allocation for {inst.query_id!r} has {a.m} elements, "
                             f"instances have {len(inst.events)}")


def memberships(stream: EventStream, patterns: PatternStream,
                allocs: Mapping[str, BudgetAllocation]) -> Memberships:
    """Flatten the private-instance memberships of ``allocs``' queries."""
    _check_allocs(patterns, allocs)
    pos = {e.key: i for i, e in enumerate(stream)}
    probs = {qid: a.probs for qid, a in allocs.items()}
    rows = [(pos[e.key], n, j, probs[inst.query_id][j])
            for n, inst in enumerate(patterns.instances) if inst.query_id in probs
            for j, e in enumerate(inst.events)]
    if not rows:
        return Memberships(*(np.zeros(0, dtype=int) for _ in range(3)), np.zeros(0))
    ev, inst, el, pr = zip(*rows)
    return Memberships(np.array(ev), np.array(inst), np.array(el), np.array(pr, dtype=float))


def apply_ppm(stream: EventStream, patterns: PatternStream,
              allocs: Mapping[str, BudgetAllocation], rng: np.random.Generator) -> PerturbedTable:
    """Perturb the events of private instances; everything else passes through.

    Each (instance, element) membership gets one independent response with
    that instance's flip probability. An event in several private instances
    is reported present only if every one of its responses says present.
    """
    mem = memberships(stream, patterns, allocs)
    u = rng.random(len(mem))
    events = stream.events
    reported = {e.key: 1 for e in events}
    responses = []
    for k in range(len(mem)):
        e = events[mem.event_pos[k]]
        out = int(u[k] >= mem.prob[k])
        responses.append(BinaryResponse(e.key, int(mem.instance[k]), int(mem.element[k]), 1, out))
        reported[e.key] &= out
    return PerturbedTable(reported, tuple(responses))


# --- pattern-level DP verification ---------------------------------------------

class NotNeighborsError(ValueError):
    """The two pattern streams are not pattern-level neighbors."""


def _neighbor_diff(query: PatternQuery, s: PatternStream, s2: PatternStream) -> tuple[PatternInstance, PatternInstance, int]:
    if len(s) != len(s2):
        raise NotNeighborsError(
            f"streams have different lengths ({len(s)} vs {len(s2)}); "
            "neighbors must align instance by instance")
    diffs = [(a, b) for a, b in zip(s, s2) if a.keys != b.keys or a.query_id != b.query_id]
    if not diffs:
        raise NotNeighborsError("streams are identical; no instance differs")
    if len(diffs) > 1:
        raise NotNeighborsError(
            f"clause (2) violated: {len(diffs)} instances differ, all but one must be equal")
    a, b = diffs[0]
    if a.query_id != query.id or b.query_id != query.id:
        raise NotNeighborsError(
            f"the differing instance is of type {a.query_id!r}/{b.query_id!r}, not {query.id!r}")
    if len(a.events) != len(b.events):
        raise NotNeighborsError("clause (1) violated: differing instances have different lengths")
    pos = [j for j, (x, y) in enumerate(zip(a.keys, b.keys)) if x != y]
    if len(pos) != 1:
        raise NotNeighborsError(
            f"clause (1) violated: instances differ in {len(pos)} elements, exactly one allowed")
    return a, b, pos[0]


def verify_pattern_level_dp(query: PatternQuery, alloc: BudgetAllocation,
                            scenario: tuple[PatternStream, PatternStream]) -> float:
    """Exact worst-case log probability ratio of the response vector.

    Enumerates every response vector of the differing instance and compares
    its probability under both neighbors. Elements are identified by event
    occurrence: an element of the first stream's instance that is not part
    of the second stream's instance has existence 0 there.
    """
    s, s2 = scenario
    a, b, _ = _neighbor_diff(query, s, s2)
    m = len(a.events)
    if m > MAX_VERIFY_M:
        raise ValueError(f"enumeration limited to m <= {MAX_VERIFY_M}, got {m}")
    if alloc.m != m:
        raise ValueError(f"allocation has {alloc.m} elements, pattern has {m}")
    present_in_b = set(b.keys)
    x = [1] * m
    x2 = [1 if k in present_in_b else 0 for k in a.keys]
    p = np.array(alloc.probs)
    log_keep, log_flip = np.log1p(-p), np.log(p)
    worst = 0.0
    for r in itertools.product((0, 1), repeat=m):
        lp = sum(log_keep[j] if r[j] == x[j] else log_flip[j] for j in range(m))
        lp2 = sum(log_keep[j] if r[j] == x2[j] else log_flip[j] for j in range(m))
        worst = max(worst, abs(lp - lp2))
    return worst
