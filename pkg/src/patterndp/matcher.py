"""Pattern queries and detection over tumbling windows.

Windows are tumbling and aligned at multiples of the query's window length.
A query is reported at most once per window: SET queries when every element
is matched by a distinct event of the window, SEQUENCE queries by the
earliest-completing ordered match. Single-element queries are the exception:
each matching event is its own instance, so they behave as event filters.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Hashable, Iterable, Mapping, Sequence

from patterndp.stream_model import Event, EventKey, EventStream, Kind


class Mode(str, Enum):
    SEQUENCE = "SEQUENCE"
    SET = "SET"


class PrivacyRole(str, Enum):
    PRIVATE = "PRIVATE"
    TARGET = "TARGET"
    NONE = "NONE"


@dataclass(frozen=True)
class ElementPredicate:
    """Accepts events of ``kind``, optionally restricted to a payload set."""

    kind: Kind
    payload_in: frozenset | None = None

    def __call__(self, e: Event) -> bool:
        if e.kind != self.kind:
            return False
        return self.payload_in is None or e.payload in self.payload_in

    def to_json(self):
        if self.payload_in is None:
            return self.kind
        return {"kind": self.kind, "payload_in": sorted(self.payload_in)}

    @classmethod
    def from_json(cls, d) -> "ElementPredicate":
        if isinstance(d, dict):
            payloads = d.get("payload_in")
            return cls(d["kind"], None if payloads is None else frozenset(payloads))
        return cls(d)


@dataclass(frozen=True)
class PatternQuery:
    id: str
    elements: tuple[ElementPredicate, ...]
    mode: Mode = Mode.SET
    window: int = 1
    privacy_role: PrivacyRole = PrivacyRole.NONE

    def __post_init__(self):
        elems = tuple(e if isinstance(e, ElementPredicate) else ElementPredicate(e)
                      for e in self.elements)
        object.__setattr__(self, "elements", elems)
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "privacy_role", PrivacyRole(self.privacy_role))
        if not elems:
            raise ValueError(f"query {self.id!r}: needs at least one element")
        if self.window <= 0:
            raise ValueError(f"query {self.id!r}: window must be positive, got {self.window}")

    @property
    def m(self) -> int:
        return len(self.elements)

    @property
    def is_private(self) -> bool:
        return self.privacy_role is PrivacyRole.PRIVATE

    @property
    def is_target(self) -> bool:
        return self.privacy_role is PrivacyRole.TARGET

    def to_json(self) -> dict:
        return {"id": self.id, "elements": [e.to_json() for e in self.elements],
                "mode": self.mode.value, "window": self.window,
                "privacy_role": self.privacy_role.value}

    @classmethod
    def from_json(cls, d: dict) -> "PatternQuery":
        return cls(id=str(d["id"]),
                   elements=tuple(ElementPredicate.from_json(x) for x in d["elements"]),
                   mode=Mode(d.get("mode", "SET")),
                   window=int(d.get("window", 1)),
                   privacy_role=PrivacyRole(d.get("privacy_role", "NONE")))


@dataclass(frozen=True)
class PatternInstance:
    query_id: str
    events: tuple[Event, ...]
    detect_time: int
    window_index: int
    source: Hashable = None  # stream_id when detection ran per source

    @property
    def keys(self) -> tuple[EventKey, ...]:
        return tuple(e.key for e in self.events)

    @property
    def cell(self) -> tuple:
        """The (source, query, window) cell this instance is a detection in."""
        return (self.source, self.query_id, self.window_index)


@dataclass(frozen=True)
class PatternStream:
    instances: tuple[PatternInstance, ...]
    windows: Mapping[str, int] = field(default_factory=dict)  # query id -> window length

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def __getitem__(self, i) -> PatternInstance:
        return self.instances[i]

    def of_query(self, query_id: str) -> list[PatternInstance]:
        return [p for p in self.instances if p.query_id == query_id]

    def cells(self, query_ids: Iterable[str] | None = None) -> set[tuple]:
        wanted = None if query_ids is None else set(query_ids)
        return {p.cell for p in self.instances if wanted is None or p.query_id in wanted}


# --- matching ----------------------------------------------------------------

def _match_set(events: Sequence[Event], preds: Sequence[ElementPredicate]) -> tuple[Event, ...] | None:
    """Assign each predicate a distinct event, preferring earliest events."""
    cands = [[i for i, e in enumerate(events) if p(e)] for p in preds]
    if any(not c for c in cands):
        return None
    # fast path: candidate sets pairwise disjoint
    if len({i for c in cands for i in c}) == sum(len(c) for c in cands):
        return tuple(events[c[0]] for c in cands)
    chosen: list[int] = []

    def search(k: int) -> bool:
        if k == len(cands):
            return True
        for i in cands[k]:
            if i not in chosen:
                chosen.append(i)
                if search(k + 1):
                    return True
                chosen.pop()
        return False

    return tuple(events[i] for i in chosen) if search(0) else None


def _match_sequence(events: Sequence[Event], preds: Sequence[ElementPredicate]) -> tuple[Event, ...] | None:
    # Greedy leftmost matching gives the earliest possible completion.
    out = []
    k = 0
    for e in events:
        if preds[k](e):
            out.append(e)
            k += 1
            if k == len(preds):
                return tuple(out)
    return None


def _windows(events: Sequence[Event], length: int) -> dict[int, list[Event]]:
    groups: dict[int, list[Event]] = {}
    for e in events:
        groups.setdefault(e.timestamp // length, []).append(e)
    return groups


def _detect_one(events: Sequence[Event], q: PatternQuery, source) -> list[PatternInstance]:
    if q.m == 1:
        pred = q.elements[0]
        return [PatternInstance(q.id, (e,), e.timestamp, e.timestamp // q.window, source)
                for e in events if pred(e)]
    match = _match_set if q.mode is Mode.SET else _match_sequence
    out = []
    for w, evs in sorted(_windows(events, q.window).items()):
        hit = match(evs, q.elements)
        if hit is not None:
            out.append(PatternInstance(q.id, hit, max(e.timestamp for e in hit), w, source))
    return out


def _instance_order(p: PatternInstance):
    return (p.detect_time, p.query_id, str(p.source), p.window_index,
            tuple(e.seq_no for e in p.events))


def detect(stream: EventStream, queries: Sequence[PatternQuery], *, by_source: bool = False) -> PatternStream:
    """Run every query over ``stream`` and return the ordered pattern stream.

    With ``by_source`` each stream_id is matched on its own and instances are
    tagged with their source, so e.g. one taxi's fixes never combine with
    another's.
    """
    parts = stream.by_source().items() if by_source else [(None, stream)]
    found = [p for src, evs in parts for q in queries for p in _detect_one(evs.events, q, src)]
    found.sort(key=_instance_order)
    return PatternStream(tuple(found), {q.id: q.window for q in queries})


def overlapping(p: PatternInstance, q: PatternInstance) -> bool:
    """True iff the two instances share at least one event occurrence."""
    return not set(p.keys).isdisjoint(q.keys)


def private_event_index(patterns: PatternStream,
                        private_queries: Iterable[PatternQuery | str]) -> dict[EventKey, list[tuple[int, int]]]:
    """Map each event inside a private instance to its (instance, position) memberships.

    Instance numbers are positions in ``patterns``. Entries are inserted in
    instance order, then element order, which is also the order in which the
    perturbation consumes random draws.
    """
    ids = {q.id if isinstance(q, PatternQuery) else q for q in private_queries}
    index: dict[EventKey, list[tuple[int, int]]] = {}
    for n, inst in enumerate(patterns.instances):
        if inst.query_id in ids:
            for pos, e in enumerate(inst.events):
                index.setdefault(e.key, []).append((n, pos))
    return index


# --- query files -------------------------------------------------------------

def write_queries(queries: Sequence[PatternQuery], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([q.to_json() for q in queries], fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_queries(path: str | os.PathLike) -> list[PatternQuery]:
    with open(path, encoding="utf-8") as fh:
        return [PatternQuery.from_json(d) for d in json.load(fh)]
