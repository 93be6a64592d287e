"""Events, event streams, extraction and merging.

Timestamps are integer ticks. A raw data stream is represented as an
``EventStream`` whose events carry ``kind="raw"`` (or whatever the source
labels them); ``extract_events`` turns it into an event stream of interest.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from typing import Callable, Collection, Hashable, Iterable, Iterator, Sequence, Union

Kind = Union[int, str]
EventKey = tuple  # (stream_id, seq_no)


class StreamOrderError(ValueError):
    """Raised when an event sequence violates the stream ordering invariants."""


@dataclass(frozen=True, slots=True)
class Event:
    stream_id: Hashable
    seq_no: int
    timestamp: int
    kind: Kind
    payload: int | None = None
    origin_seq: int | None = None  # seq_no before the most recent merge

    @property
    def key(self) -> EventKey:
        """Occurrence identity; two events are the same iff their keys match."""
        return (self.stream_id, self.seq_no)

    def to_json(self) -> dict:
        d = {"stream_id": self.stream_id, "seq_no": self.seq_no,
             "timestamp": self.timestamp, "kind": self.kind}
        if self.payload is not None:
            d["payload"] = self.payload
        return d

    @property
    def origin_key(self) -> EventKey:
        return (self.stream_id, self.seq_no if self.origin_seq is None else self.origin_seq)


class EventStream(Sequence[Event]):
    """An immutable, time-ordered sequence of events.

    ``seq_no`` is strictly increasing and ``timestamp`` non-decreasing over
    the whole sequence. Splitting by source keeps both properties.
    """

    __slots__ = ("_events",)

    def __init__(self, events: Iterable[Event] = ()):
        evs = tuple(events)
        _check_order(evs)
        self._events = evs

    def __len__(self) -> int:
        return len(self._events)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return EventStream(self._events[i])
        return self._events[i]

    def __iter__(self) -> Iterator[Event]:
        return iter(self._events)

    def __eq__(self, other) -> bool:
        if isinstance(other, EventStream):
            return self._events == other._events
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self._events)

    def __repr__(self) -> str:
        return f"EventStream(n={len(self._events)})"

    @property
    def events(self) -> tuple[Event, ...]:
        return self._events

    def sources(self) -> list:
        seen = dict.fromkeys(e.stream_id for e in self._events)
        return list(seen)

    def by_source(self) -> dict[Hashable, "EventStream"]:
        groups: dict = {}
        for e in self._events:
            groups.setdefault(e.stream_id, []).append(e)
        return {k: EventStream(v) for k, v in groups.items()}

    def kinds(self) -> set:
        return {e.kind for e in self._events}


def _check_order(events: Sequence[Event]) -> None:
    for prev, e in zip(events, events[1:]):
        if e.seq_no <= prev.seq_no:
            raise StreamOrderError(f"seq_no not increasing: {prev.seq_no} -> {e.seq_no}")
        if e.timestamp < prev.timestamp:
            raise StreamOrderError(f"timestamp decreasing: {prev.timestamp} -> {e.timestamp}")


def _as_predicate(predicate) -> Callable[[Event], bool]:
    if callable(predicate):
        return predicate
    kinds = set(predicate)
    return lambda e: e.kind in kinds


def extract_events(raw: EventStream, predicate: Collection[Kind] | Callable[[Event], bool]) -> EventStream:
    """Keep the events accepted by ``predicate`` and renumber them 1..n.

    ``predicate`` is either a collection of kinds or a callable on events.
    """
    accept = _as_predicate(predicate)
    kept = (e for e in raw if accept(e))
    return EventStream(replace(e, seq_no=i) for i, e in enumerate(kept, start=1))


def merge_streams(streams: Sequence[EventStream]) -> EventStream:
    """Merge event streams into one, ordered by timestamp.

    Ties are broken by input stream index, then by position within that
    stream. The result is renumbered 1..n; each event remembers its
    pre-merge seq_no in ``origin_seq``.
    """
    tagged = [(e.timestamp, i, j, e)
              for i, s in enumerate(streams) for j, e in enumerate(s)]
    tagged.sort(key=lambda t: t[:3])
    return EventStream(
        replace(e, seq_no=n, origin_seq=e.origin_key[1])
        for n, (_, _, _, e) in enumerate(tagged, start=1))


# --- JSONL -----------------------------------------------------------------

def event_from_json(d: dict, seq_no: int | None = None) -> Event:
    return Event(
        stream_id=d["stream_id"],
        seq_no=int(d["seq_no"]) if "seq_no" in d else int(seq_no),
        timestamp=int(d["timestamp"]),
        kind=d["kind"],
        payload=d.get("payload"),
    )


def write_events_jsonl(stream: Iterable[Event], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in stream:
            fh.write(json.dumps(e.to_json(), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_events_jsonl(path: str | os.PathLike) -> EventStream:
    """Read events; lines lacking ``seq_no`` are numbered in file order."""
    events = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(event_from_json(json.loads(line), seq_no=len(events) + 1))
    return EventStream(events)
