"""Synthetic windowed workloads and T-Drive style GPS ingestion.

The synthetic generator draws a natural occurrence probability for each of
``n_event_kinds`` basic events, then fills ``n_windows`` windows by an
independent Bernoulli draw per (window, kind). Window ``m`` is tick ``m``,
so every query uses a window of one tick.
"""

from __future__ import annotations

import calendar
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable

import numpy as np

from patterndp.matcher import ElementPredicate, Mode, PatternQuery, PrivacyRole
from patterndp.ppm import SeededRng
from patterndp.stream_model import Event, EventStream, merge_streams

CELL_ENTRY = "CELL_ENTRY"
EARTH_RADIUS_M = 6_371_008.8
TDRIVE_INTERVAL_S = 177
TDRIVE_STEP_M = 623.0


# --- synthetic -----------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    n_event_kinds: int = 20
    n_windows: int = 1000
    n_patterns: int = 20
    elements_per_pattern: int = 3
    n_private: int = 3
    n_target: int = 5
    seed: int = 0
    occurrence: tuple[float, ...] | None = None  # overrides the random Pr(e_n)

    def __post_init__(self):
        if self.n_private + self.n_target > self.n_patterns:
            raise ValueError("private and target selections must fit in n_patterns")
        if self.elements_per_pattern > self.n_event_kinds:
            raise ValueError("a pattern cannot use more distinct kinds than exist")
        if self.occurrence is not None and len(self.occurrence) != self.n_event_kinds:
            raise ValueError("occurrence needs one probability per event kind")


@dataclass(frozen=True)
class SyntheticDataset:
    stream: EventStream
    queries: list[PatternQuery]
    occurrence: tuple[float, ...]
    config: SynthConfig

    def presence(self) -> np.ndarray:
        """Boolean windows x kinds table of which kinds occurred where."""
        table = np.zeros((self.config.n_windows, self.config.n_event_kinds), dtype=bool)
        for e in self.stream:
            table[e.timestamp, int(e.kind[1:]) - 1] = True
        return table


def kind_name(n: int) -> str:
    return f"e{n + 1}"


def synthesize(cfg: SynthConfig = SynthConfig()) -> SyntheticDataset:
    root = SeededRng(cfg.seed).child("synth")
    rng_occ, rng_win, rng_pat = (root.child(k).generator() for k in ("occ", "win", "pat"))
    if cfg.occurrence is None:
        occurrence = rng_occ.random(cfg.n_event_kinds)
    else:
        occurrence = np.asarray(cfg.occurrence, dtype=float)
    draws = rng_win.random((cfg.n_windows, cfg.n_event_kinds))
    present = draws < occurrence

    events = []
    for m, n in zip(*np.nonzero(present)):
        events.append(Event("synthetic", len(events) + 1, int(m), kind_name(int(n))))

    order = rng_pat.permutation(cfg.n_patterns)
    private = set(order[:cfg.n_private].tolist())
    target = set(order[cfg.n_private:cfg.n_private + cfg.n_target].tolist())
    queries = []
    for k in range(cfg.n_patterns):
        kinds = rng_pat.choice(cfg.n_event_kinds, size=cfg.elements_per_pattern, replace=False)
        role = PrivacyRole.PRIVATE if k in private else PrivacyRole.TARGET if k in target else PrivacyRole.NONE
        queries.append(PatternQuery(f"P{k + 1}", tuple(kind_name(int(n)) for n in kinds),
                                    Mode.SET, 1, role))
    return SyntheticDataset(EventStream(events), queries, tuple(occurrence.tolist()), cfg)


# --- GPS grid --------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    cell_size: float = TDRIVE_STEP_M  # meters
    lon_min: float = 116.0
    lon_max: float = 116.8
    lat_min: float = 39.6
    lat_max: float = 40.2
    private_fraction: float = 0.20
    extra_target_fraction: float = 0.40
    private_to_target_fraction: float = 0.50
    seed: int = 0

    def __post_init__(self):
        for name in ("private_fraction", "extra_target_fraction", "private_to_target_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if not (self.lon_min < self.lon_max and self.lat_min < self.lat_max):
            raise ValueError("empty bounding box")

    @property
    def _m_per_deg(self) -> float:
        return math.pi * EARTH_RADIUS_M / 180.0

    @property
    def _lon_scale(self) -> float:
        return math.cos(math.radians(0.5 * (self.lat_min + self.lat_max)))

    @property
    def n_cols(self) -> int:
        width = (self.lon_max - self.lon_min) * self._m_per_deg * self._lon_scale
        return int(math.ceil(width / self.cell_size))

    @property
    def n_rows(self) -> int:
        height = (self.lat_max - self.lat_min) * self._m_per_deg
        return int(math.ceil(height / self.cell_size))

    def to_xy(self, lon: float, lat: float) -> tuple[float, float]:
        """Local equirectangular meters from the south-west corner."""
        return ((lon - self.lon_min) * self._m_per_deg * self._lon_scale,
                (lat - self.lat_min) * self._m_per_deg)

    def to_lonlat(self, x: float, y: float) -> tuple[float, float]:
        return (self.lon_min + x / (self._m_per_deg * self._lon_scale),
                self.lat_min + y / self._m_per_deg)

    def contains(self, lon: float, lat: float) -> bool:
        return self.lon_min <= lon <= self.lon_max and self.lat_min <= lat <= self.lat_max

    def cell_of(self, lon: float, lat: float) -> int:
        x, y = self.to_xy(lon, lat)
        col = min(int(x // self.cell_size), self.n_cols - 1)
        row = min(int(y // self.cell_size), self.n_rows - 1)
        return row * self.n_cols + col

    def cell_rc(self, cell: int) -> tuple[int, int]:
        return divmod(cell, self.n_cols)


# --- T-Drive ingestion -------------------------------------------------------------

class IngestError(RuntimeError):
    pass


@dataclass(frozen=True)
class IngestResult:
    stream: EventStream
    n_lines: int
    n_malformed: int
    n_out_of_bounds: int


MAX_MALFORMED_RATE = 0.10


def _parse_fix(line: str):
    parts = [p.strip() for p in line.split(",")]
    if len(parts) != 4:
        raise ValueError("expected 4 fields")
    taxi, when, lon, lat = parts
    ts = calendar.timegm(datetime.strptime(when, "%Y-%m-%d %H:%M:%S").timetuple())
    lon_f, lat_f = float(lon), float(lat)
    if not (math.isfinite(lon_f) and math.isfinite(lat_f)):
        raise ValueError("non-finite coordinate")
    return taxi, ts, lon_f, lat_f


def ingest_tdrive(path: str | os.PathLike, grid: GridSpec = GridSpec()) -> IngestResult:
    """Read one T-Drive text file into a stream of CELL_ENTRY events.

    Lines are ``taxi_id,YYYY-MM-DD HH:MM:SS,lon,lat``. Malformed lines and
    fixes outside the grid are skipped and counted; more than 10% malformed
    lines means the file is probably not T-Drive data, and is an error.
    Fixes are sorted by time (stable) since raw files are not always ordered.
    """
    try:
        with open(path, encoding="utf-8", errors="replace") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    fixes, bad, outside = [], 0, 0
    for ln in lines:
        try:
            fix = _parse_fix(ln)
        except ValueError:
            bad += 1
            continue
        if not grid.contains(fix[2], fix[3]):
            outside += 1
            continue
        fixes.append(fix)
    if lines and bad / len(lines) > MAX_MALFORMED_RATE:
        raise IngestError(f"{path}: {bad} of {len(lines)} lines malformed")
    fixes.sort(key=lambda f: f[1])
    events = [Event(taxi, n, ts, CELL_ENTRY, grid.cell_of(lon, lat))
              for n, (taxi, ts, lon, lat) in enumerate(fixes, start=1)]
    return IngestResult(EventStream(events), len(lines), bad, outside)


def ingest_tdrive_dir(directory: str | os.PathLike, grid: GridSpec = GridSpec()) -> tuple[EventStream, dict]:
    """Ingest every ``*.txt`` file of a directory and merge the streams.

    Returns the merged stream and per-file stats. Files over the malformed
    threshold raise ``IngestError`` listing all per-file counts.
    """
    files = sorted(Path(directory).glob("*.txt"))
    if not files:
        raise IngestError(f"no input files in {directory}")
    results, stats, failures = [], {}, []
    for f in files:
        try:
            r = ingest_tdrive(f, grid)
        except IngestError as exc:
            failures.append(str(exc))
            continue
        results.append(r.stream)
        stats[f.name] = {"lines": r.n_lines, "malformed": r.n_malformed,
                         "out_of_bounds": r.n_out_of_bounds, "events": len(r.stream)}
    if failures:
        raise IngestError("; ".join(failures))
    return merge_streams(results), stats


def assign_areas(cells: Iterable[int], grid: GridSpec = GridSpec()) -> tuple[frozenset, frozenset]:
    """Pick private and target cells.

    Private: ``private_fraction`` of all cells. Target: ``private_to_target_fraction``
    of the private cells plus ``extra_target_fraction`` of all cells drawn
    from the non-private ones.
    """
    pool = sorted(set(cells))
    if len(pool) < 10:
        raise ValueError(f"need at least 10 cells, got {len(pool)}")
    rng = SeededRng(grid.seed).child("areas").generator()
    n = len(pool)
    n_private = round(grid.private_fraction * n)
    shuffled = [pool[i] for i in rng.permutation(n)]
    private, rest = shuffled[:n_private], shuffled[n_private:]
    n_overlap = round(grid.private_to_target_fraction * n_private)
    n_extra = min(round(grid.extra_target_fraction * n), len(rest))
    overlap = [private[i] for i in rng.permutation(n_private)[:n_overlap]]
    extra = [rest[i] for i in rng.permutation(len(rest))[:n_extra]]
    return frozenset(private), frozenset(overlap) | frozenset(extra)


def taxi_queries(private_cells: Iterable[int], target_cells: Iterable[int],
                 window: int = 20 * TDRIVE_INTERVAL_S) -> list[PatternQuery]:
    """Single-element presence queries over the two cell sets."""
    return [
        PatternQuery("private_area", (ElementPredicate(CELL_ENTRY, frozenset(private_cells)),),
                     Mode.SET, window, PrivacyRole.PRIVATE),
        PatternQuery("target_area", (ElementPredicate(CELL_ENTRY, frozenset(target_cells)),),
                     Mode.SET, window, PrivacyRole.TARGET),
    ]


# --- T-Drive-like sample generator ----------------------------------------------------

@dataclass(frozen=True)
class TaxiSampleConfig:
    n_taxis: int = 100
    n_fixes: int = 480  # about one day at the native rate
    start: str = "2008-02-02 13:30:00"
    park_prob: float = 0.2
    seed: int = 0
    grid: GridSpec = field(default_factory=GridSpec)


def generate_tdrive_sample(out_dir: str | os.PathLike, cfg: TaxiSampleConfig = TaxiSampleConfig()) -> list[Path]:
    """Write a T-Drive formatted random-walk sample, one file per taxi.

    Fixes come roughly every 177 s; a moving taxi covers about 623 m
    per interval, a parked one stays put. Walks reflect at the grid border.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = cfg.grid
    width, height = g.to_xy(g.lon_max, g.lat_max)
    t0 = datetime.strptime(cfg.start, "%Y-%m-%d %H:%M:%S")
    paths = []
    for taxi in range(1, cfg.n_taxis + 1):
        rng = SeededRng(cfg.seed).child("taxi", taxi).generator()
        x, y = rng.uniform(0.25, 0.75) * width, rng.uniform(0.25, 0.75) * height
        heading = rng.uniform(0, 2 * math.pi)
        t = t0 + timedelta(seconds=int(rng.integers(0, TDRIVE_INTERVAL_S)))
        lines = []
        for _ in range(cfg.n_fixes):
            lon, lat = g.to_lonlat(x, y)
            lines.append(f"{taxi},{t:%Y-%m-%d %H:%M:%S},{lon:.5f},{lat:.5f}")
            t += timedelta(seconds=int(rng.integers(150, 205)))
            if rng.random() < cfg.park_prob:
                continue
            heading += rng.normal(0.0, 0.6)
            step = max(0.0, rng.normal(TDRIVE_STEP_M, 150.0))
            x, y = x + step * math.cos(heading), y + step * math.sin(heading)
            if not 0 <= x < width:
                x = min(max(-x if x < 0 else 2 * width - x, 0.0), width - 1e-6)
                heading = math.pi - heading
            if not 0 <= y < height:
                y = min(max(-y if y < 0 else 2 * height - y, 0.0), height - 1e-6)
                heading = -heading
        p = out / f"{taxi}.txt"
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        paths.append(p)
    return paths


# --- constructed scenario ----------------------------------------------------------------

def shared_element_scenario(n_windows: int = 1000, occurrence: float = 0.9,
                            seed: int = 0) -> tuple[EventStream, list[PatternQuery]]:
    """Two-element private pattern whose first element is shared with the target.

    Private ``(a, b)``, target ``(a, c)``: budget spent on ``b`` buys privacy
    at no cost to the target, budget on ``a`` protects target detections.
    """
    rng = SeededRng(seed).child("shared-element").generator()
    present = rng.random((n_windows, 3)) < occurrence
    events = []
    for m, n in zip(*np.nonzero(present)):
        events.append(Event("scenario", len(events) + 1, int(m), "abc"[int(n)]))
    queries = [PatternQuery("private", ("a", "b"), Mode.SET, 1, PrivacyRole.PRIVATE),
               PatternQuery("target", ("a", "c"), Mode.SET, 1, PrivacyRole.TARGET)]
    return EventStream(events), queries
