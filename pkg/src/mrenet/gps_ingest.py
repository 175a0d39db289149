"""GPS record parsing, session segmentation and speed computation."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, NamedTuple

import numpy as np

from .errors import DegenerateSessionError, ParseError

log = logging.getLogger(__name__)

RECORD_COLUMNS = ("runner_id", "timestamp_s", "cumulative_distance_m")

DEFAULT_GAP_THRESHOLD = 1800.0
DEFAULT_MIN_SESSION = 300.0
DEFAULT_MAX_SAMPLING_GAP = 10.0


class GpsRecord(NamedTuple):
    runner_id: str
    timestamp: float
    cumulative_distance: float


@dataclass
class IngestStats:
    """Counters for rows that were silently repaired or dropped."""

    rows: int = 0
    duplicates: int = 0
    decreasing_dropped: int = 0
    conflicting_timestamps: int = 0
    short_sessions: int = 0
    short_session_time: float = 0.0


@dataclass(eq=False)
class Session:
    """One training session, time offsets re-based so the first record is at 0.

    ``speeds`` stays ``None`` until :func:`compute_speed_profile` has run.
    ``imputed`` marks zero-speed records inserted into sampling gaps.
    """

    runner_id: str
    session_id: str
    start: float
    offsets: np.ndarray
    distances: np.ndarray
    speeds: np.ndarray | None = None
    imputed: np.ndarray | None = field(default=None, repr=False)

    @property
    def duration(self) -> float:
        return float(self.offsets[-1])

    @property
    def end(self) -> float:
        return self.start + self.duration

    def __len__(self):
        return len(self.offsets)

    def equals(self, other: "Session") -> bool:
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return np.array_equal(a, b)

        return (
            self.runner_id == other.runner_id
            and self.session_id == other.session_id
            and self.start == other.start
            and same(self.offsets, other.offsets)
            and same(self.distances, other.distances)
            and same(self.speeds, other.speeds)
            and same(self.imputed, other.imputed)
        )


def _parse_float(text, name, lineno):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{name} is not a number: {text!r}", lineno) from None
    if not math.isfinite(value):
        raise ParseError(f"{name} is not finite: {text!r}", lineno)
    return value


def parse_records(stream: IO[str] | Iterable[str], stats: IngestStats | None = None) -> list[GpsRecord]:
    """Parse ``runner_id,timestamp_s,cumulative_distance_m`` CSV rows.

    Runners are emitted in order of first appearance, each runner's rows
    in input order. Exact duplicate rows are removed. A single row whose
    distance dips below its predecessor while the next row recovers is a
    glitch and is dropped (counted in ``stats.decreasing_dropped``); a
    persistent drop is kept and later treated as a device reset.
    """
    stats = stats if stats is not None else IngestStats()
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty input, expected a header row", 1) from None
    if tuple(h.strip() for h in header) != RECORD_COLUMNS:
        raise ParseError(f"expected header {','.join(RECORD_COLUMNS)}, got {','.join(header)}", 1)

    by_runner: dict[str, list[GpsRecord]] = {}
    seen: dict[str, set] = {}
    for row in reader:
        lineno = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 3:
            raise ParseError(f"expected 3 fields, got {len(row)}", lineno)
        runner = row[0].strip()
        if not runner:
            raise ParseError("empty runner_id", lineno)
        ts = _parse_float(row[1], "timestamp_s", lineno)
        dist = _parse_float(row[2], "cumulative_distance_m", lineno)
        if dist < 0:
            raise ParseError(f"negative cumulative distance {dist}", lineno)
        stats.rows += 1
        key = (ts, dist)
        runner_seen = seen.setdefault(runner, set())
        if key in runner_seen:
            stats.duplicates += 1
            continue
        runner_seen.add(key)
        by_runner.setdefault(runner, []).append(GpsRecord(runner, ts, dist))

    out: list[GpsRecord] = []
    for rows in by_runner.values():
        out.extend(_drop_glitches(rows, stats))
    if stats.decreasing_dropped:
        log.warning("dropped %d rows with transiently decreasing distance", stats.decreasing_dropped)
    return out


def _drop_glitches(rows, stats):
    kept = []
    n = len(rows)
    for i, rec in enumerate(rows):
        if kept and rec.cumulative_distance < kept[-1].cumulative_distance:
            nxt = rows[i + 1].cumulative_distance if i + 1 < n else None
            if nxt is not None and nxt >= kept[-1].cumulative_distance:
                stats.decreasing_dropped += 1
                continue
        kept.append(rec)
    return kept


def segment_sessions(
    records: Iterable[GpsRecord],
    gap_threshold: float = DEFAULT_GAP_THRESHOLD,
    min_duration: float = DEFAULT_MIN_SESSION,
    stats: IngestStats | None = None,
) -> list[Session]:
    """Split each runner's stream into sessions.

    A new session starts when the time gap to the previous record exceeds
    ``gap_threshold`` or the cumulative distance decreases. Sessions
    shorter than ``min_duration`` seconds are discarded.
    """
    stats = stats if stats is not None else IngestStats()
    by_runner: dict[str, list[GpsRecord]] = {}
    for rec in records:
        by_runner.setdefault(rec.runner_id, []).append(rec)

    sessions: list[Session] = []
    for runner, rows in by_runner.items():
        rows = sorted(rows, key=lambda r: r.timestamp)
        ts = np.fromiter((r.timestamp for r in rows), dtype=np.float64, count=len(rows))
        ds = np.fromiter((r.cumulative_distance for r in rows), dtype=np.float64, count=len(rows))
        if ts.size > 1:
            keep = np.ones(ts.size, dtype=bool)
            keep[1:] = ts[1:] != ts[:-1]
            stats.conflicting_timestamps += int(ts.size - keep.sum())
            ts, ds = ts[keep], ds[keep]
        if ts.size == 0:
            continue
        breaks = np.flatnonzero((np.diff(ts) > gap_threshold) | (np.diff(ds) < 0)) + 1
        starts = np.concatenate(([0], breaks))
        stops = np.concatenate((breaks, [ts.size]))
        k = 0
        for a, b in zip(starts, stops):
            t0, d0 = ts[a], ds[a]
            offsets = ts[a:b] - t0
            if offsets[-1] < min_duration:
                stats.short_sessions += 1
                stats.short_session_time += float(offsets[-1])
                continue
            sessions.append(
                Session(
                    runner_id=runner,
                    session_id=f"{runner}-{k:04d}",
                    start=float(t0),
                    offsets=offsets,
                    distances=ds[a:b] - d0,
                )
            )
            k += 1
    return sessions


def session_records(sessions: Iterable[Session]) -> list[GpsRecord]:
    """Rebuild absolute GPS records from sessions (inverse of segmentation)."""
    out = []
    for s in sessions:
        real = slice(None) if s.imputed is None else ~s.imputed
        for t, d in zip(s.offsets[real], s.distances[real]):
            out.append(GpsRecord(s.runner_id, s.start + float(t), float(d)))
    return out


def compute_speed_profile(session: Session, max_sampling_gap: float = DEFAULT_MAX_SAMPLING_GAP) -> Session:
    """Populate per-record speeds, imputing zero-speed records into long gaps.

    Speed at record j is the distance gained since record j-1 divided by
    the elapsed time; the first record has speed 0. Where two records are
    more than ``max_sampling_gap`` seconds apart, zero-speed records are
    inserted every ``max_sampling_gap`` seconds so stationary time counts
    at zero speed. The record closing the gap keeps the average speed of
    the whole gap.
    """
    if len(session.offsets) < 2:
        raise DegenerateSessionError(f"session {session.session_id} has fewer than 2 records")
    if max_sampling_gap <= 0:
        raise ValueError("max_sampling_gap must be positive")
    t = np.asarray(session.offsets, dtype=np.float64)
    d = np.asarray(session.distances, dtype=np.float64)
    dt = np.diff(t)
    v = np.concatenate(([0.0], np.diff(d) / dt))

    # imputed points strictly inside each gap: t[j-1] + k*gap for k = 1.. while < t[j]
    n_fill = np.where(dt > max_sampling_gap, np.ceil(dt / max_sampling_gap) - 1, 0).astype(np.int64)
    if not n_fill.any():
        return replace(session, speeds=v, imputed=np.zeros(t.size, dtype=bool))

    times, dists, speeds, flags = [t[:1]], [d[:1]], [v[:1]], [np.zeros(1, dtype=bool)]
    for j in range(1, t.size):
        m = n_fill[j - 1]
        if m:
            fill = t[j - 1] + max_sampling_gap * np.arange(1, m + 1)
            fill = fill[fill < t[j]]
            times.append(fill)
            dists.append(np.full(fill.size, d[j - 1]))
            speeds.append(np.zeros(fill.size))
            flags.append(np.ones(fill.size, dtype=bool))
        times.append(t[j : j + 1])
        dists.append(d[j : j + 1])
        speeds.append(v[j : j + 1])
        flags.append(np.zeros(1, dtype=bool))
    return replace(
        session,
        offsets=np.concatenate(times),
        distances=np.concatenate(dists),
        speeds=np.concatenate(speeds),
        imputed=np.concatenate(flags),
    )


def ingest(
    stream,
    gap_threshold=DEFAULT_GAP_THRESHOLD,
    min_duration=DEFAULT_MIN_SESSION,
    max_sampling_gap=DEFAULT_MAX_SAMPLING_GAP,
    stats=None,
):
    """parse -> segment -> speeds, the full ingest step."""
    stats = stats if stats is not None else IngestStats()
    records = parse_records(stream, stats)
    sessions = segment_sessions(records, gap_threshold, min_duration, stats)
    return [compute_speed_profile(s, max_sampling_gap) for s in sessions]


# ---------------------------------------------------------------------------
# JSON lines
# ---------------------------------------------------------------------------


def session_to_dict(s: Session) -> dict:
    out = {
        "runner_id": s.runner_id,
        "session_id": s.session_id,
        "start": s.start,
        "duration": s.duration,
        "offsets": s.offsets.tolist(),
        "distances": s.distances.tolist(),
    }
    if s.speeds is not None:
        out["speeds"] = s.speeds.tolist()
        out["imputed"] = s.imputed.astype(int).tolist()
    return out


def session_from_dict(obj: dict) -> Session:
    speeds = obj.get("speeds")
    imputed = obj.get("imputed")
    return Session(
        runner_id=str(obj["runner_id"]),
        session_id=str(obj["session_id"]),
        start=float(obj["start"]),
        offsets=np.asarray(obj["offsets"], dtype=np.float64),
        distances=np.asarray(obj["distances"], dtype=np.float64),
        speeds=None if speeds is None else np.asarray(speeds, dtype=np.float64),
        imputed=None if imputed is None else np.asarray(imputed, dtype=bool),
    )


def write_sessions_jsonl(sessions: Iterable[Session], fh: IO[str]) -> None:
    for s in sessions:
        fh.write(json.dumps(session_to_dict(s), separators=(",", ":")))
        fh.write("\n")


def read_sessions_jsonl(fh: IO[str]) -> list[Session]:
    out = []
    for lineno, line in enumerate(fh, start=1):
        if not line.strip():
            continue
        try:
            out.append(session_from_dict(json.loads(line)))
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"bad session record: {exc}", lineno) from None
    return out
