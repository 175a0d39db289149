"""Training distribution profiles: observed, smoothed, cleaned, averaged.

A profile records, for each speed ``v`` on a grid, the session time spent
strictly faster than ``v``. Grids are built from exact rational speeds so
that interval endpoints for every resolution land on grid points.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import ParseError, UninformativePeriodError
from .gps_ingest import Session
from .kernels import pava_decreasing, profile_accumulate

V_MAX = 12.5
BASE_DIVISIONS = 500  # 0.025 m/s base step
DEFAULT_RESOLUTIONS = tuple(range(5, 126, 5))

CLEAN_SPEED = 8.0
CLEAN_MAX_SECONDS = 125.0

_V_MAX = Fraction(25, 2)


def endpoint(g: int, resolution: int) -> float:
    """Speed ``g * 12.5 / resolution`` rounded once from the exact rational."""
    return float(_V_MAX * Fraction(g, resolution))


def speed_grid(resolutions: Iterable[int] = DEFAULT_RESOLUTIONS, base_divisions: int = BASE_DIVISIONS) -> np.ndarray:
    """Common evaluation grid on [0, 12.5].

    Union of a uniform base grid and every interval endpoint of every
    requested resolution, so :func:`interval_times` never interpolates.
    """
    points = {Fraction(k, base_divisions) for k in range(base_divisions + 1)}
    for G in resolutions:
        G = int(G)
        if G < 1:
            raise ValueError(f"resolution must be >= 1, got {G}")
        points.update(Fraction(g, G) for g in range(G + 1))
    return np.array([float(_V_MAX * q) for q in sorted(points)])


def check_alignment(grid: np.ndarray, resolution: int) -> np.ndarray:
    """Grid indices of the ``resolution + 1`` interval endpoints; raises if any is missing."""
    if resolution < 1:
        raise ValueError(f"resolution must be >= 1, got {resolution}")
    ends = np.array([endpoint(g, resolution) for g in range(resolution + 1)])
    idx = np.searchsorted(grid, ends)
    ok = (idx < grid.size) & (grid[np.minimum(idx, grid.size - 1)] == ends)
    if not ok.all():
        raise ValueError(f"resolution {resolution} is not aligned with the profile grid")
    return idx


@dataclass(eq=False)
class TrainingDistributionProfile:
    session_id: str
    runner_id: str
    start: float
    grid: np.ndarray
    values: np.ndarray
    total_duration: float

    def value_at(self, v: float) -> float:
        if v < 0:
            return self.total_duration
        i = int(np.searchsorted(self.grid, v))
        if i >= self.grid.size or self.grid[i] != v:
            raise KeyError(f"speed {v} is not on the profile grid")
        return float(self.values[i])


@dataclass(eq=False)
class PeriodProfile:
    runner_id: str
    period_index: int
    grid: np.ndarray
    values: np.ndarray
    mean_session_length: float
    session_count: int

    def value_at(self, v: float) -> float:
        if v < 0:
            return self.mean_session_length
        i = int(np.searchsorted(self.grid, v))
        if i >= self.grid.size or self.grid[i] != v:
            raise KeyError(f"speed {v} is not on the profile grid")
        return float(self.values[i])


@dataclass(frozen=True)
class PeriodWindow:
    """Training period ``[start, end)`` in absolute seconds for one runner."""

    runner_id: str
    period_index: int
    start: float
    end: float


def _check_grid(grid):
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("speed grid must be a non-empty 1-d sequence")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("speed grid must be strictly increasing")
    if grid[0] < 0 or grid[-1] > V_MAX:
        raise ValueError(f"speed grid must lie within [0, {V_MAX}]")
    return grid


def observed_profile(session: Session, grid: Sequence[float]) -> TrainingDistributionProfile:
    """Observed profile: sum of ``T[j] - T[j-1]`` over records with ``V[j] > v``."""
    grid = _check_grid(grid)
    if session.speeds is None:
        raise ValueError(f"session {session.session_id} has no speeds; run compute_speed_profile first")
    dt = np.diff(session.offsets)
    speeds = session.speeds[1:]
    # evaluate at v = -1 too: the same ordered sum gives the session total
    full = profile_accumulate(dt, speeds, np.concatenate(([-1.0], grid)))
    return TrainingDistributionProfile(
        session_id=session.session_id,
        runner_id=session.runner_id,
        start=session.start,
        grid=grid,
        values=full[1:],
        total_duration=float(full[0]),
    )


def smooth_profile(profile: TrainingDistributionProfile) -> TrainingDistributionProfile:
    """Least-squares non-increasing fit of the profile values, clipped to [0, t_u]."""
    fitted = pava_decreasing(profile.values)
    fitted = np.clip(fitted, 0.0, profile.total_duration)
    return replace(profile, values=fitted)


def clean_sessions(profiles, speed=CLEAN_SPEED, max_seconds=CLEAN_MAX_SECONDS):
    """Split profiles into (kept, dropped); dropped iff more than ``max_seconds`` above ``speed``."""
    kept, dropped = [], []
    for p in profiles:
        (dropped if p.value_at(speed) > max_seconds else kept).append(p)
    return kept, dropped


def assign_periods(profiles, windows: Iterable[PeriodWindow]):
    """Group profiles by ``(runner_id, period_index)`` using session start times.

    Every window gets an entry, possibly empty. Sessions outside all
    windows are left out.
    """
    by_runner: dict[str, list[PeriodWindow]] = {}
    groups: dict[tuple[str, int], list] = {}
    for w in windows:
        by_runner.setdefault(w.runner_id, []).append(w)
        groups[(w.runner_id, w.period_index)] = []
    for p in profiles:
        for w in by_runner.get(p.runner_id, ()):
            if w.start <= p.start < w.end:
                groups[(w.runner_id, w.period_index)].append(p)
                break
    return groups


def period_average(profiles, runner_id: str, period_index: int, min_sessions: int = 1) -> PeriodProfile:
    """Pointwise mean of the period's profiles, summed in session_id order."""
    profiles = sorted(profiles, key=lambda p: p.session_id)
    if len(profiles) < max(min_sessions, 1):
        raise UninformativePeriodError(
            f"runner {runner_id} period {period_index} has {len(profiles)} sessions (need {max(min_sessions, 1)})"
        )
    grid = profiles[0].grid
    total = np.zeros(grid.size)
    length = 0.0
    for p in profiles:
        if p.grid.shape != grid.shape or not np.array_equal(p.grid, grid):
            raise ValueError("all profiles in a period must share one grid")
        total += p.values
        length += p.total_duration
    n = len(profiles)
    return PeriodProfile(
        runner_id=runner_id,
        period_index=int(period_index),
        grid=grid,
        values=total / n,
        mean_session_length=length / n,
        session_count=n,
    )


def interval_times(period, resolution: int) -> np.ndarray:
    """Average time per speed interval ``(v[g-1], v[g]]`` for ``g = 1..G``, seconds.

    The grid runs from 0 to 12.5 m/s in ``G`` equal steps.
    """
    idx = check_alignment(period.grid, int(resolution))
    vals = period.values[idx]
    return vals[:-1] - vals[1:]


def build_period_profiles(profiles, windows, min_sessions: int = 1):
    """Average every window; returns ``(period_profiles, uninformative_keys)``."""
    groups = assign_periods(profiles, windows)
    out: dict[tuple[str, int], PeriodProfile] = {}
    uninformative = []
    for key in sorted(groups):
        try:
            out[key] = period_average(groups[key], key[0], key[1], min_sessions)
        except UninformativePeriodError:
            uninformative.append(key)
    return out, uninformative


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------


def write_profiles_csv(profiles, fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["session_id", "v", "P"])
    for p in profiles:
        for v, val in zip(p.grid.tolist(), p.values.tolist()):
            w.writerow([p.session_id, repr(v), repr(val)])


def read_period_windows(fh: IO[str]) -> list[PeriodWindow]:
    from .study import _typed, read_csv_rows

    out = []
    for lineno, row in read_csv_rows(fh, ("runner_id", "period_index", "start_s", "end_s")):
        start = _typed(lineno, float, row[2], "start_s")
        end = _typed(lineno, float, row[3], "end_s")
        if not end > start:
            raise ParseError(f"period window must have end_s > start_s, got [{start}, {end})", lineno)
        out.append(PeriodWindow(row[0], _typed(lineno, int, row[1], "period_index"), start, end))
    return out


def write_period_windows(windows, fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["runner_id", "period_index", "start_s", "end_s"])
    for win in windows:
        w.writerow([win.runner_id, win.period_index, repr(float(win.start)), repr(float(win.end))])


def periods_to_json(periods: dict, uninformative=(), dropped_sessions=()) -> dict:
    items = [periods[k] for k in sorted(periods)]
    grid = items[0].grid.tolist() if items else []
    return {
        "grid": grid,
        "periods": [
            {
                "runner_id": p.runner_id,
                "period_index": p.period_index,
                "session_count": p.session_count,
                "mean_session_length": p.mean_session_length,
                "values": p.values.tolist(),
            }
            for p in items
        ],
        "uninformative": [list(k) for k in uninformative],
        "dropped_sessions": list(dropped_sessions),
    }


def periods_from_json(obj: dict):
    grid = np.asarray(obj["grid"], dtype=np.float64)
    periods = {}
    for item in obj["periods"]:
        p = PeriodProfile(
            runner_id=str(item["runner_id"]),
            period_index=int(item["period_index"]),
            grid=grid,
            values=np.asarray(item["values"], dtype=np.float64),
            mean_session_length=float(item["mean_session_length"]),
            session_count=int(item["session_count"]),
        )
        periods[(p.runner_id, p.period_index)] = p
    uninformative = [(str(r), int(i)) for r, i in obj.get("uninformative", [])]
    return periods, uninformative


def dump_periods(periods, fh, uninformative=(), dropped_sessions=()):
    json.dump(periods_to_json(periods, uninformative, dropped_sessions), fh, separators=(",", ":"))
