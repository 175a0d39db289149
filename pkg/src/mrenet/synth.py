"""Synthetic studies with planted parameters.

Sessions are sequences of constant-speed segments and unrecorded
stationary rests, so each session's true profile is a step function.
Performances follow the multiplicative model with log-normal noise.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .profile import PeriodWindow, write_period_windows
from .study import LAB_FIELDS, STUDY_DISTANCES, FieldTest, LabResult, write_field_tests, write_lab_results

DAY = 86400

DEFAULT_GAMMA = {
    "weight_kg": 0.001,
    "height_cm": 0.002,
    "age_y": 0.002,
    "vo2max_ml": -0.002,
    "vo2max_kmh": -0.005,
    "economy_ml": 0.0005,
    "economy_kcal": 0.05,
    "obla_ms": -0.06,
}

# per-runner base ranges, then per-period relative jitter
LAB_RANGES = {
    "weight_kg": (50.0, 75.0, 0.02),
    "height_cm": (160.0, 190.0, 0.0),
    "age_y": (20.0, 40.0, 0.0),
    "vo2max_ml": (55.0, 75.0, 0.03),
    "vo2max_kmh": (18.0, 23.0, 0.03),
    "economy_ml": (180.0, 230.0, 0.03),
    "economy_kcal": (0.85, 1.15, 0.03),
    "obla_ms": (4.0, 5.2, 0.04),
}


@dataclass
class SynthConfig:
    runner_count: int = 10
    periods_per_runner: int = 4
    sessions_per_period: tuple = (8, 14)
    alpha: float = 1.05
    tau: float = 0.107
    gamma: dict = field(default_factory=lambda: dict(DEFAULT_GAMMA))
    delta0: float = 0.0
    # planted interval effects: (lower, upper, coefficient per second of average time)
    delta_intervals: tuple = ((5.3, 5.7, -1e-4),)
    noise_sd: float = 0.01
    seed: int = 0
    sample_interval: int = 5
    period_days: tuple = (70, 100)
    contaminated_per_runner: int = 0
    distances: tuple = STUDY_DISTANCES

    def __post_init__(self):
        self.sessions_per_period = tuple(self.sessions_per_period)
        self.period_days = tuple(self.period_days)
        self.distances = tuple(float(d) for d in self.distances)
        self.delta_intervals = tuple(tuple(float(x) for x in d) for d in self.delta_intervals)
        if self.runner_count < 1 or self.periods_per_runner < 1:
            raise ValueError("need at least one runner and one period")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        for lo, hi, _ in self.delta_intervals:
            if not 0 < lo < hi < 12.5:
                raise ValueError(f"planted interval ({lo}, {hi}] must satisfy 0 < lo < hi < 12.5")
        unknown = set(self.gamma) - set(LAB_FIELDS)
        if unknown:
            raise ValueError(f"unknown lab covariates in gamma: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthConfig":
        return cls(**obj)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["sessions_per_period"] = list(self.sessions_per_period)
        out["period_days"] = list(self.period_days)
        out["distances"] = list(self.distances)
        out["delta_intervals"] = [list(d) for d in self.delta_intervals]
        return out


@dataclass
class SynthStudy:
    gps_csv: str
    lab_csv: str
    field_tests_csv: str
    periods_csv: str
    truth: dict

    def write(self, outdir) -> dict:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = {
            "gps": outdir / "gps.csv",
            "lab": outdir / "lab.csv",
            "field_tests": outdir / "field_tests.csv",
            "periods": outdir / "periods.csv",
            "truth": outdir / "truth.json",
        }
        paths["gps"].write_text(self.gps_csv)
        paths["lab"].write_text(self.lab_csv)
        paths["field_tests"].write_text(self.field_tests_csv)
        paths["periods"].write_text(self.periods_csv)
        paths["truth"].write_text(json.dumps(self.truth, indent=1, sort_keys=True) + "\n")
        return paths


def _speed(rng, lo, hi):
    """A speed in [lo, hi) that never coincides with a grid point or interval endpoint."""
    k = int(rng.integers(int(round(lo / 0.025)), int(round(hi / 0.025))))
    return round(0.025 * k + 0.0135, 4)


def _session_segments(rng, weights, si, contaminated=False):
    """List of (speed, seconds, recorded) segments; unrecorded segments are rests."""
    def dur(a, b):
        return si * int(rng.integers(a // si, b // si + 1))

    segs = [(_speed(rng, 2.8, 3.8), dur(600, 1200), True)]
    if contaminated:
        segs.append((_speed(rng, 8.5, 10.0), dur(900, 2400), True))
        segs.append((_speed(rng, 2.5, 3.3), dur(300, 600), True))
        return segs
    kind = rng.choice(4, p=weights)
    if kind == 0:  # steady run
        for _ in range(int(rng.integers(6, 14))):
            segs.append((_speed(rng, 3.0, 4.4), 300, True))
    elif kind == 1:  # tempo blocks
        for _ in range(int(rng.integers(3, 7))):
            segs.append((_speed(rng, 4.4, 5.2), dur(480, 720), True))
            segs.append((_speed(rng, 2.8, 3.4), dur(60, 120), True))
    elif kind == 2:  # reps in the 5.3-5.7 band
        for _ in range(int(rng.integers(4, 11))):
            segs.append((_speed(rng, 5.3, 5.7), dur(180, 360), True))
            segs.append((0.0, dur(60, 120), False))
    else:  # short fast reps
        for _ in range(int(rng.integers(6, 13))):
            segs.append((_speed(rng, 5.8, 7.4), dur(60, 120), True))
            segs.append((0.0, dur(60, 180), False))
    segs.append((_speed(rng, 2.5, 3.3), dur(300, 600), True))
    return segs


def _trace(segments, si):
    """(times, distances) for a session starting at 0 m, 0 s."""
    times = [0.0]
    dists = [0.0]
    t = 0.0
    d = 0.0
    for v, seconds, recorded in segments:
        if recorded:
            steps = seconds // si
            for k in range(1, steps + 1):
                times.append(t + k * si)
                dists.append(d + v * (k * si))
            t += steps * si
            d = dists[-1]
        else:
            t += seconds
            times.append(t)
            dists.append(d)
    return times, dists


def true_profile(segments, v: float) -> float:
    """Seconds spent strictly faster than ``v`` (rests count as speed 0)."""
    if v < 0:
        return float(sum(s for _, s, _ in segments))
    return float(sum(s for speed, s, _ in segments if speed > v))


def _lab_values(rng, base, period):
    out = {}
    for name, (lo, hi, jitter) in LAB_RANGES.items():
        value = base[name] * (1.0 + jitter * rng.uniform(-1.0, 1.0))
        if name == "age_y":
            value = base[name] + 0.25 * period
        out[name] = float(value)
    return out


def _runner(cfg, runner_id, rng):
    si = cfg.sample_interval
    base = {name: rng.uniform(lo, hi) for name, (lo, hi, _) in LAB_RANGES.items()}
    period_start = 0
    windows, labs, sessions, periods = [], [], [], []
    contaminated_left = cfg.contaminated_per_runner
    for i in range(1, cfg.periods_per_runner + 1):
        days = int(rng.integers(cfg.period_days[0], cfg.period_days[1] + 1))
        start, end = period_start, period_start + days * DAY
        windows.append(PeriodWindow(runner_id, i, float(start), float(end)))
        weights = rng.dirichlet(np.ones(4))
        n_sessions = int(rng.integers(cfg.sessions_per_period[0], cfg.sessions_per_period[1] + 1))
        n_bad = 1 if contaminated_left > 0 else 0
        contaminated_left -= n_bad
        slots = rng.choice((days - 1) * 2, size=n_sessions + n_bad, replace=False)
        slots.sort()
        bad_slot = slots[int(rng.integers(slots.size))] if n_bad else None
        clean = []
        for slot in slots:
            day, half = divmod(int(slot), 2)
            t0 = start + (day + 1) * DAY + (7 if half == 0 else 17) * 3600 + si * int(rng.integers(0, 360))
            is_bad = slot == bad_slot
            segs = _session_segments(rng, weights, si, contaminated=is_bad)
            times, dists = _trace(segs, si)
            rec = {
                "runner_id": runner_id,
                "period_index": i,
                "start": float(t0),
                "end": float(t0 + times[-1]),
                "contaminated": bool(is_bad),
                "segments": [[v, s, r] for v, s, r in segs],
                "_times": times,
                "_dists": dists,
            }
            sessions.append(rec)
            if not is_bad:
                clean.append(segs)
        lab = _lab_values(rng, base, i)
        labs.append(LabResult(runner_id, i, **lab))
        mean_len = float(np.mean([true_profile(s, -1.0) for s in clean]))
        effects = []
        for lo, hi, coef in cfg.delta_intervals:
            band = float(np.mean([true_profile(s, lo) - true_profile(s, hi) for s in clean]))
            effects.append(band)
        theta = cfg.delta0 * mean_len + sum(c * b for (_, _, c), b in zip(cfg.delta_intervals, effects))
        zeta = sum(cfg.gamma.get(name, 0.0) * lab[name] for name in LAB_FIELDS)
        perf = {}
        for D in cfg.distances:
            eps = rng.normal(0.0, cfg.noise_sd) if cfg.noise_sd > 0 else 0.0
            perf[D] = cfg.tau * D**cfg.alpha * math.exp(zeta + theta + eps)
        periods.append(
            {
                "runner_id": runner_id,
                "period_index": i,
                "session_count": len(clean),
                "mean_session_length": mean_len,
                "band_times": effects,
                "theta": theta,
                "zeta": zeta,
                "performances": {repr(D): p for D, p in perf.items()},
            }
        )
        period_start = end
    return windows, labs, sessions, periods


def generate(config: SynthConfig) -> SynthStudy:
    """Build a synthetic study; identical configs give identical bytes."""
    children = np.random.SeedSequence(config.seed).spawn(config.runner_count)
    width = max(2, len(str(config.runner_count)))
    all_windows, all_labs, all_sessions, all_periods = [], [], [], []
    for r, child in enumerate(children, start=1):
        runner_id = f"R{r:0{width}d}"
        windows, labs, sessions, periods = _runner(config, runner_id, np.random.default_rng(child))
        all_windows += windows
        all_labs += labs
        all_sessions += sessions
        all_periods += periods

    gps = io.StringIO()
    w = csv.writer(gps, lineterminator="\n")
    w.writerow(["runner_id", "timestamp_s", "cumulative_distance_m"])
    for s in all_sessions:
        for t, d in zip(s.pop("_times"), s.pop("_dists")):
            w.writerow([s["runner_id"], repr(s["start"] + t), repr(d)])

    tests = [
        FieldTest(p["runner_id"], p["period_index"], float(D), perf)
        for p in all_periods
        for D, perf in ((float(k), v) for k, v in p["performances"].items())
    ]
    lab_io, ft_io, per_io = io.StringIO(), io.StringIO(), io.StringIO()
    write_lab_results(all_labs, lab_io)
    write_field_tests(tests, ft_io)
    write_period_windows(all_windows, per_io)

    truth = {
        "config": config.to_dict(),
        "coefficients": {
            "tau": config.tau,
            "alpha": config.alpha,
            "gamma": {k: config.gamma.get(k, 0.0) for k in LAB_FIELDS},
            "delta0": config.delta0,
            "delta_intervals": [list(d) for d in config.delta_intervals],
        },
        "sessions": all_sessions,
        "periods": all_periods,
    }
    return SynthStudy(gps.getvalue(), lab_io.getvalue(), ft_io.getvalue(), per_io.getvalue(), truth)
