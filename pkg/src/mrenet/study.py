"""Design matrix assembly: field tests x lab results x period profiles."""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import JoinError, ParseError
from .profile import endpoint, interval_times

STUDY_DISTANCES = (1200.0, 2400.0, 3600.0)

LAB_FIELDS = (
    "weight_kg",
    "height_cm",
    "age_y",
    "vo2max_ml",
    "vo2max_kmh",
    "economy_ml",
    "economy_kcal",
    "obla_ms",
)
SCALAR_COLUMNS = ("log_distance",) + LAB_FIELDS + ("mean_session_s",)

FIELD_TEST_COLUMNS = ("runner_id", "period_index", "distance_m", "performance_s")
LAB_COLUMNS = ("runner_id", "period_index") + LAB_FIELDS


@dataclass(frozen=True)
class LabResult:
    runner_id: str
    period_index: int
    weight_kg: float
    height_cm: float
    age_y: float
    vo2max_ml: float
    vo2max_kmh: float
    economy_ml: float
    economy_kcal: float
    obla_ms: float

    def __post_init__(self):
        for name in LAB_FIELDS:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"lab covariate {name} must be positive, got {value}")

    def covariates(self) -> tuple:
        return astuple(self)[2:]


@dataclass(frozen=True)
class FieldTest:
    runner_id: str
    period_index: int
    distance_m: float
    performance_s: float

    def __post_init__(self):
        if not (self.performance_s > 0 and math.isfinite(self.performance_s)):
            raise ValueError(f"performance must be positive, got {self.performance_s}")
        if not self.distance_m > 0:
            raise ValueError(f"distance must be positive, got {self.distance_m}")


def interval_names(resolution: int) -> list[str]:
    return [f"t_{g:03d}" for g in range(1, resolution + 1)]


def interval_bounds(resolution: int) -> list[tuple[float, float]]:
    return [(endpoint(g - 1, resolution), endpoint(g, resolution)) for g in range(1, resolution + 1)]


@dataclass(eq=False)
class StudyTable:
    """Rows keyed by ``(runner_id, period_index, distance_m)``.

    ``y`` is log performance; ``X`` holds the ``10 + G`` covariates named
    in ``columns`` (no intercept column).
    """

    X: np.ndarray
    y: np.ndarray
    keys: list
    columns: list
    resolution: int

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def performance(self) -> np.ndarray:
        return np.exp(self.y)

    @property
    def runners(self) -> list[str]:
        return sorted({k[0] for k in self.keys})

    def subset(self, mask) -> "StudyTable":
        mask = np.asarray(mask, dtype=bool)
        return StudyTable(
            X=self.X[mask],
            y=self.y[mask],
            keys=[k for k, m in zip(self.keys, mask) if m],
            columns=list(self.columns),
            resolution=self.resolution,
        )

    def for_runners(self, runners: Iterable[str]) -> "StudyTable":
        wanted = set(runners)
        return self.subset([k[0] in wanted for k in self.keys])


def build_table(
    field_tests: Sequence[FieldTest],
    lab_results: Sequence[LabResult],
    period_profiles: dict,
    resolution: int,
    uninformative: Iterable[tuple] = (),
    distances: Sequence[float] = STUDY_DISTANCES,
) -> StudyTable:
    """One row per field test; periods listed in ``uninformative`` are skipped."""
    labs = {(l.runner_id, l.period_index): l for l in lab_results}
    skip = {(str(r), int(i)) for r, i in uninformative}
    allowed = set(float(d) for d in distances)
    rows, ys, keys = [], [], []
    blocks: dict[tuple, np.ndarray] = {}
    for ft in sorted(field_tests, key=lambda f: (f.runner_id, f.period_index, f.distance_m)):
        key = (ft.runner_id, ft.period_index)
        if key in skip:
            continue
        if float(ft.distance_m) not in allowed:
            raise ValueError(f"distance {ft.distance_m} for runner {ft.runner_id} is not a study distance")
        if key not in blocks:
            if key not in labs:
                raise JoinError(f"no lab result for runner {ft.runner_id} period {ft.period_index}")
            if key not in period_profiles:
                raise JoinError(f"no period profile for runner {ft.runner_id} period {ft.period_index}")
            pp = period_profiles[key]
            blocks[key] = np.concatenate(
                (labs[key].covariates(), [pp.mean_session_length], interval_times(pp, resolution))
            )
        rows.append(np.concatenate(([math.log(ft.distance_m)], blocks[key])))
        ys.append(math.log(ft.performance_s))
        keys.append((ft.runner_id, ft.period_index, float(ft.distance_m)))
    p = len(SCALAR_COLUMNS) + resolution
    X = np.vstack(rows) if rows else np.empty((0, p))
    return StudyTable(
        X=X,
        y=np.asarray(ys, dtype=np.float64),
        keys=keys,
        columns=list(SCALAR_COLUMNS) + interval_names(resolution),
        resolution=resolution,
    )


def choose_test_runners(runners: Sequence[str], test_runner_count: int = 4, seed: int = 0) -> list[str]:
    runners = sorted(set(runners))
    if len(runners) < test_runner_count + 1:
        raise ValueError(f"need at least {test_runner_count + 1} runners to hold out {test_runner_count}, got {len(runners)}")
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(runners), size=test_runner_count, replace=False)
    return sorted(runners[i] for i in picked)


def split_by_runner(table: StudyTable, test_runner_count: int = 4, seed: int = 0):
    """(estimation, test): all rows of the randomly chosen runners go to test."""
    test_runners = set(choose_test_runners(table.runners, test_runner_count, seed))
    in_test = np.array([k[0] in test_runners for k in table.keys], dtype=bool)
    return table.subset(~in_test), table.subset(in_test)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def read_csv_rows(fh: IO[str], columns: Sequence[str]):
    """Yield ``(line_number, fields)`` after validating the header."""
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty input, expected a header row", 1) from None
    if [h.strip() for h in header] != list(columns):
        raise ParseError(f"expected header {','.join(columns)}, got {','.join(header)}", 1)
    for row in reader:
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(columns):
            raise ParseError(f"expected {len(columns)} fields, got {len(row)}", reader.line_num)
        yield reader.line_num, [c.strip() for c in row]


def _typed(lineno, fn, text, name):
    try:
        return fn(text)
    except ValueError:
        raise ParseError(f"bad {name}: {text!r}", lineno) from None


def read_field_tests(fh: IO[str]) -> list[FieldTest]:
    out = []
    for lineno, row in read_csv_rows(fh, FIELD_TEST_COLUMNS):
        try:
            out.append(
                FieldTest(
                    row[0],
                    _typed(lineno, int, row[1], "period_index"),
                    _typed(lineno, float, row[2], "distance_m"),
                    _typed(lineno, float, row[3], "performance_s"),
                )
            )
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(str(exc), lineno) from None
    return out


def read_lab_results(fh: IO[str]) -> list[LabResult]:
    out = []
    for lineno, row in read_csv_rows(fh, LAB_COLUMNS):
        values = [_typed(lineno, float, v, name) for v, name in zip(row[2:], LAB_FIELDS)]
        try:
            out.append(LabResult(row[0], _typed(lineno, int, row[1], "period_index"), *values))
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(str(exc), lineno) from None
    return out


def write_field_tests(tests: Iterable[FieldTest], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(FIELD_TEST_COLUMNS)
    for t in tests:
        w.writerow([t.runner_id, t.period_index, repr(float(t.distance_m)), repr(float(t.performance_s))])


def write_lab_results(labs: Iterable[LabResult], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(LAB_COLUMNS)
    for l in labs:
        w.writerow([l.runner_id, l.period_index] + [repr(float(getattr(l, f.name))) for f in fields(l)[2:]])
