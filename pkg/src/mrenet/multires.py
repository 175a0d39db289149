"""Multi-resolution elastic net: CV tuning, test error, resolution choice, export."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Callable, Mapping, Sequence

import numpy as np

from .elasticnet import DEFAULT_MAX_ITER, DEFAULT_TOL, ElasticNetFit, ElasticNetProblem, solution_path, solve
from .profile import DEFAULT_RESOLUTIONS
from .study import LAB_FIELDS, StudyTable, interval_bounds

DEFAULT_LAMBDA2_GRID = (0.0, 0.01, 0.1, 1.0, 10.0, 100.0)
DEFAULT_FRACTIONS = tuple(round(0.05 * k, 2) for k in range(1, 21))

NOTES = (
    "CV folds allocate whole field tests by default (see fold_unit); the estimation/test split is by runner.",
    "Normal-theory confidence intervals for elastic net coefficients are not computed.",
    "Tuning uses mean squared error on the log scale; test error is on the seconds scale.",
)

# internal unit -> (exported name, multiplier on the coefficient, label)
EXPORT_UNITS = {
    "height_cm": ("height_m", 100.0, "Height (m)"),
    "economy_ml": ("economy_l", 1000.0, "Economy (L/kg/km)"),
    "obla_ms": ("obla_kmh", 1.0 / 3.6, "OBLA (km/h)"),
    "weight_kg": ("weight_kg", 1.0, "Weight (kg)"),
    "age_y": ("age_y", 1.0, "Age (years)"),
    "vo2max_ml": ("vo2max_ml", 1.0, "VO2max (ml/min/kg)"),
    "vo2max_kmh": ("vo2max_kmh", 1.0, "VO2max (km/h)"),
    "economy_kcal": ("economy_kcal", 1.0, "Economy (kcal/kg/km)"),
    "mean_session_s": ("mean_session_s", 1.0, "Mean session length (s)"),
}
SECONDS_PER_MINUTE = 60.0


@dataclass(frozen=True)
class TuningGrid:
    lambda2: tuple = DEFAULT_LAMBDA2_GRID
    fractions: tuple = DEFAULT_FRACTIONS

    def __post_init__(self):
        if not self.lambda2 or not self.fractions:
            raise ValueError("tuning grid must be non-empty")
        if any(l < 0 for l in self.lambda2):
            raise ValueError("lambda2 values must be >= 0")
        if any(not 0 <= s <= 1 for s in self.fractions):
            raise ValueError("fractions must lie in [0, 1]")
        object.__setattr__(self, "lambda2", tuple(float(v) for v in self.lambda2))
        object.__setattr__(self, "fractions", tuple(sorted(float(v) for v in self.fractions)))


@dataclass(eq=False)
class TuningResult:
    resolution: int
    lambda2: float
    l1_fraction: float
    surface: np.ndarray  # mean CV MSE, shape (len(lambda2 grid), len(fractions))
    grid: TuningGrid
    folds: int
    repeats: int
    fold_unit: str = "field_test"

    @property
    def cv_error(self) -> float:
        i = self.grid.lambda2.index(self.lambda2)
        j = self.grid.fractions.index(self.l1_fraction)
        return float(self.surface[i, j])


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------


FOLD_UNITS = ("row", "field_test", "runner")


def fold_groups(table: StudyTable, unit: str = "field_test") -> np.ndarray:
    """Group id per row; rows sharing a group always land in the same fold."""
    if unit == "row":
        return np.arange(table.n)
    if unit == "field_test":
        labels = [(k[0], k[1]) for k in table.keys]
    elif unit == "runner":
        labels = [k[0] for k in table.keys]
    else:
        raise ValueError(f"fold unit must be one of {FOLD_UNITS}, got {unit!r}")
    index = {lab: i for i, lab in enumerate(sorted(set(labels)))}
    return np.array([index[lab] for lab in labels], dtype=np.int64)


def fold_allocation(groups: np.ndarray, folds: int, seed: int, resolution: int, repeat: int) -> np.ndarray:
    """Fold id per row; the stream is keyed on (seed, resolution, repeat)."""
    n_groups = int(groups.max()) + 1
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(resolution), int(repeat)]))
    perm = rng.permutation(n_groups)
    of_group = np.empty(n_groups, dtype=np.int64)
    for f, chunk in enumerate(np.array_split(perm, folds)):
        of_group[chunk] = f
    return of_group[groups]


def _fold_errors(X, y, train, grid, tol, max_iter):
    held = ~train
    errors = np.empty((len(grid.lambda2), len(grid.fractions)))
    for i, lam2 in enumerate(grid.lambda2):
        path = solution_path(X[train], y[train], lam2, grid.fractions, tolerance=tol, max_iterations=max_iter)
        for j, fit in enumerate(path.fits):
            r = y[held] - fit.predict(X[held])
            errors[i, j] = float(np.mean(r * r))
    return errors


def _map(fn, items, n_jobs):
    if n_jobs is None or n_jobs <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))


def _argmin_surface(surface, grid):
    # ties: larger lambda2 first, then smaller fraction
    best = float(np.min(surface))
    for i in reversed(range(len(grid.lambda2))):
        for j in range(len(grid.fractions)):
            if surface[i, j] == best:
                return i, j
    raise ValueError("CV surface has no finite minimum")


def cross_validate(
    estimation: StudyTable,
    grid: TuningGrid = TuningGrid(),
    folds: int = 10,
    repeats: int = 10,
    seed: int = 0,
    n_jobs: int = 1,
    tolerance: float = DEFAULT_TOL,
    max_iterations: int = DEFAULT_MAX_ITER,
    fold_unit: str = "field_test",
) -> TuningResult:
    """Repeated k-fold CV of every (lambda2, fraction) pair on the log scale.

    ``fold_unit`` keeps rows of one field test (or one runner) together.
    """
    if folds < 2:
        raise ValueError("need at least 2 folds")
    groups = fold_groups(estimation, fold_unit)
    if estimation.n == 0 or groups.max() + 1 < folds:
        raise ValueError(f"{estimation.n} rows in {fold_unit} groups cannot fill {folds} folds")
    X, y = estimation.X, estimation.y
    tasks = []
    for r in range(repeats):
        alloc = fold_allocation(groups, folds, seed, estimation.resolution, r)
        for f in range(folds):
            tasks.append(alloc != f)
    errs = _map(lambda train: _fold_errors(X, y, train, grid, tolerance, max_iterations), tasks, n_jobs)
    total = np.zeros((len(grid.lambda2), len(grid.fractions)))
    for e in errs:
        total += e
    surface = total / len(errs)
    i, j = _argmin_surface(surface, grid)
    return TuningResult(
        resolution=estimation.resolution,
        lambda2=grid.lambda2[i],
        l1_fraction=grid.fractions[j],
        surface=surface,
        grid=grid,
        folds=folds,
        repeats=repeats,
        fold_unit=fold_unit,
    )


def fit_table(table: StudyTable, lambda2: float, l1_fraction: float, tolerance=DEFAULT_TOL, max_iterations=DEFAULT_MAX_ITER) -> ElasticNetFit:
    return solve(ElasticNetProblem(table.X, table.y, lambda2, l1_fraction, table.columns), tolerance, max_iterations)


def test_error(fit: ElasticNetFit, test: StudyTable) -> tuple[float, float]:
    """Sum of squared prediction errors in seconds and the SD of the squared errors."""
    if list(fit.names) != list(test.columns):
        raise ValueError("fit and test table have different covariates (resolution mismatch)")
    predicted = np.exp(fit.predict(test.X, rescaled=True))
    sq = (test.performance - predicted) ** 2
    sd = float(np.std(sq, ddof=1)) if sq.size > 1 else 0.0
    return float(sq.sum()), sd


test_error.__test__ = False  # not a pytest test when imported into test modules


# ---------------------------------------------------------------------------
# Interval blocks
# ---------------------------------------------------------------------------


def interval_coefficients(fit: ElasticNetFit, resolution: int) -> np.ndarray:
    start = len(fit.names) - resolution
    return fit.coef_rescaled[start:]


def contiguous_blocks(fit: ElasticNetFit, resolution: int) -> list[dict]:
    """Maximal runs of same-sign non-zero interval coefficients, in speed order."""
    coefs = interval_coefficients(fit, resolution)
    signs = np.sign(coefs)
    bounds = interval_bounds(resolution)
    blocks = []
    g = 0
    while g < resolution:
        if signs[g] == 0:
            g += 1
            continue
        h = g
        while h + 1 < resolution and signs[h + 1] == signs[g]:
            h += 1
        blocks.append(
            {
                "first": g + 1,
                "last": h + 1,
                "lower": bounds[g][0],
                "upper": bounds[h][1],
                "sign": "negative" if signs[g] < 0 else "positive",
                "coefficients": coefs[g : h + 1].tolist(),
            }
        )
        g = h + 1
    return blocks


def block_persistence(blocks_by_resolution: Mapping[int, list]) -> list[dict]:
    """For each block at each resolution, the resolutions with an overlapping same-sign block."""
    out = []
    for G, blocks in sorted(blocks_by_resolution.items()):
        for b in blocks:
            hits = []
            for H, others in sorted(blocks_by_resolution.items()):
                if any(o["lower"] < b["upper"] and b["lower"] < o["upper"] and o["sign"] == b["sign"] for o in others):
                    hits.append(H)
            out.append({"resolution": G, "lower": b["lower"], "upper": b["upper"], "sign": b["sign"], "present_at": hits})
    return out


# ---------------------------------------------------------------------------
# Predictive equation
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class PredictiveEquation:
    """``tau * D**alpha * exp(sum scalar terms) * exp(sum interval terms)``.

    Scalar coefficients are per exported unit; interval coefficients are
    per minute of average period time in ``(lower, upper]`` m/s.
    """

    tau: float
    alpha: float
    scalars: dict = field(default_factory=dict)
    intervals: list = field(default_factory=list)  # (lower, upper, coefficient)
    resolution: int | None = None

    @classmethod
    def from_fit(cls, fit: ElasticNetFit, resolution: int) -> "PredictiveEquation":
        coefs = fit.coefficients(rescaled=True)
        scalars = {}
        for name in LAB_FIELDS + ("mean_session_s",):
            c = coefs.get(name, 0.0)
            if c != 0.0:
                export, mult, _ = EXPORT_UNITS[name]
                scalars[export] = c * mult
        intervals = []
        for (lo, hi), c in zip(interval_bounds(resolution), interval_coefficients(fit, resolution).tolist()):
            if c != 0.0:
                intervals.append((lo, hi, c * SECONDS_PER_MINUTE))
        return cls(
            tau=math.exp(fit.intercept_rescaled),
            alpha=coefs["log_distance"],
            scalars=scalars,
            intervals=intervals,
            resolution=resolution,
        )

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "alpha": self.alpha,
            "scalars": dict(self.scalars),
            "intervals": [{"lower": lo, "upper": hi, "coefficient_per_min": c} for lo, hi, c in self.intervals],
            "resolution": self.resolution,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PredictiveEquation":
        return cls(
            tau=float(obj["tau"]),
            alpha=float(obj["alpha"]),
            scalars={str(k): float(v) for k, v in obj.get("scalars", {}).items()},
            intervals=[
                (float(i["lower"]), float(i["upper"]), float(i["coefficient_per_min"])) for i in obj.get("intervals", [])
            ],
            resolution=obj.get("resolution"),
        )

    def render(self) -> str:
        labels = {export: label for export, _, label in EXPORT_UNITS.values()}
        lines = [f'{self.tau:.4f} "Distance (m)"^{self.alpha:.4f}']
        if self.scalars:
            terms = [f'{c:+.4f} "{labels.get(k, k)}"' for k, c in self.scalars.items()]
            lines.append("exp{" + " ".join(terms).lstrip("+") + "}")
        if self.intervals:
            terms = [f"{c:+.4f} t{i}" for i, (_, _, c) in enumerate(self.intervals, start=1)]
            lines.append("exp{" + " ".join(terms).lstrip("+") + "}")
            where = ", ".join(f"t{i}: ({lo:.2f}, {hi:.2f}]" for i, (lo, hi, _) in enumerate(self.intervals, start=1))
            lines.append(f"minutes per session in speed intervals (m/s): {where}")
        return "\n".join(lines) + "\n"


def predict(
    equation: PredictiveEquation,
    distance_m: float,
    scalars: Mapping[str, float] | None = None,
    interval_minutes: Sequence[float] = (),
) -> float:
    """Predicted performance in seconds."""
    if not distance_m > 0:
        raise ValueError(f"distance must be positive, got {distance_m}")
    scalars = scalars or {}
    missing = [k for k in equation.scalars if k not in scalars]
    if missing:
        raise ValueError(f"missing covariates: {', '.join(missing)}")
    interval_minutes = list(interval_minutes)
    if len(interval_minutes) != len(equation.intervals):
        raise ValueError(f"expected {len(equation.intervals)} interval times, got {len(interval_minutes)}")
    if any(t < 0 for t in interval_minutes):
        raise ValueError("interval times must be >= 0")
    scalar_term = sum(c * float(scalars[k]) for k, c in equation.scalars.items())
    interval_term = sum(c * t for (_, _, c), t in zip(equation.intervals, interval_minutes))
    return equation.tau * distance_m**equation.alpha * math.exp(scalar_term) * math.exp(interval_term)


# ---------------------------------------------------------------------------
# Resolution selection
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ResolutionResult:
    resolution: int
    tuning: TuningResult
    fit: ElasticNetFit
    test_error: float
    test_sd: float
    n_estimation: int
    n_test: int
    blocks: list


@dataclass(eq=False)
class ResolutionReport:
    results: dict  # resolution -> ResolutionResult
    selected: int
    equation: PredictiveEquation
    seed: int
    test_runners: list = field(default_factory=list)

    @property
    def selected_result(self) -> ResolutionResult:
        return self.results[self.selected]

    def to_dict(self) -> dict:
        per = []
        for G in sorted(self.results):
            r = self.results[G]
            per.append(
                {
                    "resolution": G,
                    "lambda2": r.tuning.lambda2,
                    "l1_fraction": r.tuning.l1_fraction,
                    "lambda1": r.fit.lambda1,
                    "cv_error": r.tuning.cv_error,
                    "cv_surface": r.tuning.surface.tolist(),
                    "test_error": r.test_error,
                    "test_sd": r.test_sd,
                    "n_estimation": r.n_estimation,
                    "n_test": r.n_test,
                    "intercept": r.fit.intercept_rescaled,
                    "coefficients": {
                        n: {"naive": a, "rescaled": b}
                        for n, a, b in zip(r.fit.names, r.fit.coef.tolist(), r.fit.coef_rescaled.tolist())
                        if b != 0.0
                    },
                    "dropped_columns": list(r.fit.dropped),
                    "kkt_violation": r.fit.kkt_violation,
                    "interval_blocks": r.blocks,
                }
            )
        any_r = next(iter(self.results.values()))
        return {
            "selected_resolution": self.selected,
            "seed": self.seed,
            "test_runners": list(self.test_runners),
            "tuning_grid": {"lambda2": list(any_r.tuning.grid.lambda2), "fractions": list(any_r.tuning.grid.fractions)},
            "folds": any_r.tuning.folds,
            "repeats": any_r.tuning.repeats,
            "fold_unit": any_r.tuning.fold_unit,
            "resolutions": per,
            "block_persistence": block_persistence({G: r.blocks for G, r in self.results.items()}),
            "equation": self.equation.to_dict(),
            "notes": list(NOTES),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def write_coefficients_csv(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["resolution", "coefficient_name", "naive", "rescaled"])
        for G in sorted(self.results):
            fit = self.results[G].fit
            for n, a, b in zip(fit.names, fit.coef.tolist(), fit.coef_rescaled.tolist()):
                w.writerow([G, n, repr(a), repr(b)])

    def write_test_errors_csv(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["resolution", "test_error", "sd", "lower95", "upper95", "lambda2", "l1_fraction", "cv_error"])
        for G in sorted(self.results):
            r = self.results[G]
            w.writerow(
                [
                    G,
                    repr(r.test_error),
                    repr(r.test_sd),
                    repr(r.test_error - 1.96 * r.test_sd),
                    repr(r.test_error + 1.96 * r.test_sd),
                    repr(r.tuning.lambda2),
                    repr(r.tuning.l1_fraction),
                    repr(r.tuning.cv_error),
                ]
            )


def evaluate_resolution(
    estimation: StudyTable,
    test: StudyTable,
    grid: TuningGrid = TuningGrid(),
    folds: int = 10,
    repeats: int = 10,
    seed: int = 0,
    n_jobs: int = 1,
    tolerance: float = DEFAULT_TOL,
    max_iterations: int = DEFAULT_MAX_ITER,
    fold_unit: str = "field_test",
) -> ResolutionResult:
    G = estimation.resolution
    if test.resolution != G:
        raise ValueError("estimation and test tables have different resolutions")
    tuning = cross_validate(estimation, grid, folds, repeats, seed, n_jobs, tolerance, max_iterations, fold_unit)
    fit = fit_table(estimation, tuning.lambda2, tuning.l1_fraction, tolerance, max_iterations)
    err, sd = test_error(fit, test)
    return ResolutionResult(
        resolution=G,
        tuning=tuning,
        fit=fit,
        test_error=err,
        test_sd=sd,
        n_estimation=estimation.n,
        n_test=test.n,
        blocks=contiguous_blocks(fit, G),
    )


def select_resolution(
    tables_for: Callable[[int], tuple[StudyTable, StudyTable]],
    resolutions: Sequence[int] = DEFAULT_RESOLUTIONS,
    grid: TuningGrid = TuningGrid(),
    folds: int = 10,
    repeats: int = 10,
    seed: int = 0,
    n_jobs: int = 1,
    tolerance: float = DEFAULT_TOL,
    max_iterations: int = DEFAULT_MAX_ITER,
    test_runners: Sequence[str] = (),
    fold_unit: str = "field_test",
) -> ResolutionReport:
    """Tune, refit and test every resolution; pick the smallest test error.

    ``tables_for(G)`` returns the (estimation, test) tables at resolution G.
    Ties go to the smaller resolution.
    """
    resolutions = sorted({int(G) for G in resolutions})
    if not resolutions:
        raise ValueError("resolution set must be non-empty")
    results = {}
    for G in resolutions:
        est, test = tables_for(G)
        results[G] = evaluate_resolution(
            est, test, grid, folds, repeats, seed, n_jobs, tolerance, max_iterations, fold_unit
        )
    best = min(resolutions, key=lambda G: (results[G].test_error, G))
    equation = PredictiveEquation.from_fit(results[best].fit, best)
    return ResolutionReport(results=results, selected=best, equation=equation, seed=seed, test_runners=list(test_runners))
