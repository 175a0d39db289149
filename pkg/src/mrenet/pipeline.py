"""Glue between the stages: sessions -> period profiles -> report."""

from __future__ import annotations

from dataclasses import dataclass

from .multires import ResolutionReport, TuningGrid, select_resolution
from .profile import (
    DEFAULT_RESOLUTIONS,
    build_period_profiles,
    check_alignment,
    clean_sessions,
    observed_profile,
    smooth_profile,
    speed_grid,
)
from .study import build_table, choose_test_runners


@dataclass
class ProfileStage:
    profiles: list
    kept: list
    dropped: list
    periods: dict
    uninformative: list


def profile_stage(sessions, windows, resolutions=DEFAULT_RESOLUTIONS, min_sessions: int = 1) -> ProfileStage:
    grid = speed_grid(resolutions)
    profiles = [smooth_profile(observed_profile(s, grid)) for s in sessions]
    kept, dropped = clean_sessions(profiles)
    periods, uninformative = build_period_profiles(kept, windows, min_sessions)
    return ProfileStage(profiles, kept, dropped, periods, uninformative)


def fit_stage(
    field_tests,
    lab_results,
    periods: dict,
    uninformative=(),
    resolutions=DEFAULT_RESOLUTIONS,
    grid: TuningGrid = TuningGrid(),
    folds: int = 10,
    repeats: int = 10,
    seed: int = 0,
    test_runner_count: int = 4,
    n_jobs: int = 1,
    fold_unit: str = "field_test",
) -> ResolutionReport:
    resolutions = sorted({int(G) for G in resolutions})
    if not resolutions:
        raise ValueError("resolution set must be non-empty")
    any_period = next(iter(periods.values()))
    for G in resolutions:
        check_alignment(any_period.grid, G)

    first = build_table(field_tests, lab_results, periods, resolutions[0], uninformative)
    test_runners = choose_test_runners(first.runners, test_runner_count, seed)
    held = set(test_runners)

    def tables_for(G):
        table = first if G == resolutions[0] else build_table(field_tests, lab_results, periods, G, uninformative)
        est = table.subset([k[0] not in held for k in table.keys])
        test = table.subset([k[0] in held for k in table.keys])
        return est, test

    return select_resolution(
        tables_for, resolutions, grid, folds, repeats, seed, n_jobs, test_runners=test_runners, fold_unit=fold_unit
    )
