"""Command-line entry point: simulate, ingest, profile, fit, predict.

Every command writes a ``manifest.json`` next to its outputs with the
resolved settings, their SHA-256, and digests of inputs and outputs.
Settings come from built-in defaults, then ``--config`` (JSON), then flags.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import asdict
from importlib import resources
from pathlib import Path

from . import __version__
from .elasticnet import solution_path
from .errors import ConvergenceError, MrenetError, ParseError
from .gps_ingest import (
    DEFAULT_GAP_THRESHOLD,
    DEFAULT_MAX_SAMPLING_GAP,
    DEFAULT_MIN_SESSION,
    IngestStats,
    ingest,
    read_sessions_jsonl,
    write_sessions_jsonl,
)
from .multires import DEFAULT_FRACTIONS, DEFAULT_LAMBDA2_GRID, FOLD_UNITS, PredictiveEquation, TuningGrid, predict
from .pipeline import fit_stage, profile_stage
from .profile import DEFAULT_RESOLUTIONS, dump_periods, periods_from_json, read_period_windows, write_profiles_csv
from .study import build_table, read_field_tests, read_lab_results
from .synth import SynthConfig, generate

DEFAULTS = {
    "gap_threshold": DEFAULT_GAP_THRESHOLD,
    "min_session": DEFAULT_MIN_SESSION,
    "max_sampling_gap": DEFAULT_MAX_SAMPLING_GAP,
    "resolutions": list(DEFAULT_RESOLUTIONS),
    "min_sessions": 1,
    "lambda2_grid": list(DEFAULT_LAMBDA2_GRID),
    "fractions": list(DEFAULT_FRACTIONS),
    "folds": 10,
    "repeats": 10,
    "seed": 0,
    "test_runners": 4,
    "jobs": 1,
    "fold_unit": "field_test",
    "synth": {},
}

COMMAND_KEYS = {
    "simulate": ("seed", "synth"),
    "ingest": ("gap_threshold", "min_session", "max_sampling_gap"),
    "profile": ("resolutions", "min_sessions"),
    "fit": ("resolutions", "lambda2_grid", "fractions", "folds", "repeats", "seed", "test_runners", "jobs", "fold_unit"),
    "predict": (),
}


class UsageError(MrenetError):
    pass


# ---------------------------------------------------------------------------
# Argument types
# ---------------------------------------------------------------------------


def int_list(text: str) -> list[int]:
    """``"5,10,25"`` or an inclusive range ``"5:125:5"``."""
    text = text.strip()
    if ":" in text:
        parts = [int(p) for p in text.split(":")]
        if len(parts) not in (2, 3):
            raise argparse.ArgumentTypeError(f"bad range {text!r}, expected start:stop[:step]")
        start, stop = parts[0], parts[1]
        step = parts[2] if len(parts) == 3 else 1
        if step <= 0:
            raise argparse.ArgumentTypeError("range step must be positive")
        return list(range(start, stop + 1, step))
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None


def float_list(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None


def covariate(text: str) -> tuple[str, float]:
    name, sep, value = text.partition("=")
    if not sep or not name.strip():
        raise argparse.ArgumentTypeError(f"expected name=value, got {text!r}")
    try:
        return name.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad value in {text!r}") from None


# ---------------------------------------------------------------------------
# Settings and manifests
# ---------------------------------------------------------------------------


def resolve_settings(command: str, args: argparse.Namespace) -> dict:
    keys = COMMAND_KEYS[command]
    settings = {k: DEFAULTS[k] for k in keys}
    if getattr(args, "config", None):
        cfg = _read_json(args.config)
        if not isinstance(cfg, dict):
            raise UsageError(f"{args.config}: config must be a JSON object")
        unknown = set(cfg) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"{args.config}: unknown config keys: {', '.join(sorted(unknown))}")
        settings.update({k: v for k, v in cfg.items() if k in keys})
    for k in keys:
        value = getattr(args, k, None)
        if value is not None:
            settings[k] = value
    return json.loads(json.dumps(settings))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_digest(settings: dict) -> str:
    blob = json.dumps(settings, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(out: Path, command: str, settings: dict, inputs, outputs) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "config": settings,
        "config_sha256": config_digest(settings),
        "inputs": {Path(p).name: sha256_file(p) for p in inputs},
        "outputs": {Path(p).name: sha256_file(p) for p in outputs},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc.msg}", exc.lineno) from None


def _load(path, reader):
    """Run ``reader`` on an open text file, naming the file in parse errors."""
    with open(path, newline="") as fh:
        try:
            return reader(fh)
        except ParseError as exc:
            raise ParseError(f"{path}: {exc.args[0]}") from None


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    settings = resolve_settings("simulate", args)
    synth = dict(settings["synth"])
    synth["seed"] = settings["seed"]
    config = SynthConfig.from_dict(synth)
    settings["synth"] = json.loads(json.dumps(config.to_dict()))
    out = _outdir(args.out)
    paths = generate(config).write(out)
    write_manifest(out, "simulate", settings, [], paths.values())
    print(f"wrote synthetic study to {out}")
    return 0


def cmd_ingest(args) -> int:
    settings = resolve_settings("ingest", args)
    out = _outdir(args.out)
    stats = IngestStats()
    sessions = _load(
        args.gps,
        lambda fh: ingest(
            fh,
            gap_threshold=settings["gap_threshold"],
            min_duration=settings["min_session"],
            max_sampling_gap=settings["max_sampling_gap"],
            stats=stats,
        ),
    )
    sessions_path = out / "sessions.jsonl"
    with open(sessions_path, "w") as fh:
        write_sessions_jsonl(sessions, fh)
    stats_path = out / "ingest_stats.json"
    stats_path.write_text(json.dumps(asdict(stats), indent=1, sort_keys=True) + "\n")
    write_manifest(out, "ingest", settings, [args.gps], [sessions_path, stats_path])
    print(f"{len(sessions)} sessions from {stats.rows} rows")
    return 0


def cmd_profile(args) -> int:
    settings = resolve_settings("profile", args)
    out = _outdir(args.out)
    sessions = _load(args.sessions, read_sessions_jsonl)
    windows = _load(args.periods, read_period_windows)
    stage = profile_stage(sessions, windows, settings["resolutions"], settings["min_sessions"])
    profiles_path = out / "profiles.csv"
    with open(profiles_path, "w") as fh:
        write_profiles_csv(stage.profiles, fh)
    period_csv = out / "period_profiles.csv"
    with open(period_csv, "w") as fh:
        fh.write("runner_id,period_index,v,P\n")
        for key in sorted(stage.periods):
            p = stage.periods[key]
            for v, val in zip(p.grid.tolist(), p.values.tolist()):
                fh.write(f"{p.runner_id},{p.period_index},{v!r},{val!r}\n")
    periods_path = out / "periods.json"
    with open(periods_path, "w") as fh:
        dump_periods(stage.periods, fh, stage.uninformative, [p.session_id for p in stage.dropped])
        fh.write("\n")
    write_manifest(out, "profile", settings, [args.sessions, args.periods], [profiles_path, period_csv, periods_path])
    print(
        f"{len(stage.kept)} sessions kept, {len(stage.dropped)} dropped by cleaning; "
        f"{len(stage.periods)} periods, {len(stage.uninformative)} uninformative"
    )
    return 0


def cmd_fit(args) -> int:
    settings = resolve_settings("fit", args)
    if settings["fold_unit"] not in FOLD_UNITS:
        raise UsageError(f"fold unit must be one of {', '.join(FOLD_UNITS)}")
    out = _outdir(args.out)
    field_tests = _load(args.field_tests, read_field_tests)
    labs = _load(args.lab, read_lab_results)
    periods, uninformative = periods_from_json(_read_json(args.profiles))
    if not periods:
        raise UsageError(f"{args.profiles}: no period profiles")
    grid = TuningGrid(tuple(settings["lambda2_grid"]), tuple(settings["fractions"]))
    report = fit_stage(
        field_tests,
        labs,
        periods,
        uninformative,
        resolutions=settings["resolutions"],
        grid=grid,
        folds=settings["folds"],
        repeats=settings["repeats"],
        seed=settings["seed"],
        test_runner_count=settings["test_runners"],
        n_jobs=settings["jobs"],
        fold_unit=settings["fold_unit"],
    )

    outputs = {
        "report": out / "report.json",
        "equation": out / "equation.json",
        "equation_txt": out / "equation.txt",
        "coefficients": out / "coefficients.csv",
        "test_errors": out / "test_errors.csv",
        "cv_surface": out / "cv_surface.csv",
        "path": out / "path.csv",
    }
    outputs["report"].write_text(report.to_json())
    outputs["equation"].write_text(json.dumps(report.equation.to_dict(), indent=1, sort_keys=True) + "\n")
    outputs["equation_txt"].write_text(report.equation.render())
    with open(outputs["coefficients"], "w") as fh:
        report.write_coefficients_csv(fh)
    with open(outputs["test_errors"], "w") as fh:
        report.write_test_errors_csv(fh)
    with open(outputs["cv_surface"], "w") as fh:
        fh.write("resolution,lambda2,fraction,cv_error\n")
        for G in sorted(report.results):
            t = report.results[G].tuning
            for i, lam2 in enumerate(t.grid.lambda2):
                for j, s in enumerate(t.grid.fractions):
                    fh.write(f"{G},{lam2!r},{s!r},{float(t.surface[i, j])!r}\n")

    # solution path at the selected resolution and lambda2, estimation rows only
    best = report.selected_result
    table = build_table(field_tests, labs, periods, report.selected, uninformative)
    est = table.subset([k[0] not in set(report.test_runners) for k in table.keys])
    path = solution_path(est.X, est.y, best.tuning.lambda2, grid.fractions, names=est.columns)
    with open(outputs["path"], "w") as fh:
        path.write_csv(fh)

    write_manifest(out, "fit", settings, [args.field_tests, args.lab, args.profiles], outputs.values())
    r = best
    print(
        f"selected G = {report.selected}: test error {r.test_error:.6g} s^2, "
        f"lambda2 = {r.tuning.lambda2:g}, s = {r.tuning.l1_fraction:g}"
    )
    print(report.equation.render(), end="")
    return 0


def load_equation(args) -> PredictiveEquation:
    if args.reference:
        text = resources.files("mrenet").joinpath("data/reference_equation.json").read_text()
        return PredictiveEquation.from_dict(json.loads(text))
    return PredictiveEquation.from_dict(_read_json(args.equation))


def cmd_predict(args) -> int:
    if bool(args.equation) == bool(args.reference):
        raise UsageError("give exactly one of EQUATION or --reference")
    equation = load_equation(args)
    scalars = dict(args.covariate or [])
    unknown = set(scalars) - set(equation.scalars)
    if unknown:
        raise UsageError(f"covariates not in the equation: {', '.join(sorted(unknown))}")
    intervals = args.intervals if args.intervals is not None else [0.0] * len(equation.intervals)
    try:
        seconds = predict(equation, args.distance, scalars, intervals)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not math.isfinite(seconds):
        raise UsageError("prediction overflowed")
    print(repr(seconds))
    if args.out:
        out = _outdir(args.out)
        result = out / "prediction.json"
        payload = {"distance_m": args.distance, "covariates": scalars, "interval_minutes": intervals, "seconds": seconds}
        result.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
        settings = {"reference": bool(args.reference), **{k: v for k, v in payload.items() if k != "seconds"}}
        inputs = [] if args.reference else [args.equation]
        write_manifest(out, "predict", settings, inputs, [result])
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrenet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="JSON settings file; flags override it")
        p.add_argument("--out", required=out_required, help="output directory")

    p = sub.add_parser("simulate", help="write a synthetic study with planted parameters")
    common(p)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="raw GPS CSV -> sessions JSONL")
    common(p)
    p.add_argument("gps", help="CSV with runner_id,timestamp_s,cumulative_distance_m")
    p.add_argument("--gap-threshold", type=float, help="seconds of silence that end a session")
    p.add_argument("--min-session", type=float, help="shortest kept session, seconds")
    p.add_argument("--max-sampling-gap", type=float, help="longest gap before zero-speed imputation, seconds")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("profile", help="sessions JSONL -> session and period profiles")
    common(p)
    p.add_argument("sessions", help="sessions.jsonl from ingest")
    p.add_argument("--periods", required=True, help="CSV with runner_id,period_index,start_s,end_s")
    p.add_argument("--resolutions", type=int_list, help="e.g. 5:125:5 or 25,50,95")
    p.add_argument("--min-sessions", type=int, help="fewest sessions for a usable period")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("fit", help="tune, select resolution, export equation")
    common(p)
    p.add_argument("--field-tests", required=True, help="CSV with runner_id,period_index,distance_m,performance_s")
    p.add_argument("--lab", required=True, help="lab results CSV")
    p.add_argument("--profiles", required=True, help="periods.json from profile")
    p.add_argument("--resolutions", type=int_list)
    p.add_argument("--lambda2-grid", type=float_list)
    p.add_argument("--fractions", type=float_list)
    p.add_argument("--folds", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--test-runners", type=int, help="runners held out for the test error")
    p.add_argument("--jobs", type=int, help="worker threads for cross-validation")
    p.add_argument("--fold-unit", choices=FOLD_UNITS)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="evaluate a predictive equation")
    p.add_argument("equation", nargs="?", help="equation.json from fit")
    p.add_argument("--reference", action="store_true", help="use the bundled reference equation")
    p.add_argument("--distance", type=float, required=True, help="metres")
    p.add_argument("--covariate", type=covariate, action="append", help="name=value, repeatable")
    p.add_argument("--intervals", type=float_list, help="minutes per session in each equation interval")
    p.add_argument("--out", help="also write prediction.json and a manifest here")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (MrenetError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
