import io
import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

CRITERIA: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def planted_study():
    """Default synthetic study (one contaminated session per runner), ingested and profiled."""
    from mrenet.gps_ingest import ingest
    from mrenet.pipeline import profile_stage
    from mrenet.profile import read_period_windows
    from mrenet.study import read_field_tests, read_lab_results
    from mrenet.synth import SynthConfig, generate

    study = generate(SynthConfig(contaminated_per_runner=1))
    sessions = ingest(io.StringIO(study.gps_csv))
    stage = profile_stage(sessions, read_period_windows(io.StringIO(study.periods_csv)))
    return {
        "study": study,
        "sessions": sessions,
        "stage": stage,
        "field_tests": read_field_tests(io.StringIO(study.field_tests_csv)),
        "labs": read_lab_results(io.StringIO(study.lab_csv)),
    }
