import sys
from pathlib import Path

from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


import pytest  # noqa: E402

from quadrgp.experiment import ExperimentSpec, run_suite  # noqa: E402

CIRCLE_SPEEDS = [6.0, 9.0, 12.0]
RANDOM_SPEEDS = [3.0, 6.0]


def circle_spec(out) -> ExperimentSpec:
    """Circle grid, r = 10 m, simplified drag plant (C_D = 0.01, z scaled by 5)."""
    return ExperimentSpec(trajectory="circle", v_max=CIRCLE_SPEEDS, variants=["nominal", "rgp"], seeds=[0],
                          output_dir=str(out), trajectory_options={"r": 10.0})


def random_spec(out) -> ExperimentSpec:
    return ExperimentSpec(trajectory="random", v_max=RANDOM_SPEEDS, variants=["nominal", "gp"], seeds=[0],
                          output_dir=str(out))


@pytest.fixture(scope="session")
def circle_suite(tmp_path_factory):
    out = tmp_path_factory.mktemp("circle_suite")
    spec = circle_spec(out)
    return spec, run_suite(spec)


@pytest.fixture(scope="session")
def random_suite(tmp_path_factory):
    out = tmp_path_factory.mktemp("random_suite")
    spec = random_spec(out)
    return spec, run_suite(spec)


CRITERIA_RESULTS: list[str] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion, then assert it."""

    def record(number: int, title: str, passed: bool, detail: str) -> None:
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}: {title} | {detail}"
        CRITERIA_RESULTS.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_RESULTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
