import numpy as np
import pytest

from sedgpe.fixtures import write_fixture
from sedgpe.pipeline import PipelineConfig, Study, run_study


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("fixture")
    write_fixture(path)
    return path


@pytest.fixture(scope="session")
def wind_paths(fixture_dir):
    return sorted(fixture_dir.glob("*.csv"))


@pytest.fixture(scope="session")
def study(wind_paths):
    """Prepared models and scenarios on the fixture, with small sample sizes."""
    return Study(PipelineConfig(mc_size=400, reference_pool=2000, n_restarts=2), wind_paths,
                 "builtin:case5")


@pytest.fixture(scope="session")
def default_run(wind_paths):
    """One full default-size run with the Monte Carlo reference (shared by several tests)."""
    return run_study(PipelineConfig(with_mc=True), wind_paths, "builtin:case5")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """``acceptance(id, passed, detail)`` records and prints one PASS/FAIL line, then asserts."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def record(criterion, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} {criterion}: {detail}"
        lines.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
