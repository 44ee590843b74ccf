import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from face3dsr.morphable import generate_basis
from face3dsr.priors import SkinModel

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def basis():
    return generate_basis()


@pytest.fixture(scope="session")
def skin_model():
    return SkinModel.load()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_line(request):
    """Record one ``criterion N: PASS|FAIL`` line, echoed now and in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(number: int, title: str, passed: bool, detail: str) -> None:
        line = f"criterion {number} {title}: {'PASS' if passed else 'FAIL'} ({detail})"
        lines.append(line)
        print(line, flush=True)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
