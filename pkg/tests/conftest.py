import numpy as np
import pytest

from opo_unravel.fock import FockSpace, opo_model
from opo_unravel.gaussian import OpoModel


@pytest.fixture(scope="session")
def opo_half_fock():
    """OPO at chi=0.5 in a 40-level Fock space."""
    model = OpoModel(0.5)
    return model, FockSpace(40), opo_model(model, FockSpace(40))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def half_steady(opo_half_fock):
    from opo_unravel.fock import steady_state

    return steady_state(opo_half_fock[2])


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    def record(number, title, passed, detail):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
