import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from jumpgrid import LatticeWindow, build_cell_averaged, build_pointwise, stable_kernel

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def cauchy1d():
    return stable_kernel(1, 1.0, 1.0)


@pytest.fixture(scope="session")
def torus8(cauchy1d):
    """k=8 cell-averaged matrix on the periodic window of side 16."""
    w = LatticeWindow(1, 8, 16.0)
    return build_cell_averaged(w, cauchy1d, 8, 2000.0)


@pytest.fixture(scope="session")
def torus8_pointwise(cauchy1d):
    return build_pointwise(LatticeWindow(1, 8, 16.0), cauchy1d, 2000.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, shown at the end of the run even without -s
_ACCEPTANCE = []


@pytest.fixture
def verdict():
    def record(tag: str, ok: bool, detail: str) -> bool:
        line = f"{tag} {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
