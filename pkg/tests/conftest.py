import numpy as np
import pytest

from reachrl.chain import default_chain, load_chain
from reachrl.config import default_config

PLANAR_DOC = {
    "joints": [
        {"name": "j1", "parent": None, "axis": [0, 0, 1], "limits": [-3.2, 3.2]},
        {"name": "j2", "parent": "j1", "offset": {"xyz": [1.0, 0.0, 0.0]}, "axis": [0, 0, 1],
         "limits": [-3.2, 3.2]},
    ],
    "end_effectors": {"tip": {"joint": "j2", "offset": {"xyz": [1.0, 0.0, 0.0]}}},
}


def planar_fk(q):
    """Closed-form tip of the unit-link planar arm."""
    a, b = q
    return np.array([np.cos(a) + np.cos(a + b), np.sin(a) + np.sin(a + b), 0.0])


def planar_jacobian(q):
    a, b = q
    return np.array([[-np.sin(a) - np.sin(a + b), -np.sin(a + b)],
                     [np.cos(a) + np.cos(a + b), np.cos(a + b)],
                     [0.0, 0.0]])


@pytest.fixture(scope="session")
def planar():
    return load_chain(PLANAR_DOC)


@pytest.fixture(scope="session")
def chain():
    return default_chain()


@pytest.fixture
def doc():
    return default_config()


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "SUMMARY", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
