import sys

import numpy as np
import pytest

from twistband.band_structure import ground_state
from twistband.fiber_assembly import assemble_matrices
from twistband.geometry import CrossSectionSpec, refine, triangulate
from twistband.twist_profile import make_profile


@pytest.fixture(scope="session")
def square():
    return CrossSectionSpec.rectangle(1.0, 1.0)


@pytest.fixture(scope="session")
def square_mesh(square):
    return triangulate(square, 0.1)


@pytest.fixture(scope="session")
def square_mats(square_mesh):
    return assemble_matrices(square_mesh)


@pytest.fixture(scope="session")
def square_fine_mats(square):
    """Default desk-scale section: 0.08 refined twice."""
    m = triangulate(square, 0.08)
    m = refine(refine(m, square), square)
    return assemble_matrices(m)


@pytest.fixture(scope="session")
def square_fine_gs(square_fine_mats):
    return ground_state(square_fine_mats, 1.0)


@pytest.fixture(scope="session")
def disk_mats():
    spec = CrossSectionSpec.ellipse(1.0, 1.0)
    return assemble_matrices(triangulate(spec, 0.1))


@pytest.fixture(scope="session")
def bump():
    return make_profile("cosine_bump", 1.0, 1.0, c=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for i in sorted(results):
        terminalreporter.write_line(results[i])
