import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from knpemi.membrane import MembraneModel, PhysicalConstants, Stimulus, default_species
from knpemi.mesh import build_model_a_mesh
from knpemi.system import Problem

settings.register_profile("repo", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("repo")


def make_problem(n_x=4, dim=2, degree=1, dt=5e-5, membrane="hh", stimulus=True, species=None, constants=None, **kw):
    species = species or default_species()
    constants = constants or PhysicalConstants()
    return Problem(build_model_a_mesh(n_x, dim), degree, species, constants,
                   MembraneModel(membrane, species, constants), dt=dt,
                   stimulus=Stimulus() if stimulus else None, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}  # criterion number -> (passed, detail), filled by test_acceptance


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
