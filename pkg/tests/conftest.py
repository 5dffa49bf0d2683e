import numpy as np
import pytest

from mfg_stable import Coupling, Field, Problem, State, build_mesh, newton_solve

# Acceptance results: name -> (passed, detail).  Filled by test_acceptance.py.
ACCEPTANCE = {}


def record(name, passed, detail=""):
    ACCEPTANCE[name] = (bool(passed), detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda k: int(k.split(".")[0])):
        ok, detail = ACCEPTANCE[name]
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


def start(problem):
    return State(Field.constant(problem.mesh, 0.0), problem.m0)


@pytest.fixture(scope="session")
def atan_solution():
    """atan coupling, lam = 1, m0 = 1 + 0.5 cos(2 pi x), d = 1, n = 64."""
    mesh = build_mesh(1, 64)
    problem = Problem.build(mesh, 1.0, Coupling.atan(1.0), "cosine", 0.5)
    state, report = newton_solve(problem, start(problem))
    return problem, state, report


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
