import re

import numpy as np
import pytest

from armreg import problems


def scalar_problem(a=1.0, u=1.0, m0=0.0, p=0.0, sigma=1.0):
    prob = problems.ProblemInstance(
        A=np.array([[a]]),
        Sigma=np.array([[sigma]]),
        u_true=np.array([u]),
        m0=np.array([m0]),
        grid=problems.Grid(1),
        label="scalar",
    )
    return problems.whiten(prob, p)


@pytest.fixture
def scalar():
    return scalar_problem()


@pytest.fixture(scope="session")
def kernel16():
    return problems.whiten(problems.example_problem("rough", 16), 0.0)


@pytest.fixture(scope="session")
def kernel512():
    return problems.midpoint_operator(512)


# criterion id -> (passed, detail), filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(re.match(r"\d+", k).group()), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {key}: {detail}")
