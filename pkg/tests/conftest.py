import math

import pytest

from ppso.boundary import extract_boundaries
from ppso.engine import solve_default_grid
from ppso.model import PolicyParams, derive_thresholds


@pytest.fixture(scope="session")
def base_params():
    return PolicyParams()


@pytest.fixture(scope="session")
def grid_2000(base_params):
    return solve_default_grid(base_params, 2000)


@pytest.fixture(scope="session")
def grid_1000(base_params):
    return solve_default_grid(base_params, 1000)


@pytest.fixture(scope="session")
def curves_2000(grid_2000, base_params):
    return extract_boundaries(grid_2000, derive_thresholds(base_params))


@pytest.fixture(scope="session")
def regime_a_params(base_params):
    return base_params.replace(alpha=math.exp(-3.3))


@pytest.fixture(scope="session")
def case_ii_params(base_params):
    return base_params.replace(p=1e-5, q=0.0)


@pytest.fixture(scope="session")
def regime_a_run(regime_a_params):
    solution = solve_default_grid(regime_a_params, 2000)
    thresholds = derive_thresholds(regime_a_params)
    return solution, thresholds, extract_boundaries(solution, thresholds)


@pytest.fixture(scope="session")
def case_ii_run(case_ii_params):
    solution = solve_default_grid(case_ii_params, 2000)
    thresholds = derive_thresholds(case_ii_params)
    return solution, thresholds, extract_boundaries(solution, thresholds)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
