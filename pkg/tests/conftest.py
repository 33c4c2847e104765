import math

import numpy as np
import pytest

from langevin_entropy.fpe import GridDensity, GridSpec, aligned_time_step, solve_fpe
from langevin_entropy.model import PerturbationSpec, PotentialSpec, ReferenceMeasure

SQRT_PI = math.sqrt(math.pi)


@pytest.fixture(scope="session")
def ou():
    return PotentialSpec.quadratic(1.0, 1)


@pytest.fixture(scope="session")
def ou_m(ou):
    return ReferenceMeasure(ou)


@pytest.fixture(scope="session")
def grid512():
    return GridSpec.uniform(1, 6.0, 512)


@pytest.fixture(scope="session")
def bump():
    return PerturbationSpec(0.5, 1.0, (0.0,), activation_time=0.0)


def run_fpe(p0, pot, pert, T=1.0, save_dt=1e-3, refine=0):
    dt, _ = aligned_time_step(p0.grid, pot, pert, save_dt)
    return solve_fpe(p0, pot, pert, dt / 2 ** refine, T, save_dt=save_dt)


@pytest.fixture(scope="session")
def ou_transient(ou, grid512):
    p0 = GridDensity.gaussian(grid512, [0.0], [[0.25]])
    return run_fpe(p0, ou, None)


@pytest.fixture(scope="session")
def ou_stationary_sol(ou, ou_m, grid512):
    return run_fpe(GridDensity.stationary(ou_m, grid512), ou, None)


@pytest.fixture(scope="session")
def ou_bump(ou, grid512, bump):
    p0 = GridDensity.gaussian(grid512, [0.0], [[0.25]])
    return run_fpe(p0, ou, bump, save_dt=5e-4)


def gaussian_H(m, var, kappa=1.0):
    return -0.5 * math.log(2 * math.pi * math.e * var) + kappa * (var + m * m)


def gaussian_I(m, var, kappa=1.0):
    a = 2 * kappa - 1 / var
    b = m / var
    return a * a * (m * m + var) + 2 * a * b * m + b * b


def ou_var(t, v0=0.25):
    return v0 * math.exp(-2 * t) + 0.5 * (1 - math.exp(-2 * t))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria record one verdict line each; printed after the run
ACCEPTANCE = {}


def record(criterion: int, title: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE[criterion] = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion:2d} {title}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
