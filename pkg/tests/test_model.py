import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from langevin_entropy.errors import NumericalError, PreconditionError
from langevin_entropy.model import (PerturbationSpec, PotentialSpec, ReferenceMeasure,
                                    check_drift_condition, check_linear_growth,
                                    curvature_lower_bound, eval_reference_density,
                                    perturbation_integrand, radial_grid)

# scipy.integrate.quad of exp(-x^2) over the real line
Z_OU = 1.7724538509055159


def test_reference_density_values(ou_m):
    assert eval_reference_density(ou_m, [0.0])[0] == 1.0
    assert eval_reference_density(ou_m, [1.0])[0] == pytest.approx(math.exp(-1.0), rel=1e-15)


def test_total_mass_not_normalized(ou_m):
    assert ou_m.total_mass(-10, 10) == pytest.approx(Z_OU, rel=1e-10)


def test_nonfinite_points_rejected(ou_m):
    with pytest.raises(PreconditionError):
        eval_reference_density(ou_m, [np.nan])


def test_overflowing_density_reported():
    pot = PotentialSpec.custom(lambda x: -1e6 * np.ones(len(x)), lambda x: 0 * x)
    with pytest.raises((NumericalError, PreconditionError)):
        eval_reference_density(ReferenceMeasure(pot), [0.0])


def test_drift_condition_quadratic():
    rep = check_drift_condition(PotentialSpec.quadratic(1.0), 0.1, 1.0, radial_grid(1, 8))
    assert rep.passed


def test_drift_condition_double_well():
    pot = PotentialSpec.double_well(1.0, 0.25)
    rep = check_drift_condition(pot, 2.0, 2.0, radial_grid(1, 10, 2001))
    assert rep.passed


def test_drift_condition_negative_psi_rejected():
    pot = PotentialSpec.custom(lambda x: -np.sum(x * x, 1), lambda x: -2 * x)
    with pytest.raises(PreconditionError, match="nonnegative"):
        check_drift_condition(pot, 1.0, 1.0, radial_grid(1, 4))


def test_drift_condition_empty_grid():
    with pytest.raises(PreconditionError):
        check_drift_condition(PotentialSpec.quadratic(), 1.0, 1.0, np.empty((0, 1)))


def test_linear_growth_double_well_fails_with_small_K():
    pot = PotentialSpec("double_well", 1, a=1.0, growth_constant=1.0)
    assert not check_linear_growth(pot, radial_grid(1, 6)).passed


@pytest.mark.parametrize("pot,grid,expected", [
    (PotentialSpec.quadratic(1.0), radial_grid(1, 3), 1.0),
    (PotentialSpec.quadratic(0.5, 2), radial_grid(2, 3, 21), 0.5),
    # psi'' = 3x^2 - 1 is smallest at the origin
    (PotentialSpec.double_well(1.0, 0.0), radial_grid(1, 2, 401), -1.0),
])
def test_curvature_lower_bound(pot, grid, expected):
    assert curvature_lower_bound(pot, grid) == pytest.approx(expected, abs=1e-9)


def test_custom_hessian_by_finite_differences():
    pot = PotentialSpec.custom(lambda x: 0.5 * np.sum(x * x, 1) ** 2 / 4,
                               lambda x: 0.5 * np.sum(x * x, 1)[:, None] * x, dimension=2)
    H = pot.hess(np.array([[1.0, 0.5]]))[0]
    r2 = 1.25
    exact = 0.5 * (r2 * np.eye(2) + 2 * np.outer([1.0, 0.5], [1.0, 0.5]))
    np.testing.assert_allclose(H, exact, rtol=1e-5)


@settings(max_examples=60, deadline=None)
@given(c=st.floats(-2, 2), r=st.floats(0.2, 2), x=st.floats(-10, 10))
def test_beta_vanishes_outside_support(c, r, x):
    pert = PerturbationSpec(c, r, (0.3,))
    if abs(x - 0.3) >= r:
        assert pert.B([x])[0] == 0.0
        assert np.all(pert.beta([x]) == 0.0)
        assert pert.div_beta([x])[0] == 0.0


@settings(max_examples=40, deadline=None)
@given(u=st.lists(st.floats(-0.9, 0.9), min_size=2, max_size=2),
       c=st.floats(0.1, 2.0))
def test_divergence_matches_finite_differences(u, c):
    pert = PerturbationSpec(c, 1.5, (0.2, -0.1))
    x = np.array(pert.center) + 1.5 * np.array(u) / max(1.0, np.linalg.norm(u) / 0.9)
    h = 1e-4
    fd = 0.0
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd += (pert.beta(x + e)[0, j] - pert.beta(x - e)[0, j]) / (2 * h)
    exact = pert.div_beta(x)[0]
    assert abs(fd - exact) <= 1e-6 * max(1.0, abs(exact))


@settings(max_examples=40, deadline=None)
@given(x=st.floats(-0.95, 0.95))
def test_beta_is_gradient_of_B(x):
    pert = PerturbationSpec(0.7, 1.0, (0.0,))
    h = 1e-6
    fd = (pert.B([x + h])[0] - pert.B([x - h])[0]) / (2 * h)
    assert fd == pytest.approx(pert.beta([x])[0, 0], rel=1e-5, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(x=st.lists(st.floats(-3, 3), min_size=2, max_size=2),
       kind=st.sampled_from(["quadratic", "double_well"]))
def test_log_q_plus_two_psi_vanishes(x, kind):
    pot = PotentialSpec.quadratic(0.7, 2) if kind == "quadratic" else \
        PotentialSpec.double_well(1.0, 0.1, 2)
    m = ReferenceMeasure(pot)
    pts = np.array([x])
    assert abs(np.log(m.density(pts))[0] + 2 * pot.psi(pts)[0]) < 1e-12


def test_perturbation_integrand_is_local(ou):
    pert = PerturbationSpec(0.5, 1.0, (0.0,))
    x = np.array([[-2.0], [-0.5], [0.0], [0.5], [1.5]])
    vals = perturbation_integrand(ou, pert, x)
    assert vals[0] == 0.0 and vals[-1] == 0.0
    assert np.all(vals[1:4] != 0.0) or vals[2] != 0.0
    assert np.all(perturbation_integrand(ou, None, x) == 0.0)


def test_invalid_specs():
    with pytest.raises(PreconditionError):
        PotentialSpec.quadratic(-1.0)
    with pytest.raises(PreconditionError):
        PerturbationSpec(1.0, -1.0)
    with pytest.raises(PreconditionError):
        PerturbationSpec(1.0, 1.0, activation_time=-0.1)
