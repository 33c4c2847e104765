import numpy as np
import pytest

from langevin_entropy.dissipation import (de_bruijn_check, displacement_identity_check,
                                          forward_defect, forward_defect_check,
                                          girsanov_constants, girsanov_log_z,
                                          girsanov_ratio_checks,
                                          gradient_deviation_scaling, perturbed_derivative_check,
                                          perturbed_derivative_target)
from langevin_entropy.entropy import entropy_report, fisher_information
from langevin_entropy.errors import PreconditionError
from langevin_entropy.fpe import GridDensity
from langevin_entropy.model import PerturbationSpec
from langevin_entropy.simulate import gaussian_ensemble, simulate_forward

from conftest import run_fpe


@pytest.fixture(scope="module")
def pair(ou, grid512):
    """Unperturbed and bump-perturbed runs sharing snapshot times."""
    p0 = GridDensity.gaussian(grid512, [0.0], [[0.25]])
    bump = PerturbationSpec(0.5, 1.0, (0.0,), activation_time=0.0)
    return (run_fpe(p0, ou, None, T=0.5, save_dt=1e-3),
            run_fpe(p0, ou, bump, T=0.5, save_dt=1e-3), bump)


def test_de_bruijn_transient_with_refinement(ou, ou_m, grid512, ou_transient):
    p0 = ou_transient[0]
    rep = entropy_report(ou_transient, ou_m)
    fine = entropy_report(run_fpe(p0, ou, None, refine=1), ou_m)
    chk = de_bruijn_check(rep, fine, 0.1, 1.0)
    assert chk.passed, chk.details
    assert chk.gap < 2e-2
    assert chk.details["refinement_ratio"] >= 1.8


def test_de_bruijn_stationary(ou_stationary_sol, ou_m):
    rep = entropy_report(ou_stationary_sol, ou_m)
    chk = de_bruijn_check(rep)
    assert chk.passed
    assert abs(chk.lhs) < 1e-4 and abs(chk.rhs) < 1e-4


def test_de_bruijn_needs_three_samples(ou_transient, ou_m):
    short = type(ou_transient)(ou_transient.grid, ou_transient.times[:2],
                               ou_transient.values[:2], 1e-3)
    rep = entropy_report(short, ou_m)
    with pytest.raises(PreconditionError, match="3"):
        de_bruijn_check(rep)


def test_displacement_identity_bump(ou_bump, ou_m, bump):
    rep = displacement_identity_check(ou_bump, ou_m, bump, 0.5)
    assert rep.passed, rep.details
    assert rep.gap < 2e-2
    assert rep.details["perturbation_term"] != 0


def test_displacement_identity_zero_window(ou_bump, ou_m, bump):
    rep = displacement_identity_check(ou_bump, ou_m, bump, 0.0)
    assert rep.lhs == 0.0 and rep.rhs == 0.0


def test_displacement_identity_rejects_reversed_window(ou_bump, ou_m, bump):
    with pytest.raises(PreconditionError):
        displacement_identity_check(ou_bump, ou_m, bump, 0.2, t0=0.3)


@pytest.mark.parametrize("var", [0.1, 0.25, 1.0])
def test_displacement_identity_initial_variance_sweep(var, ou, ou_m, grid512, bump):
    p0 = GridDensity.gaussian(grid512, [0.0], [[var]])
    sol = run_fpe(p0, ou, bump, T=0.5, save_dt=1e-3)
    assert displacement_identity_check(sol, ou_m, bump, 0.5).passed


def test_perturbed_derivative_bump(ou_bump, ou_m):
    rep = perturbed_derivative_check(ou_bump, ou_m)
    assert rep.passed, rep.details
    assert rep.gap < 3e-2


def test_perturbed_derivative_without_perturbation_is_de_bruijn(ou_transient, ou_m):
    rep = perturbed_derivative_check(ou_transient, ou_m, t0=0.2)
    assert rep.rhs == pytest.approx(-0.5 * fisher_information(ou_transient.at(0.2), ou_m))
    assert rep.passed


def test_perturbed_derivative_needs_three_windows(ou_bump, ou_m):
    with pytest.raises(PreconditionError):
        perturbed_derivative_check(ou_bump, ou_m, deltas=(0.1, 0.05))


def test_perturbed_target_sign(ou_bump, ou_m, bump):
    # the bump pushes mass outward: E[beta . grad R] is nonzero
    _, term = perturbed_derivative_target(ou_bump[0], ou_m, bump)
    assert abs(term) > 1e-3


@pytest.mark.parametrize("var", [0.1, 0.25, 1.0])
def test_perturbed_derivative_initial_variance_sweep(var, ou, ou_m, grid512, bump):
    p0 = GridDensity.gaussian(grid512, [0.0], [[var]])
    sol = run_fpe(p0, ou, bump, T=0.2, save_dt=5e-4)
    assert perturbed_derivative_check(sol, ou_m).passed


def test_girsanov_unit_ratio_without_perturbation(ou_transient):
    rep = girsanov_ratio_checks(ou_transient, ou_transient, None, None)
    assert rep.passed and rep.lhs == 0.0


def test_girsanov_envelope_bump(pair, ou):
    sol0, solb, bump = pair
    rep = girsanov_ratio_checks(sol0, solb, ou, bump)
    assert rep.passed, rep.details
    assert rep.details["envelope_pass"] and rep.details["linear_bound_pass"]
    assert rep.lhs <= rep.rhs


def test_girsanov_amplitude_doubling(ou, grid512):
    p0 = GridDensity.gaussian(grid512, [0.0], [[0.25]])
    sol0 = run_fpe(p0, ou, None, T=0.5, save_dt=1e-3)
    logs = []
    for c in (0.25, 0.5):
        pert = PerturbationSpec(c, 1.0, (0.0,), activation_time=0.0)
        rep = girsanov_ratio_checks(sol0, run_fpe(p0, ou, pert, T=0.5, save_dt=1e-3), ou, pert)
        assert rep.details["envelope_pass"]
        logs.append(rep.lhs)
    assert 1.0 < logs[1] / logs[0] < 2.2


def test_girsanov_monte_carlo_weights(pair, ou):
    sol0, solb, bump = pair
    init = gaussian_ensemble(20_000, 0.0, 0.25, seed=12)
    b = simulate_forward(init, ou, None, 1e-3, 0.5, record_paths=True)
    rep = girsanov_ratio_checks(sol0, solb, ou, bump, bundle=b)
    assert rep.details["log_Z_pass"]
    # reweighting unperturbed paths by Z reproduces the perturbed mean square
    Z = np.exp(girsanov_log_z(b, bump)[:, -1])
    x = b.states[:, -1, 0]
    g = solb.grid.axis_centers(0)
    m2 = float(np.sum(solb[-1].values * g ** 2) * solb.grid.widths[0])
    assert np.mean(Z) == pytest.approx(1.0, abs=0.02)
    assert np.mean(Z * x ** 2) / np.mean(Z) == pytest.approx(m2, rel=0.03)


def test_girsanov_constants_scale_with_window(ou, bump):
    c1a, c2a = girsanov_constants(ou, bump, 0.5)
    c1b, c2b = girsanov_constants(ou, bump, 1.0)
    assert c1b == pytest.approx(2 * c1a)
    assert c2b > c2a > 0


def test_gradient_deviation_grows_with_window(pair, ou_m):
    sol0, solb, bump = pair
    out = gradient_deviation_scaling(sol0, solb, ou_m, 0.0, [0.05, 0.1, 0.2])
    assert np.all(np.diff(out["values"]) > 0)
    assert out["exponent"] > 1.0


def test_forward_defect_stationary(ou_m, grid512):
    p = GridDensity.stationary(ou_m, grid512)
    E, I = forward_defect(p, ou_m)
    assert abs(E) < 1e-4


def test_forward_defect_transient_and_control(ou_transient, ou_m):
    p = ou_transient.at(0.3)
    rep = forward_defect_check(p, ou_m)
    assert rep.passed, rep.details
    E, I = forward_defect(p, ou_m, drop_second=True)
    assert abs(E) >= I / 2
    assert not forward_defect_check(p, ou_m, drop_second=True).passed
