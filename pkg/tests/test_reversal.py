import math

import numpy as np
import pytest

from langevin_entropy.errors import InsufficientSampleError, PreconditionError
from langevin_entropy.fpe import GridDensity, GridSpec
from langevin_entropy.reversal import (BackwardDriftField, LedgerSummary, backward_increments,
                                       backward_ito_sum, decompose_entropy_process,
                                       forward_ito_sum, forward_shards, ledger_from_forward,
                                       martingale_test, reconstruct_backward_brownian,
                                       reverse_forward_bundle, simulate_backward, summarize,
                                       trajectorial_displacement_check, trajectorial_rate_check)
from langevin_entropy.simulate import EnsembleState, gaussian_ensemble, grid_ensemble, simulate_forward
from langevin_entropy.transport import w2_1d

from conftest import run_fpe

DT = 2e-3
T = 0.4


@pytest.fixture(scope="module")
def transient(ou, grid512):
    p0 = GridDensity.gaussian(grid512, [0.0], [[0.25]])
    return run_fpe(p0, ou, None, T=T, save_dt=DT)


@pytest.fixture(scope="module")
def stationary(ou, ou_m, grid512):
    return run_fpe(GridDensity.stationary(ou_m, grid512), ou, None, T=T, save_dt=DT)


@pytest.fixture(scope="module")
def transient_bundle(ou):
    return simulate_forward(gaussian_ensemble(40_000, 0.0, 0.25, seed=21), ou, None, DT, T,
                            record_paths=True)


@pytest.fixture(scope="module")
def transient_summary(ou, transient):
    init = gaussian_ensemble(24_576, 0.0, 0.25, seed=22)
    parts = [LedgerSummary.from_ledger(ledger_from_forward(b, transient, ou, None), (0.1,), (0.1, 0.05))
             for b in forward_shards(init, 8192, ou, None, DT, T)]
    return LedgerSummary.merge(parts)


def test_one_backward_step_scheme(ou, stationary):
    x0 = 0.7
    b = simulate_backward(np.full((64, 1), x0), stationary, ou, None, DT, DT, seed=1)
    det = b.states[:, 1, 0] - b.noise_increments[:, 0, 0]
    # score of q/Z is -2x, drift of the reversed chain is score + grad psi
    assert np.allclose(det, x0 + (-2 * x0 + x0) * DT, atol=1e-2 * DT)


def test_backward_horizon_beyond_T(ou, stationary):
    with pytest.raises(PreconditionError):
        simulate_backward(np.zeros((4, 1)), stationary, ou, None, DT, T + 0.1)


def test_backward_marginal_recovers_initial_law(ou, transient):
    term = simulate_forward(gaussian_ensemble(20_000, 0.0, 0.25, seed=2), ou, None, DT, T)
    out = simulate_backward(term, transient, ou, None, DT, seed=2, record_paths=False)
    assert w2_1d(out.positions[:, 0], transient[0]) < 0.05
    assert out.t == pytest.approx(0.0)


def test_backward_drift_field_switches_perturbation(ou, ou_bump, bump):
    f = BackwardDriftField(ou_bump, ou, bump)
    assert f.perturbation_active(0.0)
    late = type(bump)(0.5, 1.0, (0.0,), activation_time=0.5)
    g = BackwardDriftField(ou_bump, ou, late)
    assert g.perturbation_active(0.49) and not g.perturbation_active(0.5)


def test_kde_score_source_is_close_to_grid(ou, transient):
    term = simulate_forward(gaussian_ensemble(20_000, 0.0, 0.25, seed=3), ou, None, DT, T)
    kw = dict(seed=3, record_paths=False)
    kde = simulate_backward(term, transient, ou, None, DT, T / 2, score_source="kde", **kw)
    grid = simulate_backward(term, transient, ou, None, DT, T / 2, **kw)
    target = transient.at(T / 2)
    assert w2_1d(kde.positions[:, 0], target) < 0.05
    assert w2_1d(grid.positions[:, 0], target) < w2_1d(kde.positions[:, 0], target)


def test_brownian_reconstruction_transient(transient_bundle, transient):
    _, rep = reconstruct_backward_brownian(transient_bundle, transient)
    assert rep.passed, rep.details


def test_brownian_reconstruction_stationary(ou, stationary):
    init = grid_ensemble(stationary[0], 40_000, seed=4)
    b = simulate_forward(init, ou, None, DT, T, record_paths=True)
    _, rep = reconstruct_backward_brownian(b, stationary)
    assert rep.passed, rep.details


def test_no_score_control_fails_terminal_correlation(transient_bundle, transient):
    _, rep = reconstruct_backward_brownian(transient_bundle, transient, include_score=False)
    assert rep.details["variance_pass"]
    assert not rep.details["terminal_correlation_pass"]


def test_brownian_needs_two_paths(ou, transient):
    b = simulate_forward(EnsembleState(np.zeros((1, 1))), ou, None, DT, T, record_paths=True)
    with pytest.raises(InsufficientSampleError, match="insufficient sample"):
        reconstruct_backward_brownian(b, transient)


def test_brownian_needs_noise(transient_bundle, transient):
    b = reverse_forward_bundle(transient_bundle, transient)
    fwd = type(transient_bundle)(transient_bundle.times, transient_bundle.states[:10], None,
                                 DT, 0.0, 0)
    with pytest.raises(PreconditionError):
        backward_increments(fwd, transient)
    assert b.direction == "backward"


def test_ito_sums():
    rng = np.random.default_rng(0)
    X = np.cumsum(rng.normal(0, math.sqrt(1e-3), (2000, 1001)), axis=1)
    assert np.allclose(backward_ito_sum(np.ones_like(X), X), X[:, -1] - X[:, 0])
    # the two sums differ by the quadratic variation
    qv = backward_ito_sum(X, X) - forward_ito_sum(X, X)
    assert np.mean(qv) == pytest.approx(1.0, rel=0.01)
    with pytest.raises(PreconditionError):
        backward_ito_sum(np.ones(3), np.ones(4))
    with pytest.raises(PreconditionError):
        backward_ito_sum(np.ones(1), np.ones(1))


def test_ledger_residual_is_small(ou, transient, transient_bundle):
    sub = type(transient_bundle)(transient_bundle.times, transient_bundle.states[:4096],
                                 transient_bundle.noise_increments[:4096], DT, 0.0, 21)
    led = ledger_from_forward(sub, transient, ou, None)
    # exact up to the Ito-Taylor remainder of order dt per step
    step_scale = np.mean(np.abs(led.dM))
    assert np.max(np.abs(led.residual.mean(axis=0))) < 0.05 * step_scale
    assert np.allclose(np.diff(led.R, axis=1), led.dM + led.dF + led.residual)


def test_decompose_rejects_forward_bundle(ou, transient, transient_bundle):
    with pytest.raises(PreconditionError):
        decompose_entropy_process(transient_bundle, transient, ou, None)


def test_martingale_suite(transient_summary):
    rep = martingale_test(transient_summary)
    assert rep.passed, rep.details
    # at this path count the drift of R shows up through the isometry gap;
    # the full-size scenario also fails orthogonality
    ctrl = martingale_test(transient_summary, use="R")
    assert not ctrl.passed
    assert ctrl.details["max_abs_z"] > rep.details["max_abs_z"]


def test_martingale_trivial_at_stationarity(ou, stationary):
    init = grid_ensemble(stationary[0], 2048, seed=5)
    b = simulate_forward(init, ou, None, DT, T, record_paths=True)
    led = ledger_from_forward(b, stationary, ou, None)
    assert np.max(np.abs(led.dM)) < 1e-4
    assert martingale_test(led, min_paths=1000).passed


def test_martingale_insufficient_paths(transient_summary):
    with pytest.raises(InsufficientSampleError, match="insufficient sample"):
        martingale_test(transient_summary, min_paths=10 ** 6)


def test_summary_merge_matches_single_pass(ou, transient):
    init = gaussian_ensemble(16_384, 0.0, 0.25, seed=9)
    one = simulate_forward(init, ou, None, DT, T, record_paths=True)
    whole = summarize(ledger_from_forward(one, transient, ou, None), (0.1,))
    parts = summarize((ledger_from_forward(b, transient, ou, None)
                       for b in forward_shards(init, 8192, ou, None, DT, T)), (0.1,))
    assert np.array_equal(whole.M_total, parts.M_total)
    assert np.array_equal(whole.displacement[0.1][1], parts.displacement[0.1][1])


def test_displacement_identity_coarse(transient_summary):
    rep = trajectorial_displacement_check(transient_summary, 0.1, bins=16)
    assert rep.details["bins_used"] > 10
    assert rep.details["rms_discrepancy"] < 0.2
    assert rep.gap < 0.5


def test_displacement_stationary_sides_vanish(ou, stationary):
    init = grid_ensemble(stationary[0], 4096, seed=6)
    b = simulate_forward(init, ou, None, DT, T, record_paths=True)
    led = ledger_from_forward(b, stationary, ou, None)
    rep = trajectorial_displacement_check(led, 0.1, bins=8)
    assert abs(rep.lhs) < 1e-4 and abs(rep.rhs) < 1e-4


def test_displacement_empty_window(ou, transient, transient_bundle):
    sub = type(transient_bundle)(transient_bundle.times, transient_bundle.states[:100],
                                 transient_bundle.noise_increments[:100], DT, 0.0, 21)
    led = ledger_from_forward(sub, transient, ou, None)
    with pytest.raises(PreconditionError, match="empty reversed window"):
        trajectorial_displacement_check(led, T)


def test_rate_check_runs(transient_summary):
    rep = trajectorial_rate_check(transient_summary, windows=(0.1, 0.05), bins=16)
    assert len(rep.details["l1_gaps"]) == 2
    assert rep.details["monotone"]
    assert rep.gap < 0.5
    with pytest.raises(PreconditionError):
        trajectorial_rate_check(transient_summary, windows=(0.1,))
