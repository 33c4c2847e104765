import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from langevin_entropy.errors import InsufficientSampleError, PreconditionError
from langevin_entropy.model import PotentialSpec
from langevin_entropy.simulate import (BLOCK, EnsembleState, block_normals, gaussian_ensemble,
                                       gronwall_envelope_check, gronwall_rhs, replay_matches,
                                       second_moment_series, simulate_forward)

from conftest import ou_var

FREE = PotentialSpec.custom(lambda x: np.zeros(len(x)), lambda x: np.zeros_like(x),
                            lambda x: np.zeros((len(x), x.shape[1], x.shape[1])))


def test_ou_variance_matches_closed_form(ou):
    init = gaussian_ensemble(100_000, 0.0, 0.25, seed=3)
    out = simulate_forward(init, ou, None, 1e-3, 1.0)
    x = out.positions[:, 0]
    var = x.var(ddof=1)
    se = var * math.sqrt(2 / (len(x) - 1))
    assert abs(var - ou_var(1.0)) < 3 * se
    assert out.t == pytest.approx(1.0)


def test_pure_noise_step():
    init = EnsembleState(np.zeros((1, 1)), seed=9)
    dt = 0.01
    out = simulate_forward(init, FREE, None, dt, dt)
    xi = block_normals(9, 0, 1, 1, 0)
    assert out.positions[0, 0] == math.sqrt(dt) * xi[0, 0]


def test_dt_larger_than_horizon(ou):
    with pytest.raises(PreconditionError):
        simulate_forward(gaussian_ensemble(10, 0, 1, 1), ou, None, 0.2, 0.1)


def test_horizon_not_multiple_of_dt(ou):
    with pytest.raises(PreconditionError):
        simulate_forward(gaussian_ensemble(10, 0, 1, 1), ou, None, 0.03, 0.1)


def test_shards_reproduce_whole_run(ou):
    init = gaussian_ensemble(3 * BLOCK + 17, 0.0, 0.5, seed=5)
    whole = simulate_forward(init, ou, None, 0.01, 0.2).positions
    parts = [simulate_forward(s, ou, None, 0.01, 0.2).positions for s in init.shards(BLOCK)]
    # processing order must not matter
    parts_rev = [simulate_forward(s, ou, None, 0.01, 0.2).positions
                 for s in reversed(list(init.shards(BLOCK)))][::-1]
    assert np.array_equal(whole, np.vstack(parts))
    assert np.array_equal(whole, np.vstack(parts_rev))


def test_particle_streams_do_not_depend_on_ensemble_size(ou):
    big = gaussian_ensemble(2 * BLOCK, 0.0, 0.5, seed=8)
    small = EnsembleState(big.positions[:BLOCK], seed=8)
    a = simulate_forward(big, ou, None, 0.01, 0.1).positions[:BLOCK]
    b = simulate_forward(small, ou, None, 0.01, 0.1).positions
    assert np.array_equal(a, b)


def test_split_horizon_equals_single_run(ou):
    init = gaussian_ensemble(1000, 0.0, 0.5, seed=2)
    one = simulate_forward(init, ou, None, 0.01, 0.2)
    mid = simulate_forward(init, ou, None, 0.01, 0.1)
    two = simulate_forward(mid, ou, None, 0.01, 0.1)
    assert np.array_equal(one.positions, two.positions)


def test_replay_bit_exact(ou, bump):
    init = gaussian_ensemble(500, 0.0, 0.25, seed=4)
    b = simulate_forward(init, ou, bump, 0.01, 0.3, record_paths=True)
    assert replay_matches(b, ou, bump)
    b.states[3, 7, 0] += 1e-12
    assert not replay_matches(b, ou, bump)


def test_second_moment_stationary_constant(ou):
    init = gaussian_ensemble(100_000, 0.0, 0.5, seed=6)
    b = simulate_forward(init, ou, None, 0.01, 0.5, record_paths=True)
    s = second_moment_series(b)
    # exact law of the Euler chain: v <- (1-dt)^2 v + dt drifts from 0.5 towards 1/(2-dt)
    v = [0.5]
    for _ in range(b.steps):
        v.append(0.99 ** 2 * v[-1] + 0.01)
    assert np.all(np.abs(s.second_moment - np.array(v)) < 3.5 * s.stderr)
    assert np.all(np.abs(s.second_moment - 0.5) < 0.01)


def test_second_moment_single_particle_at_origin(ou):
    b = simulate_forward(EnsembleState(np.zeros((1, 1))), ou, None, 0.1, 0.1, record_paths=True)
    assert second_moment_series(b).second_moment[0] == 0.0


def test_second_moment_relaxes_from_shifted_start(ou):
    init = gaussian_ensemble(100_000, 2.0, 0.01, seed=7)
    b = simulate_forward(init, ou, None, 0.01, 2.0, record_paths=True)
    s = second_moment_series(b)
    t = s.times
    oracle = 4 * np.exp(-2 * t) + 0.01 * np.exp(-2 * t) + 0.5 * (1 - np.exp(-2 * t))
    assert np.all(np.diff(s.second_moment[:150]) < 0)
    assert np.max(np.abs(s.second_moment - oracle)) < 0.05


def test_gronwall_envelope_stationary(ou):
    init = gaussian_ensemble(4000, 0.0, 0.5, seed=1)
    b = simulate_forward(init, ou, None, 0.01, 1.0, record_paths=True)
    rep = gronwall_envelope_check(b, ou, None, C=0.1, R=1.0)
    assert rep.passed
    assert rep.details["first_violation_index"] is None


def test_gronwall_detects_tampered_position(ou):
    init = gaussian_ensemble(2000, 0.0, 0.5, seed=1)
    b = simulate_forward(init, ou, None, 0.01, 1.0, record_paths=True)
    i = int(np.argmax(np.abs(b.states[:, 10, 0])))
    b.states[i, 10] *= 100
    rep = gronwall_envelope_check(b, ou, None, C=0.1, R=1.0)
    assert not rep.passed
    assert rep.details["first_violation_index"] == 10


def test_gronwall_empty_bundle(ou):
    b = simulate_forward(EnsembleState(np.zeros((1, 1))), ou, None, 0.1, 0.1, record_paths=True)
    b.states = b.states[:0]
    with pytest.raises(InsufficientSampleError):
        gronwall_envelope_check(b, ou, None, 0.1, 1.0)


def test_gronwall_rhs_solves_linear_ode():
    m0, C, CR, d = 0.7, 0.3, 1.5, 2
    t = np.linspace(0, 2, 2001)
    y = gronwall_rhs(m0, C, CR, d, t)
    # y' = B + 2C y, y(0) = m0
    dy = np.gradient(y, t)
    assert np.allclose(dy[1:-1], (CR + d) + 2 * C * y[1:-1], rtol=1e-4)
    assert y[0] == m0


def test_weak_order_one(ou):
    # variance bias at T=1 should halve with dt
    N = 1_000_000
    errs = []
    for dt in (0.1, 0.05):
        init = gaussian_ensemble(N, 0.0, 0.25, seed=11)
        x = simulate_forward(init, ou, None, dt, 1.0).positions[:, 0]
        errs.append(abs(x.var() - ou_var(1.0)))
    assert 1.5 < errs[0] / errs[1] < 2.7


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 300))
def test_replay_property(seed, n):
    pot = PotentialSpec.quadratic(1.0)
    init = gaussian_ensemble(n, 0.0, 1.0, seed)
    b = simulate_forward(init, pot, None, 0.05, 0.25, record_paths=True)
    assert replay_matches(b, pot, None)
    assert np.array_equal(b.states[:, -1], simulate_forward(init, pot, None, 0.05, 0.25).positions)
