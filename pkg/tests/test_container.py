import numpy as np
import pytest

from langevin_entropy.container import (HEADER, load_bundle, load_grid, load_ledger_arrays,
                                        save_bundle, save_grid, save_ledger)
from langevin_entropy.errors import PreconditionError
from langevin_entropy.fpe import FPESolution, GridDensity, GridSpec
from langevin_entropy.reversal import ledger_from_forward
from langevin_entropy.simulate import gaussian_ensemble, simulate_forward

from conftest import run_fpe


@pytest.fixture(scope="module")
def bundle(ou):
    init = gaussian_ensemble(64, 0.0, 0.25, seed=3)
    return simulate_forward(init, ou, None, 0.01, 0.2, record_paths=True,
                            cfg_hash=bytes(range(32)))


def test_bundle_round_trip(tmp_path, bundle):
    save_bundle(bundle, tmp_path / "p.bin")
    back = load_bundle(tmp_path / "p.bin")
    assert np.array_equal(back.states, bundle.states)
    assert np.array_equal(back.noise_increments, bundle.noise_increments)
    assert np.array_equal(back.times, bundle.times)
    assert (back.dt, back.t0, back.seed) == (bundle.dt, bundle.t0, bundle.seed)
    assert back.config_hash == bytes(range(32))
    assert back.direction == "forward"


def test_bundle_without_noise(tmp_path, bundle):
    b = type(bundle)(bundle.times, bundle.states, None, bundle.dt, bundle.t0, bundle.seed)
    save_bundle(b, tmp_path / "p.bin")
    assert load_bundle(tmp_path / "p.bin").noise_increments is None


def test_header_is_little_endian(tmp_path, bundle):
    save_bundle(bundle, tmp_path / "p.bin")
    raw = (tmp_path / "p.bin").read_bytes()
    magic, version, N, steps, d, dt, t0, seed = HEADER.unpack(raw[:HEADER.size])
    assert magic == b"ENTF" and version == 1
    assert (N, steps, d) == (64, 20, 1)
    assert int.from_bytes(raw[8:16], "little") == 64


def test_grid_density_round_trip(tmp_path, grid512):
    p = GridDensity.gaussian(grid512, [0.3], [[0.5]])
    save_grid(p, tmp_path / "g.bin")
    q = load_grid(tmp_path / "g.bin")
    assert isinstance(q, GridDensity)
    assert np.array_equal(q.values, p.values)
    assert q.grid.lower == p.grid.lower and q.grid.cells == p.grid.cells


def test_solution_round_trip(tmp_path, ou):
    g = GridSpec.uniform(2, 4.0, 24)
    sol = run_fpe(GridDensity.gaussian(g, [0, 0], 0.25), ou.__class__.quadratic(1.0, 2), None,
                  T=0.05, save_dt=0.01)
    save_grid(sol, tmp_path / "s.bin")
    back = load_grid(tmp_path / "s.bin")
    assert isinstance(back, FPESolution)
    assert np.array_equal(back.values, sol.values)
    assert np.array_equal(back.times, sol.times)
    assert back.at(0.03).values.shape == (24, 24)


def test_ledger_round_trip(tmp_path, ou, bundle):
    sol = run_fpe(GridDensity.gaussian(GridSpec.uniform(1, 6.0, 256), [0.0], [[0.25]]),
                  ou, None, T=0.2, save_dt=0.01)
    led = ledger_from_forward(bundle, sol, ou, None)
    save_ledger(led, tmp_path / "l.bin", seed=3)
    arr = load_ledger_arrays(tmp_path / "l.bin")
    assert arr["N"] == 64 and arr["seed"] == 3
    for k in ("R", "dM", "dF", "residual"):
        assert np.array_equal(arr[k], getattr(led, k))


def test_bad_magic(tmp_path, bundle, grid512):
    save_bundle(bundle, tmp_path / "p.bin")
    with pytest.raises(PreconditionError, match="bad magic"):
        load_grid(tmp_path / "p.bin")


def test_truncated(tmp_path, bundle):
    save_bundle(bundle, tmp_path / "p.bin")
    raw = (tmp_path / "p.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-8])
    with pytest.raises(PreconditionError, match="truncated"):
        load_bundle(tmp_path / "t.bin")
    (tmp_path / "h.bin").write_bytes(raw[:10])
    with pytest.raises(PreconditionError, match="truncated"):
        load_bundle(tmp_path / "h.bin")


def test_save_grid_rejects_other_objects(tmp_path):
    with pytest.raises(PreconditionError):
        save_grid(np.zeros(3), tmp_path / "x.bin")
