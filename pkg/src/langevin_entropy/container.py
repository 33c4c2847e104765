"""Little-endian binary container for path bundles, grid densities and ledgers.

Layout: a fixed header ``<4sIQQIddQ`` (magic, version, N, steps, d, dt, t0,
seed), a 32-byte configuration digest, a small kind-specific preamble, then
raw float64 arrays in C order.
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import PreconditionError
from .fpe import FPESolution, GridDensity, GridSpec
from .simulate import PathBundle

HEADER = struct.Struct("<4sIQQIddQ")
VERSION = 1
MAGIC_PATHS = b"ENTF"
MAGIC_GRID = b"ENTG"
MAGIC_LEDGER = b"ENTL"
_F64 = np.dtype("<f8")


def _write_arrays(fh, *arrays):
    for a in arrays:
        fh.write(np.ascontiguousarray(a, dtype=_F64).tobytes())


def _read(fh, count: int) -> np.ndarray:
    buf = fh.read(count * 8)
    if len(buf) != count * 8:
        raise PreconditionError("truncated container")
    return np.frombuffer(buf, dtype=_F64).astype(float)


def _header(fh, magic: bytes):
    raw = fh.read(HEADER.size)
    if len(raw) != HEADER.size:
        raise PreconditionError("truncated container header")
    fields = HEADER.unpack(raw)
    if fields[0] != magic:
        raise PreconditionError(f"bad magic {fields[0]!r}, expected {magic!r}")
    if fields[1] != VERSION:
        raise PreconditionError(f"unsupported container version {fields[1]}")
    digest = fh.read(32)
    return fields[2:], digest


# ---------------------------------------------------------------------------
# path bundles

_PATH_EXTRA = struct.Struct("<IIdQ")  # flags, direction, T, offset


def save_bundle(b: PathBundle, path) -> None:
    has_noise = b.noise_increments is not None
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC_PATHS, VERSION, b.N, b.steps, b.d, b.dt, b.t0, b.seed))
        fh.write(bytes(b.config_hash).ljust(32, b"\0")[:32])
        fh.write(_PATH_EXTRA.pack(int(has_noise), int(b.direction == "backward"), b.T, b.offset))
        _write_arrays(fh, b.times, b.states)
        if has_noise:
            _write_arrays(fh, b.noise_increments)


def load_bundle(path) -> PathBundle:
    with open(path, "rb") as fh:
        (N, steps, d, dt, t0, seed), digest = _header(fh, MAGIC_PATHS)
        flags, direction, T, offset = _PATH_EXTRA.unpack(fh.read(_PATH_EXTRA.size))
        times = _read(fh, steps + 1)
        states = _read(fh, N * (steps + 1) * d).reshape(N, steps + 1, d)
        noise = _read(fh, N * steps * d).reshape(N, steps, d) if flags & 1 else None
    return PathBundle(times, states, noise, dt, t0, seed, digest,
                      "backward" if direction else "forward", T, offset)


# ---------------------------------------------------------------------------
# grid densities


def save_grid(obj, path, digest: bytes = b"") -> None:
    """Write a ``GridDensity`` or an ``FPESolution`` (all snapshots)."""
    if isinstance(obj, GridDensity):
        grid, times, values, dt = obj.grid, np.array([obj.t]), obj.values[None], 0.0
    elif isinstance(obj, FPESolution):
        grid, times, values, dt = obj.grid, obj.times, obj.values, obj.save_dt
    else:
        raise PreconditionError("expected GridDensity or FPESolution")
    cells = int(np.prod(grid.shape))
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC_GRID, VERSION, len(times), cells, grid.d, dt,
                             float(times[0]), 0))
        fh.write(bytes(digest).ljust(32, b"\0")[:32])
        fh.write(struct.pack(f"<{grid.d}Q", *grid.cells))
        _write_arrays(fh, grid.lower, grid.upper, times, values)


def load_grid(path):
    """Returns a ``GridDensity`` for single snapshots, else an ``FPESolution``."""
    with open(path, "rb") as fh:
        (K, cells, d, dt, _t0, _seed), _ = _header(fh, MAGIC_GRID)
        shape = struct.unpack(f"<{d}Q", fh.read(8 * d))
        lower = tuple(_read(fh, d))
        upper = tuple(_read(fh, d))
        times = _read(fh, K)
        values = _read(fh, K * cells).reshape((K,) + tuple(shape))
    grid = GridSpec(lower, upper, tuple(int(c) for c in shape))
    if K == 1:
        return GridDensity(grid, values[0], float(times[0]))
    return FPESolution(grid, times, values, dt)


# ---------------------------------------------------------------------------
# ledgers


def save_ledger(led, path, seed: int = 0, digest: bytes = b"") -> None:
    """Raw ``R, dM, dF, residual`` arrays of a trajectorial ledger."""
    N, K = led.dM.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC_LEDGER, VERSION, N, K, led.states.shape[2], led.dt,
                             led.t0, seed))
        fh.write(bytes(digest).ljust(32, b"\0")[:32])
        _write_arrays(fh, [led.T], led.times, led.R, led.dM, led.dF, led.residual)


def load_ledger_arrays(path) -> dict:
    with open(path, "rb") as fh:
        (N, K, d, dt, t0, seed), _ = _header(fh, MAGIC_LEDGER)
        T = float(_read(fh, 1)[0])
        times = _read(fh, K + 1)
        R = _read(fh, N * (K + 1)).reshape(N, K + 1)
        dM, dF, res = (_read(fh, N * K).reshape(N, K) for _ in range(3))
    return {"N": N, "steps": K, "d": d, "dt": dt, "t0": t0, "seed": seed, "T": T,
            "times": times, "R": R, "dM": dM, "dF": dF, "residual": res}
