"""Euler-Maruyama ensembles for the perturbed Langevin SDE.

Random numbers are counter based: the Gaussian increments of particle block
``b`` (``BLOCK`` consecutive particles) at step ``k`` come from a Philox
generator keyed by ``(seed, b)`` with ``k`` in the counter.  Any partition of
the ensemble into block-aligned shards, processed in any order, reproduces
the same increments bit for bit.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BlowUpError, InsufficientSampleError, PreconditionError, StabilityError
from .fpe import GridDensity
from .model import PerturbationSpec, PotentialSpec, as_points
from .report import CheckReport

BLOCK = 4096
BLOWUP_RADIUS = 1e6
_NOISE, _INIT = 0, 1


def block_generator(seed: int, block: int, step: int, purpose: int = _NOISE) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, block], dtype=np.uint64)
    counter = np.array([0, 0, step, purpose], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def block_normals(seed: int, first: int, n: int, d: int, step: int, purpose: int = _NOISE) -> np.ndarray:
    """Standard normals for particles ``first .. first+n`` (``first`` block aligned)."""
    if first % BLOCK:
        raise PreconditionError(f"particle offset {first} is not a multiple of {BLOCK}")
    out = np.empty((n, d))
    for start in range(0, n, BLOCK):
        stop = min(start + BLOCK, n)
        g = block_generator(seed, (first + start) // BLOCK, step, purpose)
        out[start:stop] = g.standard_normal((BLOCK, d))[: stop - start]
    return out


def config_hash(**fields) -> bytes:
    """32-byte SHA-256 digest of a JSON rendering of ``fields``."""
    text = json.dumps(fields, sort_keys=True, default=repr)
    return hashlib.sha256(text.encode()).digest()


@dataclass
class EnsembleState:
    positions: np.ndarray
    t: float = 0.0
    seed: int = 0
    stream_counter: int = 0  # steps already consumed on every particle stream
    offset: int = 0  # global index of the first particle

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or len(x) < 1:
            raise PreconditionError("positions must be an N x d array with N >= 1")
        if x.shape[1] not in (1, 2, 3):
            raise PreconditionError("dimension must be 1, 2 or 3")
        if not np.all(np.isfinite(x)):
            raise PreconditionError("positions must be finite")
        self.positions = x

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    def shards(self, size: int):
        """Block-aligned sub-ensembles sharing the parent's streams."""
        if size % BLOCK:
            raise PreconditionError(f"shard size must be a multiple of {BLOCK}")
        for start in range(0, self.N, size):
            yield EnsembleState(self.positions[start:start + size], self.t, self.seed,
                                self.stream_counter, self.offset + start)


def gaussian_ensemble(N: int, mean, var, seed: int, d: int = 1) -> EnsembleState:
    """``N`` i.i.d. ``N(mean, var I)`` draws from the initialisation streams."""
    z = block_normals(seed, 0, N, d, 0, _INIT)
    x = np.asarray(mean, dtype=float) + math.sqrt(var) * z
    return EnsembleState(x, 0.0, seed)


def grid_ensemble(p: GridDensity, N: int, seed: int) -> EnsembleState:
    """Inverse-CDF sampling of a grid density (uniform within each cell)."""
    grid = p.grid
    u = block_normals(seed, 0, N, grid.d + 1, 0, _INIT)
    from scipy.special import ndtr
    u = ndtr(u)  # uniforms from the same counter-based normals
    w = p.values.reshape(-1) * grid.cell_volume
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    flat = np.minimum(np.searchsorted(cdf, u[:, 0], side="right"), len(cdf) - 1)
    idx = np.unravel_index(flat, grid.shape)
    x = np.empty((N, grid.d))
    for j in range(grid.d):
        x[:, j] = grid.lower[j] + (idx[j] + u[:, j + 1]) * grid.widths[j]
    return EnsembleState(x, p.t, seed)


@dataclass
class PathBundle:
    """Stored trajectories with their driving increments.

    ``direction="backward"`` bundles are indexed in reversed time: column ``k``
    holds ``X_{T - s_k}`` and the increments are those of the backward
    Brownian motion.
    """

    times: np.ndarray
    states: np.ndarray
    noise_increments: Optional[np.ndarray]
    dt: float
    t0: float
    seed: int
    config_hash: bytes = b"\0" * 32
    direction: str = "forward"
    T: float = 0.0
    offset: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.states.shape[0]

    @property
    def steps(self) -> int:
        return self.states.shape[1] - 1

    @property
    def d(self) -> int:
        return self.states.shape[2]

    def final_state(self) -> EnsembleState:
        return EnsembleState(self.states[:, -1].copy(), float(self.times[-1]), self.seed,
                             self.steps, self.offset)


def _drift(pot: PotentialSpec, pert: Optional[PerturbationSpec], x: np.ndarray, active: bool):
    g = pot.grad(x)
    if pert is not None and active:
        g = g + pert.beta(x)
    return g


def _lipschitz_estimate(pot: PotentialSpec, x: np.ndarray) -> float:
    if len(x) > 2000:
        x = x[np.linspace(0, len(x) - 1, 2000).astype(int)]
    # widen to the occupied box so the estimate covers a neighbourhood
    H = pot.hess(np.vstack([x, 1.5 * x]))
    return float(np.max(np.abs(np.linalg.eigvalsh(H))))


def simulate_forward(init: EnsembleState, pot: PotentialSpec, pert: Optional[PerturbationSpec],
                     dt: float, T: float, record_paths: bool = False, cfg_hash: bytes = None):
    """Euler-Maruyama from ``init.t`` to ``init.t + T``.

    The perturbation uses the left-endpoint indicator ``t_k > t0``.  Returns a
    ``PathBundle`` when ``record_paths`` is set, else the final ``EnsembleState``.
    """
    if not dt > 0 or not T > 0:
        raise PreconditionError("dt and T must be positive")
    if dt > T:
        raise PreconditionError(f"dt={dt} exceeds horizon T={T}")
    if pot.d != init.d:
        raise PreconditionError("potential and ensemble dimensions differ")
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * T:
        raise PreconditionError(f"T={T} is not an integer multiple of dt={dt}")
    L = _lipschitz_estimate(pot, init.positions)
    if dt * L >= 1.0:
        raise StabilityError(f"dt*Lip={dt * L:.3g} >= 1 on the occupied region")

    x = init.positions.copy()
    N, d = x.shape
    sqdt = math.sqrt(dt)
    if record_paths:
        states = np.empty((N, n_steps + 1, d))
        noise = np.empty((N, n_steps, d))
        states[:, 0] = x
    for k in range(n_steps):
        tk = init.t + k * dt
        active = pert is not None and tk > pert.t0
        dW = sqdt * block_normals(init.seed, init.offset, N, d, init.stream_counter + k)
        x = x + (-_drift(pot, pert, x, active) * dt + dW)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP_RADIUS:
            raise BlowUpError(f"blow-up: reduce Δt or check potential (step {k + 1})")
        if record_paths:
            states[:, k + 1] = x
            noise[:, k] = dW
    t_end = init.t + n_steps * dt
    if not record_paths:
        return EnsembleState(x, t_end, init.seed, init.stream_counter + n_steps, init.offset)
    times = init.t + dt * np.arange(n_steps + 1)
    return PathBundle(times, states, noise, dt, pert.t0 if pert is not None else 0.0,
                      init.seed, cfg_hash or b"\0" * 32, "forward", t_end, init.offset)


def replay_matches(b: PathBundle, pot: PotentialSpec, pert: Optional[PerturbationSpec]) -> bool:
    """True iff every stored step is reproduced bit-exactly from the increments."""
    if b.noise_increments is None:
        raise PreconditionError("bundle has no noise increments")
    for k in range(b.steps):
        x = b.states[:, k]
        active = pert is not None and b.times[k] > pert.t0
        nxt = x + (-_drift(pot, pert, x, active) * b.dt + b.noise_increments[:, k])
        if not np.array_equal(nxt, b.states[:, k + 1]):
            return False
    return True


@dataclass
class MomentSeries:
    times: np.ndarray
    second_moment: np.ndarray
    stderr: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "second_moment", "stderr"])
            for row in zip(self.times, self.second_moment, self.stderr):
                w.writerow([repr(float(v)) for v in row])


def second_moment_series(b: PathBundle) -> MomentSeries:
    if b.N < 1:
        raise InsufficientSampleError("empty bundle")
    sq = np.sum(b.states ** 2, axis=2)
    mean = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / math.sqrt(b.N) if b.N > 1 else np.zeros_like(mean)
    return MomentSeries(b.times.copy(), mean, se)


def drift_sup_in_ball(pot: PotentialSpec, pert: Optional[PerturbationSpec], R: float,
                      n: int = 401) -> float:
    """``C_R = sup { d - 2 x.(grad psi + beta 1)(x) : |x| <= R }`` by grid scan."""
    d = pot.d
    axis = np.linspace(-R, R, n if d == 1 else (101 if d == 2 else 41))
    pts = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    pts = pts[np.linalg.norm(pts, axis=1) <= R + 1e-12]
    vals = d - 2.0 * np.einsum("ij,ij->i", pts, pot.grad(pts))
    if pert is not None:
        v2 = d - 2.0 * np.einsum("ij,ij->i", pts, pot.grad(pts) + pert.beta(pts))
        vals = np.maximum(vals, v2)
    cr = float(np.max(vals))
    if not math.isfinite(cr):
        raise BlowUpError("C_R scan diverged")
    return cr


def gronwall_rhs(m0: float, C: float, C_R: float, d: int, t) -> np.ndarray:
    """``m0 + B t + 2C int_0^t e^{2C(t-s)} (m0 + B s) ds`` with ``B = C_R + d``."""
    t = np.asarray(t, dtype=float)
    B = C_R + d
    c = 2.0 * C
    if c == 0:
        return m0 + B * t
    return m0 + B * t + m0 * np.expm1(c * t) + B * (np.expm1(c * t) - c * t) / c


def gronwall_envelope_check(b: PathBundle, pot: PotentialSpec, pert: Optional[PerturbationSpec],
                            C: float, R: float) -> CheckReport:
    if b.N < 1 or b.states.size == 0:
        raise InsufficientSampleError("zero-particle bundle")
    series = second_moment_series(b)
    C_R = drift_sup_in_ball(pot, pert, R)
    rel_t = b.times - b.times[0]
    bound = gronwall_rhs(series.second_moment[0], C, C_R, b.d, rel_t)
    slack = bound - series.second_moment
    worst = int(np.argmin(slack))
    violations = np.flatnonzero(slack < 0)
    return CheckReport(
        name="gronwall_envelope",
        lhs=float(series.second_moment[worst]),
        rhs=float(bound[worst]),
        gap=float(slack[worst]),
        tolerance=0.0,
        passed=bool(len(violations) == 0),
        paper_anchor="E|X_t|^2 <= Gronwall envelope",
        details={"C": C, "R": R, "C_R": C_R,
                 "first_violation_index": int(violations[0]) if len(violations) else None,
                 "first_violation_time": float(b.times[violations[0]]) if len(violations) else None},
    )
