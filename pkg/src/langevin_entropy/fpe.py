"""Finite-volume Fokker-Planck solver on rectangular grids (d = 1, 2).

The flux between neighbouring cells uses exponential (Chang-Cooper /
Scharfetter-Gummel) weighting of the drift potential, which keeps the scheme
positive and makes ``exp(-2 psi)`` sampled at cell centres an exact discrete
equilibrium.  Time stepping is explicit Euler with checked stability bounds.
"""
from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import (OffGridError, PositivityError, PreconditionError,
                     StabilityError, NumericalError)
from .model import PerturbationSpec, PotentialSpec, ReferenceMeasure

DENSITY_FLOOR = 1e-300
MASS_TOL = 1e-8
POSITIVITY_TOL = -1e-12


@dataclass(frozen=True)
class GridSpec:
    """Cell-centred tensor grid.  ``cells`` counts cells per axis."""

    lower: tuple
    upper: tuple
    cells: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        n = tuple(int(v) for v in np.atleast_1d(self.cells))
        if not (len(lo) == len(hi) == len(n)):
            raise PreconditionError("grid bounds and cell counts must have equal length")
        if len(lo) not in (1, 2):
            raise PreconditionError("grid dimension must be 1 or 2")
        for a, b, c in zip(lo, hi, n):
            if not (math.isfinite(a) and math.isfinite(b)) or not a < b:
                raise PreconditionError(f"invalid axis bounds [{a}, {b}]")
            if c < 16:
                raise PreconditionError(f"cell count must be >= 16, got {c}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "cells", n)

    @classmethod
    def uniform(cls, d: int, half_width: float, cells: int):
        return cls((-half_width,) * d, (half_width,) * d, (cells,) * d)

    @property
    def d(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple:
        return self.cells

    @property
    def widths(self) -> np.ndarray:
        return (np.asarray(self.upper) - np.asarray(self.lower)) / np.asarray(self.cells)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.widths))

    def axis_centers(self, j: int) -> np.ndarray:
        h = self.widths[j]
        return self.lower[j] + h * (np.arange(self.cells[j]) + 0.5)

    def axis_edges(self, j: int) -> np.ndarray:
        return np.linspace(self.lower[j], self.upper[j], self.cells[j] + 1)

    def points(self) -> np.ndarray:
        """Cell centres, shape ``(n_cells, d)`` in C order."""
        axes = [self.axis_centers(j) for j in range(self.d)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)

    def evaluate(self, fn: Callable) -> np.ndarray:
        """Apply a pointwise function to the centres and reshape to the grid."""
        vals = np.asarray(fn(self.points()))
        return vals.reshape(self.shape + vals.shape[1:])

    def covers(self, pert: Optional[PerturbationSpec], margin: float = 0.0) -> bool:
        if pert is None:
            return True
        c = np.asarray(pert.center)
        r = pert.support_radius + margin
        return bool(np.all(c - r >= np.asarray(self.lower)) and np.all(c + r <= np.asarray(self.upper)))


@dataclass
class GridDensity:
    grid: GridSpec
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)

    @property
    def mass(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_volume)

    def validate(self, tol: float = MASS_TOL) -> "GridDensity":
        if abs(self.mass - 1.0) > tol:
            raise PreconditionError(f"density not normalized: mass={self.mass:.12g}")
        if self.values.min() < POSITIVITY_TOL:
            raise PreconditionError("density has negative cells")
        return self

    @classmethod
    def from_function(cls, grid: GridSpec, fn: Callable, t: float = 0.0):
        """Sample ``fn`` at cell centres and normalize the discrete mass to one."""
        vals = np.asarray(grid.evaluate(fn), dtype=float)
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise PreconditionError("density samples must be finite and nonnegative")
        total = vals.sum() * grid.cell_volume
        if not total > 0:
            raise PreconditionError("density has zero mass on the grid")
        return cls(grid, vals / total, t)

    @classmethod
    def gaussian(cls, grid: GridSpec, mean, cov, t: float = 0.0):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 0:
            cov = cov * np.eye(grid.d)
        elif cov.ndim == 1:
            cov = np.diag(cov)
        prec = np.linalg.inv(cov)

        def logpdf(x):
            u = x - mean
            return -0.5 * np.einsum("ni,ij,nj->n", u, prec, u)

        return cls.from_function(grid, lambda x: np.exp(logpdf(x)), t)

    @classmethod
    def stationary(cls, m: ReferenceMeasure, grid: GridSpec, t: float = 0.0):
        """``q / Z`` with ``Z`` the discrete mass of ``q`` on the grid."""
        logq = grid.evaluate(m.log_density)
        vals = np.exp(logq - logq.max())
        return cls(grid, vals / (vals.sum() * grid.cell_volume), t)

    def copy(self) -> "GridDensity":
        return GridDensity(self.grid, self.values.copy(), self.t)

    def to_csv(self, path) -> None:
        pts = self.grid.points()
        cols = ["x", "y"][: self.grid.d] + ["p"]
        data = np.column_stack([pts, self.values.reshape(-1)])
        np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")


# ---------------------------------------------------------------------------
# interpolation


def _locate(grid: GridSpec, pts: np.ndarray):
    """Per-axis lower index and weight for multilinear interpolation on centres."""
    pts = np.asarray(pts, dtype=float)
    if pts.shape[-1] != grid.d:
        raise PreconditionError(f"points must have trailing dimension {grid.d}")
    lo = np.asarray(grid.lower)
    hi = np.asarray(grid.upper)
    bad = ~np.all((pts >= lo) & (pts <= hi), axis=-1)
    if np.any(bad):
        first = pts[bad][0]
        raise OffGridError(f"query point {first.tolist()} outside grid "
                           f"[{grid.lower}, {grid.upper}]")
    idx, wts = [], []
    for j in range(grid.d):
        h = grid.widths[j]
        s = (pts[..., j] - lo[j]) / h - 0.5
        s = np.clip(s, 0.0, grid.cells[j] - 1.0)
        i0 = np.minimum(np.floor(s).astype(np.int64), grid.cells[j] - 2)
        idx.append(i0)
        wts.append(s - i0)
    return idx, wts


def interpolate(grid: GridSpec, field: np.ndarray, pts, tidx=None) -> np.ndarray:
    """Multilinear interpolation of a cell-centred field.

    ``field`` has shape ``grid.shape + extra`` or, when ``tidx`` is given,
    ``(K,) + grid.shape + extra`` with ``tidx`` an integer array broadcast
    against the leading dimensions of ``pts``.  Outside the centre range but
    inside the grid box the nearest centre value is used.
    """
    pts = np.asarray(pts, dtype=float)
    idx, wts = _locate(grid, pts)
    lead = () if tidx is None else (np.broadcast_to(np.asarray(tidx), pts.shape[:-1]),)
    extra = field.ndim - len(lead) - grid.d
    out = 0.0
    for corner in range(2 ** grid.d):
        w = 1.0
        ix = []
        for j in range(grid.d):
            bit = (corner >> j) & 1
            ix.append(idx[j] + bit)
            w = w * (wts[j] if bit else 1.0 - wts[j])
        vals = field[lead + tuple(ix)]
        if extra:
            w = np.asarray(w)[(...,) + (None,) * extra]
        out = out + w * vals
    return out


# ---------------------------------------------------------------------------
# solver


def _bern(w: np.ndarray) -> np.ndarray:
    """Bernoulli function ``w / (exp(w) - 1)``."""
    small = np.abs(w) < 1e-8
    safe = np.where(small, 1.0, w)
    return np.where(small, 1.0 - 0.5 * w, safe / np.expm1(safe))


def _face_coefficients(phi: np.ndarray, grid: GridSpec):
    coeffs = []
    for j in range(grid.d):
        h = grid.widths[j]
        w = 2.0 * np.diff(phi, axis=j)
        coeffs.append((0.5 / h * _bern(-w), 0.5 / h * _bern(w)))
    return coeffs


def _rhs(p: np.ndarray, coeffs, grid: GridSpec) -> np.ndarray:
    out = np.zeros_like(p)
    for j, (a_plus, a_minus) in enumerate(coeffs):
        h = grid.widths[j]
        hi = [slice(None)] * grid.d
        lo = [slice(None)] * grid.d
        hi[j] = slice(1, None)
        lo[j] = slice(None, -1)
        # flux into the lower cell through each interior face
        F = a_plus * p[tuple(hi)] - a_minus * p[tuple(lo)]
        out[tuple(lo)] += F / h
        out[tuple(hi)] -= F / h
    return out


def drift_bound(grid: GridSpec, pot: PotentialSpec, pert: Optional[PerturbationSpec]) -> float:
    """``max |grad psi + beta|`` over centres (and over the unperturbed drift)."""
    pts = grid.points()
    g = pot.grad(pts)
    m = float(np.max(np.abs(g)))
    if pert is not None:
        m = max(m, float(np.max(np.abs(g + pert.beta(pts)))))
    return m


def max_stable_dt(grid: GridSpec, pot, pert=None) -> float:
    h = float(grid.widths.min())
    bounds = [h * h / (2 * grid.d)]
    v = drift_bound(grid, pot, pert)
    if v > 0:
        bounds.append(h / v)
    return min(bounds)


def aligned_time_step(grid: GridSpec, pot, pert, save_dt: float, safety: float = 0.95):
    """Largest stable step dividing ``save_dt`` into an integer number of substeps."""
    n_sub = int(math.ceil(save_dt / (safety * max_stable_dt(grid, pot, pert))))
    return save_dt / n_sub, n_sub


def _check_stability(grid, pot, pert, dt):
    h = float(grid.widths.min())
    diff_bound = h * h / (2 * grid.d)
    if dt > diff_bound * (1 + 1e-12):
        raise StabilityError(f"diffusion bound violated: dt={dt:.3e} > h^2/(2d)={diff_bound:.3e}")
    v = drift_bound(grid, pot, pert)
    if dt * v / h > 1 + 1e-12:
        raise StabilityError(f"drift CFL violated: dt*max|drift|/h={dt * v / h:.3f} > 1")


class FPESolution(Sequence):
    """Snapshots of an FPE run; behaves as a sequence of ``GridDensity``."""

    def __init__(self, grid: GridSpec, times, values, dt: float, potential=None,
                 perturbation=None):
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.dt = dt
        self.potential = potential
        self.perturbation = perturbation
        self._logp = None
        self._score = None

    def __len__(self):
        return len(self.times)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        return GridDensity(self.grid, self.values[k], float(self.times[k]))

    @property
    def save_dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > tol * max(1.0, abs(t)):
            raise PreconditionError(f"missing FPE snapshot for t={t}")
        return k

    def at(self, t: float) -> GridDensity:
        return self[self.index_of(t)]

    @property
    def log_values(self) -> np.ndarray:
        if self._logp is None:
            self._logp = np.log(np.maximum(self.values, DENSITY_FLOOR))
        return self._logp

    @property
    def scores(self) -> np.ndarray:
        """Central-difference scores, shape ``(K,) + grid.shape + (d,)``."""
        if self._score is None:
            lp = self.log_values
            comps = [np.gradient(lp, self.grid.widths[j], axis=1 + j, edge_order=2)
                     for j in range(self.grid.d)]
            self._score = np.stack(comps, axis=-1)
        return self._score


def solve_fpe(p0: GridDensity, pot: PotentialSpec, pert: Optional[PerturbationSpec],
              dt: float, T: float, save_dt: Optional[float] = None,
              check_every: int = 1) -> FPESolution:
    """Explicit finite-volume integration of the perturbed Fokker-Planck equation.

    Snapshots are stored every ``save_dt`` (default: every step).  The
    perturbation enters through the secant potential ``psi + frac * B`` where
    ``frac`` is the fraction of the step lying after the activation time.
    """
    grid = p0.grid
    if pot.d != grid.d:
        raise PreconditionError("potential and grid dimensions differ")
    if T < 0 or not dt > 0:
        raise PreconditionError("need dt > 0 and T >= 0")
    p0.validate()
    if not grid.covers(pert):
        raise PreconditionError("grid does not cover the perturbation support ball")
    if T == 0:
        return FPESolution(grid, [p0.t], [p0.values.copy()], dt, pot, pert)
    _check_stability(grid, pot, pert, dt)
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise PreconditionError(f"T={T} is not an integer multiple of dt={dt}")
    stride = 1 if save_dt is None else int(round(save_dt / dt))
    if stride < 1 or (save_dt is not None and abs(stride * dt - save_dt) > 1e-9 * save_dt):
        raise PreconditionError(f"save_dt={save_dt} is not a multiple of dt={dt}")

    psi = grid.evaluate(pot.psi)
    B = grid.evaluate(pert.B) if pert is not None else None
    coeff_off = _face_coefficients(psi, grid)
    coeff_on = _face_coefficients(psi + B, grid) if B is not None else coeff_off
    t_start = p0.t

    p = p0.values.copy()
    times = [t_start]
    snaps = [p.copy()]
    vol = grid.cell_volume
    for n in range(n_steps):
        t_next = t_start + (n + 1) * dt
        if pert is None:
            coeffs = coeff_off
        else:
            frac = min(max((t_next - pert.t0) / dt, 0.0), 1.0)
            if frac >= 1.0 - 1e-12:
                coeffs = coeff_on
            elif frac <= 1e-12:
                coeffs = coeff_off
            else:
                coeffs = _face_coefficients(psi + frac * B, grid)
        p = p + dt * _rhs(p, coeffs, grid)
        if (n + 1) % check_every == 0 or n + 1 == n_steps:
            pmin = p.min()
            if not np.isfinite(pmin):
                raise NumericalError("nonfinite density in FPE run")
            if pmin < POSITIVITY_TOL:
                raise PositivityError(f"positivity lost at t={t_next:.6g} (min={pmin:.3e})")
        if (n + 1) % stride == 0:
            mass = p.sum() * vol
            if abs(mass - 1.0) > MASS_TOL:
                raise NumericalError(f"mass conservation violated: {mass:.12g}")
            times.append(t_start + (n + 1) * dt)
            snaps.append(p.copy())
    return FPESolution(grid, times, np.stack(snaps), dt, pot, pert)


def solver_rhs(p: GridDensity, pot: PotentialSpec, pert=None, frac: float = 0.0) -> np.ndarray:
    """Semi-discrete right-hand side of the solver applied to ``p``."""
    phi = p.grid.evaluate(pot.psi)
    if pert is not None and frac > 0:
        phi = phi + frac * p.grid.evaluate(pert.B)
    return _rhs(p.values, _face_coefficients(phi, p.grid), p.grid)


def stationary_residual(m: ReferenceMeasure, grid: GridSpec, stencil: str = "central",
                        density: Optional[np.ndarray] = None) -> float:
    """L-infinity norm of the stationary Fokker-Planck operator applied to ``q``.

    ``stencil="central"`` uses second-order central differences of
    ``grad psi * q`` and ``q`` on interior cells; ``"chang_cooper"`` applies
    the solver's flux operator (zero up to roundoff for ``q`` itself).
    ``density`` replaces ``q`` by another cell-centred field.
    """
    pot = m.potential
    q = grid.evaluate(m.density) if density is None else np.asarray(density).reshape(grid.shape)
    if stencil == "chang_cooper":
        phi = grid.evaluate(pot.psi)
        return float(np.max(np.abs(_rhs(q, _face_coefficients(phi, grid), grid))))
    if stencil != "central":
        raise PreconditionError(f"unknown stencil {stencil!r}")
    g = grid.evaluate(pot.grad)
    res = np.zeros_like(q)
    inner = tuple(slice(1, -1) for _ in range(grid.d))
    for j in range(grid.d):
        h = grid.widths[j]
        flux = g[..., j] * q
        up = [slice(1, -1)] * grid.d
        dn = [slice(1, -1)] * grid.d
        up[j] = slice(2, None)
        dn[j] = slice(None, -2)
        res[inner] += (flux[tuple(up)] - flux[tuple(dn)]) / (2 * h)
        res[inner] += 0.5 * (q[tuple(up)] - 2 * q[inner] + q[tuple(dn)]) / h ** 2
    return float(np.max(np.abs(res[inner])))


def score_field(p: GridDensity, pts=None) -> np.ndarray:
    """Central-difference score ``grad log p`` per cell, or at query points."""
    lp = np.log(np.maximum(p.values, DENSITY_FLOOR))
    comps = [np.gradient(lp, p.grid.widths[j], axis=j, edge_order=2) for j in range(p.grid.d)]
    s = np.stack(comps, axis=-1)
    if pts is None:
        return s
    pts = np.asarray(pts, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, p.grid.d) if p.grid.d > 1 else pts[:, None]
    return interpolate(p.grid, s, pts)
