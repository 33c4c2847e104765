"""Potentials, gradient-type perturbations and the reference measure.

The dynamics is ``dX = -(grad psi + beta 1{t > t0}) dt + dW`` with unit
noise, so the stationary shape of the unperturbed flow is
``q = exp(-2 psi)``.  All evaluators take point arrays of shape ``(n, d)``;
in one dimension a flat ``(n,)`` array is accepted as well.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NumericalError, PreconditionError
from .report import CheckReport


def as_points(x, d: int) -> np.ndarray:
    """Coerce ``x`` to a float array of shape ``(n, d)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1) if d == 1 else x.reshape(1, -1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1) if d == 1 else x.reshape(1, -1)
    if x.shape[-1] != d:
        raise PreconditionError(f"expected points of dimension {d}, got shape {x.shape}")
    return x.reshape(-1, d)


@dataclass(frozen=True)
class PotentialSpec:
    """Confining potential psi >= 0.

    kind
        ``"quadratic"``: ``psi = kappa |x|^2 / 2``.
        ``"double_well"``: ``psi = (|x|^2 - a)^2 / 4 + b`` with ``b >= 0``.
        ``"custom"``: user callables (``psi``, ``grad``, optional ``hess``).
    """

    kind: str = "quadratic"
    dimension: int = 1
    kappa: float = 1.0
    a: float = 1.0
    b: float = 0.0
    growth_constant: float = 1.0
    psi_fn: Optional[Callable] = field(default=None, compare=False, repr=False)
    grad_fn: Optional[Callable] = field(default=None, compare=False, repr=False)
    hess_fn: Optional[Callable] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("quadratic", "double_well", "custom"):
            raise PreconditionError(f"unknown potential kind {self.kind!r}")
        if self.dimension < 1:
            raise PreconditionError("dimension must be a positive integer")
        if self.kind == "quadratic" and not self.kappa > 0:
            raise PreconditionError("quadratic potential needs kappa > 0")
        if self.kind == "custom" and (self.psi_fn is None or self.grad_fn is None):
            raise PreconditionError("custom potential needs psi_fn and grad_fn")
        if not self.growth_constant > 0:
            raise PreconditionError("growth constant K must be positive")

    @classmethod
    def quadratic(cls, kappa=1.0, dimension=1, growth_constant=None):
        return cls("quadratic", dimension, kappa=kappa,
                   growth_constant=growth_constant or kappa)

    @classmethod
    def double_well(cls, a=1.0, b=0.0, dimension=1, growth_constant=50.0):
        return cls("double_well", dimension, a=a, b=b, growth_constant=growth_constant)

    @classmethod
    def custom(cls, psi, grad, hess=None, dimension=1, growth_constant=1.0):
        return cls("custom", dimension, growth_constant=growth_constant,
                   psi_fn=psi, grad_fn=grad, hess_fn=hess)

    @property
    def d(self) -> int:
        return self.dimension

    def psi(self, x) -> np.ndarray:
        x = as_points(x, self.d)
        if self.kind == "quadratic":
            val = 0.5 * self.kappa * np.einsum("ij,ij->i", x, x)
        elif self.kind == "double_well":
            r2 = np.einsum("ij,ij->i", x, x)
            val = 0.25 * (r2 - self.a) ** 2 + self.b
        else:
            val = np.asarray(self.psi_fn(x), dtype=float).reshape(-1)
        if np.any(val < 0):
            raise PreconditionError("ψ must be nonnegative")
        return val

    def grad(self, x) -> np.ndarray:
        x = as_points(x, self.d)
        if self.kind == "quadratic":
            return self.kappa * x
        if self.kind == "double_well":
            r2 = np.einsum("ij,ij->i", x, x)
            return x * (r2 - self.a)[:, None]
        return np.asarray(self.grad_fn(x), dtype=float).reshape(x.shape)

    def hess(self, x) -> np.ndarray:
        """Hessians, shape ``(n, d, d)``."""
        x = as_points(x, self.d)
        n, d = x.shape
        if self.kind == "quadratic":
            return np.broadcast_to(self.kappa * np.eye(d), (n, d, d)).copy()
        if self.kind == "double_well":
            r2 = np.einsum("ij,ij->i", x, x)
            return (r2 - self.a)[:, None, None] * np.eye(d) + 2.0 * np.einsum("ni,nj->nij", x, x)
        if self.hess_fn is not None:
            return np.asarray(self.hess_fn(x), dtype=float).reshape(n, d, d)
        return fd_hessian(self.grad, x)

    def laplacian(self, x) -> np.ndarray:
        return np.trace(self.hess(x), axis1=1, axis2=2)


def fd_hessian(grad: Callable, x: np.ndarray) -> np.ndarray:
    """Central differences of ``grad`` with step ``1e-5 |x| + 1e-7``."""
    n, d = x.shape
    step = 1e-5 * np.linalg.norm(x, axis=1) + 1e-7
    out = np.empty((n, d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        hp = x + step[:, None] * e
        hm = x - step[:, None] * e
        out[:, :, j] = (grad(hp) - grad(hm)) / (2.0 * step[:, None])
    return 0.5 * (out + out.transpose(0, 2, 1))


@dataclass(frozen=True)
class PerturbationSpec:
    """Gradient-type perturbation ``beta = grad B`` switched on for ``t > t0``.

    The default ``B`` is the bump ``c exp(-1/(1 - |(x - center)/r|^2))`` inside
    the ball of radius ``r`` and exactly zero outside.  ``kind="custom"``
    accepts callables for ``B``, ``beta`` and ``div beta``; they must vanish
    outside ``support_radius`` around ``center``.
    """

    amplitude: float = 0.5
    support_radius: float = 1.0
    center: tuple = (0.0,)
    activation_time: float = 0.0
    kind: str = "bump"
    B_fn: Optional[Callable] = field(default=None, compare=False, repr=False)
    beta_fn: Optional[Callable] = field(default=None, compare=False, repr=False)
    div_fn: Optional[Callable] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if not self.support_radius > 0:
            raise PreconditionError("support radius must be positive")
        if self.activation_time < 0:
            raise PreconditionError("activation time must be nonnegative")
        if self.kind not in ("bump", "custom"):
            raise PreconditionError(f"unknown perturbation kind {self.kind!r}")
        if self.kind == "custom" and None in (self.B_fn, self.beta_fn, self.div_fn):
            raise PreconditionError("custom perturbation needs B_fn, beta_fn and div_fn")

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def t0(self) -> float:
        return self.activation_time

    def _local(self, x):
        x = as_points(x, self.d)
        u = (x - np.asarray(self.center)) / self.support_radius
        s = np.einsum("ij,ij->i", u, u)
        inside = s < 1.0
        return x, u, s, inside

    def _g(self, s, inside):
        g = np.zeros_like(s)
        si = s[inside]
        g[inside] = np.exp(-1.0 / (1.0 - si))
        return g

    def B(self, x) -> np.ndarray:
        if self.kind == "custom":
            x, _, _, inside = self._local(x)
            out = np.asarray(self.B_fn(x), dtype=float).reshape(-1)
            return np.where(inside, out, 0.0)
        x, u, s, inside = self._local(x)
        return self.amplitude * self._g(s, inside)

    def beta(self, x) -> np.ndarray:
        if self.kind == "custom":
            x, _, _, inside = self._local(x)
            out = np.asarray(self.beta_fn(x), dtype=float).reshape(x.shape)
            return np.where(inside[:, None], out, 0.0)
        x, u, s, inside = self._local(x)
        g = self._g(s, inside)
        out = np.zeros_like(x)
        si = s[inside]
        # g'(s) = -g / (1 - s)^2, ds/dx = 2 u / r
        gp = -g[inside] / (1.0 - si) ** 2
        out[inside] = self.amplitude * gp[:, None] * 2.0 * u[inside] / self.support_radius
        return out

    def div_beta(self, x) -> np.ndarray:
        if self.kind == "custom":
            x, _, _, inside = self._local(x)
            out = np.asarray(self.div_fn(x), dtype=float).reshape(-1)
            return np.where(inside, out, 0.0)
        x, u, s, inside = self._local(x)
        g = self._g(s, inside)
        out = np.zeros(len(x))
        si, gi = s[inside], g[inside]
        gp = -gi / (1.0 - si) ** 2
        gpp = gi * (2.0 * si - 1.0) / (1.0 - si) ** 4
        r2 = self.support_radius ** 2
        out[inside] = self.amplitude * (4.0 * si * gpp + 2.0 * self.d * gp) / r2
        return out

    def max_abs_B(self, n=4001) -> float:
        if self.kind == "bump":
            return abs(self.amplitude) * np.exp(-1.0)
        return float(np.max(np.abs(self.B(self._radial_probe(n)))))

    def max_beta_norm(self, n=4001) -> float:
        return float(np.max(np.linalg.norm(self.beta(self._radial_probe(n)), axis=1)))

    def _radial_probe(self, n):
        """Points along every axis through the center (radial profile probe)."""
        r = np.linspace(-self.support_radius, self.support_radius, n)
        pts = []
        for j in range(self.d):
            p = np.tile(np.asarray(self.center), (n, 1))
            p[:, j] += r
            pts.append(p)
        if self.d > 1:
            diag = np.tile(np.asarray(self.center), (n, 1)) + r[:, None] / np.sqrt(self.d)
            pts.append(diag)
        return np.vstack(pts)

    def active(self, t: float) -> bool:
        return t > self.activation_time


def perturbation_integrand(pot: PotentialSpec, pert: Optional[PerturbationSpec], x) -> np.ndarray:
    """``2 beta . grad psi - div beta`` (zero without a perturbation)."""
    x = as_points(x, pot.d)
    if pert is None:
        return np.zeros(len(x))
    return 2.0 * np.einsum("ij,ij->i", pert.beta(x), pot.grad(x)) - pert.div_beta(x)


@dataclass(frozen=True)
class ReferenceMeasure:
    """sigma-finite measure with density ``q = exp(-2 psi)``; never normalized."""

    potential: PotentialSpec

    @property
    def d(self) -> int:
        return self.potential.d

    def density(self, pts) -> np.ndarray:
        return eval_reference_density(self, pts)

    def log_density(self, pts) -> np.ndarray:
        return -2.0 * self.potential.psi(pts)

    def total_mass(self, lower, upper, cells=4096) -> float:
        """Grid quadrature of ``Z`` over a box (midpoint rule)."""
        lower = np.atleast_1d(lower).astype(float)
        upper = np.atleast_1d(upper).astype(float)
        axes = [np.linspace(lo, hi, cells, endpoint=False) + (hi - lo) / (2 * cells)
                for lo, hi in zip(lower, upper)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)
        vol = np.prod((upper - lower) / cells)
        return float(np.sum(self.density(mesh)) * vol)


def eval_reference_density(m: ReferenceMeasure, pts) -> np.ndarray:
    pts = as_points(pts, m.d)
    if not np.all(np.isfinite(pts)):
        raise PreconditionError("points must be finite")
    with np.errstate(over="ignore"):
        q = np.exp(-2.0 * m.potential.psi(pts))
    if not np.all(np.isfinite(q)) or np.any(q <= 0):
        raise NumericalError("nonfinite density")
    return q


def radial_grid(d: int, radius: float, n: int = 201) -> np.ndarray:
    """Cartesian sample grid of ``[-radius, radius]^d`` (``n`` nodes per axis)."""
    axis = np.linspace(-radius, radius, n)
    return np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)


def check_drift_condition(p: PotentialSpec, C: float, R: float, sample_grid) -> CheckReport:
    """``x . grad psi(x) >= -C |x|^2`` on every sampled point with ``|x| >= R``."""
    pts = as_points(sample_grid, p.d)
    if pts.size == 0:
        raise PreconditionError("empty sample grid")
    p.psi(pts)  # positivity assertion
    r = np.linalg.norm(pts, axis=1)
    far = pts[r >= R]
    if len(far) == 0:
        raise PreconditionError(f"sample grid has no points with |x| >= R={R}")
    lhs = np.einsum("ij,ij->i", far, p.grad(far))
    rhs = -C * np.einsum("ij,ij->i", far, far)
    slack = lhs - rhs
    worst = int(np.argmin(slack))
    return CheckReport(
        name="drift_condition",
        lhs=float(lhs[worst]),
        rhs=float(rhs[worst]),
        gap=float(slack[worst]),
        tolerance=0.0,
        passed=bool(slack[worst] >= 0.0),
        paper_anchor="x.grad psi(x) >= -C|x|^2 for |x| >= R",
        details={"C": C, "R": R, "points": int(len(far)),
                 "truncation_radius": float(r.max()),
                 "worst_point": far[worst].tolist()},
    )


def check_linear_growth(p: PotentialSpec, sample_grid) -> CheckReport:
    """``|grad psi(x)| <= K (1 + |x|)`` on every sampled point."""
    pts = as_points(sample_grid, p.d)
    if pts.size == 0:
        raise PreconditionError("empty sample grid")
    g = np.linalg.norm(p.grad(pts), axis=1)
    bound = p.growth_constant * (1.0 + np.linalg.norm(pts, axis=1))
    slack = bound - g
    worst = int(np.argmin(slack))
    return CheckReport("linear_growth", float(g[worst]), float(bound[worst]),
                       float(slack[worst]), 0.0, bool(slack[worst] >= 0),
                       paper_anchor="|grad psi(x)| <= K(1+|x|)",
                       details={"K": p.growth_constant})


def curvature_lower_bound(p: PotentialSpec, sample_grid) -> float:
    """Minimum over the grid of the smallest Hessian eigenvalue."""
    pts = as_points(sample_grid, p.d)
    if pts.size == 0:
        raise PreconditionError("empty sample grid")
    H = p.hess(pts)
    if not np.all(np.isfinite(H)):
        raise NumericalError("nonfinite Hessian")
    return float(np.min(np.linalg.eigvalsh(H)[:, 0]))
