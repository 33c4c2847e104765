"""Quadratic Wasserstein distances and the geometric entropy checks.

One-dimensional problems are solved exactly through quantile functions.  In
two dimensions a debiased log-domain Sinkhorn solver is used.  Grid
densities become point clouds with one atom per cell centre, weighted by the
cell mass.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .entropy import EntropyReport, fisher_information, relative_entropy, relative_score
from .errors import ConvergenceError, InsufficientSampleError, PreconditionError
from .fpe import FPESolution, GridDensity, GridSpec
from .model import PerturbationSpec, PotentialSpec, ReferenceMeasure
from .report import CheckReport

QUANTILE_NODES = 2 ** 16
NORMALIZATION_TOL = 1e-6


# ---------------------------------------------------------------------------
# one dimension


def _edge_cdf(p: GridDensity):
    if p.grid.d != 1:
        raise PreconditionError("expected a one-dimensional grid density")
    if abs(p.mass - 1.0) > NORMALIZATION_TOL:
        raise PreconditionError(f"unnormalized input: mass={p.mass:.9g}")
    edges = p.grid.axis_edges(0)
    cdf = np.concatenate([[0.0], np.cumsum(p.values) * p.grid.widths[0]])
    cdf /= cdf[-1]
    return edges, cdf


def quantile_function(mu):
    """Callable ``u -> F^{-1}(u)`` for a 1D grid density or a sample array."""
    if isinstance(mu, GridDensity):
        edges, cdf = _edge_cdf(mu)
        # drop flat stretches so the inverse is single valued
        keep = np.concatenate([[True], np.diff(cdf) > 0])
        return lambda u: np.interp(u, cdf[keep], edges[keep])
    x = np.sort(np.asarray(mu, dtype=float).reshape(-1))
    if len(x) < 1:
        raise InsufficientSampleError("empty sample")
    n = len(x)
    return lambda u: x[np.minimum((np.asarray(u) * n).astype(np.int64), n - 1)]


def w2_1d(mu, nu, nodes: int = QUANTILE_NODES) -> float:
    """Exact 1D W2 through the quantile coupling.

    Equal-size samples are paired after sorting; otherwise both quantile
    functions are integrated by the trapezoid rule over ``nodes`` points.
    """
    if not isinstance(mu, GridDensity) and not isinstance(nu, GridDensity):
        a = np.sort(np.asarray(mu, dtype=float).reshape(-1))
        b = np.sort(np.asarray(nu, dtype=float).reshape(-1))
        if len(a) == len(b) and len(a) > 0:
            return float(math.sqrt(np.mean((a - b) ** 2)))
    if nodes < 2 ** 12:
        raise PreconditionError("need at least 2^12 quantile nodes")
    u = np.linspace(0.0, 1.0, nodes + 1)
    if not isinstance(mu, GridDensity) or not isinstance(nu, GridDensity):
        u = (np.arange(nodes) + 0.5) / nodes  # midpoint rule for step quantiles
        diff2 = (quantile_function(mu)(u) - quantile_function(nu)(u)) ** 2
        return float(math.sqrt(np.mean(diff2)))
    diff2 = (quantile_function(mu)(u) - quantile_function(nu)(u)) ** 2
    return float(math.sqrt(np.trapezoid(diff2, u)))


def histogram_density(samples, grid: GridSpec, t: float = 0.0) -> GridDensity:
    """Cell histogram of samples on ``grid`` (normalized)."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    rng = [(lo, hi) for lo, hi in zip(grid.lower, grid.upper)]
    hist, _ = np.histogramdd(x, bins=list(grid.cells), range=rng)
    if hist.sum() < len(x):
        raise PreconditionError(f"{len(x) - int(hist.sum())} samples fall outside the grid")
    return GridDensity(grid, hist / (hist.sum() * grid.cell_volume), t)


# ---------------------------------------------------------------------------
# entropic transport


@dataclass
class TransportPlan:
    """Sparse coupling (``rows, cols, mass``) or a monotone 1D map."""

    source: object
    target: object
    rows: Optional[np.ndarray] = None
    cols: Optional[np.ndarray] = None
    mass: Optional[np.ndarray] = None
    cost: float = 0.0
    monotone_map: Optional[tuple] = None
    details: dict = field(default_factory=dict)

    def marginals(self, n: int, m: int):
        a = np.bincount(self.rows, weights=self.mass, minlength=n)
        b = np.bincount(self.cols, weights=self.mass, minlength=m)
        return a, b

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "mass"])
            for i, j, v in zip(self.rows, self.cols, self.mass):
                w.writerow([int(i), int(j), repr(float(v))])


def _as_cloud(mu, trim: float = 1e-12):
    if isinstance(mu, GridDensity):
        w = mu.values.reshape(-1) * mu.grid.cell_volume
        if abs(w.sum() - 1.0) > NORMALIZATION_TOL:
            raise PreconditionError(f"unnormalized input: mass={w.sum():.9g}")
        keep = w > trim * w.max()
        pts = mu.grid.points()[keep]
        w = w[keep]
        return pts, w / w.sum()
    if isinstance(mu, tuple):
        pts, w = mu
        pts = np.asarray(pts, dtype=float)
        w = np.asarray(w, dtype=float)
    else:
        pts = np.asarray(mu, dtype=float)
        w = np.full(len(pts), 1.0 / len(pts))
    if pts.ndim == 1:
        pts = pts[:, None]
    if abs(w.sum() - 1.0) > NORMALIZATION_TOL:
        raise PreconditionError(f"unnormalized input: mass={w.sum():.9g}")
    return pts, w / w.sum()


def _spread(x, w) -> float:
    mean = w @ x
    return float(w @ np.sum((x - mean) ** 2, axis=1))


def _lse(h, axis):
    m = np.max(h, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.squeeze(m, axis) + np.log(np.sum(np.exp(h - m), axis=axis))


def _sqdist(x, y):
    return np.maximum(np.sum(x * x, 1)[:, None] + np.sum(y * y, 1)[None, :] - 2 * x @ y.T, 0.0)


class _DenseCost:
    """Squared Euclidean cost between two point clouds."""

    def __init__(self, x, y):
        self.C = _sqdist(x, y)
        self.shape_x, self.shape_y = (len(x),), (len(y),)

    def softmin_rows(self, h, e):
        # LSE_j (h_j - C_ij / e)
        return _lse(h[None, :] - self.C / e, 1)

    def softmin_cols(self, h, e):
        return _lse(h[:, None] - self.C / e, 0)

    def dense(self):
        return self.C

    @property
    def max_cost(self):
        return float(self.C.max())


class _GridCost:
    """Separable squared cost between two tensor grids (one 1D factor per axis)."""

    def __init__(self, gx: GridSpec, gy: GridSpec):
        self.gx, self.gy = gx, gy
        self.C = [(gx.axis_centers(j)[:, None] - gy.axis_centers(j)[None, :]) ** 2
                  for j in range(gx.d)]
        self.shape_x, self.shape_y = gx.shape, gy.shape

    def _apply(self, h, e, transpose):
        h = h.reshape(self.shape_x if transpose else self.shape_y)
        for j, Cj in enumerate(self.C):
            M = Cj.T if transpose else Cj  # (out, in)
            h = np.moveaxis(h, j, -1)
            h = _lse(h[..., None, :] - M / e, -1)
            h = np.moveaxis(h, -1, j)
        return h.reshape(-1)

    def softmin_rows(self, h, e):
        return self._apply(h, e, False)

    def softmin_cols(self, h, e):
        return self._apply(h, e, True)

    def dense(self):
        return _sqdist(self.gx.points(), self.gy.points())

    @property
    def max_cost(self):
        return float(sum(Cj.max() for Cj in self.C))


def _sinkhorn(cost, a, b, eps, tol, max_iter, symmetric=False, omega=1.6):
    """Log-domain Sinkhorn with eps-annealing and over-relaxation ``omega``.

    Returns ``(dual value, f, g, iterations, marginal error)``.
    """
    with np.errstate(divide="ignore"):
        la, lb = np.log(a), np.log(b)
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    e = max(cost.max_cost, eps)
    iters = 0
    err = np.inf
    while True:
        e = max(e * 0.5, eps)
        final = e == eps
        stage_tol = tol if final else 1e-3
        while iters < max_iter:
            iters += 1
            if symmetric:
                # averaged fixed point for the self-transport problem
                f = 0.5 * (f - e * cost.softmin_rows(f / e + la, e))
                g = f
            else:
                f = (1 - omega) * f - omega * e * cost.softmin_rows(g / e + lb, e)
                g = (1 - omega) * g - omega * e * cost.softmin_cols(f / e + la, e)
            if iters % 5 == 0:
                row = np.exp(la + f / e + cost.softmin_rows(g / e + lb, e))
                err = float(np.sum(np.abs(row - a)))
                if err < stage_tol:
                    break
        else:
            raise ConvergenceError(f"Sinkhorn did not converge in {max_iter} iterations "
                                   f"(marginal error {err:.3e})")
        if final:
            break
    fa = np.where(a > 0, f, 0.0)
    gb = np.where(b > 0, g, 0.0)
    return float(a @ fa + b @ gb), f, g, iters, err


def _round_to_feasible(P, a, b):
    """Altschuler-Weed-Rigollet rounding onto the transport polytope."""
    P = P * np.minimum(a / np.maximum(P.sum(1), 1e-300), 1.0)[:, None]
    P = P * np.minimum(b / np.maximum(P.sum(0), 1e-300), 1.0)[None, :]
    ea = a - P.sum(1)
    eb = b - P.sum(0)
    if ea.sum() > 0:
        P = P + np.outer(ea, eb) / ea.sum()
    return P


def _weights(mu):
    """Cell-mass weights of a grid density (untrimmed)."""
    w = mu.values.reshape(-1) * mu.grid.cell_volume
    if abs(w.sum() - 1.0) > NORMALIZATION_TOL:
        raise PreconditionError(f"unnormalized input: mass={w.sum():.9g}")
    return w / w.sum()


def w2_entropic(mu, nu, eps: float, tol: float = 1e-8, max_iter: int = 100000,
                max_points: int = 10000, plan_limit: int = 20_000_000):
    """Debiased entropic W2 estimate ``sqrt(max(S_eps, 0))`` and the coupling.

    ``S_eps = OT_eps(mu, nu) - (OT_eps(mu, mu) + OT_eps(nu, nu)) / 2``.
    Two grid densities are handled with a separable kernel; anything else is
    converted to weighted point clouds.  The coupling is materialised only
    when it has at most ``plan_limit`` entries.
    """
    if eps <= 0:
        raise PreconditionError("eps must be positive: use w2_1d or network-simplex path")
    if isinstance(mu, GridDensity) and isinstance(nu, GridDensity):
        if mu.grid.d != nu.grid.d:
            raise PreconditionError("dimension mismatch")
        a, b = _weights(mu), _weights(nu)
        x, y = mu.grid.points(), nu.grid.points()
        cost_xy = _GridCost(mu.grid, nu.grid)
        cost_xx, cost_yy = _GridCost(mu.grid, mu.grid), _GridCost(nu.grid, nu.grid)
    else:
        x, a = _as_cloud(mu)
        y, b = _as_cloud(nu)
        if x.shape[1] != y.shape[1]:
            raise PreconditionError("dimension mismatch")
        if len(a) > max_points or len(b) > max_points:
            raise PreconditionError(f"at most {max_points} support points per measure")
        cost_xy, cost_xx, cost_yy = _DenseCost(x, y), _DenseCost(x, x), _DenseCost(y, y)
    scale2 = _spread(x, a) + _spread(y, b) or 1.0
    if not (1e-3 * scale2 * (1 - 1e-9) <= eps <= scale2 * (1 + 1e-9)):
        raise PreconditionError(f"eps={eps:g} outside [1e-3, 1] x squared length scale {scale2:.3g}")
    ot_xy, f, g, it1, err = _sinkhorn(cost_xy, a, b, eps, tol, max_iter)
    ot_xx = _sinkhorn(cost_xx, a, a, eps, tol, max_iter, symmetric=True)[0]
    ot_yy = _sinkhorn(cost_yy, b, b, eps, tol, max_iter, symmetric=True)[0]
    S = ot_xy - 0.5 * (ot_xx + ot_yy)
    details = {"eps": eps, "iterations": it1, "marginal_error": err, "S_eps": S}
    plan = TransportPlan(mu, nu, details=details)
    if len(a) * len(b) <= plan_limit:
        C = cost_xy.dense()
        with np.errstate(divide="ignore", under="ignore"):
            P = np.exp((f[:, None] + g[None, :] - C) / eps) * a[:, None] * b[None, :]
        P = _round_to_feasible(P, a, b)
        keep = P > 1e-15
        plan.rows, plan.cols = np.nonzero(keep)
        plan.mass = P[keep]
        plan.cost = float(np.sum(P * C))
    return math.sqrt(max(S, 0.0)), plan


def w2(mu, nu, eps: Optional[float] = None) -> float:
    """Dispatch: exact in 1D, debiased Sinkhorn otherwise."""
    if isinstance(mu, GridDensity):
        one_d = mu.grid.d == 1
    else:
        arr = np.asarray(mu)
        one_d = arr.ndim == 1 or arr.shape[1] == 1
    if one_d:
        return w2_1d(mu, nu)
    if eps is None:
        x, wx = _as_cloud(mu)
        eps = 0.01 * max(_spread(x, wx), 1e-12)
    return w2_entropic(mu, nu, eps)[0]


# ---------------------------------------------------------------------------
# geodesics


def monotone_map(mu_a: GridDensity, mu_b: GridDensity, x) -> np.ndarray:
    """``T = F_b^{-1} o F_a`` (the optimal map in 1D)."""
    edges, cdf = _edge_cdf(mu_a)
    return quantile_function(mu_b)(np.interp(x, edges, cdf))


def displacement_interpolate(mu_a: GridDensity, mu_b: GridDensity, t: float,
                             a: float = 0.0, b: float = 1.0) -> GridDensity:
    """Pushforward of ``mu_a`` under ``((b-t) Id + (t-a) T) / (b-a)``."""
    if not a <= t <= b or not a < b:
        raise PreconditionError(f"t={t} outside [{a}, {b}]")
    if mu_a.grid != mu_b.grid:
        raise PreconditionError("endpoints must share a grid")
    s = (t - a) / (b - a)
    if s == 0:
        return GridDensity(mu_a.grid, mu_a.values.copy(), t)
    edges, cdf = _edge_cdf(mu_a)
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    e, F = edges[keep], cdf[keep]
    Te = (1 - s) * e + s * quantile_function(mu_b)(F)
    Te = np.maximum.accumulate(Te)
    uniq = np.concatenate([[True], np.diff(Te) > 0])
    # monotone cubic keeps the pushforward CDF accurate for small shifts
    Ft = PchipInterpolator(Te[uniq], F[uniq], extrapolate=False)(edges)
    Ft = np.nan_to_num(Ft, nan=0.0)
    Ft[edges >= Te[-1]] = 1.0
    Ft = np.clip(np.maximum.accumulate(Ft), 0.0, 1.0)
    vals = np.diff(Ft) / mu_a.grid.widths[0]
    return GridDensity(mu_a.grid, vals / (vals.sum() * mu_a.grid.widths[0]), t)


@dataclass
class GeodesicCurve:
    mu_a: GridDensity
    mu_b: GridDensity
    times: np.ndarray
    a: float = 0.0
    b: float = 1.0

    def densities(self):
        return [displacement_interpolate(self.mu_a, self.mu_b, t, self.a, self.b)
                for t in self.times]

    def constant_speed_gap(self) -> float:
        """Largest relative deviation of ``W(mu_u, mu_v)`` from ``(v-u)/(b-a) W(mu_a, mu_b)``."""
        dens = self.densities()
        total = w2_1d(self.mu_a, self.mu_b)
        worst = 0.0
        for i in range(len(self.times)):
            for j in range(i + 1, len(self.times)):
                expect = (self.times[j] - self.times[i]) / (self.b - self.a) * total
                if expect > 0:
                    worst = max(worst, abs(w2_1d(dens[i], dens[j]) - expect) / expect)
        return worst


# ---------------------------------------------------------------------------
# checks


def _extrapolate(deltas, values, degree: int = 1) -> float:
    """Least-squares polynomial extrapolation of ``values(delta)`` to ``delta = 0``."""
    deltas = np.asarray(deltas, dtype=float)
    values = np.asarray(values, dtype=float)
    degree = min(degree, len(deltas) - 1)
    A = np.vander(deltas, degree + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(A, values, rcond=None)
    return float(coef[0])


def _rel(lhs, rhs, floor):
    return abs(lhs - rhs) / max(abs(rhs), floor)


def _w2_grid(p: GridDensity, q: GridDensity, eps=None) -> float:
    if p.grid.d == 1:
        return w2_1d(p, q)
    return w2(p, q, eps)


def velocity_norm(p: GridDensity, m: ReferenceMeasure, pert: Optional[PerturbationSpec]) -> float:
    """``(1/2) || grad R + 2 beta ||_{L2(p)}``."""
    g = relative_score(p, m)
    if pert is not None:
        g = g + 2.0 * p.grid.evaluate(pert.beta)
    return 0.5 * math.sqrt(float(np.sum(np.sum(g * g, -1) * p.values) * p.grid.cell_volume))


def metric_derivative_check(sol: FPESolution, m: ReferenceMeasure,
                            pert: Optional[PerturbationSpec], t0: float,
                            deltas: Sequence[float] = (0.1, 0.05, 0.025, 0.0125),
                            tol: float = 0.05, abs_floor: float = 1e-3) -> CheckReport:
    if len(deltas) < 3:
        raise PreconditionError("window sweep must contain at least 3 widths")
    p0 = sol.at(t0)
    quot = [_w2_grid(sol.at(t0 + d), p0) / d for d in deltas]
    lhs = _extrapolate(deltas, quot)
    rhs = velocity_norm(p0, m, pert)
    gap = _rel(lhs, rhs, abs_floor)
    return CheckReport("metric_derivative", lhs, rhs, gap, tol, gap < tol,
                       "lim W2(P_t, P_t0)/(t - t0) = |grad R + 2 beta|_{L2} / 2",
                       {"deltas": list(deltas), "quotients": quot, "gap_kind": "relative"})


def descent_ratio(sol: FPESolution, m: ReferenceMeasure, t0: float, deltas) -> tuple:
    p0 = sol.at(t0)
    H0 = relative_entropy(p0, m)
    ratios = [(relative_entropy(sol.at(t0 + d), m) - H0) / _w2_grid(sol.at(t0 + d), p0)
              for d in deltas]
    return _extrapolate(deltas, ratios), ratios


def descent_ratio_theory(p: GridDensity, m: ReferenceMeasure, pert: Optional[PerturbationSpec]):
    """``(-<g, g + 2 beta> / |g + 2 beta|, cosine)`` with ``g = grad R`` in ``L2(p)``."""
    g = relative_score(p, m)
    v = g + (2.0 * p.grid.evaluate(pert.beta) if pert is not None else 0.0)
    w = p.values[..., None] * p.grid.cell_volume
    gv = float(np.sum(g * v * w))
    nv = math.sqrt(float(np.sum(v * v * w)))
    ng = math.sqrt(float(np.sum(g * g * w)))
    return -gv / nv, gv / (nv * ng)


def steepest_descent_check(unperturbed: FPESolution, perturbed: Sequence[FPESolution],
                           m: ReferenceMeasure, t0: float,
                           deltas: Sequence[float] = (0.1, 0.05, 0.025, 0.0125),
                           tol: float = 0.05, parallel_tol: float = 1e-3) -> CheckReport:
    """Entropy-drop per unit W2 displacement is minimal along the unperturbed flow."""
    if len(deltas) < 3:
        raise PreconditionError("window sweep must contain at least 3 widths")
    p0 = unperturbed.at(t0)
    base, base_q = descent_ratio(unperturbed, m, t0, deltas)
    I0 = fisher_information(p0, m)
    target = -math.sqrt(I0)
    ok = _rel(base, target, 1e-3) < tol
    rows = []
    for sol in perturbed:
        if np.max(np.abs(sol.at(t0).values - p0.values)) > 1e-12:
            raise PreconditionError("perturbed run does not share p_t0")
        r, qs = descent_ratio(sol, m, t0, deltas)
        theory, cosine = descent_ratio_theory(p0, m, sol.perturbation)
        margin = r - base
        parallel = (1.0 - cosine) < parallel_tol
        if parallel:
            good = abs(margin) <= tol * abs(base)
        else:
            good = margin > 0
        ok = ok and good and margin >= -tol * abs(base)
        rows.append({"ratio": r, "quotients": qs, "theory_ratio": theory, "cosine": cosine,
                     "margin": margin, "parallel": parallel, "pass": good})
    return CheckReport("steepest_descent", base, target, _rel(base, target, 1e-3), tol, ok,
                       "(H(t) - H(t0)) / W2(P_t, P_t0) -> -sqrt(I) is the steepest rate",
                       {"unperturbed_quotients": base_q, "perturbed": rows,
                        "gap_kind": "relative"})


def geodesic_entropy_derivative_check(mu_a: GridDensity, mu_b: GridDensity, m: ReferenceMeasure,
                                      a: float = 0.0, b: float = 1.0,
                                      fractions: Sequence[float] = (0.08, 0.04, 0.02, 0.01),
                                      tol: float = 0.03, abs_floor: float = 1e-3) -> CheckReport:
    q = mu_a.grid.evaluate(m.density)
    if np.any((q <= 0) & (mu_a.values > 0)):
        raise PreconditionError("mu_a is not absolutely continuous w.r.t. Q on the grid")
    Ha = relative_entropy(mu_a, m)
    steps = [f * (b - a) for f in fractions]
    quot = [(relative_entropy(displacement_interpolate(mu_a, mu_b, a + s, a, b), m) - Ha) / s
            for s in steps]
    lhs = _extrapolate(steps, quot)
    x = mu_a.grid.axis_centers(0)
    T = monotone_map(mu_a, mu_b, x)
    gR = relative_score(mu_a, m)[:, 0]
    w = mu_a.values * mu_a.grid.cell_volume
    rhs = float(np.sum(gR * (T - x) * w)) / (b - a)
    # Cauchy-Schwarz scale of the right side: sqrt(I) * W2 / (b - a)
    cs = math.sqrt(float(np.sum(gR * gR * w)) * float(np.sum((T - x) ** 2 * w))) / (b - a)
    gap = _rel(lhs, rhs, max(cs, abs_floor))
    return CheckReport("geodesic_entropy_derivative", lhs, rhs, gap, tol, gap < tol,
                       "d/dt H[mu_t|Q] at t=a equals E[grad R . (T - Id)] / (b - a)",
                       {"quotients": quot, "steps": steps, "cauchy_schwarz_scale": cs,
                        "gap_kind": "relative to max(|rhs|, sqrt(I) W2 / (b - a))"})


def hwi_check(mu_a: GridDensity, mu_b: GridDensity, m: ReferenceMeasure, kappa: float,
              tol: float = 1e-6) -> CheckReport:
    """``H_a - H_b <= W sqrt(I_a) - kappa/2 W^2`` with exact 1D W2."""
    Ha = relative_entropy(mu_a, m)
    Hb = relative_entropy(mu_b, m)
    Ia = fisher_information(mu_a, m)
    W = w2_1d(mu_a, mu_b)
    lhs = Ha - Hb
    rhs = W * math.sqrt(Ia) - 0.5 * kappa * W * W
    slack = rhs - lhs
    return CheckReport("hwi", lhs, rhs, slack, -tol, slack >= -tol,
                       "H_a - H_b <= W2 sqrt(I_a) - (kappa/2) W2^2",
                       {"W2": W, "I_a": Ia, "H_a": Ha, "H_b": Hb, "gap_kind": "slack"})


def exponential_decay_check(report: EntropyReport, kappa: float, t0: float,
                            H_inf: Optional[float] = None,
                            late_window: Optional[tuple] = None,
                            slope_range: Optional[tuple] = None,
                            tol: float = 1e-10) -> CheckReport:
    """``H(t) <= H(t0) exp(-kappa (t - t0))`` on the range where ``H > 0``.

    The late-time rate is fitted on ``log(H - H_inf)`` when ``H_inf`` (the
    entropy of the normalized reference, ``-log Z``) is supplied, and on
    ``log H`` otherwise.
    """
    t = report.times
    H = report.H
    start = int(np.argmin(np.abs(t - t0)))
    details = {"gap_kind": "slack"}
    if H[start] <= 0:
        details["warning"] = "H(t0) <= 0: bound vacuous, range truncated to empty"
        warnings.warn(details["warning"])
        return CheckReport("exponential_decay", float(H[start]), float(H[start]), 0.0, tol,
                           True, "H(t) <= H(t0) exp(-kappa (t - t0))", details)
    stop = start
    while stop + 1 < len(t) and H[stop + 1] > 0:
        stop += 1
    if stop + 1 < len(t):
        details["warning"] = f"H <= 0 from t={t[stop + 1]:.4g}: range truncated"
        warnings.warn(details["warning"])
    ts = t[start:stop + 1]
    bound = H[start] * np.exp(-kappa * (ts - t[start]))
    slack = bound - H[start:stop + 1]
    worst = int(np.argmin(slack))
    ok = bool(slack[worst] >= -tol)
    details["tested_range"] = [float(ts[0]), float(ts[-1])]
    # late-time log-slope
    excess = H - (H_inf if H_inf is not None else 0.0)
    lo, hi = late_window if late_window is not None else (t[len(t) // 2], t[-1])
    sel = (t >= lo) & (t <= hi) & (excess > 0)
    slope = float(np.polyfit(t[sel], np.log(excess[sel]), 1)[0]) if sel.sum() >= 2 else float("nan")
    details.update({"fitted_log_slope": slope, "slope_window": [float(lo), float(hi)],
                    "slope_basis": "H - H_inf" if H_inf is not None else "H"})
    if slope_range is not None:
        in_range = slope_range[0] <= slope <= slope_range[1]
        details["slope_range"] = list(slope_range)
        ok = ok and in_range
    return CheckReport("exponential_decay", float(H[start:stop + 1][worst]), float(bound[worst]),
                       float(slack[worst]), tol, ok,
                       "H(t) <= H(t0) exp(-kappa (t - t0))", details)
