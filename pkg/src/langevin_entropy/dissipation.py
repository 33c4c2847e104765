"""Expectation-level dissipation identities on FPE grids.

All right-hand sides are grid quadratures of the same snapshots the left-hand
sides come from, so discrepancies measure time discretization (and, for the
perturbed runs, the quadrature of the perturbation terms).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .entropy import (EntropyReport, _log_density, fisher_information, log_likelihood_ratio_grid,
                      relative_entropy, relative_score)
from .errors import PreconditionError
from .fpe import FPESolution, GridDensity
from .model import PerturbationSpec, PotentialSpec, ReferenceMeasure, perturbation_integrand
from .report import CheckReport
from .simulate import PathBundle
from .transport import _extrapolate

ROUNDOFF_GAP = 1e-9


def _de_bruijn_gaps(report: EntropyReport, t_min: float, t_max: Optional[float]):
    t, H, I = report.times, report.H, report.I
    if len(t) < 3:
        raise PreconditionError("fewer than 3 time samples")
    dH = (H[2:] - H[:-2]) / (t[2:] - t[:-2])
    tc, Ic = t[1:-1], I[1:-1]
    hi = t[-1] if t_max is None else t_max
    sel = (tc >= t_min - 1e-12) & (tc <= hi + 1e-12)
    if not np.any(sel):
        raise PreconditionError(f"no interior samples in [{t_min}, {hi}]")
    gaps = np.abs(dH + 0.5 * Ic) / np.maximum(Ic, 1.0)
    gaps = np.where(sel, gaps, -np.inf)
    k = int(np.argmax(gaps))
    return float(gaps[k]), float(tc[k]), float(dH[k]), float(-0.5 * Ic[k])


def de_bruijn_check(report: EntropyReport, refined: Optional[EntropyReport] = None,
                    t_min: float = 0.1, t_max: Optional[float] = None, tol: float = 2e-2,
                    min_ratio: float = 1.8) -> CheckReport:
    """Centered ``dH/dt`` against ``-I/2``; gap ``|dH/dt + I/2| / max(I, 1)``.

    With a ``refined`` report (time step halved) the gap must shrink by at
    least ``min_ratio`` unless it already sits at roundoff level.
    """
    gap, tw, lhs, rhs = _de_bruijn_gaps(report, t_min, t_max)
    details = {"t_worst": tw, "t_range": [t_min, t_max if t_max is not None else float(report.times[-1])],
               "stencil": report.details.get("stencil"), "gap_kind": "|dH/dt + I/2| / max(I, 1)"}
    refine_ok = True
    if refined is not None:
        g2, *_ = _de_bruijn_gaps(refined, t_min, t_max)
        ratio = gap / g2 if g2 > 0 else math.inf
        details.update({"refined_gap": g2, "refinement_ratio": ratio})
        refine_ok = gap < ROUNDOFF_GAP or ratio >= min_ratio
        details["refinement_pass"] = bool(refine_ok)
    return CheckReport("de_bruijn", lhs, rhs, gap, tol, bool(gap < tol and refine_ok),
                       "dH/dt = -I/2", details)


def _pert_expectation(p: GridDensity, pot: PotentialSpec, pert: Optional[PerturbationSpec]) -> float:
    """``E_p[div beta - 2 beta . grad psi]`` by cell quadrature."""
    if pert is None:
        return 0.0
    vals = -p.grid.evaluate(lambda x: perturbation_integrand(pot, pert, x))
    return float(np.sum(vals * p.values) * p.grid.cell_volume)


def _window(sol: FPESolution, t0: float, t: float):
    i0, i1 = sol.index_of(t0), sol.index_of(t)
    return np.arange(i0, i1 + 1)


def displacement_identity_check(sol: FPESolution, m: ReferenceMeasure,
                                pert: Optional[PerturbationSpec], t: float,
                                t0: Optional[float] = None, tol: float = 2e-2,
                                stencil: str = "central", abs_floor: float = 1e-3) -> CheckReport:
    """``H(t) - H(t0) = -1/2 int I + int E[div beta - 2 beta . grad psi]`` on the grid."""
    if t0 is None:
        t0 = pert.t0 if pert is not None else float(sol.times[0])
    if t < t0:
        raise PreconditionError(f"t={t} precedes t0={t0}")
    idx = _window(sol, t0, t)
    times = sol.times[idx]
    H = [relative_entropy(sol[i], m) for i in (idx[0], idx[-1])]
    lhs = H[1] - H[0]
    if len(idx) < 2:
        return CheckReport("displacement_identity", 0.0, 0.0, 0.0, tol, True,
                           "H(t) - H(t0) = -1/2 int I + int E[div beta - 2 beta.grad psi]",
                           {"window": [t0, t], "gap_kind": "relative"})
    I = np.array([fisher_information(sol[i], m, stencil) for i in idx])
    # the perturbation is on throughout (t0, t]; use it at the left end as well
    P = np.array([_pert_expectation(sol[i], m.potential, pert) for i in idx])
    fisher_part = -0.5 * float(np.trapezoid(I, times))
    pert_part = float(np.trapezoid(P, times))
    rhs = fisher_part + pert_part
    gap = abs(lhs - rhs) / max(abs(lhs), abs_floor)
    return CheckReport("displacement_identity", lhs, rhs, gap, tol, gap < tol,
                       "H(t) - H(t0) = -1/2 int I + int E[div beta - 2 beta.grad psi]",
                       {"window": [t0, t], "fisher_term": fisher_part,
                        "perturbation_term": pert_part, "samples": len(idx),
                        "stencil": stencil, "gap_kind": "relative"})


def perturbed_derivative_target(p: GridDensity, m: ReferenceMeasure,
                                pert: Optional[PerturbationSpec]):
    """``(-I/2 - E[beta . grad R], E[beta . grad R])`` at the activation time."""
    I = fisher_information(p, m)
    if pert is None:
        return -0.5 * I, 0.0
    g = relative_score(p, m)
    b = p.grid.evaluate(pert.beta)
    term = float(np.sum(np.sum(b * g, -1) * p.values) * p.grid.cell_volume)
    return -0.5 * I - term, term


def perturbed_derivative_check(sol: FPESolution, m: ReferenceMeasure,
                               t0: Optional[float] = None,
                               deltas: Sequence[float] = (0.1, 0.05, 0.025),
                               tol: float = 3e-2, degree: int = 2,
                               abs_floor: float = 1e-3) -> CheckReport:
    """One-sided quotients ``(H(t0 + d) - H(t0)) / d`` extrapolated to ``d -> 0``.

    The target is ``-I[P_t0|Q]/2 - E[beta . grad R_t0]``; before activation
    the perturbed and unperturbed laws coincide, so ``P_t0`` is read from the
    same run.
    """
    if len(deltas) < 3:
        raise PreconditionError("insufficient windows: need at least 3")
    pert = sol.perturbation
    if t0 is None:
        t0 = pert.t0 if pert is not None else float(sol.times[0])
    p0 = sol.at(t0)
    H0 = relative_entropy(p0, m)
    quot = [(relative_entropy(sol.at(t0 + d), m) - H0) / d for d in deltas]
    lhs = _extrapolate(deltas, quot, degree)
    rhs, term = perturbed_derivative_target(p0, m, pert)
    gap = abs(lhs - rhs) / max(abs(rhs), abs_floor)
    return CheckReport("perturbed_derivative", lhs, rhs, gap, tol, gap < tol,
                       "lim (H(t) - H(t0)) / (t - t0) = -I/2 - E[beta . grad R]",
                       {"t0": t0, "deltas": list(deltas), "quotients": quot,
                        "perturbation_term": term, "extrapolation_degree": degree,
                        "gap_kind": "relative"})


# ---------------------------------------------------------------------------
# Girsanov


def _support_probe(pert: PerturbationSpec, n: int = 201) -> np.ndarray:
    c = np.asarray(pert.center)
    r = pert.support_radius
    axis = np.linspace(-r, r, n if pert.d == 1 else (81 if pert.d == 2 else 31))
    pts = np.stack(np.meshgrid(*([axis] * pert.d), indexing="ij"), -1).reshape(-1, pert.d)
    pts = pts[np.linalg.norm(pts, axis=1) < r]
    return c + pts


def girsanov_constants(pot: PotentialSpec, pert: PerturbationSpec, window: float):
    """``(C', C'')`` bounding ``|log Z|`` over an activation window of given length."""
    probe = _support_probe(pert)
    b2 = float(np.max(np.sum(pert.beta(probe) ** 2, axis=1)))
    b2 = max(b2, pert.max_beta_norm() ** 2)
    drift = float(np.max(np.abs(perturbation_integrand(pot, pert, probe))))
    C1 = 0.5 * window * b2
    C2 = 2.0 * float(pert.max_abs_B()) + 0.5 * window * drift
    return float(C1), float(C2)


@dataclass
class GirsanovLedger:
    """Running ``log Z`` per unperturbed path and the grid ratio ``p_beta / p_0``."""

    times: np.ndarray
    log_Z: Optional[np.ndarray]      # (N, K+1) or None
    ratio: np.ndarray                # (snapshots, *cells), nan where excluded
    C_prime: float
    C_double_prime: float
    excluded: int = 0
    details: dict = field(default_factory=dict)

    @property
    def envelope(self) -> float:
        return self.C_prime + self.C_double_prime


def girsanov_log_z(b: PathBundle, pert: PerturbationSpec) -> np.ndarray:
    """``-int beta . dW0 - 1/2 int |beta|^2`` along unperturbed paths (Ito sums)."""
    if b.noise_increments is None:
        raise PreconditionError("bundle has no noise increments")
    N, K1, d = b.states.shape
    active = b.times[:-1] > pert.t0
    x = b.states[:, :-1].reshape(-1, d)
    beta = pert.beta(x).reshape(N, K1 - 1, d) * active[None, :, None]
    inc = -np.einsum("nkd,nkd->nk", beta, b.noise_increments) - 0.5 * np.sum(beta ** 2, 2) * b.dt
    return np.concatenate([np.zeros((N, 1)), np.cumsum(inc, axis=1)], axis=1)


def girsanov_ledger(sol0: FPESolution, sol_beta: FPESolution, pot: PotentialSpec,
                    pert: PerturbationSpec, bundle: Optional[PathBundle] = None,
                    density_floor: float = 1e-10) -> GirsanovLedger:
    if sol0.grid != sol_beta.grid:
        raise PreconditionError("FPE solutions must share a grid")
    if len(sol0) != len(sol_beta) or not np.allclose(sol0.times, sol_beta.times):
        raise PreconditionError("FPE solutions must share snapshot times")
    floor = density_floor * max(sol0.values.max(), sol_beta.values.max())
    bad = (sol0.values < floor) | (sol_beta.values < floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bad, np.nan, sol_beta.values / sol0.values)
    window = sol0.T - pert.t0
    C1, C2 = girsanov_constants(pot, pert, window)
    logz = girsanov_log_z(bundle, pert) if bundle is not None else None
    return GirsanovLedger(sol0.times.copy(), logz, ratio, C1, C2, int(bad.sum()))


def girsanov_ratio_checks(sol0: FPESolution, sol_beta: FPESolution, pot: PotentialSpec,
                          pert: Optional[PerturbationSpec], bundle: Optional[PathBundle] = None,
                          windows: Optional[Sequence[float]] = None,
                          density_floor: float = 1e-10) -> CheckReport:
    """Ratio envelope ``exp(+-(C' + C''))`` and the linear-in-window deviation bound."""
    if pert is None:
        r = sol_beta.values / np.maximum(sol0.values, 1e-300)
        dev = float(np.max(np.abs(r - 1.0)))
        return CheckReport("girsanov_ratio", dev, 0.0, dev, 1e-12, dev < 1e-12,
                           "C1 <= p_beta / p_0 <= C2", {"gap_kind": "max |ratio - 1|"})
    led = girsanov_ledger(sol0, sol_beta, pot, pert, bundle, density_floor)
    env = led.envelope
    valid = led.ratio[np.isfinite(led.ratio)]
    rmin, rmax = float(valid.min()), float(valid.max())
    log_dev = max(abs(math.log(rmin)), abs(math.log(rmax)))
    envelope_ok = bool(rmin > 0 and math.isfinite(rmax) and log_dev <= env)
    # deviation |L - 1| against the window length after activation
    if windows is None:
        span = sol0.T - pert.t0
        windows = [span * f for f in (1.0, 0.5, 0.25, 0.125, 0.0625)]
    # snap each window end to the nearest stored snapshot
    ends = [int(np.argmin(np.abs(sol0.times - (pert.t0 + w)))) for w in windows]
    windows = [float(sol0.times[k] - pert.t0) for k in ends]
    if min(windows) <= 0:
        raise PreconditionError("windows must end after the activation time")
    devs = []
    for w in windows:
        rw = led.ratio[sol0.index_of(pert.t0 + w)]
        devs.append(float(np.nanmax(np.abs(rw - 1.0))))
    ws = np.asarray(windows, dtype=float)
    dv = np.asarray(devs)
    slope_bound = float(np.max(dv / ws))
    slope_fit = float(np.sum(ws * dv) / np.sum(ws * ws))
    exponent = float(np.polyfit(np.log(ws), np.log(np.maximum(dv, 1e-300)), 1)[0])
    linear_ok = bool(math.isfinite(slope_bound))
    details = {"ratio_min": rmin, "ratio_max": rmax, "C_prime": led.C_prime,
               "C_double_prime": led.C_double_prime, "excluded_cells": led.excluded,
               "windows": list(map(float, ws)), "max_deviation": devs,
               "line_slope_bound": slope_bound, "line_slope_fit": slope_fit,
               "deviation_exponent": exponent, "envelope_pass": envelope_ok,
               "linear_bound_pass": linear_ok, "gap_kind": "max |log ratio| vs C' + C''"}
    ok = envelope_ok and linear_ok
    if led.log_Z is not None:
        zmax = float(np.max(np.abs(led.log_Z)))
        details.update({"max_abs_log_Z": zmax, "mean_Z_T": float(np.mean(np.exp(led.log_Z[:, -1]))),
                        "log_Z_pass": bool(zmax <= env)})
        ok = ok and zmax <= env
    return CheckReport("girsanov_ratio", log_dev, env, log_dev, env, bool(ok),
                       "exp(-(C'+C'')) <= p_beta / p_0 <= exp(C'+C''), |p_beta/p_0 - 1| <= C (t - t0)",
                       details)


def gradient_deviation_scaling(sol0: FPESolution, sol_beta: FPESolution, m: ReferenceMeasure,
                               t0: float, windows: Sequence[float]) -> dict:
    """Measured ``E_0 int |grad (R_beta - R_0)|^2`` over each window and its log-log slope."""
    vals = []
    grid = sol0.grid
    for w in windows:
        idx = _window(sol0, t0, t0 + w)
        acc = []
        for i in idx:
            d = relative_score(sol_beta[i], m) - relative_score(sol0[i], m)
            acc.append(float(np.sum(np.sum(d * d, -1) * sol0.values[i]) * grid.cell_volume))
        vals.append(float(np.trapezoid(acc, sol0.times[idx])) if len(idx) > 1 else 0.0)
    ws = np.asarray(windows, dtype=float)
    v = np.maximum(np.asarray(vals), 1e-300)
    return {"windows": list(map(float, ws)), "values": vals,
            "exponent": float(np.polyfit(np.log(ws), np.log(v), 1)[0])}


# ---------------------------------------------------------------------------
# forward-time defect


def forward_defect(p: GridDensity, m: ReferenceMeasure, drop_second: bool = False):
    """``(E[sum d2 l / l - 2 grad R . grad psi], I)`` on interior cells.

    ``d2 l / l`` is the centred second difference of ``l = exp(R)`` divided by
    ``l``, evaluated as ``(e^{R+ - R} - 2 + e^{R- - R}) / h^2`` for stability.
    """
    grid = p.grid
    R = log_likelihood_ratio_grid(p, m)
    gR = relative_score(p, m)
    gpsi = grid.evaluate(m.potential.grad)
    inner = tuple(slice(1, -1) for _ in range(grid.d))
    lap = np.zeros_like(R[inner])
    for j in range(grid.d):
        h = grid.widths[j]
        up = [slice(1, -1)] * grid.d
        dn = [slice(1, -1)] * grid.d
        up[j] = slice(2, None)
        dn[j] = slice(None, -2)
        c = R[inner]
        lap += (np.exp(R[tuple(up)] - c) - 2.0 + np.exp(R[tuple(dn)] - c)) / h ** 2
    integrand = lap
    if not drop_second:
        integrand = integrand - 2.0 * np.sum(gR[inner] * gpsi[inner], -1)
    E = float(np.sum(integrand * p.values[inner]) * grid.cell_volume)
    return E, fisher_information(p, m)


def forward_defect_check(p: GridDensity, m: ReferenceMeasure, rel_tol: float = 1e-3,
                         abs_tol: float = 1e-4, drop_second: bool = False) -> CheckReport:
    """``E[sum d2 l / l - 2 grad R . grad psi] = 0`` by grid quadrature."""
    E, I = forward_defect(p, m, drop_second)
    tol = max(rel_tol * I, abs_tol)
    name = "forward_defect" if not drop_second else "forward_defect_first_term_only"
    return CheckReport(name, E, 0.0, abs(E), tol, abs(E) < tol,
                       "E[sum d2 l / l - 2 grad R . grad psi] = 0",
                       {"t": p.t, "fisher_information": I, "drop_second": drop_second,
                        "gap_kind": "absolute"})
