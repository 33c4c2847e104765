"""Named checks and the lazily evaluated artifacts they share.

Each registered check wraps exactly one library operation.  A ``Run`` owns a
scenario config and caches FPE solutions, entropy series and the single
streamed pass over forward path shards that the trajectorial checks need.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import dissipation, entropy, fpe, model, reversal, simulate, transport
from .errors import PreconditionError
from .report import CheckReport


class Run:
    def __init__(self, cfg, checks=()):
        self.cfg = cfg
        self.checks = tuple(checks)
        self.pot = cfg.potential_spec()
        self.m = model.ReferenceMeasure(self.pot)
        self.pert = cfg.perturbation_spec()
        self.counters = {"fpe_solves": 0, "fpe_steps": 0, "sde_path_steps": 0}
        self._cache = {}

    # -- grids and densities --------------------------------------------
    @property
    def grid(self):
        if self.cfg.initial.kind == "file":
            return self.initial_density().grid
        return self.cfg.grid_spec()

    def _grid_with(self, cells):
        if cells is None:
            return self.grid
        g = self.grid
        return fpe.GridSpec(g.lower, g.upper, (int(cells),) * g.d)

    def initial_density(self, cells=None):
        key = ("p0", cells)
        if key not in self._cache:
            init = self.cfg.initial
            if init.kind == "file":
                from .container import load_grid
                p = load_grid(init.path)
                if isinstance(p, fpe.FPESolution):
                    p = p[0]
                if cells is not None:
                    raise PreconditionError("cannot re-grid a file initial density")
            else:
                g = self._grid_with(cells)
                if init.kind == "stationary":
                    p = fpe.GridDensity.stationary(self.m, g)
                else:
                    cov = init.var * np.eye(self.cfg.dimension)
                    p = fpe.GridDensity.gaussian(g, list(init.mean), cov)
            self._cache[key] = p
        return self._cache[key]

    def solution(self, pert="default", refine: int = 0, cells=None, T=None):
        """FPE run sharing the config's snapshot spacing ``dt``.

        ``refine`` halves the internal step that many times.
        """
        pert = self.pert if isinstance(pert, str) and pert == "default" else pert
        T = self.cfg.T if T is None else T
        key = ("sol", pert, refine, cells, T)
        if key not in self._cache:
            p0 = self.initial_density(cells)
            fdt, _ = fpe.aligned_time_step(p0.grid, self.pot, pert, self.cfg.dt)
            fdt /= 2 ** refine
            sol = fpe.solve_fpe(p0, self.pot, pert, fdt, T, save_dt=self.cfg.dt)
            self.counters["fpe_solves"] += 1
            self.counters["fpe_steps"] += int(round(T / fdt))
            self._cache[key] = sol
        return self._cache[key]

    def entropy(self, sol, stencil="face"):
        key = ("entropy", id(sol), stencil)
        if key not in self._cache:
            self._cache[key] = entropy.entropy_report(sol, self.m, stencil, self.cfg.scenario)
        return self._cache[key]

    # -- particles ----------------------------------------------------------
    def ensemble(self, N=None, seed=None):
        N = self.cfg.ensemble_size if N is None else int(N)
        seed = self.cfg.seed if seed is None else seed
        init = self.cfg.initial
        if init.kind == "gaussian":
            return simulate.gaussian_ensemble(N, list(init.mean), init.var, seed,
                                              self.cfg.dimension)
        return simulate.grid_ensemble(self.initial_density(), N, seed)

    def terminal_ensemble(self, N=None):
        key = ("terminal", N)
        if key not in self._cache:
            init = self.ensemble(N)
            out = simulate.simulate_forward(init, self.pot, self.pert, self.cfg.dt, self.cfg.T)
            self.counters["sde_path_steps"] += init.N * int(round(self.cfg.T / self.cfg.dt))
            self._cache[key] = out
        return self._cache[key]

    def forward_bundle(self, N):
        key = ("bundle", N)
        if key not in self._cache:
            init = self.ensemble(N)
            b = simulate.simulate_forward(init, self.pot, self.pert, self.cfg.dt, self.cfg.T,
                                          record_paths=True, cfg_hash=self.cfg.digest())
            self.counters["sde_path_steps"] += init.N * b.steps
            self._cache[key] = b
        return self._cache[key]

    def _trajectorial_needs(self):
        times, windows = set(), set()
        for c in self.checks:
            if c.name == "trajectorial_displacement":
                times.add(float(_param(c, "t")))
            elif c.name == "trajectorial_rate":
                windows.update(float(w) for w in _param(c, "windows"))
        return tuple(sorted(times)), tuple(sorted(windows, reverse=True))

    def trajectorial(self):
        """One streamed pass over forward shards.

        Returns pooled backward-Brownian statistics (with and without the
        score correction) and the merged per-path ledger summary.
        """
        if "traj" not in self._cache:
            cfg = self.cfg
            sol = self.solution()
            times, windows = self._trajectorial_needs()
            init = self.ensemble()
            steps = int(round(cfg.T / cfg.dt))
            with_score = reversal.BrownianStats(steps, cfg.dimension, cfg.dt)
            no_score = reversal.BrownianStats(steps, cfg.dimension, cfg.dt)
            parts = []
            for b in reversal.forward_shards(init, cfg.shard_size, self.pot, self.pert,
                                             cfg.dt, cfg.T):
                self.counters["sde_path_steps"] += b.N * b.steps
                with_score.update(reversal.backward_increments(b, sol, True), b.states[:, -1])
                no_score.update(reversal.backward_increments(b, sol, False), b.states[:, -1])
                led = reversal.ledger_from_forward(b, sol, self.pot, self.pert)
                parts.append(reversal.LedgerSummary.from_ledger(led, times, windows))
                del b, led
            self._cache["traj"] = (with_score, no_score, reversal.LedgerSummary.merge(parts))
        return self._cache["traj"]


# ---------------------------------------------------------------------------
# registry


@dataclass(frozen=True)
class CheckSpec:
    name: str
    operation: str
    description: str
    anchor: str
    fn: Callable
    tol: float
    params: dict = field(default_factory=dict)
    needs_perturbation: bool = False
    quadratic_only: bool = False
    one_d_only: bool = False

    def validate(self, cfg, c) -> Optional[str]:
        if self.needs_perturbation and cfg.perturbation is None:
            return f"check {self.name!r} needs a perturbation"
        if self.quadratic_only and cfg.potential.kind != "quadratic":
            return f"check {self.name!r} needs a quadratic potential"
        if self.one_d_only and cfg.dimension != 1:
            return f"check {self.name!r} is one-dimensional"
        return None


CHECKS: dict = {}


def register(name, operation, description, anchor, tol, params=None, **flags):
    def deco(fn):
        CHECKS[name] = CheckSpec(name, operation, description, anchor, fn, tol,
                                 dict(params or {}), **flags)
        return fn
    return deco


def _param(c, key):
    return c.params.get(key, CHECKS[c.name].params[key])


def run_check(run: Run, c) -> CheckReport:
    spec = CHECKS[c.name]
    tol = spec.tol if c.tol is None else c.tol
    params = {k: c.params.get(k, v) for k, v in spec.params.items()}
    rep = spec.fn(run, tol, params)
    rep.details.setdefault("operation", spec.operation)
    return rep


def list_checks() -> list:
    return [(n, CHECKS[n].operation, CHECKS[n].description, CHECKS[n].anchor)
            for n in sorted(CHECKS)]


# ---------------------------------------------------------------------------
# model


@register("drift_condition", "model.check_drift_condition",
          "confinement x.grad psi >= -C|x|^2 outside a ball", "drift condition on psi", 0.0,
          {"C": 0.0, "R": 1.0, "radius": None, "nodes": 201})
def _drift(run, tol, p):
    radius = p["radius"] or max(abs(v) for v in run.grid.upper)
    pts = model.radial_grid(run.cfg.dimension, radius, p["nodes"])
    return model.check_drift_condition(run.pot, p["C"], p["R"], pts)


@register("linear_growth", "model.check_linear_growth",
          "|grad psi| <= K (1 + |x|) on the truncated box", "linear growth of grad psi", 0.0,
          {"radius": None, "nodes": 201})
def _growth(run, tol, p):
    radius = p["radius"] or max(abs(v) for v in run.grid.upper)
    return model.check_linear_growth(run.pot, model.radial_grid(run.cfg.dimension, radius,
                                                                p["nodes"]))


# ---------------------------------------------------------------------------
# simulate and fpe


@register("gronwall_envelope", "simulate.gronwall_envelope_check",
          "ensemble second moment stays below the Gronwall envelope",
          "second-moment bound from the drift condition", 0.0,
          {"N": 4096, "C": 0.0, "R": 1.0})
def _gronwall(run, tol, p):
    b = run.forward_bundle(p["N"])
    return simulate.gronwall_envelope_check(b, run.pot, run.pert, p["C"], p["R"])


@register("stationary_residual", "fpe.stationary_residual",
          "q/Z is a fixed point of the solver with an order-2 stencil residual",
          "stationary Fokker-Planck equation for Q", 1e-3,
          {"drift_tol": 1e-4, "ratio": 4.0, "ratio_tol": 0.3, "refine_factor": 2})
def _stationary(run, tol, p):
    if run.cfg.initial.kind != "stationary":
        raise PreconditionError("stationary_residual needs a stationary initial density")
    sol = run.solution()
    drift = float(np.max(np.abs(sol.values[-1] - sol.values[0])))
    g = run.grid
    fine = fpe.GridSpec(g.lower, g.upper, tuple(c * p["refine_factor"] for c in g.cells))
    r0 = fpe.stationary_residual(run.m, g)
    r1 = fpe.stationary_residual(run.m, fine)
    ratio = r0 / r1 if r1 > 0 else math.inf
    order_ok = abs(ratio - p["ratio"]) <= p["ratio_tol"] * p["ratio"]
    ok = r0 < tol and drift < p["drift_tol"] and order_ok
    return CheckReport("stationary_residual", r0, 0.0, r0, tol, bool(ok),
                       "stationary FPE: div(grad psi q) + lap q / 2 = 0",
                       {"max_abs_drift_pT_p0": drift, "drift_tol": p["drift_tol"],
                        "residual_refined": r1, "refinement_ratio": ratio,
                        "order_pass": bool(order_ok), "gap_kind": "max-norm residual"})


@register("sde_pde_consistency", "transport.w2",
          "W2 between particle ensemble and FPE density at T",
          "SDE marginal law solves the Fokker-Planck equation", 0.05,
          {"N": 100000, "histogram_cells": 48})
def _sde_pde(run, tol, p):
    sol = run.solution()
    pT = sol[len(sol) - 1]
    x = run.terminal_ensemble(p["N"]).positions
    if run.cfg.dimension == 1:
        w = transport.w2(x[:, 0], pT)
        how = "exact quantile coupling"
    else:
        g = run.grid
        coarse = fpe.GridSpec(g.lower, g.upper, (p["histogram_cells"],) * g.d)
        hist = transport.histogram_density(x, coarse, sol.T)
        # FPE density averaged onto the same coarse cells
        f = g.cells[0] // p["histogram_cells"]
        if f * p["histogram_cells"] != g.cells[0]:
            raise PreconditionError("histogram_cells must divide the grid cell count")
        v = pT.values.reshape(p["histogram_cells"], f, p["histogram_cells"], f).mean(axis=(1, 3))
        w = transport.w2(hist, fpe.GridDensity(coarse, v, sol.T))
        how = "debiased Sinkhorn on a coarse grid"
    return CheckReport("sde_pde_consistency", w, 0.0, w, tol, w < tol,
                       "Law(X_T) = p_T", {"particles": int(len(x)), "method": how,
                                          "gap_kind": "W2 distance"})


# ---------------------------------------------------------------------------
# entropy


def _gaussian_oracle(kappa, d, mean, var):
    m2 = float(np.dot(mean, mean))
    H = -0.5 * d * math.log(2 * math.pi * math.e * var) + kappa * (d * var + m2)
    a = 2 * kappa - 1.0 / var
    I = a * a * (d * var + m2) + 2 * a * m2 / var + m2 / var ** 2
    return H, I


@register("entropy_oracle", "entropy.relative_entropy",
          "grid H and I against closed-form Gaussian values over a sweep",
          "relative entropy and Fisher information of Gaussians", 1e-3,
          {"means": [-2.0, -1.0, 0.0, 1.0, 2.0], "variances": [0.1, 0.25, 0.5, 1.0, 2.0],
           "half_width": 12.0, "cells": 1024, "abs_floor": 1e-2},
          quadratic_only=True)
def _oracle(run, tol, p):
    d = run.cfg.dimension
    grid = fpe.GridSpec.uniform(d, p["half_width"], p["cells"])
    rows, worst, wrow = [], 0.0, None
    for mu in p["means"]:
        for var in p["variances"]:
            mean = [float(mu)] * d
            g = fpe.GridDensity.gaussian(grid, mean, var * np.eye(d))
            H = entropy.relative_entropy(g, run.m)
            I = entropy.fisher_information(g, run.m)
            Ho, Io = _gaussian_oracle(run.pot.kappa, d, np.array(mean), var)
            eH = abs(H - Ho) / max(abs(Ho), p["abs_floor"])
            eI = abs(I - Io) / max(abs(Io), p["abs_floor"])
            row = {"mean": mu, "var": var, "H": H, "H_oracle": Ho, "I": I, "I_oracle": Io,
                   "rel_err_H": eH, "rel_err_I": eI}
            rows.append(row)
            if max(eH, eI) >= worst:
                worst, wrow = max(eH, eI), row
    lhs, rhs = (wrow["H"], wrow["H_oracle"]) if wrow["rel_err_H"] >= wrow["rel_err_I"] \
        else (wrow["I"], wrow["I_oracle"])
    return CheckReport("entropy_oracle", lhs, rhs, worst, tol, worst < tol,
                       "H and I of Gaussians in closed form",
                       {"sweep": rows, "gap_kind": "max relative error over the sweep"})


@register("monotonicity", "entropy.EntropyReport.is_monotone",
          "H[P_t|Q] is nonincreasing along the unperturbed flow",
          "relative entropy decreases", 1e-10, {})
def _monotone(run, tol, p):
    rep = run.entropy(run.solution(pert=None))
    inc = float(np.max(np.diff(rep.H))) if len(rep.H) > 1 else 0.0
    return CheckReport("monotonicity", inc, 0.0, inc, tol, rep.is_monotone(tol),
                       "dH/dt <= 0", {"gap_kind": "largest increment of H"})


# ---------------------------------------------------------------------------
# dissipation


@register("de_bruijn", "dissipation.de_bruijn_check",
          "dH/dt = -I/2 along the unperturbed flow, gap halving under step refinement",
          "de Bruijn identity", 2e-2, {"t_min": 0.1, "t_max": None, "min_ratio": 1.8,
                                       "refine": True})
def _debruijn(run, tol, p):
    rep = run.entropy(run.solution(pert=None))
    ref = run.entropy(run.solution(pert=None, refine=1)) if p["refine"] else None
    return dissipation.de_bruijn_check(rep, ref, p["t_min"], p["t_max"], tol, p["min_ratio"])


@register("displacement_identity", "dissipation.displacement_identity_check",
          "H(t0) - H(t) equals the integrated dissipation and perturbation terms",
          "expectation form of the entropy ledger", 2e-2, {"t": None, "stencil": "central"})
def _disp_identity(run, tol, p):
    t = run.cfg.T if p["t"] is None else p["t"]
    return dissipation.displacement_identity_check(run.solution(), run.m, run.pert, t,
                                                   run.cfg.t0, tol, p["stencil"])


@register("perturbed_derivative", "dissipation.perturbed_derivative_check",
          "window-extrapolated dH/dt at t0+ equals -I/2 - E[beta.grad R]",
          "entropy derivative under a perturbation", 3e-2,
          {"deltas": [0.1, 0.05, 0.025], "degree": 2}, needs_perturbation=True)
def _pert_deriv(run, tol, p):
    return dissipation.perturbed_derivative_check(run.solution(), run.m, run.cfg.t0,
                                                  tuple(p["deltas"]), tol, p["degree"])


@register("girsanov_ratio", "dissipation.girsanov_ratio_checks",
          "p_beta / p_0 stays in the Girsanov envelope and deviates linearly in the window",
          "Girsanov likelihood ratio bounds", 0.0, {"windows": None, "paths": 0},
          needs_perturbation=True)
def _girsanov(run, tol, p):
    bundle = run.forward_bundle(p["paths"]) if p["paths"] else None
    return dissipation.girsanov_ratio_checks(run.solution(pert=None), run.solution(),
                                             run.pot, run.pert, bundle, p["windows"])


@register("forward_defect", "dissipation.forward_defect_check",
          "E[L l / l] = I/2 with the dropped-second-order control failing",
          "forward generator applied to the likelihood ratio", 1e-3,
          {"t": None, "abs_tol": 1e-4, "negative_control": True})
def _defect(run, tol, p):
    sol = run.solution(pert=None)
    t = run.cfg.T / 2 if p["t"] is None else p["t"]
    dens = sol.at(t)
    rep = dissipation.forward_defect_check(dens, run.m, tol, p["abs_tol"])
    if p["negative_control"]:
        ctrl = dissipation.forward_defect_check(dens, run.m, tol, p["abs_tol"], drop_second=True)
        rep.details["negative_control"] = ctrl.to_dict()
        rep.details["negative_control_detected"] = not ctrl.passed
        rep.passed = bool(rep.passed and not ctrl.passed)
    return rep


# ---------------------------------------------------------------------------
# reversal


@register("backward_marginal", "reversal.simulate_backward",
          "backward ensemble marginal at reversed time T - s matches p_s",
          "time reversal of the diffusion", 0.05,
          {"N": None, "times": [0.0], "score_source": "grid"}, one_d_only=True)
def _backward_marginal(run, tol, p):
    sol = run.solution()
    term = run.terminal_ensemble(p["N"])
    rows = []
    for s in p["times"]:
        horizon = run.cfg.T - float(s)
        out = reversal.simulate_backward(term, sol, run.pot, run.pert, run.cfg.dt, horizon,
                                         seed=run.cfg.seed, record_paths=False,
                                         score_source=p["score_source"])
        run.counters["sde_path_steps"] += term.N * int(round(horizon / run.cfg.dt))
        rows.append({"s": float(s), "w2": transport.w2_1d(out.positions[:, 0], sol.at(s))})
    worst = max(rows, key=lambda r: r["w2"])
    return CheckReport("backward_marginal", worst["w2"], 0.0, worst["w2"], tol,
                       worst["w2"] < tol, "Law(Xbar_{T-s}) = p_s",
                       {"rows": rows, "paths": term.N, "gap_kind": "max W2 over s"})


@register("backward_brownian", "reversal.reconstruct_backward_brownian",
          "reconstructed backward increments pass Brownian null tests; no-score control fails",
          "semimartingale decomposition of the reversed process", reversal.Z_MAX,
          {"negative_control": True})
def _backward_brownian(run, tol, p):
    with_score, no_score, _ = run.trajectorial()
    rep = with_score.report("backward_brownian", tol)
    if p["negative_control"]:
        ctrl = no_score.report("backward_brownian_no_score", tol)
        detected = not ctrl.details["terminal_correlation_pass"]
        rep.details["negative_control"] = ctrl.to_dict()
        rep.details["negative_control_detected"] = bool(detected)
        rep.passed = bool(rep.passed and detected)
    return rep


@register("martingale", "reversal.martingale_test",
          "orthogonality regression and L2 isometry of M; R-substituted control fails",
          "square-integrable martingale part of R", 0.05,
          {"min_paths": 10000, "z_max": reversal.Z_MAX, "negative_control": True})
def _martingale(run, tol, p):
    _, _, S = run.trajectorial()
    rep = reversal.martingale_test(S, p["min_paths"], p["z_max"], tol)
    if p["negative_control"]:
        ctrl = reversal.martingale_test(S, p["min_paths"], p["z_max"], tol, use="R")
        rep.details["negative_control"] = ctrl.to_dict()
        rep.details["negative_control_detected"] = not ctrl.passed
        rep.passed = bool(rep.passed and not ctrl.passed)
    return rep


@register("trajectorial_displacement", "reversal.trajectorial_displacement_check",
          "binned conditional entropy displacement matches the cumulative Fisher process",
          "trajectorial relative entropy identity", 0.10,
          {"t": 0.5, "bins": 64, "min_count": 30, "x_max": 2.0, "floor_frac": 0.1,
           "refine_from": None, "min_halving": 1.5})
def _traj_disp(run, tol, p):
    _, _, S = run.trajectorial()
    rep = reversal.trajectorial_displacement_check(S, p["t"], None, p["bins"], p["min_count"],
                                                   p["x_max"], tol, p["floor_frac"])
    if p["refine_from"]:
        base = p["refine_from"]
        unknown = set(base) - {"ensemble_size", "dt"}
        if unknown:
            raise PreconditionError(f"refine_from accepts ensemble_size and dt, got {unknown}")
        coarse_cfg = run.cfg.with_overrides(**base)
        coarse = Run(coarse_cfg, [c for c in run.checks if c.name == "trajectorial_displacement"])
        _, _, Sc = coarse.trajectorial()
        for k, v in coarse.counters.items():
            run.counters[k] += v
        crep = reversal.trajectorial_displacement_check(Sc, p["t"], None, p["bins"],
                                                        p["min_count"], p["x_max"], tol,
                                                        p["floor_frac"])
        ratio = crep.details["rms_discrepancy"] / max(rep.details["rms_discrepancy"], 1e-300)
        rep.details.update({"coarse": {"paths": Sc.N, "dt": coarse_cfg.dt,
                                       "max_discrepancy": crep.gap,
                                       "rms_discrepancy": crep.details["rms_discrepancy"]},
                            "halving_ratio": ratio, "min_halving": p["min_halving"],
                            "halving_pass": bool(ratio >= p["min_halving"])})
        rep.passed = bool(rep.passed and ratio >= p["min_halving"])
    return rep


@register("trajectorial_rate", "reversal.trajectorial_rate_check",
          "short-window conditional rate of R converges to |grad R|^2/2 plus perturbation term",
          "pathwise entropy dissipation rate", 0.05,
          {"windows": [0.2, 0.1, 0.05, 0.025], "bins": 64, "min_count": 30, "noise_mult": 3.0})
def _traj_rate(run, tol, p):
    _, _, S = run.trajectorial()
    return reversal.trajectorial_rate_check(S, None, tuple(p["windows"]), tol, p["bins"],
                                            p["min_count"], p["noise_mult"])


# ---------------------------------------------------------------------------
# transport


@register("metric_derivative", "transport.metric_derivative_check",
          "W2(P_t, P_t0)/(t - t0) tends to |grad R + 2 beta|_{L2}/2",
          "metric derivative in Wasserstein space", 0.05,
          {"deltas": [0.1, 0.05, 0.025, 0.0125]}, one_d_only=True)
def _metric(run, tol, p):
    return transport.metric_derivative_check(run.solution(), run.m, run.pert, run.cfg.t0,
                                             tuple(p["deltas"]), tol)


@register("steepest_descent", "transport.steepest_descent_check",
          "entropy drop per unit W2 is steepest without perturbation",
          "steepest descent property of the Langevin flow", 0.05,
          {"deltas": [0.1, 0.05, 0.025, 0.0125], "perturbations": []}, one_d_only=True)
def _steepest(run, tol, p):
    base = run.solution(pert=None)
    d = run.cfg.dimension
    perturbed = []
    for q in p["perturbations"]:
        unknown = set(q) - {"amplitude", "support_radius", "center"}
        if unknown:
            raise PreconditionError(f"unknown perturbation keys {sorted(unknown)}")
        center = np.broadcast_to(np.atleast_1d(q.get("center", 0.0)).astype(float), (d,))
        spec = run.cfg.perturbation_spec({"amplitude": q.get("amplitude", 0.5),
                                          "support_radius": q.get("support_radius", 1.0),
                                          "center": tuple(center)})
        perturbed.append(run.solution(pert=spec))
    if run.pert is not None:
        perturbed.append(run.solution())
    return transport.steepest_descent_check(base, perturbed, run.m, run.cfg.t0,
                                            tuple(p["deltas"]), tol)


@register("geodesic_entropy_derivative", "transport.geodesic_entropy_derivative_check",
          "entropy derivative along a displacement geodesic equals E[grad R . (T - Id)]",
          "first variation of entropy along geodesics", 0.03,
          {"target_mean": 1.0, "target_var": 0.5}, one_d_only=True)
def _geodesic(run, tol, p):
    a = run.initial_density()
    b = fpe.GridDensity.gaussian(a.grid, [p["target_mean"]], [[p["target_var"]]])
    return transport.geodesic_entropy_derivative_check(a, b, run.m, tol=tol)


@register("hwi", "transport.hwi_check",
          "HWI inequality over random Gaussian pairs",
          "HWI inequality under a curvature bound", 1e-6,
          {"pairs": 50, "mean_range": [-2.0, 2.0], "var_range": [0.1, 2.0]},
          quadratic_only=True, one_d_only=True)
def _hwi(run, tol, p):
    rng = np.random.default_rng(run.cfg.seed)
    grid = run.grid
    kappa = run.pot.kappa
    worst, rows = None, []
    for _ in range(int(p["pairs"])):
        ma, mb = rng.uniform(*p["mean_range"], size=2)
        va, vb = rng.uniform(*p["var_range"], size=2)
        a = fpe.GridDensity.gaussian(grid, [ma], [[va]])
        b = fpe.GridDensity.gaussian(grid, [mb], [[vb]])
        rep = transport.hwi_check(a, b, run.m, kappa, tol)
        rows.append({"a": [ma, va], "b": [mb, vb], "slack": rep.gap})
        if worst is None or rep.gap < worst.gap:
            worst = rep
    worst.details.update({"pairs": rows, "all_pass": all(r["slack"] >= -tol for r in rows)})
    worst.passed = worst.details["all_pass"]
    return worst


@register("exponential_decay", "transport.exponential_decay_check",
          "H(t) <= H(t0) exp(-kappa (t - t0)) with the late log-slope in range",
          "exponential decay of relative entropy", 1e-10,
          {"late_window": None, "slope_range": [-2.4, -1.6]}, quadratic_only=True)
def _decay(run, tol, p):
    rep = run.entropy(run.solution(pert=None))
    g = run.grid
    H_inf = entropy.relative_entropy(fpe.GridDensity.stationary(run.m, g), run.m)
    kappa = model.curvature_lower_bound(run.pot, model.radial_grid(run.cfg.dimension, 1.0, 11))
    return transport.exponential_decay_check(rep, kappa, run.cfg.t0, H_inf,
                                             p["late_window"], p["slope_range"], tol)
