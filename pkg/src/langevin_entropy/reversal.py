"""Time reversal of the Langevin dynamics and the pathwise entropy ledger.

Reversed time ``s`` runs from 0 (forward time ``T``) to ``T``.  Along a
reversed path the relative entropy process ``R = log p + 2 psi`` splits into

    dR = [ |grad R|^2 / 2 + (2 beta . grad psi - div beta) 1{s < T - t0} ] ds + grad R . dWbar

where ``Wbar`` is the backward Brownian motion.  Everything here works on
block-aligned shards of paths; checks consume compact per-path summaries so
ensembles of a million paths never have to be held in memory at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .entropy import kde_score, _lookup_nearest
from .errors import InsufficientSampleError, PreconditionError
from .fpe import FPESolution, interpolate
from .model import PerturbationSpec, PotentialSpec, as_points, perturbation_integrand
from .report import CheckReport
from .simulate import EnsembleState, PathBundle, block_normals

_BACKWARD = 2  # RNG purpose id for backward-run noise
Z_MAX = 5.0


def _snapshot_indices(sol: FPESolution, forward_times) -> np.ndarray:
    return np.array([sol.index_of(float(t)) for t in forward_times], dtype=np.int64)


def relative_fields(sol: FPESolution, pot: PotentialSpec):
    """Grid fields ``R = log p + 2 psi`` and ``grad R`` for every snapshot (cached).

    Interpolating ``R`` itself (rather than ``log p``) keeps it exactly
    constant when ``p`` is proportional to ``q``.
    """
    cache = getattr(sol, "_relative_fields", None)
    if cache is not None and cache[0] is pot:
        return cache[1], cache[2]
    psi = sol.grid.evaluate(pot.psi)
    g = sol.grid.evaluate(pot.grad)
    R = sol.log_values + 2.0 * psi
    G = sol.scores + 2.0 * g
    sol._relative_fields = (pot, R, G)
    return R, G


class BackwardDriftField:
    """Drift of the reversed dynamics: ``score(T - s) + grad psi + beta 1{s < T - t0}``.

    ``score_source="kde"`` replaces the grid score by a binned-KDE score of the
    ensemble being propagated (cross-validation only).
    """

    def __init__(self, sol: FPESolution, pot: PotentialSpec,
                 pert: Optional[PerturbationSpec] = None, score_source: str = "grid",
                 include_score: bool = True):
        if score_source not in ("grid", "kde"):
            raise PreconditionError("score_source must be 'grid' or 'kde'")
        self.sol = sol
        self.pot = pot
        self.pert = pert
        self.score_source = score_source
        self.include_score = include_score
        self.T = sol.T

    def perturbation_active(self, s: float) -> bool:
        return self.pert is not None and 0.0 <= s < self.T - self.pert.t0

    def score(self, x: np.ndarray, s: float, ensemble: Optional[np.ndarray] = None) -> np.ndarray:
        if self.score_source == "kde":
            box, field_ = kde_score(ensemble if ensemble is not None else x)
            return _lookup_nearest(box, field_, x)
        k = self.sol.index_of(self.T - s)
        return interpolate(self.sol.grid, self.sol.scores, x, k)

    def __call__(self, x, s: float, ensemble=None) -> np.ndarray:
        x = as_points(x, self.pot.d)
        out = self.pot.grad(x)
        if self.include_score:
            out = out + self.score(x, s, ensemble)
        if self.perturbation_active(s):
            out = out + self.pert.beta(x)
        return out


def simulate_backward(terminal, sol: FPESolution, pot: PotentialSpec,
                      pert: Optional[PerturbationSpec], dt: float, horizon: Optional[float] = None,
                      seed: int = 0, record_paths: bool = True, score_source: str = "grid",
                      include_score: bool = True):
    """Euler-Maruyama for the reversed SDE started from samples of ``p_T``.

    Returns a backward ``PathBundle`` (column ``k`` is reversed time ``k dt``)
    or, without ``record_paths``, the final ``EnsembleState``.
    """
    if isinstance(terminal, EnsembleState):
        x = terminal.positions.copy()
        offset = terminal.offset
    else:
        x = as_points(terminal, pot.d).copy()
        offset = 0
    horizon = sol.T - sol.times[0] if horizon is None else horizon
    if horizon > sol.T - sol.times[0] + 1e-12:
        raise PreconditionError(f"reversed horizon {horizon} exceeds the FPE horizon")
    if not dt > 0 or dt > horizon:
        raise PreconditionError("need 0 < dt <= horizon")
    n = int(round(horizon / dt))
    if abs(n * dt - horizon) > 1e-9 * horizon:
        raise PreconditionError("horizon is not an integer multiple of dt")
    field_ = BackwardDriftField(sol, pot, pert, score_source, include_score)
    N, d = x.shape
    sq = math.sqrt(dt)
    if record_paths:
        states = np.empty((N, n + 1, d))
        noise = np.empty((N, n, d))
        states[:, 0] = x
    for k in range(n):
        s = k * dt
        dW = sq * block_normals(seed, offset, N, d, k, _BACKWARD)
        x = x + field_(x, s) * dt + dW
        if not np.all(np.isfinite(x)):
            raise PreconditionError("nonfinite backward state")
        if record_paths:
            states[:, k + 1] = x
            noise[:, k] = dW
    if not record_paths:
        return EnsembleState(x, sol.T - n * dt, seed, n, offset)
    t0 = pert.t0 if pert is not None else 0.0
    return PathBundle(dt * np.arange(n + 1), states, noise, dt, t0, seed,
                      direction="backward", T=sol.T, offset=offset,
                      meta={"score_source": score_source, "include_score": include_score})


# ---------------------------------------------------------------------------
# backward Brownian motion


def backward_increments(b: PathBundle, sol: FPESolution, include_score: bool = True) -> np.ndarray:
    """Increments of ``Wbar`` along the reversed paths of a forward bundle.

    Step ``k`` covers reversed times ``[k dt, (k+1) dt]``, i.e. forward
    ``[t_{n-1}, t_n]`` with ``n = steps - k``; the score integral uses the
    left endpoint in reversed time (forward ``t_n``).
    """
    if b.direction != "forward":
        raise PreconditionError("expected a forward bundle")
    if b.noise_increments is None:
        raise PreconditionError("bundle has no noise increments")
    inc = -b.noise_increments[:, ::-1].copy()
    if include_score:
        tidx = _snapshot_indices(sol, b.times[1:])[::-1]
        x = b.states[:, :0:-1]
        inc -= interpolate(sol.grid, sol.scores, x, tidx[None, :]) * b.dt
    return inc


class BrownianStats:
    """Streaming null tests for reconstructed backward increments.

    Per reversed step: the mean square against ``dt``, the lag-one product
    and the covariance with the reversal's starting point ``X_T``.  Each is
    turned into a z-score; the check passes when every ``|z| < 5``.
    """

    def __init__(self, steps: int, d: int, dt: float):
        self.dt = dt
        self.n = 0
        z = lambda *s: np.zeros(s)
        self.s2, self.s4 = z(steps, d), z(steps, d)
        self.lag, self.lag2 = z(steps - 1, d), z(steps - 1, d)
        self.w, self.wx = z(steps, d), z(steps, d)
        self.x, self.x2 = z(d), z(d)

    def update(self, inc: np.ndarray, x_T: np.ndarray) -> "BrownianStats":
        self.n += len(inc)
        w2 = inc * inc
        self.s2 += w2.sum(0)
        self.s4 += (w2 * w2).sum(0)
        prod = inc[:, 1:] * inc[:, :-1]
        self.lag += prod.sum(0)
        self.lag2 += (prod * prod).sum(0)
        self.w += inc.sum(0)
        self.wx += np.einsum("nkd,nd->kd", inc, x_T)
        self.x += x_T.sum(0)
        self.x2 += (x_T * x_T).sum(0)
        return self

    def z_scores(self) -> dict:
        n = self.n
        if n < 2:
            raise InsufficientSampleError("insufficient sample: need at least 2 paths")
        m2 = self.s2 / n
        var_m2 = np.maximum(self.s4 / n - m2 ** 2, 1e-300)
        z_var = (m2 - self.dt) / np.sqrt(var_m2 / n)
        ml = self.lag / n
        z_lag = ml / np.sqrt(np.maximum(self.lag2 / n, 1e-300) / n)
        mx = self.x / n
        vx = np.maximum(self.x2 / n - mx ** 2, 1e-300)
        cov = self.wx / n - (self.w / n) * mx
        z_x = cov / np.sqrt(np.maximum(m2 * vx, 1e-300) / n)
        return {"variance": z_var, "lag1": z_lag, "terminal_correlation": z_x}

    def report(self, name: str = "backward_brownian", z_max: float = Z_MAX) -> CheckReport:
        zs = self.z_scores()
        details = {"paths": self.n, "z_threshold": z_max}
        worst = 0.0
        ok = True
        for key, z in zs.items():
            a = np.abs(z)
            k = int(np.unravel_index(np.argmax(a), a.shape)[0])
            details[f"{key}_max_abs_z"] = float(a.max())
            details[f"{key}_worst_step"] = k
            details[f"{key}_pass"] = bool(a.max() < z_max)
            ok = ok and bool(a.max() < z_max)
            worst = max(worst, float(a.max()))
        details["gap_kind"] = "max |z| over steps and tests"
        return CheckReport(name, worst, 0.0, worst, z_max, ok,
                           "Wbar increments: variance dt, uncorrelated in time and with X_T",
                           details)


def reconstruct_backward_brownian(b: PathBundle, sol: FPESolution, include_score: bool = True,
                                  stats: Optional[BrownianStats] = None):
    """``(increments, CheckReport)`` for one forward bundle.

    Pass a shared ``stats`` accumulator to pool several shards; the report
    then covers everything seen so far.
    """
    if b.N < 2:
        raise InsufficientSampleError("insufficient sample: need at least 2 paths")
    inc = backward_increments(b, sol, include_score)
    stats = stats or BrownianStats(b.steps, b.d, b.dt)
    stats.update(inc, b.states[:, -1])
    name = "backward_brownian" if include_score else "backward_brownian_no_score"
    return inc, stats.report(name)


def backward_ito_sum(Y, X) -> np.ndarray:
    """``sum_j Y_{j+1} (X_{j+1} - X_j)`` along the last axis (later endpoint)."""
    Y = np.asarray(Y, dtype=float)
    X = np.asarray(X, dtype=float)
    if Y.shape != X.shape:
        raise PreconditionError(f"length mismatch: {Y.shape} vs {X.shape}")
    if Y.shape[-1] < 2:
        raise PreconditionError("empty path: need at least two time points")
    return np.sum(Y[..., 1:] * np.diff(X, axis=-1), axis=-1)


def forward_ito_sum(Y, X) -> np.ndarray:
    """``sum_j Y_j (X_{j+1} - X_j)`` (earlier endpoint)."""
    Y = np.asarray(Y, dtype=float)
    X = np.asarray(X, dtype=float)
    if Y.shape != X.shape:
        raise PreconditionError(f"length mismatch: {Y.shape} vs {X.shape}")
    if Y.shape[-1] < 2:
        raise PreconditionError("empty path: need at least two time points")
    return np.sum(Y[..., :-1] * np.diff(X, axis=-1), axis=-1)


def reverse_forward_bundle(b: PathBundle, sol: FPESolution, include_score: bool = True) -> PathBundle:
    """Read a forward bundle backwards; increments become those of ``Wbar``."""
    inc = backward_increments(b, sol, include_score)
    return PathBundle(b.times[-1] - b.times[::-1], b.states[:, ::-1], inc, b.dt, b.t0, b.seed,
                      b.config_hash, "backward", float(b.times[-1]), b.offset,
                      {"source": "forward", "include_score": include_score})


# ---------------------------------------------------------------------------
# entropy ledger


@dataclass
class TrajectorialLedger:
    """Per-path, per-reversed-step split of ``dR`` (one shard of paths)."""

    times: np.ndarray          # reversed times s_k
    states: np.ndarray         # (N, K+1, d)
    R: np.ndarray              # (N, K+1)
    grad_R: np.ndarray         # (N, K+1, d)
    drift_term: np.ndarray     # (N, K): (2 beta.grad psi - div beta) 1{s_k < T - t0}
    dM: np.ndarray             # (N, K)
    dF: np.ndarray             # (N, K)
    residual: np.ndarray       # (N, K)
    dt: float
    T: float
    t0: float
    sol: FPESolution = field(repr=False, default=None)
    potential: PotentialSpec = field(repr=False, default=None)
    perturbation: Optional[PerturbationSpec] = field(repr=False, default=None)

    @property
    def N(self) -> int:
        return self.R.shape[0]

    @property
    def steps(self) -> int:
        return self.R.shape[1] - 1

    @property
    def dR(self) -> np.ndarray:
        return np.diff(self.R, axis=1)

    def index(self, s: float) -> int:
        k = int(round(s / self.dt))
        if abs(k * self.dt - s) > 1e-9 * max(1.0, s) or not 0 <= k <= self.steps:
            raise PreconditionError(f"reversed time {s} is not on the ledger grid")
        return k

    @property
    def window_end(self) -> int:
        """Reversed index of forward time ``t0``."""
        return self.index(self.T - self.t0)


def decompose_entropy_process(b: PathBundle, sol: FPESolution, pot: PotentialSpec,
                              pert: Optional[PerturbationSpec]) -> TrajectorialLedger:
    """Build the ledger for a backward bundle (its increments must be ``Wbar``)."""
    if b.direction != "backward":
        raise PreconditionError("expected a backward bundle")
    if b.noise_increments is None:
        raise PreconditionError("bundle has no noise increments")
    T = b.T
    t0 = pert.t0 if pert is not None else 0.0
    tidx = _snapshot_indices(sol, T - b.times)
    X = b.states
    N, K1, d = X.shape
    Rf, Gf = relative_fields(sol, pot)
    R = interpolate(sol.grid, Rf, X, tidx[None, :])
    grad_R = interpolate(sol.grid, Gf, X, tidx[None, :])
    drift = np.zeros((N, K1 - 1))
    if pert is not None:
        active = b.times[:-1] < T - t0 - 1e-12
        if np.any(active):
            xa = X[:, :-1][:, active].reshape(-1, d)
            drift[:, active] = perturbation_integrand(pot, pert, xa).reshape(N, -1)
    gl = grad_R[:, :-1]
    dM = np.einsum("nkd,nkd->nk", gl, b.noise_increments)
    dF = (0.5 * np.einsum("nkd,nkd->nk", gl, gl) + drift) * b.dt
    residual = np.diff(R, axis=1) - dM - dF
    return TrajectorialLedger(b.times.copy(), X, R, grad_R, drift, dM, dF, residual,
                              b.dt, T, t0, sol, pot, pert)


def ledger_from_forward(b: PathBundle, sol: FPESolution, pot: PotentialSpec,
                        pert: Optional[PerturbationSpec]) -> TrajectorialLedger:
    return decompose_entropy_process(reverse_forward_bundle(b, sol), sol, pot, pert)


def rate_target(sol: FPESolution, pot: PotentialSpec, pert: Optional[PerturbationSpec],
                t0: float, x) -> np.ndarray:
    """``|grad R_t0(x)|^2 / 2 + (2 beta . grad psi - div beta)(x)``."""
    x = as_points(x, pot.d)
    g = interpolate(sol.grid, relative_fields(sol, pot)[1], x, sol.index_of(t0))
    return 0.5 * np.sum(g * g, axis=1) + perturbation_integrand(pot, pert, x)


# ---------------------------------------------------------------------------
# per-path summaries


def _default_windows(span: int):
    q = [round(i * span / 4) for i in range(5)]
    return [(0, span)] + [(q[i], q[i + 1]) for i in range(4) if q[i + 1] > q[i]]


@dataclass
class LedgerSummary:
    """Compact per-path statistics pooled over shards."""

    dt: float
    T: float
    t0: float
    d: int
    N: int = 0
    M_total: np.ndarray = None
    R_total: np.ndarray = None
    qv_total: np.ndarray = None
    windows: list = field(default_factory=list)         # reversed index pairs (i, j)
    window_x: list = field(default_factory=list)        # X at reversed index i
    window_M: list = field(default_factory=list)
    window_R: list = field(default_factory=list)
    displacement: dict = field(default_factory=dict)    # s -> (x, lhs, rhs)
    rate: dict = field(default_factory=dict)            # delta -> (x, q, raw, target_cond, target_end)
    residual_mean: np.ndarray = None
    residual_sq: np.ndarray = None

    @classmethod
    def from_ledger(cls, led: TrajectorialLedger, displacement_times: Sequence[float] = (),
                    rate_windows: Sequence[float] = (), windows=None) -> "LedgerSummary":
        span = led.window_end
        if span < 1:
            raise PreconditionError("empty reversed window")
        out = cls(led.dt, led.T, led.t0, led.states.shape[2], led.N)
        cM = np.concatenate([np.zeros((led.N, 1)), np.cumsum(led.dM, axis=1)], axis=1)
        out.M_total = cM[:, span].copy()
        out.R_total = led.R[:, span] - led.R[:, 0]
        out.qv_total = np.sum(np.sum(led.grad_R[:, :span] ** 2, axis=2), axis=1) * led.dt
        out.windows = list(windows) if windows is not None else _default_windows(span)
        for i, j in out.windows:
            out.window_x.append(led.states[:, i].copy())
            out.window_M.append(cM[:, j] - cM[:, i])
            out.window_R.append(led.R[:, j] - led.R[:, i])
        cF = np.concatenate([np.zeros((led.N, 1)), np.cumsum(led.dF, axis=1)], axis=1)
        for s in displacement_times:
            if s >= led.T - led.t0 - 1e-12:
                raise PreconditionError("empty reversed window")
            k = led.index(s)
            out.displacement[float(s)] = (led.states[:, k].copy(), led.R[:, span] - led.R[:, k],
                                          cF[:, span] - cF[:, k])
        for delta in rate_windows:
            k = span - int(round(delta / led.dt))
            if k < 0:
                raise PreconditionError(f"window {delta} exceeds the ledger span")
            dR = led.R[:, span] - led.R[:, k]
            dM = cM[:, span] - cM[:, k]
            xs = led.states[:, k].copy()
            out.rate[float(delta)] = (
                xs, (dR - dM) / delta, dR / delta,
                rate_target(led.sol, led.potential, led.perturbation, led.t0, xs),
                rate_target(led.sol, led.potential, led.perturbation, led.t0, led.states[:, span]))
        out.residual_mean = led.residual.sum(axis=0)
        out.residual_sq = (led.residual ** 2).sum(axis=0)
        return out

    @classmethod
    def merge(cls, parts: Sequence["LedgerSummary"]) -> "LedgerSummary":
        parts = list(parts)
        if not parts:
            raise InsufficientSampleError("insufficient sample: no ledger shards")
        a = parts[0]
        cat = lambda xs: np.concatenate(xs, axis=0)
        out = cls(a.dt, a.T, a.t0, a.d, sum(p.N for p in parts))
        out.M_total = cat([p.M_total for p in parts])
        out.R_total = cat([p.R_total for p in parts])
        out.qv_total = cat([p.qv_total for p in parts])
        out.windows = a.windows
        for w in range(len(a.windows)):
            out.window_x.append(cat([p.window_x[w] for p in parts]))
            out.window_M.append(cat([p.window_M[w] for p in parts]))
            out.window_R.append(cat([p.window_R[w] for p in parts]))
        for s in a.displacement:
            out.displacement[s] = tuple(cat([p.displacement[s][i] for p in parts]) for i in range(3))
        for dl in a.rate:
            out.rate[dl] = tuple(cat([p.rate[dl][i] for p in parts]) for i in range(5))
        out.residual_mean = sum(p.residual_mean for p in parts)
        out.residual_sq = sum(p.residual_sq for p in parts)
        return out

    def mean_residual(self) -> np.ndarray:
        """Per-step path-average of the ledger residual."""
        return self.residual_mean / self.N


def summarize(ledgers, displacement_times=(), rate_windows=(), windows=None) -> LedgerSummary:
    """Pool one ledger, a list of ledgers or a lazy iterable of ledgers."""
    if isinstance(ledgers, LedgerSummary):
        return ledgers
    if isinstance(ledgers, TrajectorialLedger):
        ledgers = [ledgers]
    parts = [LedgerSummary.from_ledger(l, displacement_times, rate_windows, windows)
             for l in ledgers]
    return LedgerSummary.merge(parts)


# ---------------------------------------------------------------------------
# checks


def _basis(x: np.ndarray) -> np.ndarray:
    r2 = np.sum(x * x, axis=1)
    cols = [np.ones(len(x))] + [x[:, j] for j in range(x.shape[1])] + [r2, np.exp(-r2)]
    return np.column_stack(cols)


def robust_regression(x: np.ndarray, y: np.ndarray):
    """OLS coefficients of ``y`` on the basis of ``x`` with HC0 standard errors."""
    A = _basis(x)
    G = A.T @ A
    coef = np.linalg.solve(G, A.T @ y)
    e = y - A @ coef
    Gi = np.linalg.inv(G)
    meat = (A * (e * e)[:, None]).T @ A
    se = np.sqrt(np.maximum(np.diag(Gi @ meat @ Gi), 0.0))
    z = np.divide(coef, se, out=np.zeros_like(coef), where=se > 0)
    z[(se == 0) & (np.abs(coef) > 1e-12)] = np.inf
    return coef, se, z


def martingale_test(ledger, min_paths: int = 10_000, z_max: float = Z_MAX,
                    iso_tol: float = 0.05, use: str = "M") -> CheckReport:
    """Orthogonality regression and L2 isometry for the martingale part.

    ``use="R"`` substitutes the raw increments of ``R`` (a negative control:
    they carry the drift and must fail).
    """
    if use not in ("M", "R"):
        raise PreconditionError("use must be 'M' or 'R'")
    S = summarize(ledger)
    if S.N < min_paths:
        raise InsufficientSampleError(f"insufficient sample: {S.N} paths < {min_paths}")
    ys = S.window_M if use == "M" else S.window_R
    rows = []
    worst = 0.0
    for (i, j), x, y in zip(S.windows, S.window_x, ys):
        coef, se, z = robust_regression(x, y)
        worst = max(worst, float(np.max(np.abs(z))))
        rows.append({"window": [i * S.dt, j * S.dt], "coef": coef, "se": se, "z": z})
    total = S.M_total if use == "M" else S.R_total
    lhs = float(np.mean(total ** 2))
    rhs = float(np.mean(S.qv_total))
    if rhs < 1e-12:
        iso_gap = 0.0 if lhs < 1e-12 else math.inf
    else:
        iso_gap = abs(lhs - rhs) / rhs
    ortho_ok = worst < z_max
    iso_ok = iso_gap < iso_tol
    name = "martingale" if use == "M" else "martingale_R_substituted"
    return CheckReport(name, lhs, rhs, iso_gap, iso_tol, bool(ortho_ok and iso_ok),
                       "M = int grad R . dWbar is a square-integrable martingale",
                       {"paths": S.N, "max_abs_z": worst, "z_threshold": z_max,
                        "orthogonality_pass": bool(ortho_ok), "isometry_pass": bool(iso_ok),
                        "regressions": rows, "basis": "1, x, |x|^2, exp(-|x|^2)",
                        "gap_kind": "relative isometry gap E[M^2] vs E[int |grad R|^2]"})


def _equal_mass_bins(x: np.ndarray, bins: int):
    """Bin labels from quantiles of ``x`` (1D) or of ``|x|`` (d > 1)."""
    key = x[:, 0] if x.shape[1] == 1 else np.linalg.norm(x, axis=1)
    edges = np.quantile(key, np.linspace(0.0, 1.0, bins + 1))
    labels = np.clip(np.searchsorted(edges, key, side="right") - 1, 0, bins - 1)
    return key, labels


def _bin_means(labels, bins, *arrays):
    count = np.bincount(labels, minlength=bins).astype(float)
    safe = np.maximum(count, 1.0)
    means = [np.bincount(labels, weights=a, minlength=bins) / safe for a in arrays]
    return count, means


def trajectorial_displacement_check(ledger, t: float, t0: Optional[float] = None,
                                    bins: int = 64, min_count: int = 30, x_max: float = 2.0,
                                    tol: float = 0.10, floor_frac: float = 0.1,
                                    abs_floor: float = 1e-8) -> CheckReport:
    """Binned check of ``E[R_t0 | X_{T-t}] - R_{T-t} = E[int (drift terms) | X_{T-t}]``.

    The per-bin discrepancy is ``|lhs - rhs| / max(|rhs|, floor)`` with
    ``floor = floor_frac * E|rhs|`` so that bins where both sides vanish do not
    blow up the relative error.
    """
    S = ledger if isinstance(ledger, LedgerSummary) else None
    if S is None:
        first = ledger if isinstance(ledger, TrajectorialLedger) else None
        if first is not None and t >= first.T - first.t0 - 1e-12:
            raise PreconditionError("empty reversed window")
        S = summarize(ledger, displacement_times=(t,))
    if t0 is not None and abs(t0 - S.t0) > 1e-12:
        raise PreconditionError("t0 differs from the ledger's activation time")
    if t >= S.T - S.t0 - 1e-12:
        raise PreconditionError("empty reversed window")
    key = float(t)
    if key not in S.displacement:
        raise PreconditionError(f"summary has no displacement data for t={t}")
    x, lhs_p, rhs_p = S.displacement[key]
    kx, labels = _equal_mass_bins(x, bins)
    count, (xm, L, Rr) = _bin_means(labels, bins, kx, lhs_p, rhs_p)
    keep = (count >= min_count) & (np.abs(xm) <= x_max)
    if not np.any(keep):
        raise InsufficientSampleError("insufficient sample: no bin with enough paths")
    floor = max(floor_frac * float(np.mean(np.abs(rhs_p))), abs_floor)
    disc = np.abs(L - Rr) / np.maximum(np.abs(Rr), floor)
    disc[~keep] = 0.0
    w = int(np.argmax(disc))
    gap = float(disc[w])
    return CheckReport("trajectorial_displacement", float(L[w]), float(Rr[w]), gap, tol, gap < tol,
                       "E[R_t0 | X_{T-t}] - R_{T-t} = E[int (|grad R|^2/2 + 2 beta.grad psi - div beta) | X_{T-t}]",
                       {"t": t, "paths": S.N, "bins_used": int(keep.sum()),
                        "bins_excluded": int((count < min_count).sum()), "floor": floor,
                        "bin_centres": xm[keep], "bin_lhs": L[keep], "bin_rhs": Rr[keep],
                        "bin_discrepancy": disc[keep], "worst_bin_centre": float(xm[w]),
                        "rms_discrepancy": float(np.sqrt(np.mean(disc[keep] ** 2))),
                        "gap_kind": "max per-bin relative discrepancy"})


def trajectorial_rate_check(ledger, t0: Optional[float] = None,
                            windows: Sequence[float] = (0.2, 0.1, 0.05, 0.025),
                            tol: float = 0.05, bins: int = 64, min_count: int = 30,
                            noise_mult: float = 3.0, abs_floor: float = 1e-8) -> CheckReport:
    """Shrinking-window limit of the conditional entropy quotient.

    For each window ``delta`` the quotient ``(R_t0 - R_{t0+delta} - dM) / delta``
    (the martingale increment is a zero-mean control variate) is averaged in
    equal-mass bins of ``X_{t0+delta}`` and compared with the limit
    ``|grad R_t0|^2/2 + 2 beta.grad psi - div beta`` in the same bins.  The
    raw pathwise quotient against the limit at ``X_t0`` is reported as well.
    """
    if len(windows) < 2:
        raise PreconditionError("need at least two windows")
    S = ledger if isinstance(ledger, LedgerSummary) else summarize(ledger, rate_windows=windows)
    if t0 is not None and abs(t0 - S.t0) > 1e-12:
        raise PreconditionError("t0 differs from the ledger's activation time")
    windows = sorted((float(w) for w in windows), reverse=True)
    scale = None
    gaps, noise, raw = [], [], []
    for dl in windows:
        if dl not in S.rate:
            raise PreconditionError(f"summary has no rate data for window {dl}")
        x, q, rq, tc, te = S.rate[dl]
        if scale is None:
            scale = max(float(np.mean(np.abs(te))), abs_floor)
        _, labels = _equal_mass_bins(x, bins)
        count, (mq, mt, mq2) = _bin_means(labels, bins, q, tc, q * q)
        keep = count >= min_count
        wts = count[keep] / count[keep].sum()
        gaps.append(float(np.sum(wts * np.abs(mq[keep] - mt[keep]))) / scale)
        se = np.sqrt(np.maximum(mq2[keep] - mq[keep] ** 2, 0.0) / count[keep])
        noise.append(float(np.sum(wts * se)) / scale)
        raw.append(float(np.mean(np.abs(rq - te))) / scale)
    monotone = all(gaps[i + 1] <= gaps[i] + noise_mult * (noise[i] + noise[i + 1])
                   for i in range(len(gaps) - 1))
    final = gaps[-1]
    ok = bool(monotone and final < tol)
    _, _, _, _, te = S.rate[windows[-1]]
    return CheckReport("trajectorial_rate", final, 0.0, final, tol, ok,
                       "(E[R_t0 | X_{T-t}] - R_{T-t}) / (T - t0 - t) -> |grad R_t0|^2/2 + 2 beta.grad psi - div beta",
                       {"windows": windows, "l1_gaps": gaps, "noise_floor": noise,
                        "monotone": bool(monotone), "target_scale": scale,
                        "raw_pathwise_l1": raw, "mean_target": float(np.mean(te)),
                        "gap_kind": "binned L1 gap relative to E|target|"})


def forward_shards(init: EnsembleState, shard: int, pot, pert, dt: float, T: float):
    """Lazily simulate block-aligned shards of a forward ensemble with paths."""
    from .simulate import simulate_forward
    for part in init.shards(shard):
        yield simulate_forward(part, pot, pert, dt, T, record_paths=True)
