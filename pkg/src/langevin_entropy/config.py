"""Strict YAML scenario configuration.

Every key is checked against a fixed schema; unknown keys, wrong types and
values that would violate a downstream precondition raise ``ConfigError``
with the offending field path and source line.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from .errors import ConfigError
from .fpe import GridSpec
from .model import PerturbationSpec, PotentialSpec

ENV_OUTPUT = "LANGEVIN_ENTROPY_OUT"


@dataclass(frozen=True)
class PotentialConfig:
    kind: str = "quadratic"
    kappa: float = 1.0
    a: float = 1.0
    b: float = 0.0
    growth_constant: Optional[float] = None


@dataclass(frozen=True)
class PerturbationConfig:
    amplitude: float = 0.5
    support_radius: float = 1.0
    center: tuple = (0.0,)


@dataclass(frozen=True)
class InitialConfig:
    kind: str = "gaussian"  # gaussian | stationary | file
    mean: tuple = (0.0,)
    var: float = 0.25
    path: Optional[str] = None


@dataclass(frozen=True)
class GridConfig:
    half_width: Optional[float] = None
    cells: int = 512


@dataclass(frozen=True)
class CheckConfig:
    name: str
    tol: Optional[float] = None
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    seed: int
    dimension: int
    potential: PotentialConfig
    perturbation: Optional[PerturbationConfig]
    initial: InitialConfig
    grid: GridConfig
    ensemble_size: int
    dt: float
    T: float
    t0: float
    checks: tuple
    output_dir: str
    shard_size: int = 8192
    source: Optional[str] = None

    # -- derived objects -------------------------------------------------
    def potential_spec(self) -> PotentialSpec:
        p = self.potential
        if p.kind == "quadratic":
            return PotentialSpec.quadratic(p.kappa, self.dimension, p.growth_constant)
        return PotentialSpec.double_well(p.a, p.b, self.dimension, p.growth_constant or 50.0)

    def perturbation_spec(self, override: Optional[dict] = None) -> Optional[PerturbationSpec]:
        p = override if override is not None else (
            asdict(self.perturbation) if self.perturbation else None)
        if p is None:
            return None
        return PerturbationSpec(p["amplitude"], p["support_radius"], tuple(p["center"]),
                                activation_time=self.t0)

    def grid_spec(self) -> GridSpec:
        return GridSpec.uniform(self.dimension, self.half_width, self.grid.cells)

    @property
    def half_width(self) -> float:
        if self.grid.half_width is not None:
            return float(self.grid.half_width)
        # six standard deviations of the widest of the initial and stationary laws
        if self.potential.kind == "quadratic":
            sd_inf = 1.0 / math.sqrt(2.0 * self.potential.kappa)
        else:
            sd_inf = math.sqrt(max(self.potential.a, 0.0)) + 1.0
        sd0 = math.sqrt(self.initial.var) if self.initial.kind == "gaussian" else 0.0
        shift = max(abs(m) for m in self.initial.mean) if self.initial.kind == "gaussian" else 0.0
        return shift + 6.0 * max(sd_inf, sd0)

    def with_overrides(self, **kw) -> "ScenarioConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return ScenarioConfig(**d)

    def digest(self) -> bytes:
        d = asdict(self)
        d.pop("source", None)
        d.pop("output_dir", None)
        blob = json.dumps(d, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).digest()


# ---------------------------------------------------------------------------
# parsing

_TOP = {"scenario", "seed", "dimension", "potential", "perturbation", "initial", "grid",
        "ensemble_size", "dt", "T", "t0", "checks", "output_dir", "shard_size"}
_REQUIRED = {"scenario", "seed", "potential", "initial", "dt", "T"}
_SECTIONS = {
    "potential": PotentialConfig,
    "perturbation": PerturbationConfig,
    "initial": InitialConfig,
    "grid": GridConfig,
}


def _line_index(node, path=(), out=None) -> dict:
    """Map key paths to 1-based source lines."""
    out = {} if out is None else out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            out[path + (k.value,)] = k.start_mark.line + 1
            _line_index(v, path + (k.value,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, path + (i,), out)
    return out


class _Ctx:
    def __init__(self, lines: dict, source: str):
        self.lines = lines
        self.source = source

    def fail(self, path: tuple, msg: str):
        line = None
        for k in range(len(path), -1, -1):
            line = self.lines.get(tuple(path[:k]))
            if line is not None:
                break
        where = ".".join(str(p) for p in path) or "<root>"
        raise ConfigError(f"{self.source}:{line}: field '{where}': {msg}")

    def number(self, v, path, *, integer=False, positive=False, nonneg=False):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(path, f"expected a number, got {v!r}")
        if integer and not isinstance(v, int):
            self.fail(path, f"expected an integer, got {v!r}")
        if not math.isfinite(v):
            self.fail(path, "must be finite")
        if positive and not v > 0:
            self.fail(path, f"must be positive, got {v}")
        if nonneg and v < 0:
            self.fail(path, f"must be nonnegative, got {v}")
        return int(v) if integer else float(v)

    def mapping(self, v, path, allowed):
        if not isinstance(v, dict):
            self.fail(path, "expected a mapping")
        for k in v:
            if k not in allowed:
                self.fail(path + (k,), f"unknown key (allowed: {', '.join(sorted(allowed))})")
        return v


def _vector(ctx: _Ctx, v, path, d: int) -> tuple:
    vals = v if isinstance(v, list) else [v] * d
    if len(vals) != d:
        ctx.fail(path, f"expected {d} components, got {len(vals)}")
    return tuple(ctx.number(x, path + (i,)) for i, x in enumerate(vals))


def _section(ctx, raw, name, d):
    cls = _SECTIONS[name]
    allowed = set(cls.__dataclass_fields__)
    v = ctx.mapping(raw, (name,), allowed)
    out = {}
    for k, x in v.items():
        p = (name, k)
        if k == "kind":
            if not isinstance(x, str):
                ctx.fail(p, "expected a string")
            out[k] = x
        elif k == "center" or k == "mean":
            out[k] = _vector(ctx, x, p, d)
        elif k == "path":
            if not isinstance(x, str):
                ctx.fail(p, "expected a file path")
            out[k] = x
        elif k == "cells":
            out[k] = ctx.number(x, p, integer=True, positive=True)
        elif k == "growth_constant" and x is None:
            out[k] = None
        else:
            out[k] = ctx.number(x, p)
    for k in ("center", "mean"):
        if k in allowed and k not in out:
            out[k] = (0.0,) * d
    return cls(**out)


def parse_config(text: str, source: str = "<config>") -> ScenarioConfig:
    from .checks import CHECKS  # registry lives with the orchestration code

    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark else None
        raise ConfigError(f"{source}:{line}: malformed YAML: {exc}") from None
    if node is None:
        raise ConfigError(f"{source}:1: empty configuration")
    ctx = _Ctx(_line_index(node), source)
    ctx.mapping(raw, (), _TOP)
    for k in sorted(_REQUIRED):
        if k not in raw:
            ctx.fail((k,), "required key missing")

    name = raw["scenario"]
    if not isinstance(name, str) or not name:
        ctx.fail(("scenario",), "expected a non-empty string")
    seed = ctx.number(raw["seed"], ("seed",), integer=True, nonneg=True)
    if seed >= 2 ** 63:
        ctx.fail(("seed",), "seed must fit in 63 bits")
    d = ctx.number(raw.get("dimension", 1), ("dimension",), integer=True, positive=True)

    pot = _section(ctx, raw["potential"], "potential", d)
    if pot.kind not in ("quadratic", "double_well"):
        ctx.fail(("potential", "kind"), "expected 'quadratic' or 'double_well'")
    if pot.kind == "quadratic" and not pot.kappa > 0:
        ctx.fail(("potential", "kappa"), "quadratic potential needs kappa > 0")
    if pot.kind == "double_well" and pot.b < 0:
        ctx.fail(("potential", "b"), "double-well offset must be nonnegative")
    if pot.growth_constant is not None and not pot.growth_constant > 0:
        ctx.fail(("potential", "growth_constant"), "must be positive")

    pert = None
    if raw.get("perturbation") is not None:
        pert = _section(ctx, raw["perturbation"], "perturbation", d)
        if not pert.support_radius > 0:
            ctx.fail(("perturbation", "support_radius"), "must be positive")

    init = _section(ctx, raw["initial"], "initial", d)
    if init.kind not in ("gaussian", "stationary", "file"):
        ctx.fail(("initial", "kind"), "expected 'gaussian', 'stationary' or 'file'")
    if init.kind == "gaussian" and not init.var > 0:
        ctx.fail(("initial", "var"), "variance must be positive")
    if init.kind == "file":
        if not init.path:
            ctx.fail(("initial", "path"), "file initial density needs a path")
        base = Path(source).parent if source and not source.startswith("<") else Path(".")
        resolved = (base / init.path) if not Path(init.path).is_absolute() else Path(init.path)
        if not resolved.exists():
            ctx.fail(("initial", "path"), f"file not found: {resolved}")
        init = InitialConfig("file", init.mean, init.var, str(resolved))

    grid = _section(ctx, raw.get("grid", {}) or {}, "grid", d)
    if grid.half_width is not None and not grid.half_width > 0:
        ctx.fail(("grid", "half_width"), "must be positive")
    if grid.cells < 8:
        ctx.fail(("grid", "cells"), "need at least 8 cells per axis")

    N = ctx.number(raw.get("ensemble_size", 10000), ("ensemble_size",), integer=True,
                   positive=True)
    shard = ctx.number(raw.get("shard_size", 8192), ("shard_size",), integer=True, positive=True)
    dt = ctx.number(raw["dt"], ("dt",), positive=True)
    T = ctx.number(raw["T"], ("T",), positive=True)
    t0 = ctx.number(raw.get("t0", 0.0), ("t0",), nonneg=True)
    if dt > T:
        ctx.fail(("dt",), f"time step {dt} exceeds the horizon T={T}")
    if abs(T / dt - round(T / dt)) > 1e-6 * (T / dt):
        ctx.fail(("dt",), f"T={T} is not an integer multiple of dt={dt}")
    if t0 >= T:
        ctx.fail(("t0",), f"t0={t0} must lie before T={T}")

    checks_raw = raw.get("checks", []) or []
    if not isinstance(checks_raw, list):
        ctx.fail(("checks",), "expected a list")
    checks, seen = [], set()
    for i, c in enumerate(checks_raw):
        p = ("checks", i)
        if isinstance(c, str):
            c = {"name": c}
        ctx.mapping(c, p, {"name", "tol", "params"})
        cname = c.get("name")
        if cname not in CHECKS:
            ctx.fail(p + ("name",), f"unknown check {cname!r}")
        if cname in seen:
            ctx.fail(p + ("name",), f"duplicate check {cname!r}")
        seen.add(cname)
        tol = c.get("tol")
        if tol is not None:
            tol = ctx.number(tol, p + ("tol",), positive=True)
        params = c.get("params") or {}
        ctx.mapping(params, p + ("params",), set(CHECKS[cname].params))
        checks.append(CheckConfig(cname, tol, dict(params)))

    out = raw.get("output_dir", f"runs/{name}")
    if not isinstance(out, str):
        ctx.fail(("output_dir",), "expected a path")

    cfg = ScenarioConfig(name, seed, d, pot, pert, init, grid, N, dt, T, t0,
                         tuple(checks), out, shard, source)
    for c in cfg.checks:
        problem = CHECKS[c.name].validate(cfg, c)
        if problem:
            ctx.fail(("checks", cfg.checks.index(c), "name"), problem)
    return cfg


def load_config(path) -> ScenarioConfig:
    """Load a config file, or a bundled scenario by bare name."""
    p = Path(path)
    if not p.exists() and p.suffix == "" and p.name == str(path):
        bundled = resources.files("langevin_entropy") / "scenarios" / f"{path}.yaml"
        if bundled.is_file():
            return parse_config(bundled.read_text(), str(bundled))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    return parse_config(text, str(p))


def bundled_scenarios() -> list:
    root = resources.files("langevin_entropy") / "scenarios"
    return sorted(f.name[:-5] for f in root.iterdir() if f.name.endswith(".yaml"))


def output_dir(cfg: ScenarioConfig) -> Path:
    import os

    base = os.environ.get(ENV_OUTPUT)
    return Path(base) / cfg.scenario if base else Path(cfg.output_dir)
