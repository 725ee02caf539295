"""Run configuration: YAML schema, defaults and validation.

A configuration file looks like::

    params: {b: 0.6, d: 0.03, theta: 1.0, eta: 0.3, m: 0.01,
             mu: 0.4, alpha: 0.8, gamma: 0.6, v0: 1.0}
    grid: {K: 200}
    scheme: flux_form            # or paper_central
    kernel: uniform              # or {file: kernel.csv}
    solver: {method: rk45_adaptive, rel_tol: 1.0e-6, abs_tol: 1.0e-9, t_end: 300}
    scenario:
      type: simulate
      initial: {type: no_persisters, profile: uniform, mass: 1.0}
    output_dir: runs/demo
    seed: 0

Only ``params`` is required. Every default is filled in and the resolved
dictionary is what gets written to the run manifest.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, GridError, ParameterError
from .model import FIG1_PARAMS, Grid, MatrixKernel, ModelParams, UniformKernel, validate_params
from .operators import SCHEMES, Discretization
from .simulator import RK4Fixed, RK45Adaptive, SimState, SolverConfig

__all__ = [
    "SCENARIOS",
    "InitialConditionSpec",
    "RunConfig",
    "load_config",
    "config_from_dict",
    "default_config",
    "build_initial_state",
]

SCENARIOS = ("simulate", "spectrum", "sweep", "equilibria", "reproduce_fig1", "convergence")

_PARAM_KEYS = ("b", "d", "theta", "eta", "m", "mu", "alpha", "gamma", "v0")

_SOLVER_DEFAULTS = {
    "method": "rk45_adaptive",
    "rel_tol": 1e-6,
    "abs_tol": 1e-9,
    "dt_max": None,
    "dt": 1e-3,
    "t_end": 300.0,
    "snapshot_stride": 100,
    "negativity_clip_tol": 1e-12,
    "sample_dt": None,
}

_INITIAL_DEFAULTS = {
    "type": "no_persisters",
    "profile": "uniform",
    "mass": 1.0,
    "level": 1.0,
    "center": 0.5,
    "width": 0.1,
    "path": None,
    "R0": None,
}

_SCENARIO_DEFAULTS = {
    "simulate": {"initial": _INITIAL_DEFAULTS},
    "spectrum": {"R_values": None, "bracket": None, "tol": 1e-10},
    "sweep": {"grid": None, "base": "spectrum", "R_values": None, "bracket": None, "tol": 1e-10},
    "equilibria": {},
    "reproduce_fig1": {"mass": 1.0, "R0": None, "sample_dt": 0.1, "snapshot_stride": 10},
    "convergence": {
        "K_list": [100, 200, 400],
        "dt_list": [1e-2, 5e-3, 2.5e-3],
        "time_K": 50,
        "time_t_end": 10.0,
    },
}

_TOP_KEYS = ("params", "grid", "scheme", "kernel", "solver", "scenario", "output_dir", "seed", "exact", "dump_matrices")

_INITIAL_TYPES = ("no_persisters", "only_persisters", "uniform", "gaussian", "random", "from_file")


@dataclass(frozen=True)
class InitialConditionSpec:
    """Initial population profile and resource.

    ``no_persisters`` / ``only_persisters`` spread ``mass`` over the active or
    persister compartments with a ``uniform`` or ``random`` profile;
    ``uniform`` sets every compartment to ``level``; ``gaussian`` and
    ``random`` carry total ``mass``; ``from_file`` reads one value per
    compartment (last CSV column). ``R0 = None`` means theta/eta.
    """

    type: str = "no_persisters"
    profile: str = "uniform"
    mass: float = 1.0
    level: float = 1.0
    center: float = 0.5
    width: float = 0.1
    path: str | None = None
    R0: float | None = None


@dataclass
class RunConfig:
    params: ModelParams
    K: int = 200
    scheme: str = "flux_form"
    kernel: str = "uniform"  # "uniform" or a path to a K x K CSV
    solver: SolverConfig = field(default_factory=SolverConfig)
    scenario: str = "equilibria"
    options: dict = field(default_factory=dict)
    output_dir: str = "runs"
    seed: int = 0
    exact: bool = False
    dump_matrices: bool = False
    resolved: dict = field(default_factory=dict)

    def discretization(self, params: ModelParams | None = None, K: int | None = None) -> Discretization:
        params = params or self.params
        K = K or self.K
        kernel = UniformKernel() if self.kernel == "uniform" else MatrixKernel.from_csv(self.kernel)
        return Discretization.build(params, K=K, scheme=self.scheme, kernel=kernel)

    def initial_spec(self, block: dict | None = None) -> InitialConditionSpec:
        block = block if block is not None else self.options.get("initial", _INITIAL_DEFAULTS)
        return InitialConditionSpec(**block)

    def replace(self, **changes) -> "RunConfig":
        """Copy with fields replaced; the resolved dictionary is kept in sync."""
        new = copy.deepcopy(self)
        for key, value in changes.items():
            setattr(new, key, value)
        new.resolved = _resolved_dict(new)
        return new


def _fail(field_name: str, message: str) -> ConfigError:
    return ConfigError(f"{field_name}: {message}", field=field_name)


def _check_keys(block: dict, allowed, where: str):
    if not isinstance(block, dict):
        raise _fail(where, "expected a mapping")
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise _fail(f"{where}.{unknown[0]}" if where else unknown[0], "unknown key")


def _number(value, where: str, allow_none: bool = False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _fail(where, f"expected a number, got {value!r}")
    return float(value)


def _merge(defaults: dict, given: dict, where: str) -> dict:
    _check_keys(given, defaults.keys(), where)
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(given))
    return out


def _resolve_path(value, base_dir: Path, where: str) -> str:
    p = Path(value)
    if not p.is_absolute():
        p = base_dir / p
    if not p.exists():
        raise _fail(where, f"file not found: {p}")
    return str(p)


def _parse_params(block) -> ModelParams:
    if block is None:
        raise _fail("params", "missing required block")
    _check_keys(block, _PARAM_KEYS, "params")
    missing = [k for k in _PARAM_KEYS if k not in block and k != "v0"]
    if missing:
        raise _fail(f"params.{missing[0]}", "missing")
    values = {k: _number(v, f"params.{k}") for k, v in block.items()}
    p = ModelParams(**values)
    try:
        return validate_params(p)
    except ParameterError as exc:
        raise _fail(f"params.{exc.field}", str(exc)) from exc


def _parse_solver(block: dict) -> tuple[SolverConfig, dict]:
    s = _merge(_SOLVER_DEFAULTS, block or {}, "solver")
    for key in ("rel_tol", "abs_tol", "dt", "t_end", "negativity_clip_tol"):
        s[key] = _number(s[key], f"solver.{key}")
    for key in ("dt_max", "sample_dt"):
        s[key] = _number(s[key], f"solver.{key}", allow_none=True)
    if isinstance(s["snapshot_stride"], bool) or not isinstance(s["snapshot_stride"], int):
        raise _fail("solver.snapshot_stride", "expected an integer")
    try:
        if s["method"] == "rk45_adaptive":
            method = RK45Adaptive(s["rel_tol"], s["abs_tol"], s["dt_max"] if s["dt_max"] is not None else math.inf)
        elif s["method"] == "rk4_fixed":
            method = RK4Fixed(s["dt"])
        else:
            raise _fail("solver.method", f"unknown method {s['method']!r}; use rk45_adaptive or rk4_fixed")
        cfg = SolverConfig(
            method=method,
            t_end=s["t_end"],
            snapshot_stride=s["snapshot_stride"],
            negativity_clip_tol=s["negativity_clip_tol"],
            sample_dt=s["sample_dt"],
        )
    except ValueError as exc:
        raise _fail("solver", str(exc)) from exc
    return cfg, s


def _parse_initial(block: dict, base_dir: Path, where: str) -> dict:
    ic = _merge(_INITIAL_DEFAULTS, block or {}, where)
    if ic["type"] not in _INITIAL_TYPES:
        raise _fail(f"{where}.type", f"unknown initial condition {ic['type']!r}")
    if ic["profile"] not in ("uniform", "random"):
        raise _fail(f"{where}.profile", "expected uniform or random")
    for key in ("mass", "level", "center", "width"):
        ic[key] = _number(ic[key], f"{where}.{key}")
        if ic[key] < 0:
            raise _fail(f"{where}.{key}", "must be nonnegative")
    ic["R0"] = _number(ic["R0"], f"{where}.R0", allow_none=True)
    if ic["R0"] is not None and ic["R0"] < 0:
        raise _fail(f"{where}.R0", "must be nonnegative")
    if ic["type"] == "gaussian" and ic["width"] <= 0:
        raise _fail(f"{where}.width", "must be positive")
    if ic["type"] == "from_file":
        if not ic["path"]:
            raise _fail(f"{where}.path", "required for from_file")
        ic["path"] = _resolve_path(ic["path"], base_dir, f"{where}.path")
    return ic


def _check_doubling(values, where: str, integer: bool):
    if not isinstance(values, list) or len(values) < 3:
        raise _fail(where, "need a list of at least 3 entries")
    for a, b in zip(values, values[1:]):
        ok = (b == 2 * a) if integer else abs(b / a - 0.5) < 1e-9
        if not ok:
            raise _fail(where, f"entries must {'double' if integer else 'halve'} successively: {values}")


def _parse_scenario(block: dict, params: ModelParams, base_dir: Path) -> tuple[str, dict]:
    if block is None:
        block = {"type": "equilibria"}
    if not isinstance(block, dict) or "type" not in block:
        raise _fail("scenario.type", "missing")
    kind = block["type"]
    if kind not in SCENARIOS:
        raise _fail("scenario.type", f"unknown scenario {kind!r}; expected one of {SCENARIOS}")
    given = {k: v for k, v in block.items() if k != "type"}
    opts = _merge(_SCENARIO_DEFAULTS[kind], given, "scenario")
    if kind == "simulate":
        opts["initial"] = _parse_initial(opts["initial"], base_dir, "scenario.initial")
    if kind in ("spectrum", "sweep"):
        if opts["R_values"] is not None:
            opts["R_values"] = [_number(r, "scenario.R_values") for r in opts["R_values"]]
        if opts["bracket"] is not None:
            br = [_number(r, "scenario.bracket") for r in opts["bracket"]]
            if len(br) != 2 or not 0 <= br[0] < br[1]:
                raise _fail("scenario.bracket", "expected [lo, hi] with 0 <= lo < hi")
            opts["bracket"] = br
        opts["tol"] = _number(opts["tol"], "scenario.tol")
    if kind == "sweep":
        grid = opts["grid"]
        if not isinstance(grid, dict) or not grid:
            raise _fail("scenario.grid", "expected a mapping of parameter -> list of values")
        for name, values in grid.items():
            if name not in _PARAM_KEYS:
                raise _fail(f"scenario.grid.{name}", "not a model parameter")
            if not isinstance(values, list) or not values:
                raise _fail(f"scenario.grid.{name}", "expected a non-empty list")
            grid[name] = [_number(v, f"scenario.grid.{name}") for v in values]
        if opts["base"] not in ("spectrum", "equilibria"):
            raise _fail("scenario.base", "expected spectrum or equilibria")
    if kind == "reproduce_fig1":
        opts["mass"] = _number(opts["mass"], "scenario.mass")
        opts["R0"] = _number(opts["R0"], "scenario.R0", allow_none=True)
        opts["sample_dt"] = _number(opts["sample_dt"], "scenario.sample_dt", allow_none=True)
    if kind == "convergence":
        _check_doubling(opts["K_list"], "scenario.K_list", integer=True)
        _check_doubling(opts["dt_list"], "scenario.dt_list", integer=False)
        for K in opts["K_list"] + [opts["time_K"]]:
            try:
                Grid.from_alpha(K, params.alpha)
            except GridError as exc:
                raise _fail("scenario.K_list", str(exc)) from exc
    return kind, opts


def config_from_dict(raw: dict, base_dir: str | Path = ".") -> RunConfig:
    """Validate a configuration mapping and fill in every default."""
    base_dir = Path(base_dir)
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    _check_keys(raw, _TOP_KEYS, "")
    params = _parse_params(raw.get("params"))

    grid_block = _merge({"K": 200, "k": None}, raw.get("grid") or {}, "grid")
    K = grid_block["K"]
    if isinstance(K, bool) or not isinstance(K, int) or K < 2:
        raise _fail("grid.K", "expected an integer >= 2")
    try:
        grid = Grid.from_alpha(K, params.alpha)
    except GridError as exc:
        raise _fail("grid.K", str(exc)) from exc
    # k is derived; it may be echoed back (as in a manifest) but must agree
    if grid_block["k"] is not None and grid_block["k"] != grid.k:
        raise _fail("grid.k", f"k={grid_block['k']} disagrees with alpha*K={grid.k}")

    scheme = raw.get("scheme", "flux_form")
    if scheme not in SCHEMES:
        raise _fail("scheme", f"expected one of {SCHEMES}")

    kernel = raw.get("kernel", "uniform")
    if isinstance(kernel, dict):
        _check_keys(kernel, ("file",), "kernel")
        kernel = _resolve_path(kernel["file"], base_dir, "kernel.file")
        try:
            P = MatrixKernel.from_csv(kernel)
        except (ParameterError, ValueError) as exc:
            raise _fail("kernel.file", str(exc)) from exc
        if P.K != K:
            raise _fail("kernel.file", f"kernel is {P.K}x{P.K} but grid.K={K}")
    elif kernel != "uniform":
        raise _fail("kernel", "expected 'uniform' or {file: path}")

    solver, _ = _parse_solver(raw.get("solver") or {})
    scenario, options = _parse_scenario(raw.get("scenario"), params, base_dir)

    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise _fail("seed", "expected an integer")
    output_dir = raw.get("output_dir", f"runs/{scenario}")
    cfg = RunConfig(
        params=params,
        K=K,
        scheme=scheme,
        kernel=kernel,
        solver=solver,
        scenario=scenario,
        options=options,
        output_dir=str(output_dir),
        seed=seed,
        exact=bool(raw.get("exact", False)),
        dump_matrices=bool(raw.get("dump_matrices", False)),
    )
    cfg.resolved = _resolved_dict(cfg)
    return cfg


def _solver_dict(s: SolverConfig) -> dict:
    out = {
        "method": s.method.name,
        "t_end": s.t_end,
        "snapshot_stride": s.snapshot_stride,
        "negativity_clip_tol": s.negativity_clip_tol,
        "sample_dt": s.sample_dt,
    }
    if isinstance(s.method, RK45Adaptive):
        out.update(
            rel_tol=s.method.rel_tol,
            abs_tol=s.method.abs_tol,
            dt_max=None if math.isinf(s.method.dt_max) else s.method.dt_max,
        )
    else:
        out["dt"] = s.method.dt
    return out


def _resolved_dict(cfg: RunConfig) -> dict:
    return {
        "params": cfg.params.to_dict(),
        "grid": {"K": cfg.K, "k": round(cfg.params.alpha * cfg.K)},
        "scheme": cfg.scheme,
        "kernel": cfg.kernel if cfg.kernel == "uniform" else {"file": cfg.kernel},
        "solver": _solver_dict(cfg.solver),
        "scenario": {"type": cfg.scenario, **copy.deepcopy(cfg.options)},
        "output_dir": cfg.output_dir,
        "seed": cfg.seed,
        "exact": cfg.exact,
        "dump_matrices": cfg.dump_matrices,
    }


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"{path}: parse error at line {line}: {exc.problem}", line=line) from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc
    if raw is None:
        raise ConfigError(f"{path}: empty configuration")
    return config_from_dict(raw, base_dir=path.parent)


def default_config(scenario: str = "equilibria") -> RunConfig:
    """Configuration with the two-panel experiment parameters and all defaults."""
    return config_from_dict({"params": FIG1_PARAMS.to_dict(), "scenario": {"type": scenario}})


def build_initial_state(spec: InitialConditionSpec, grid: Grid, params: ModelParams, rng=None) -> SimState:
    K, k = grid.K, grid.k
    rng = rng if rng is not None else np.random.default_rng(0)
    x = grid.midpoints

    def spread(mask: np.ndarray) -> np.ndarray:
        if spec.profile == "random":
            shape = rng.random(K) * mask
        else:
            shape = mask.astype(float)
        total = grid.integrate(shape)
        return spec.mass * shape / total if total > 0 else shape

    active = np.arange(K) < k
    if spec.type == "no_persisters":
        n = spread(active)
    elif spec.type == "only_persisters":
        n = spread(~active)
    elif spec.type == "uniform":
        n = np.full(K, spec.level)
    elif spec.type == "random":
        n = spread(np.ones(K, dtype=bool)) if spec.profile == "random" else None
        if n is None:
            shape = rng.random(K)
            n = spec.mass * shape / grid.integrate(shape)
    elif spec.type == "gaussian":
        shape = np.exp(-0.5 * ((x - spec.center) / spec.width) ** 2)
        n = spec.mass * shape / grid.integrate(shape)
    elif spec.type == "from_file":
        data = np.loadtxt(spec.path, delimiter=",", ndmin=2)
        n = data[:, -1].astype(float)
        if n.shape != (K,):
            raise ConfigError(f"initial profile in {spec.path} has {n.size} values, grid has K={K}", field="initial.path")
    else:
        raise ConfigError(f"unknown initial condition {spec.type!r}", field="initial.type")
    if np.any(n < 0) or not np.all(np.isfinite(n)):
        raise ConfigError("initial profile must be finite and nonnegative", field="initial")
    R0 = params.theta / params.eta if spec.R0 is None else spec.R0
    return SimState(n, R0, 0.0)
