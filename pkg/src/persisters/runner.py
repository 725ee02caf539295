"""Scenario orchestration and run-directory persistence.

Every scenario writes into its own directory: CSV tables (comma separated,
header row, LF endings), optional figures, and ``manifest.json`` holding the
fully resolved configuration, the package version and the wall time.
"""

from __future__ import annotations

import copy
import csv
import itertools
import json
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import RunConfig, build_initial_state, config_from_dict
from .equilibrium import compute_equilibria, equilibrium_residual, write_profile_csv
from .errors import ConfigError, GridError, ParameterError
from .model import Grid, validate_params
from .operators import dump_matrix
from .plotting import heatmap_bounds, plot_heatmap, plot_series
from .simulator import (
    RK4Fixed,
    SolverConfig,
    integrate,
    mass_balance_residual,
    resource_bound_check,
    steady_state_detect,
    write_snapshots_csv,
    write_trajectory_csv,
)
from .spectral import monotonicity_scan, spectral_bound, threshold_root, write_scan_csv

__all__ = ["run_scenario", "convergence_study", "observed_orders"]


def _fmt(exact: bool):
    return (lambda x: f"{x:.17g}") if exact else (lambda x: f"{x:.10g}")


def _write_csv(path: Path, header, rows, exact: bool) -> None:
    fmt = _fmt(exact)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(float(v)) if isinstance(v, (float, int, np.floating, np.integer)) else v for v in row])


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _prepare_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output_dir not creatable: {exc}", field="output_dir") from exc
    return out


def run_scenario(config: RunConfig, jobs: int = 1) -> Path:
    """Execute ``config.scenario`` and return the run directory."""
    out = _prepare_dir(config.output_dir)
    (out / "error.json").unlink(missing_ok=True)  # left over from a failed attempt
    t0 = time.perf_counter()
    handler = {
        "simulate": _simulate,
        "spectrum": _spectrum,
        "sweep": _sweep,
        "equilibria": _equilibria,
        "reproduce_fig1": _reproduce_fig1,
        "convergence": _convergence,
    }[config.scenario]
    ctx = {"outputs": [], "plots": {}, "jobs": jobs}
    disc = config.discretization()
    if config.dump_matrices:
        dump_matrix(disc.A, out / "A.csv")
        dump_matrix(disc.N, out / "N.csv")
        ctx["outputs"] += ["A.csv", "N.csv"]
    results = handler(config, out, ctx)
    manifest = {
        "artifact": "persisters",
        "version": __version__,
        "scenario": config.scenario,
        "config": config.resolved,
        "wall_time_s": time.perf_counter() - t0,
        "jobs": jobs,
        "platform": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "machine": platform.machine(),
        },
        "outputs": sorted(set(ctx["outputs"])),
        "plots": ctx["plots"],
        "results": results,
    }
    _write_json(out / "manifest.json", manifest)
    return out


# -- simulate ---------------------------------------------------------------


def _simulate_into(config: RunConfig, out: Path, ctx: dict, ic_block: dict, prefix: str = "", plot: bool = True):
    disc = config.discretization()
    rng = np.random.default_rng(config.seed)
    init = build_initial_state(config.initial_spec(ic_block), disc.grid, disc.params, rng)
    traj = integrate(init, config.solver, disc)
    exact = config.exact
    write_trajectory_csv(traj, out / f"{prefix}trajectory.csv", exact=exact)
    write_snapshots_csv(traj, out / f"{prefix}snapshots.csv", exact=exact)
    ctx["outputs"] += [f"{prefix}trajectory.csv", f"{prefix}snapshots.csv"]
    p = disc.params
    R_hat = p.d / p.b if p.theta / p.eta > p.d / p.b else None
    Na_hat = (p.theta - p.eta * p.d / p.b) / p.d if R_hat is not None else None
    plot_series(traj, out / f"{prefix}series.png", N_alpha_hat=Na_hat, R_hat=R_hat)
    ctx["outputs"] += [f"{prefix}heatmap.png", f"{prefix}series.png"]
    if plot:
        ctx["plots"][f"{prefix}heatmap.png"] = plot_heatmap(traj, out / f"{prefix}heatmap.png", alpha=p.alpha)
    steady = steady_state_detect(traj)
    return traj, {
        "initial": dict(config.initial_spec(ic_block).__dict__),
        "R0": init.R,
        "N0": float(disc.grid.integrate(init.n)),
        "t_end": traj.t_end,
        "final_N": float(traj.N_series[-1]),
        "final_N_alpha": float(traj.N_alpha_series[-1]),
        "final_R": float(traj.R_series[-1]),
        "steps": traj.steps,
        "rhs_evals": traj.rhs_evals,
        "clip_count": traj.clip_count,
        "clip_fraction": traj.clip_fraction,
        "steady_state_detected": steady is not None,
        "resource_bound_ok": resource_bound_check(traj, init.R, p),
        "mass_balance_residual": mass_balance_residual(traj, p) if len(traj) >= 3 else None,
        "max_N": float(np.max(traj.N_series)),
    }


def _simulate(config: RunConfig, out: Path, ctx: dict):
    _, summary = _simulate_into(config, out, ctx, config.options["initial"])
    return summary


# -- reproduce_fig1 ---------------------------------------------------------


def _reproduce_fig1(config: RunConfig, out: Path, ctx: dict):
    opts = config.options
    solver = config.solver
    if solver.sample_dt is None and opts["sample_dt"] is not None:
        solver = SolverConfig(
            method=solver.method,
            t_end=solver.t_end,
            snapshot_stride=opts["snapshot_stride"],
            negativity_clip_tol=solver.negativity_clip_tol,
            sample_dt=opts["sample_dt"],
        )
    cfg = config.replace(solver=solver)
    eq = compute_equilibria(cfg.discretization())
    panels = {}
    trajs = {}
    for tag, kind in (("a", "no_persisters"), ("b", "only_persisters")):
        ic = {"type": kind, "profile": "uniform", "mass": opts["mass"], "R0": opts["R0"]}
        trajs[tag], panels[tag] = _simulate_into(cfg, out, ctx, ic, prefix=f"{tag}_", plot=False)
    # both panels share one colour scale
    bounds = heatmap_bounds(*trajs.values())
    for tag, traj in trajs.items():
        kind = panels[tag]["initial"]["type"]
        ctx["plots"][f"{tag}_heatmap.png"] = plot_heatmap(
            traj, out / f"{tag}_heatmap.png", alpha=cfg.params.alpha, bounds=bounds, title=f"({tag}) {kind}"
        )
    reference = None
    if eq.positive is not None:
        reference = {"N_alpha_hat": eq.positive.N_alpha, "R_hat": eq.positive.R}
        for panel in panels.values():
            panel["rel_err_N_alpha"] = abs(panel["final_N_alpha"] - eq.positive.N_alpha) / eq.positive.N_alpha
            panel["rel_err_R"] = abs(panel["final_R"] - eq.positive.R) / eq.positive.R
    return {"regime": eq.regime.value, "equilibrium": reference, "panels": panels}


# -- spectrum ---------------------------------------------------------------


def _spectrum_defaults(config: RunConfig, opts: dict):
    p = config.params
    bracket = opts.get("bracket") or [0.0, 2.0 * p.d / p.b]
    R_values = opts.get("R_values")
    if R_values is None:
        R_values = list(np.linspace(bracket[0], bracket[1], 11))
    return bracket, R_values


def _spectrum(config: RunConfig, out: Path, ctx: dict):
    opts = config.options
    disc = config.discretization()
    bracket, R_values = _spectrum_defaults(config, opts)
    try:
        reports = monotonicity_scan(R_values, disc)
    except ValueError as exc:
        raise ConfigError(str(exc), field="scenario.R_values") from exc
    write_scan_csv(reports, out / "spectrum.csv", exact=config.exact)
    R_star = threshold_root(disc, bracket=tuple(bracket), tol=opts["tol"])
    threshold = {"R_star": R_star, "tol": opts["tol"], "bracket": bracket, "parameter_block": config.params.to_dict()}
    _write_json(out / "threshold.json", threshold)
    ctx["outputs"] += ["spectrum.csv", "threshold.json"]
    s = [r.s for r in reports]
    return {
        "R_star": R_star,
        "s": s,
        "strictly_increasing": bool(all(b > a for a, b in zip(s, s[1:]))),
        "min_increment": float(min(np.diff(s))) if len(s) > 1 else None,
        "min_gap": float(min(r.spectral_gap for r in reports)),
    }


# -- equilibria -------------------------------------------------------------


def _equilibria(config: RunConfig, out: Path, ctx: dict):
    disc = config.discretization()
    eq = compute_equilibria(disc)
    res = equilibrium_residual(eq, disc)
    payload = {
        "regime": eq.regime.value,
        "R_washout": eq.washout_R,
        "R_positive": eq.positive.R if eq.positive else None,
        "N_alpha_hat": eq.positive.N_alpha if eq.positive else None,
        "c": eq.positive.c if eq.positive else None,
        "residuals": {k: {"pde": v[0], "resource": v[1]} for k, v in res.items()},
    }
    if eq.positive is not None:
        write_profile_csv(disc, eq.positive.n, out / "equilibrium_profile.csv", exact=config.exact)
        ctx["outputs"].append("equilibrium_profile.csv")
    _write_json(out / "equilibrium.json", payload)
    ctx["outputs"].append("equilibrium.json")
    return payload


# -- sweep ------------------------------------------------------------------


def _sweep_point(resolved: dict, point: dict, out_dir: str):
    raw = copy.deepcopy(resolved)
    raw["params"].update(point)
    raw["grid"] = {"K": raw["grid"]["K"]}  # k follows the swept alpha
    base = raw["scenario"]
    sub = {"type": base["base"]}
    if base["base"] == "spectrum":
        sub.update(R_values=base.get("R_values"), bracket=base.get("bracket"), tol=base["tol"])
    raw["scenario"] = sub
    raw["output_dir"] = out_dir
    cfg = config_from_dict(raw)
    run_dir = run_scenario(cfg, jobs=1)
    with open(run_dir / "manifest.json", encoding="utf-8") as fh:
        return json.load(fh)["results"]


def _sweep(config: RunConfig, out: Path, ctx: dict):
    opts = config.options
    names = list(opts["grid"])
    points = [dict(zip(names, combo)) for combo in itertools.product(*(opts["grid"][n] for n in names))]
    # validate every point up front so a bad grid fails before any work starts
    for i, pt in enumerate(points):
        try:
            params = validate_params(config.params.with_(**pt))
            Grid.from_alpha(config.K, params.alpha)
        except (ParameterError, GridError) as exc:
            raise ConfigError(f"sweep point {i} {pt}: {exc}", field="scenario.grid") from exc
    dirs = [str(out / f"point_{i:03d}") for i in range(len(points))]
    jobs = max(1, int(ctx["jobs"]))
    if jobs == 1:
        results = [_sweep_point(config.resolved, pt, d) for pt, d in zip(points, dirs)]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_point, [config.resolved] * len(points), points, dirs))
    key = "R_star" if opts["base"] == "spectrum" else "N_alpha_hat"
    rows = []
    for pt, res in zip(points, results):
        value = res.get(key)
        rows.append([pt[n] for n in names] + [value if value is not None else "nan"])
    _write_csv(out / "sweep.csv", names + [key], rows, config.exact)
    ctx["outputs"].append("sweep.csv")
    values = [r[-1] for r in rows if isinstance(r[-1], float)]
    return {
        "points": len(points),
        "key": key,
        "values": values,
        "spread": (max(values) - min(values)) if values else None,
        "subruns": [Path(d).name for d in dirs],
    }


# -- convergence ------------------------------------------------------------


def observed_orders(values, ratio: float = 2.0) -> list[float]:
    """Richardson orders log_ratio(|q1 - q2| / |q2 - q3|) for successive triples."""
    q = np.asarray(values, dtype=float)
    out = []
    for a, b, c in zip(q, q[1:], q[2:]):
        num, den = abs(a - b), abs(b - c)
        out.append(math.log(num / den, ratio) if num > 0 and den > 0 else math.nan)
    return out


def convergence_study(config: RunConfig, out: Path | None = None) -> dict:
    """Grid and time-step refinement ladders.

    Spatial: for each K the equilibrium N_alpha_hat, total biomass N_hat,
    s(L(d/b)) and s(L(2 d/b)). N_alpha_hat is fixed by the resource balance
    and s(L(d/b)) vanishes identically, so the order is read off N_hat and
    s(L(2 d/b)). Temporal: fixed-step RK4 from the no-persister state on a
    coarser grid; the order comes from the final state (n, R).
    """
    opts = config.options if config.scenario == "convergence" else {
        "K_list": [100, 200, 400], "dt_list": [1e-2, 5e-3, 2.5e-3], "time_K": 50, "time_t_end": 10.0,
    }
    Ks = list(opts["K_list"])
    if len(Ks) < 3 or any(b != 2 * a for a, b in zip(Ks, Ks[1:])):
        raise ConfigError(f"K list must have >= 3 successively doubling entries, got {Ks}", field="scenario.K_list")
    dts = list(opts["dt_list"])
    if len(dts) < 3 or any(abs(b / a - 0.5) > 1e-9 for a, b in zip(dts, dts[1:])):
        raise ConfigError(f"dt list must have >= 3 successively halving entries, got {dts}", field="scenario.dt_list")
    p = config.params
    R_probe = 2.0 * p.d / p.b

    spatial = []
    for K in Ks:
        disc = config.discretization(K=K)
        eq = compute_equilibria(disc)
        if eq.positive is None:
            raise ConfigError("convergence study needs parameters above threshold", field="params")
        spatial.append(
            {
                "K": K,
                "N_alpha_hat": eq.positive.N_alpha,
                "N_hat": disc.grid.integrate(eq.positive.n),
                "s_threshold": spectral_bound(disc.L(p.d / p.b)).s,
                "s_probe": spectral_bound(disc.L(R_probe)).s,
            }
        )
    order_N = observed_orders([r["N_hat"] for r in spatial])
    order_s = observed_orders([r["s_probe"] for r in spatial])

    disc_t = config.discretization(K=opts["time_K"])
    init = build_initial_state(config.initial_spec(dict(type="no_persisters")), disc_t.grid, p)
    finals = []
    for dt in dts:
        traj = integrate(init, SolverConfig(method=RK4Fixed(dt), t_end=opts["time_t_end"], snapshot_stride=10**9), disc_t)
        finals.append(np.concatenate([traj.final.n, [traj.final.R]]))
    diffs = [float(np.max(np.abs(a - b))) for a, b in zip(finals, finals[1:])]
    order_t = [math.log2(a / b) if a > 0 and b > 0 else math.nan for a, b in zip(diffs, diffs[1:])]

    table = {
        "spatial": spatial,
        "spatial_order_N_hat": order_N,
        "spatial_order_s_probe": order_s,
        "spatial_order": order_N[-1],
        "R_probe": R_probe,
        "max_abs_s_threshold": max(abs(r["s_threshold"]) for r in spatial),
        "temporal": [{"dt": dt, "diff_to_next": d} for dt, d in itertools.zip_longest(dts, diffs)],
        "temporal_order": order_t[-1],
        "temporal_orders": order_t,
        "time_K": opts["time_K"],
        "time_t_end": opts["time_t_end"],
    }
    if out is not None:
        out = Path(out)
        exact = config.exact
        rows = []
        for i, r in enumerate(spatial):
            pN = order_N[i - 2] if i >= 2 else "nan"
            ps = order_s[i - 2] if i >= 2 else "nan"
            rows.append([r["K"], r["N_alpha_hat"], r["N_hat"], r["s_threshold"], r["s_probe"], pN, ps])
        _write_csv(
            out / "convergence_spatial.csv",
            ["K", "N_alpha_hat", "N_hat", "s_threshold", "s_probe", "order_N_hat", "order_s_probe"],
            rows,
            exact,
        )
        trows = []
        for i, dt in enumerate(dts):
            d = diffs[i] if i < len(diffs) else "nan"
            o = order_t[i - 2] if i >= 2 else "nan"
            trows.append([dt, finals[i][-1], d, o])
        _write_csv(out / "convergence_temporal.csv", ["dt", "R_final", "diff_to_next", "order"], trows, exact)
        _write_json(out / "convergence.json", table)
    return table


def _convergence(config: RunConfig, out: Path, ctx: dict):
    table = convergence_study(config, out)
    ctx["outputs"] += ["convergence_spatial.csv", "convergence_temporal.csv", "convergence.json"]
    return {k: table[k] for k in ("spatial_order", "temporal_order", "max_abs_s_threshold")}


def default_jobs() -> int:
    return os.cpu_count() or 1
