"""Acceptance suite: one test per criterion, each prints a PASS/FAIL line.

Reference values are either exact arithmetic on the model parameters
(R* = d/b, N_alpha_hat = (theta - eta d/b)/d) or come from independent
routes computed inside the test (dense matrix exponentials, Richardson
ratios). Tolerances are the stated ones and are not relaxed.
"""

import time

import numpy as np
import pytest
from scipy.linalg import expm

from persisters import (
    FIG1_PARAMS,
    Discretization,
    RK4Fixed,
    RK45Adaptive,
    SimState,
    SolverConfig,
    compute_equilibria,
    integrate,
    mass_balance_residual,
    monotonicity_scan,
    picard_mild_oracle,
    resource_bound_check,
    rhs,
)
from persisters.config import InitialConditionSpec, build_initial_state, config_from_dict
from persisters.runner import run_scenario

P = FIG1_PARAMS
PARAMS = P.to_dict()
R_HAT = P.d / P.b  # 0.05
NA_HAT = (P.theta - P.eta * R_HAT) / P.d  # 32.8333...


@pytest.fixture(scope="module")
def disc200():
    return Discretization.build(P, K=200)


def fig1_initial(disc, kind="no_persisters"):
    return build_initial_state(InitialConditionSpec(type=kind), disc.grid, disc.params)


def test_threshold_location(tmp_path, acceptance):
    t0 = time.perf_counter()
    cfg = config_from_dict(
        {"params": PARAMS, "grid": {"K": 200}, "scheme": "flux_form",
         "scenario": {"type": "spectrum", "bracket": [0.0, 0.1]}, "output_dir": str(tmp_path)}
    )
    R_star = run_scenario(cfg).joinpath("threshold.json").read_text()
    import json

    R_star = json.loads(R_star)["R_star"]
    elapsed = time.perf_counter() - t0
    ok = abs(R_star - 0.05) <= 1e-6 and elapsed < 10.0
    acceptance(1, "threshold location", ok, f"R*={R_star:.10f} (|err|={abs(R_star - 0.05):.1e} <= 1e-6), {elapsed:.2f}s < 10s")
    assert ok


def test_sign_trichotomy_and_monotonicity(disc200, acceptance):
    Rs = np.round(np.arange(0, 11) * 0.01, 10)
    s = np.array([r.s for r in monotonicity_scan(Rs, disc200)])
    inc = np.diff(s)
    signs_ok = all(
        (si < 0) if R < R_HAT - 1e-12 else (si > 0) if R > R_HAT + 1e-12 else abs(si) <= 1e-8
        for R, si in zip(Rs, s)
    )
    ok = bool(np.all(inc > 0) and signs_ok)
    acceptance(2, "sign trichotomy and monotonicity", ok,
               f"min increment {inc.min():.3e} > 0, s(0.05)={s[5]:.1e}, signs {'ok' if signs_ok else 'wrong'}")
    assert ok


def test_threshold_independence(tmp_path, acceptance):
    t0 = time.perf_counter()
    cfg = config_from_dict(
        {"params": PARAMS, "grid": {"K": 200},
         "scenario": {"type": "sweep", "bracket": [0.0, 0.1],
                      "grid": {"mu": [0.0, 0.4, 1.0], "alpha": [0.5, 0.8], "m": [1e-3, 1e-2], "v0": [0.0, 1.0]}},
         "output_dir": str(tmp_path)}
    )
    out = run_scenario(cfg, jobs=1)
    data = np.loadtxt(out / "sweep.csv", delimiter=",", skiprows=1)
    elapsed = time.perf_counter() - t0
    spread = float(np.ptp(data[:, -1]))
    ok = data.shape[0] == 24 and spread < 1e-6 and elapsed < 300
    acceptance(3, "threshold independence", ok,
               f"{data.shape[0]} points, spread {spread:.1e} < 1e-6, max |R*-0.05| {np.max(np.abs(data[:, -1] - 0.05)):.1e}, {elapsed:.1f}s < 300s")
    assert ok


def test_positive_equilibrium_value(disc200, acceptance):
    eq = compute_equilibria(disc200)
    pos = eq.positive
    dn, dR = rhs(SimState(pos.n, pos.R), disc200.A, disc200.N, P)
    L = disc200.L(pos.R)
    rel_pde = float(np.max(np.abs(dn))) / (L.inf_norm() * float(np.max(np.abs(pos.n))))
    rel_res = abs(dR) / P.theta
    ok = abs(pos.N_alpha - 32.8333333) <= 1e-6 and rel_pde < 1e-8 and rel_res < 1e-8
    acceptance(4, "positive equilibrium value", ok,
               f"N_alpha_hat={pos.N_alpha:.10f}, rhs residual {rel_pde:.1e} (pde, rel) / {rel_res:.1e} (resource, rel) < 1e-8")
    assert ok


@pytest.mark.slow
def test_washout_global_attraction(acceptance):
    p = P.with_(theta=0.01)
    disc = Discretization.build(p, K=200)
    R_w = p.theta / p.eta
    rng = np.random.default_rng(2024)
    worst_N, worst_R = 0.0, 0.0
    for _ in range(5):
        n0 = rng.random(200) * rng.uniform(0.5, 5.0)
        R0 = rng.uniform(0.0, 2.0 * R_w)
        tr = integrate(SimState(n0, R0), SolverConfig(RK45Adaptive(), t_end=500.0, sample_dt=1.0), disc)
        worst_N = max(worst_N, tr.N_series[-1] / tr.N_series[0])
        worst_R = max(worst_R, abs(tr.R_series[-1] - R_w) / R_w)
    ok = worst_N < 1e-6 and worst_R < 1e-6
    acceptance(5, "washout global attraction", ok,
               f"worst N(500)/N(0)={worst_N:.2e} (need < 1e-6), worst |R-theta/eta|/(theta/eta)={worst_R:.2e} (need < 1e-6)")
    assert ok


@pytest.mark.slow
def test_persistence_and_two_panel_reproduction(tmp_path, acceptance):
    import json

    t0 = time.perf_counter()
    cfg = config_from_dict({"params": PARAMS, "scenario": {"type": "reproduce_fig1"}, "output_dir": str(tmp_path)})
    out = run_scenario(cfg)
    elapsed = time.perf_counter() - t0
    res = json.loads((out / "manifest.json").read_text())["results"]
    eNa = max(abs(res["panels"][k]["final_N_alpha"] - NA_HAT) / NA_HAT for k in "ab")
    eR = max(abs(res["panels"][k]["final_R"] - 0.05) / 0.05 for k in "ab")
    ok = eNa < 0.01 and eR < 0.01 and elapsed < 120
    acceptance(6, "persistence and two-panel reproduction", ok,
               f"max rel err N_alpha {eNa:.2e}, R {eR:.2e} (< 1%), {elapsed:.1f}s < 120s")
    assert ok


@pytest.mark.slow
def test_conservation_identity(disc200, acceptance):
    init = fig1_initial(disc200)
    full, late, maxN = [], [], 0.0
    for dt in (1e-3, 5e-4):
        tr = integrate(init, SolverConfig(RK4Fixed(dt), t_end=20.0, snapshot_stride=10**9), disc200)
        full.append(mass_balance_residual(tr, P))
        late.append(mass_balance_residual(tr, P, t_min=0.1))
        maxN = max(maxN, float(tr.N_series.max()))
    ratio = late[0] / late[1]
    # samples every step: the central-difference estimate is second order in dt
    ok = max(full) < 1e-4 * maxN and full[1] < full[0] and 3.5 < ratio < 4.5
    acceptance(7, "conservation identity", ok,
               f"residual {full[0]:.2e} -> {full[1]:.2e} (< 1e-4*maxN = {1e-4 * maxN:.2e}); halving ratio t>=0.1: {ratio:.2f} (order 2 estimator)")
    assert ok


def test_resource_box(acceptance):
    runs, failures = 0, []
    rng = np.random.default_rng(8)
    for theta in (1.0, 0.01):
        p = P.with_(theta=theta)
        disc = Discretization.build(p, K=40)
        for kind in ("no_persisters", "only_persisters", "gaussian", "random"):
            for R0 in (0.0, p.theta / p.eta, 2.0 * p.theta / p.eta):
                spec = InitialConditionSpec(type=kind, profile="random", R0=R0, mass=rng.uniform(0.1, 10.0))
                init = build_initial_state(spec, disc.grid, p, rng)
                tr = integrate(init, SolverConfig(RK45Adaptive(), t_end=50.0, sample_dt=0.1), disc)
                runs += 1
                if not resource_bound_check(tr, R0, p):
                    failures.append((theta, kind, R0))
    ok = runs >= 20 and not failures
    acceptance(8, "resource box", ok, f"{runs} runs, {len(failures)} violations")
    assert ok


def test_mild_form_oracle(disc200, acceptance):
    init = fig1_initial(disc200)
    tr = integrate(init, SolverConfig(RK45Adaptive(), t_end=1.0, sample_dt=1e-3), disc200)
    n_pic, info = picard_mild_oracle(init, (tr.times, tr.R_series), disc200, t_end=1.0, steps=1000, full_output=True)
    rel = float(np.max(np.abs(n_pic - tr.final.n)) / np.max(np.abs(tr.final.n)))
    ok = rel < 1e-4
    acceptance(9, "mild-form oracle", ok, f"rel max-norm difference {rel:.2e} < 1e-4 ({info['iterations']} Picard iterations)")
    assert ok


def test_semigroup_domination(acceptance):
    disc = Discretization.build(P, K=100)
    A = disc.A.entries
    rng = np.random.default_rng(1)
    fs = [rng.random(100) for _ in range(5)] + [np.eye(100)[j] for j in (0, 50, 99)]
    worst = np.inf
    for t in (0.5, 1.0, 2.0):
        EA = expm(A * t)
        for R in (0.05, 1.0):
            EL = expm(disc.L(R).entries * t)
            for f in fs:
                a, l = EA @ f, EL @ f
                worst = min(worst, float(a.min()), float((l - a).min()))
            # all basis vectors at once: the matrices themselves
            worst = min(worst, float(EA.min()), float((EL - EA).min()))
    ok = worst >= -1e-10
    acceptance(10, "semigroup domination", ok, f"most negative entry of e^(At)f and e^(Lt)f - e^(At)f: {worst:.1e} >= -1e-10")
    assert ok


def test_discretization_order(tmp_path, acceptance):
    import json

    cfg = config_from_dict(
        {"params": PARAMS,
         "scenario": {"type": "convergence", "K_list": [100, 200, 400], "dt_list": [1e-2, 5e-3, 2.5e-3]},
         "output_dir": str(tmp_path)}
    )
    table = json.loads((run_scenario(cfg) / "convergence.json").read_text())
    ps, pt = table["spatial_order"], table["temporal_order"]
    ok = abs(ps - 2.0) <= 0.3 and abs(pt - 4.0) <= 0.5 and table["max_abs_s_threshold"] < 1e-8
    acceptance(11, "discretization order", ok,
               f"spatial p={ps:.3f} (2 +/- 0.3), temporal p={pt:.3f} (4 +/- 0.5), max |s(L(d/b))|={table['max_abs_s_threshold']:.1e}")
    assert ok


def test_perron_structure(disc200, acceptance):
    Rs = np.round(np.arange(0, 11) * 0.01, 10)
    reps = monotonicity_scan(Rs, disc200)
    real = max(abs(r.imag_part) for r in reps)
    gap = min(r.spectral_gap for r in reps)
    mphi = min(r.min_phi for r in reps)
    mpsi = min(r.min_psi for r in reps)
    psi = reps[5].psi
    dev = float((psi.max() - psi.min()) / np.mean(psi))
    ok = real < 1e-12 and gap > 0 and mphi > 0 and mpsi > 0 and dev < 1e-8
    acceptance(12, "Perron structure", ok,
               f"max |Im s|={real:.1e}, min gap={gap:.3e}, min phi={mphi:.3e}, min psi={mpsi:.3e}, psi(d/b) deviation {dev:.1e} < 1e-8")
    assert ok
