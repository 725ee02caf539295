import math

import numpy as np
import pytest
from scipy.linalg import expm

from persisters import (
    FIG1_PARAMS,
    Discretization,
    Grid,
    ModelParams,
    RK4Fixed,
    RK45Adaptive,
    SimState,
    SolverConfig,
    UniformKernel,
    CubicVelocity,
    integrate,
    mass_balance_residual,
    picard_mild_oracle,
    resource_bound_check,
    rhs,
    steady_state_detect,
)
from persisters.config import InitialConditionSpec, build_initial_state
from persisters.errors import ConvergenceError, IntegrationError
from persisters.simulator import write_snapshots_csv, write_trajectory_csv

P = FIG1_PARAMS


@pytest.fixture(scope="module")
def disc50():
    return Discretization.build(P, K=50)


def fig1_initial(disc, kind="no_persisters"):
    return build_initial_state(InitialConditionSpec(type=kind), disc.grid, disc.params)


def test_rhs_washout_fixed_point(disc50):
    dn, dR = rhs(SimState(np.zeros(50), P.theta / P.eta), disc50.A, disc50.N, P)
    np.testing.assert_array_equal(dn, 0.0)
    assert dR == pytest.approx(0.0, abs=1e-15)


def test_rhs_inflow_only(disc50):
    _, dR = rhs(SimState(np.zeros(50), 0.0), disc50.A, disc50.N, P)
    assert dR == P.theta


def test_rhs_scalar_reduction():
    p = ModelParams(b=0.6, d=0.03, theta=1.0, eta=0.3, m=0.0, mu=0.0, alpha=0.5, gamma=0.5, v0=0.0)
    disc = Discretization(Grid(1, 1), p, CubicVelocity(0.0, 0.5), UniformKernel())
    for n1, R in ((2.0, 0.1), (0.5, 0.01), (3.0, 0.05)):
        dn, dR = rhs(SimState([n1], R), disc.A, disc.N, p)
        assert dn[0] == pytest.approx((p.b * R - p.d) * n1, rel=1e-14)
        assert dR == pytest.approx(p.theta - p.eta * R - p.b * R * n1, rel=1e-14)


def test_rhs_dimension_mismatch(disc50):
    with pytest.raises(ValueError):
        rhs(SimState(np.zeros(10), 1.0), disc50.A, disc50.N, P)


def test_zero_population_resource_relaxes(disc50):
    R0 = 0.5
    traj = integrate(SimState(np.zeros(50), R0), SolverConfig(RK45Adaptive(1e-10, 1e-12), t_end=20.0, sample_dt=0.5), disc50)
    exact = P.theta / P.eta + (R0 - P.theta / P.eta) * np.exp(-P.eta * traj.times)
    np.testing.assert_allclose(traj.R_series, exact, rtol=1e-8)
    np.testing.assert_array_equal(traj.N_series, 0.0)
    assert mass_balance_residual(traj, P) == 0.0


def test_trajectory_invariants(disc50):
    traj = integrate(fig1_initial(disc50), SolverConfig(RK45Adaptive(), t_end=5.0), disc50)
    assert np.all(np.diff(traj.times) > 0)
    assert len(traj.N_series) == len(traj.N_alpha_series) == len(traj.R_series) == len(traj.times)
    assert traj.times[-1] == pytest.approx(5.0)
    # persisters appear for t > 0
    assert np.all(traj.final.n[disc50.grid.k :] > 0)


def test_rk4_self_convergence(disc50):
    init = fig1_initial(disc50)
    finals = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        tr = integrate(init, SolverConfig(RK4Fixed(dt), t_end=10.0, snapshot_stride=10**6), disc50)
        finals.append(np.concatenate([tr.final.n, [tr.final.R]]))
    e1 = np.max(np.abs(finals[0] - finals[1]))
    e2 = np.max(np.abs(finals[1] - finals[2]))
    assert 12.0 < e1 / e2 < 20.0


def test_nonnegativity_default_parameters():
    disc = Discretization.build(P, K=200)
    for kind in ("no_persisters", "only_persisters"):
        tr = integrate(fig1_initial(disc, kind), SolverConfig(RK45Adaptive(1e-8, 1e-8), t_end=5.0, sample_dt=0.05), disc)
        assert tr.worst_negative >= -1e-9
        assert tr.clip_fraction < 1e-3
        assert all(n.min() >= 0 for _, n in tr.snapshots)


def test_negative_undershoot_aborts():
    p = P.with_(m=1e-4, v0=20.0)
    with pytest.warns(RuntimeWarning):
        disc = Discretization.build(p, K=10, scheme="paper_central")
        disc.A
    n = np.zeros(10)
    n[3] = 1.0
    with pytest.raises(IntegrationError, match="clip tolerance"):
        integrate(SimState(n, 1.0), SolverConfig(RK45Adaptive(), t_end=5.0), disc)


def test_invalid_initial_states(disc50):
    with pytest.raises(IntegrationError):
        SimState(np.full(50, np.nan), 1.0)
    with pytest.raises(ValueError):
        integrate(SimState(-np.ones(50), 1.0), SolverConfig(), disc50)
    with pytest.raises(ValueError):
        integrate(SimState(np.ones(49), 1.0), SolverConfig(), disc50)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        RK4Fixed(0.0)
    with pytest.raises(ValueError):
        RK45Adaptive(rel_tol=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(negativity_clip_tol=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(t_end=0.0)


def test_mass_balance_fine_step(disc50):
    tr = integrate(fig1_initial(disc50), SolverConfig(RK4Fixed(1e-3), t_end=5.0), disc50)
    assert mass_balance_residual(tr, P) < 1e-4 * np.max(tr.N_series)
    with pytest.raises(ValueError):
        mass_balance_residual(integrate(SimState(np.zeros(50), 1.0), SolverConfig(RK4Fixed(1.0), t_end=1.0), disc50), P)


def test_mass_balance_central_scheme_defect():
    # the central scheme leaks mass at O(1/K^2); the residual tracks that defect
    res = []
    for K in (25, 50, 100):
        d = Discretization.build(P, K=K, scheme="paper_central")
        tr = integrate(fig1_initial(d), SolverConfig(RK4Fixed(1e-4), t_end=1.0), d)
        res.append(mass_balance_residual(tr, P))
    ratios = np.array(res[:-1]) / np.array(res[1:])
    np.testing.assert_allclose(ratios, 4.0, rtol=0.1)


def test_resource_bound(disc50):
    init = fig1_initial(disc50)
    for R0 in (0.0, 2.0, 2 * P.theta / P.eta):
        tr = integrate(SimState(init.n, R0), SolverConfig(RK45Adaptive(), t_end=10.0), disc50)
        assert resource_bound_check(tr, R0, P)
    tr = integrate(SimState(np.zeros(50), 2 * P.theta / P.eta), SolverConfig(RK45Adaptive(), t_end=10.0), disc50)
    assert np.all(np.diff(tr.R_series) < 0)
    assert max(2.0, P.theta / P.eta) == pytest.approx(3.3333333333333335)


def test_resource_bound_detects_violation(disc50):
    tr = integrate(SimState(np.zeros(50), 1.0), SolverConfig(RK45Adaptive(), t_end=1.0), disc50)
    tr.R_series = tr.R_series.copy()
    tr.R_series[-1] = 10.0
    assert not resource_bound_check(tr, 1.0, P)


def test_linearity_at_frozen_resource(disc50):
    rng = np.random.default_rng(11)
    f, g = rng.random(50), rng.random(50)
    R_series = (np.array([0.0, 2.0]), np.array([0.07, 0.07]))
    kw = dict(R_series=R_series, disc=disc50, t_end=1.0, steps=200, tol=1e-13)
    nf = picard_mild_oracle(SimState(f, 0.07), **kw)
    ng = picard_mild_oracle(SimState(g, 0.07), **kw)
    nfg = picard_mild_oracle(SimState(2.0 * f + 3.0 * g, 0.07), **kw)
    assert np.max(np.abs(nfg - 2.0 * nf - 3.0 * ng)) <= 1e-8 * np.max(np.abs(nfg))
    # the frozen-R fixed point is exp(L t) f, up to quadrature error
    ref = expm(disc50.L(0.07).entries) @ f
    assert np.max(np.abs(nf - ref)) <= 1e-5 * np.max(np.abs(ref))


def test_picard_zero_resource_is_semigroup(disc50):
    n0 = fig1_initial(disc50).n
    out, info = picard_mild_oracle(
        SimState(n0, 0.0), (np.array([0.0, 1.0]), np.zeros(2)), disc50, t_end=1.0, steps=50, full_output=True
    )
    assert info["iterations"] == 1
    np.testing.assert_allclose(out, expm(disc50.A.entries) @ n0, rtol=1e-10, atol=1e-14)


def test_picard_zero_initial(disc50):
    out = picard_mild_oracle(SimState(np.zeros(50), 1.0), (np.array([0.0, 1.0]), np.ones(2)), disc50, t_end=1.0, steps=20)
    np.testing.assert_array_equal(out, 0.0)


def test_picard_iteration_cap(disc50):
    n0 = fig1_initial(disc50).n
    with pytest.raises(ConvergenceError) as exc:
        picard_mild_oracle(SimState(n0, 3.0), (np.array([0.0, 1.0]), np.full(2, 3.0)), disc50, t_end=1.0, iterations=2, steps=50)
    assert exc.value.last_increment > 0
    with pytest.raises(ValueError):
        picard_mild_oracle(SimState(n0, 3.0), (np.array([0.0, 0.5]), np.full(2, 3.0)), disc50, t_end=1.0)


def test_steady_state_short_run_none(disc50):
    tr = integrate(fig1_initial(disc50), SolverConfig(RK45Adaptive(), t_end=0.1), disc50)
    assert steady_state_detect(tr) is None
    with pytest.raises(ValueError):
        steady_state_detect(tr, window=1.0)


def test_steady_state_washout_detected():
    p = P.with_(theta=0.01)
    disc = Discretization.build(p, K=20)
    tr = integrate(SimState(np.zeros(20), 0.2), SolverConfig(RK45Adaptive(1e-10, 1e-12), t_end=120.0, sample_dt=0.5), disc)
    found = steady_state_detect(tr)
    assert found is not None
    np.testing.assert_array_equal(found[0], 0.0)
    assert found[1] == pytest.approx(p.theta / p.eta, rel=1e-8)


def test_steady_state_positive_detected():
    # tight tolerances: at rel_tol 1e-6 the stiff modes carry tolerance-level
    # noise that keeps ||dn/dt|| / ||n|| near 1e-5 indefinitely
    disc = Discretization.build(P, K=40)
    tr = integrate(fig1_initial(disc), SolverConfig(RK45Adaptive(1e-11, 1e-13), t_end=900.0, sample_dt=0.5), disc)
    found = steady_state_detect(tr)
    assert found is not None
    assert found[1] == pytest.approx(P.d / P.b, rel=1e-6)


def test_csv_exports_reproducible(tmp_path, disc50):
    init = fig1_initial(disc50)
    cfg = SolverConfig(RK45Adaptive(), t_end=2.0, sample_dt=0.5, snapshot_stride=2)
    for name in ("one", "two"):
        tr = integrate(init, cfg, disc50)
        write_trajectory_csv(tr, tmp_path / f"{name}.csv")
        write_snapshots_csv(tr, tmp_path / f"{name}_snap.csv", exact=True)
    assert (tmp_path / "one.csv").read_bytes() == (tmp_path / "two.csv").read_bytes()
    assert (tmp_path / "one_snap.csv").read_bytes() == (tmp_path / "two_snap.csv").read_bytes()
    raw = (tmp_path / "one.csv").read_bytes()
    assert raw.startswith(b"t,N,N_alpha,R\n") and b"\r" not in raw
    snap = np.loadtxt(tmp_path / "one_snap.csv", delimiter=",", skiprows=1)
    assert snap.shape[1] == 51
    header = (tmp_path / "one_snap.csv").read_text().splitlines()[0].split(",")
    assert header[:2] == ["t", "x_1"] and header[-1] == "x_50"
    assert math.isclose(snap[-1, 0], 2.0)
