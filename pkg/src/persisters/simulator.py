"""Time integration of the semi-discrete (K + 1)-dimensional system.

State is the compartment vector ``n`` together with the resource ``R``::

    dn/dt = A n + b R N n
    dR/dt = theta - eta R - b R N_alpha,   N_alpha = (1/K) sum_{i<=k} n_i

Besides the integrators this module holds the trajectory diagnostics (mass
balance, resource box, steady-state detection) and an independent oracle that
iterates the variation-of-constants formula with dense matrix exponentials.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import RK45
from scipy.linalg import expm

from .errors import ConvergenceError, IntegrationError
from .model import ModelParams
from .operators import Discretization, OperatorMatrix

log = logging.getLogger(__name__)

__all__ = [
    "SimState",
    "RK4Fixed",
    "RK45Adaptive",
    "SolverConfig",
    "Trajectory",
    "rhs",
    "integrate",
    "mass_balance_residual",
    "resource_bound_check",
    "picard_mild_oracle",
    "steady_state_detect",
    "write_trajectory_csv",
    "write_snapshots_csv",
]


@dataclass(frozen=True)
class SimState:
    n: np.ndarray
    R: float
    t: float = 0.0

    def __post_init__(self):
        n = np.array(self.n, dtype=float)
        if n.ndim != 1:
            raise ValueError("n must be a vector")
        if not (np.all(np.isfinite(n)) and math.isfinite(self.R) and math.isfinite(self.t)):
            raise IntegrationError("state has non-finite entries")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "R", float(self.R))
        object.__setattr__(self, "t", float(self.t))


@dataclass(frozen=True)
class RK4Fixed:
    dt: float
    name = "rk4_fixed"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")


@dataclass(frozen=True)
class RK45Adaptive:
    rel_tol: float = 1e-6
    abs_tol: float = 1e-9
    dt_max: float = math.inf
    name = "rk45_adaptive"

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0 and self.dt_max > 0):
            raise ValueError("tolerances and dt_max must be positive")


@dataclass(frozen=True)
class SolverConfig:
    """How to integrate.

    ``sample_dt`` sets a uniform output grid (dense output for the adaptive
    method, every ``round(sample_dt/dt)`` steps for the fixed one); ``None``
    records every step. ``snapshot_stride`` counts samples between stored full
    ``n`` vectors. Negative entries down to ``negativity_clip_tol * ||n||_inf``
    are clipped to zero and counted; anything below that aborts the run.
    """

    method: RK4Fixed | RK45Adaptive = field(default_factory=RK45Adaptive)
    t_end: float = 300.0
    snapshot_stride: int = 100
    negativity_clip_tol: float = 1e-12
    sample_dt: float | None = None

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")
        if self.negativity_clip_tol < 0:
            raise ValueError("negativity_clip_tol must be >= 0")
        if self.sample_dt is not None and not self.sample_dt > 0:
            raise ValueError("sample_dt must be positive")


@dataclass
class Trajectory:
    times: np.ndarray
    N_series: np.ndarray
    N_alpha_series: np.ndarray
    R_series: np.ndarray
    dn_rel: np.ndarray  # ||dn/dt||_inf / max(||n||_inf, 1) per sample
    dR_rel: np.ndarray  # |dR/dt| / max(R, 1) per sample
    snapshots: list[tuple[float, np.ndarray]]
    final: SimState
    clip_count: int = 0
    entry_samples: int = 0
    worst_negative: float = 0.0  # most negative n_i / ||n||_inf seen before clipping
    steps: int = 0
    rhs_evals: int = 0
    mass_balance_residuals: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def clip_fraction(self) -> float:
        return self.clip_count / self.entry_samples if self.entry_samples else 0.0


def rhs(state: SimState, A: OperatorMatrix, N: OperatorMatrix, params: ModelParams):
    """Time derivative ``(dn, dR)`` at ``state``."""
    n = np.asarray(state.n, dtype=float)
    if n.shape != (A.K,) or A.grid != N.grid:
        raise ValueError(f"state of length {n.shape} does not match operators on K={A.K}")
    R = state.R
    dn = A.entries @ n + (params.b * R) * (N.entries @ n)
    dR = params.theta - params.eta * R - params.b * R * (np.sum(n[: A.grid.k]) / A.K)
    return dn, float(dR)


def _vector_field(disc: Discretization):
    A = disc.A.entries
    N = disc.N.entries
    p = disc.params
    K, k = disc.grid.K, disc.grid.k
    b, theta, eta = p.b, p.theta, p.eta

    def f(t, y):
        n = y[:K]
        R = y[K]
        out = np.empty(K + 1)
        np.dot(A, n, out=out[:K])
        out[:K] += (b * R) * (N @ n)
        out[K] = theta - eta * R - b * R * (n[:k].sum() / K)
        return out

    return f


class _Recorder:
    def __init__(self, K: int, k: int, stride: int):
        self.K, self.k, self.stride = K, k, stride
        self.t, self.N, self.Na, self.R, self.dn, self.dR = [], [], [], [], [], []
        self.snapshots: list[tuple[float, np.ndarray]] = []

    def add(self, t: float, y: np.ndarray, dy: np.ndarray, force_snapshot: bool = False):
        n = y[: self.K]
        idx = len(self.t)
        self.t.append(t)
        self.N.append(n.sum() / self.K)
        self.Na.append(n[: self.k].sum() / self.K)
        self.R.append(y[self.K])
        self.dn.append(np.max(np.abs(dy[: self.K])) / max(np.max(np.abs(n)), 1.0))
        self.dR.append(abs(dy[self.K]) / max(abs(y[self.K]), 1.0))
        if idx % self.stride == 0 or force_snapshot:
            self.snapshots.append((t, n.copy()))


class _Clipper:
    def __init__(self, K: int, tol: float):
        self.K, self.tol = K, tol
        self.count = 0
        self.checked = 0
        self.worst = 0.0

    def apply(self, t: float, y: np.ndarray) -> bool:
        """Clip tiny negatives in place; returns True when ``y`` was modified."""
        n = y[: self.K]
        if not np.all(np.isfinite(y)):
            raise IntegrationError(f"non-finite state at t={t:.6g}")
        self.checked += self.K
        lo = float(n.min())
        if lo >= 0.0:
            return False
        scale = max(float(np.max(np.abs(n))), np.finfo(float).tiny)
        self.worst = min(self.worst, lo / scale)
        if lo < -self.tol * scale:
            raise IntegrationError(
                f"negative density {lo:.3e} at t={t:.6g} exceeds clip tolerance "
                f"{self.tol:.1e} * ||n||_inf = {self.tol * scale:.3e}"
            )
        neg = n < 0.0
        self.count += int(np.count_nonzero(neg))
        n[neg] = 0.0
        return True


def integrate(initial: SimState, config: SolverConfig, disc: Discretization, params: ModelParams | None = None) -> Trajectory:
    """Integrate from ``initial`` to ``config.t_end``.

    ``params`` defaults to ``disc.params``; passing a different set is an
    error, because the operators were assembled from it.
    """
    if params is not None and params != disc.params:
        raise ValueError("params differ from those the operators were assembled with")
    params = disc.params
    K = disc.grid.K
    if initial.n.shape != (K,):
        raise ValueError(f"initial state has {initial.n.size} compartments, grid has {K}")
    if np.any(initial.n < 0) or initial.R < 0:
        raise ValueError("initial state must be nonnegative")

    f = _vector_field(disc)
    y0 = np.concatenate([initial.n, [initial.R]])
    t0 = initial.t
    t_end = t0 + config.t_end
    rec = _Recorder(K, disc.grid.k, config.snapshot_stride)
    clip = _Clipper(K, config.negativity_clip_tol)
    rec.add(t0, y0, f(t0, y0))

    method = config.method
    if isinstance(method, RK4Fixed):
        y, steps, nfev = _run_rk4(f, y0, t0, t_end, method.dt, config.sample_dt, rec, clip)
    elif isinstance(method, RK45Adaptive):
        y, steps, nfev = _run_rk45(f, y0, t0, t_end, method, config.sample_dt, rec, clip)
    else:
        raise TypeError(f"unknown integration method {method!r}")

    if not rec.snapshots or rec.snapshots[-1][0] != rec.t[-1]:
        rec.snapshots.append((rec.t[-1], y[:K].copy()))
    traj = Trajectory(
        times=np.array(rec.t),
        N_series=np.array(rec.N),
        N_alpha_series=np.array(rec.Na),
        R_series=np.array(rec.R),
        dn_rel=np.array(rec.dn),
        dR_rel=np.array(rec.dR),
        snapshots=rec.snapshots,
        final=SimState(y[:K].copy(), float(y[K]), rec.t[-1]),
        clip_count=clip.count,
        entry_samples=clip.checked,
        worst_negative=clip.worst,
        steps=steps,
        rhs_evals=nfev,
    )
    traj.mass_balance_residuals = _mass_balance_series(traj, params)
    if clip.count:
        log.info("clipped %d tiny negative entries (%.2e of entry-samples)", clip.count, traj.clip_fraction)
    return traj


def _run_rk4(f, y0, t0, t_end, dt, sample_dt, rec: _Recorder, clip: _Clipper):
    nsteps = max(int(round((t_end - t0) / dt)), 1)
    h = (t_end - t0) / nsteps
    stride = 1 if sample_dt is None else max(int(round(sample_dt / h)), 1)
    y = y0.copy()
    nfev = 0
    for j in range(1, nsteps + 1):
        t = t0 + (j - 1) * h
        k1 = f(t, y)
        k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = f(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        nfev += 4
        clip.apply(t + h, y)
        if j % stride == 0 or j == nsteps:
            rec.add(t0 + j * h, y, f(t0 + j * h, y))
    return y, nsteps, nfev


def _run_rk45(f, y0, t0, t_end, method: RK45Adaptive, sample_dt, rec: _Recorder, clip: _Clipper):
    solver = RK45(
        f, t0, y0, t_end, rtol=method.rel_tol, atol=method.abs_tol, max_step=method.dt_max
    )
    steps = 0
    next_sample = None
    if sample_dt is not None:
        nsamples = max(int(round((t_end - t0) / sample_dt)), 1)
        sample_times = t0 + (t_end - t0) * np.arange(1, nsamples + 1) / nsamples
        next_sample = 0
    while solver.status == "running":
        t_prev = solver.t
        msg = solver.step()
        if solver.status == "failed":
            raise IntegrationError(f"RK45 failed at t={solver.t:.6g}: {msg}")
        steps += 1
        if clip.apply(solver.t, solver.y):
            # keep the FSAL derivative consistent with the clipped state
            solver.f = solver.fun(solver.t, solver.y)
        if sample_dt is not None:
            hi = np.searchsorted(sample_times, solver.t, side="right")
            if hi > next_sample:
                dense = solver.dense_output()
                for ts in sample_times[next_sample:hi]:
                    if ts == solver.t:
                        ys = solver.y.copy()
                    else:
                        ys = dense(ts)
                        clip.apply(ts, ys)
                    rec.add(float(ts), ys, f(ts, ys))
                next_sample = hi
        if sample_dt is None:
            rec.add(solver.t, solver.y, solver.f)
        if solver.t <= t_prev:
            raise IntegrationError(f"RK45 made no progress at t={solver.t:.6g}")
    return solver.y.copy(), steps, solver.nfev


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------


def _mass_balance_series(traj: Trajectory, params: ModelParams) -> np.ndarray:
    t = traj.times
    if t.size < 3:
        return np.zeros(0)
    N = traj.N_series
    h0 = t[1:-1] - t[:-2]
    h1 = t[2:] - t[1:-1]
    # second-order central difference on a possibly nonuniform grid
    dN = (
        -h1 / (h0 * (h0 + h1)) * N[:-2]
        + (h1 - h0) / (h0 * h1) * N[1:-1]
        + h0 / (h1 * (h0 + h1)) * N[2:]
    )
    model = (params.b * traj.R_series[1:-1] - params.d) * traj.N_alpha_series[1:-1]
    return np.abs(dN - model)


def mass_balance_residual(traj: Trajectory, params: ModelParams, t_min: float | None = None) -> float:
    """max over interior samples of |dN/dt - (b R - d) N_alpha|.

    ``dN/dt`` is estimated by central differences on the sampled ``N``, so the
    result mixes integration error with sampling error. ``t_min`` restricts
    the maximum to samples with ``t >= t_min``.
    """
    if len(traj.times) < 3:
        raise ValueError("need at least 3 samples")
    res = _mass_balance_series(traj, params)
    if t_min is not None:
        res = res[traj.times[1:-1] >= t_min]
    return float(res.max()) if res.size else 0.0


def resource_bound_check(traj: Trajectory, R0: float, params: ModelParams) -> bool:
    """All resource samples within [0, max(R0, theta/eta)] up to a relative 1e-8 slack."""
    upper = max(R0, params.theta / params.eta)
    tol = 1e-8 * upper
    R = traj.R_series
    return bool(np.all(R >= -tol) and np.all(R <= upper + tol))


def steady_state_detect(traj: Trajectory, window: float | None = None, tol: float = 1e-8):
    """Final ``(n, R)`` if the trajectory has been stationary over the trailing window.

    Stationarity means both relative derivative norms stay below ``tol`` at
    every sample of the last ``window`` time units (default: 5% of the run).
    """
    t = traj.times
    span = t[-1] - t[0]
    if window is None:
        window = 0.05 * span
    if window > span:
        raise ValueError(f"window {window} longer than trajectory span {span}")
    tail = t >= t[-1] - window
    worst = max(float(np.max(traj.dn_rel[tail])), float(np.max(traj.dR_rel[tail])))
    if worst < tol:
        return traj.final.n.copy(), traj.final.R
    return None


# --------------------------------------------------------------------------
# mild-solution oracle
# --------------------------------------------------------------------------


def _exponential_weights(A: np.ndarray, h: float):
    """exp(hA) and the product-trapezoid weights for a linearly interpolated source.

    Returns ``(E, W0, W1)`` with

        int_0^h exp(A (h - s)) g(s) ds = W0 g(0) + W1 g(h)

    exactly whenever ``g`` is linear on [0, h]. One exponential of a 3K block
    matrix gives both integrals.
    """
    K = A.shape[0]
    Z = np.zeros((3 * K, 3 * K))
    Z[:K, :K] = h * A
    Z[:K, K : 2 * K] = h * np.eye(K)
    Z[K : 2 * K, 2 * K :] = np.eye(K)
    big = expm(Z)
    E = big[:K, :K]
    I0 = big[:K, K : 2 * K]  # int_0^h e^{A(h-s)} ds
    I1 = big[:K, 2 * K :]  # int_0^h e^{A(h-s)} (s/h) ds
    return E, I0 - I1, I1


def picard_mild_oracle(
    initial: SimState,
    R_series,
    disc: Discretization,
    t_end: float,
    iterations: int = 100,
    steps: int = 1000,
    tol: float = 1e-8,
    full_output: bool = False,
):
    """n(t_end) from fixed-point iteration of the variation-of-constants formula.

    ``R_series`` is ``(times, values)`` from a previous run; the resource is
    frozen along it (linear interpolation onto ``steps`` uniform nodes) and

        n(t) = exp(A t) n0 + int_0^t exp(A (t - s)) b R(s) N n(s) ds

    is iterated starting from ``exp(A t) n0`` until successive iterates differ
    by less than ``tol`` in max norm over all nodes. The integral uses the
    product trapezoid rule: the source ``b R N n`` is interpolated linearly on
    each panel, the semigroup factor is integrated exactly; this keeps the
    quadrature accurate for the stiff diffusion modes.

    With ``full_output`` also returns ``{"iterations", "increment"}``.
    """
    times, values = (np.asarray(a, dtype=float) for a in R_series)
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    if times[0] > initial.t + 1e-12 or times[-1] < initial.t + t_end - 1e-9 * max(t_end, 1.0):
        raise ValueError("R_series does not cover [t0, t0 + t_end]")
    A = disc.A.entries
    N = disc.N.entries
    b = disc.params.b
    h = t_end / steps
    nodes = initial.t + h * np.arange(steps + 1)
    R = np.interp(nodes, times, values)
    E, W0, W1 = _exponential_weights(A, h)

    n0 = initial.n
    homog = np.empty((steps + 1, n0.size))
    homog[0] = n0
    for j in range(steps):
        homog[j + 1] = E @ homog[j]

    current = homog
    increment = math.inf
    it = 0
    while it < iterations:
        it += 1
        g = (b * R)[:, None] * (current @ N.T)
        src_left = g[:-1] @ W0.T
        src_right = g[1:] @ W1.T
        new = np.empty_like(current)
        new[0] = n0
        for j in range(steps):
            new[j + 1] = E @ new[j] + src_left[j] + src_right[j]
        increment = float(np.max(np.abs(new - current)))
        current = new
        if increment < tol:
            break
    else:
        raise ConvergenceError(
            f"Picard iteration did not converge in {iterations} iterations "
            f"(last increment {increment:.3e})",
            last_increment=increment,
        )
    out = current[-1].copy()
    if full_output:
        return out, {"iterations": it, "increment": increment}
    return out


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------


def _fmt(exact: bool):
    return (lambda x: f"{x:.17g}") if exact else (lambda x: f"{x:.10g}")


def write_trajectory_csv(traj: Trajectory, path, exact: bool = False) -> None:
    fmt = _fmt(exact)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "N", "N_alpha", "R"])
        for row in zip(traj.times, traj.N_series, traj.N_alpha_series, traj.R_series):
            w.writerow([fmt(float(v)) for v in row])


def write_snapshots_csv(traj: Trajectory, path, exact: bool = False) -> None:
    fmt = _fmt(exact)
    K = traj.final.n.size
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x_{i}" for i in range(1, K + 1)])
        for t, n in traj.snapshots:
            w.writerow([fmt(float(t))] + [fmt(float(v)) for v in n])
