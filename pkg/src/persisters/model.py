"""Model parameters, velocity fields, redistribution kernels and the phenotype grid.

Phenotype (expression level) lives on the unit interval. Cells with expression
below the persister cutoff ``alpha`` grow and die; cells above it are dormant.
Everything the discretized operators need is defined here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import GridError, ParameterError

__all__ = [
    "ModelParams",
    "FIG1_PARAMS",
    "validate_params",
    "CubicVelocity",
    "TabulatedVelocity",
    "eval_velocity",
    "velocity_sup_norm",
    "quasi_contraction_bound",
    "UniformKernel",
    "MatrixKernel",
    "kernel_l2_norm_sq",
    "Grid",
]


@dataclass(frozen=True)
class ModelParams:
    """Scalar rates and structural parameters of the chemostat model.

    Construction does not validate; call :func:`validate_params` (the config
    loader always does). Degenerate values such as ``m = 0`` stay constructible
    so hand-reducible test cases can be assembled.
    """

    b: float  # growth per unit resource
    d: float  # death rate of active cells
    theta: float  # resource inflow
    eta: float  # resource loss
    m: float  # phenotypic diffusion
    mu: float  # switching probability at birth
    alpha: float  # persister cutoff
    gamma: float  # homeostatic point
    v0: float = 1.0  # cubic velocity amplitude

    @property
    def washout_resource(self) -> float:
        return self.theta / self.eta

    @property
    def threshold_resource(self) -> float:
        return self.d / self.b

    def to_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)


#: Parameter set of the two-panel heatmap experiment (uniform kernel).
FIG1_PARAMS = ModelParams(
    b=0.6, d=0.03, theta=1.0, eta=0.3, m=1e-2, mu=0.4, alpha=0.8, gamma=0.6, v0=1.0
)


def validate_params(p: ModelParams) -> ModelParams:
    """Return ``p`` unchanged if it satisfies the standing assumptions.

    Raises :class:`ParameterError` naming the first violated constraint.
    """
    for name in ("b", "d", "theta", "eta", "m", "mu", "alpha", "gamma", "v0"):
        value = getattr(p, name)
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ParameterError(name, f"{name} must be a finite number")
    for name in ("b", "d", "theta", "eta", "m"):
        if getattr(p, name) <= 0:
            raise ParameterError(name, f"{name} must be positive")
    if not 0.0 <= p.mu <= 1.0:
        raise ParameterError("mu", "mu out of [0,1]")
    if not 0.0 < p.alpha < 1.0:
        raise ParameterError("alpha", "alpha out of (0,1)")
    if not 0.0 < p.gamma < 1.0:
        raise ParameterError("gamma", "gamma out of (0,1)")
    return p


# --------------------------------------------------------------------------
# velocity fields
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CubicVelocity:
    """v(x) = v0 * x * (x - gamma) * (x - 1)."""

    v0: float
    gamma: float

    kind = "cubic"

    def evaluate(self, x):
        # No domain check: ghost points outside [0, 1] use the polynomial itself.
        x = np.asarray(x, dtype=float)
        return self.v0 * x * (x - self.gamma) * (x - 1.0)

    @classmethod
    def from_params(cls, p: ModelParams) -> "CubicVelocity":
        return cls(v0=p.v0, gamma=p.gamma)


@dataclass(frozen=True)
class TabulatedVelocity:
    """Piecewise-linear velocity through tabulated nodes covering [0, 1].

    Outside [0, 1] the field is continued oddly about the nearest endpoint,
    v(-x) = -v(x) and v(1 + x) = -v(1 - x), consistent with v(0) = v(1) = 0.
    Only the endpoint zeros are validated; uniqueness of the interior zero is
    not required.
    """

    nodes: np.ndarray
    values: np.ndarray

    kind = "tabulated"

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        values = np.array(self.values, dtype=float)
        if nodes.ndim != 1 or nodes.shape != values.shape or nodes.size < 2:
            raise ParameterError("velocity", "tabulated velocity needs matching 1-d node/value arrays")
        if np.any(np.diff(nodes) <= 0):
            raise ParameterError("velocity", "tabulated velocity nodes must be strictly increasing")
        if abs(nodes[0]) > 1e-12 or abs(nodes[-1] - 1.0) > 1e-12:
            raise ParameterError("velocity", "tabulated velocity nodes must span [0, 1]")
        if abs(values[0]) > 1e-12 or abs(values[-1]) > 1e-12:
            raise ParameterError("velocity", "tabulated velocity must vanish at x=0 and x=1")
        if not np.all(np.isfinite(values)):
            raise ParameterError("velocity", "tabulated velocity values must be finite")
        nodes.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)

    @classmethod
    def on_grid(cls, grid: "Grid", midpoint_values) -> "TabulatedVelocity":
        """Tabulate at the grid midpoints, with zeros appended at both ends."""
        mid = np.asarray(midpoint_values, dtype=float)
        if mid.shape != (grid.K,):
            raise ParameterError("velocity", f"expected {grid.K} midpoint values, got {mid.shape}")
        nodes = np.concatenate([[0.0], grid.midpoints, [1.0]])
        return cls(nodes, np.concatenate([[0.0], mid, [0.0]]))

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        sign = np.where((x < 0.0) | (x > 1.0), -1.0, 1.0)
        folded = np.where(x < 0.0, -x, np.where(x > 1.0, 2.0 - x, x))
        return sign * np.interp(folded, self.nodes, self.values)


def eval_velocity(v, x):
    """Velocity at phenotype ``x`` (scalar or array) in [0, 1]."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0.0) or np.any(xa > 1.0) or np.any(np.isnan(xa)):
        raise ValueError(f"phenotype coordinate outside [0,1]: {x!r}")
    out = v.evaluate(xa)
    return float(out) if out.ndim == 0 else out


def velocity_sup_norm(v, samples: int = 10_001) -> float:
    """max |v(x)| over [0, 1]: dense sampling, then a bounded local refinement."""
    xs = np.linspace(0.0, 1.0, max(int(samples), 10_001))
    vals = np.abs(v.evaluate(xs))
    i = int(np.argmax(vals))
    best = float(vals[i])
    if best == 0.0:
        return 0.0
    lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, xs.size - 1)]
    res = minimize_scalar(
        lambda s: -abs(float(v.evaluate(s))),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-14},
    )
    return max(best, -float(res.fun))


def quasi_contraction_bound(p: ModelParams, v) -> float:
    """Growth constant ||v||_inf^2 / (2 m) of the advection-diffusion-death semigroup."""
    return velocity_sup_norm(v) ** 2 / (2.0 * p.m)


# --------------------------------------------------------------------------
# redistribution kernels
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class UniformKernel:
    """p(x; y) = 1: offspring that switch land uniformly on [0, 1]."""

    kind = "uniform"

    def matrix(self, grid: "Grid") -> np.ndarray:
        return np.ones((grid.K, grid.K))


@dataclass(frozen=True)
class MatrixKernel:
    """Tabulated kernel, ``P[i, j] ~ p(x_i; y_j)``.

    Columns must satisfy the discrete normalization (1/K) sum_i P[i, j] = 1.
    """

    P: np.ndarray
    kind = "matrix"

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
            raise ParameterError("kernel", f"kernel matrix must be square, got shape {P.shape}")
        if not np.all(np.isfinite(P)):
            raise ParameterError("kernel", "kernel matrix has non-finite entries")
        if np.any(P < 0):
            raise ParameterError("kernel", "kernel matrix has negative entries")
        K = P.shape[0]
        colmass = P.sum(axis=0) / K
        worst = float(np.max(np.abs(colmass - 1.0)))
        if worst > 1e-10:
            raise ParameterError(
                "kernel", f"kernel columns not normalized: max |(1/K) sum_i P[i,j] - 1| = {worst:.3e}"
            )
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @classmethod
    def from_density(cls, grid: "Grid", density) -> "MatrixKernel":
        """Sample ``density(x, y)`` at midpoints and normalize columns in the discrete sense."""
        X, Y = np.meshgrid(grid.midpoints, grid.midpoints, indexing="ij")
        P = np.asarray(density(X, Y), dtype=float)
        if np.any(P < 0):
            raise ParameterError("kernel", "kernel density has negative values")
        mass = P.sum(axis=0) / grid.K
        if np.any(mass <= 0):
            raise ParameterError("kernel", "kernel density has a column with zero mass")
        return cls(P / mass[None, :])

    @classmethod
    def from_csv(cls, path) -> "MatrixKernel":
        P = np.loadtxt(path, delimiter=",", ndmin=2)
        return cls(P)

    @property
    def K(self) -> int:
        return self.P.shape[0]

    def matrix(self, grid: "Grid") -> np.ndarray:
        if self.K != grid.K:
            raise ParameterError("kernel", f"kernel is {self.K}x{self.K} but grid has K={grid.K}")
        return np.array(self.P)


def kernel_l2_norm_sq(kernel, grid: "Grid") -> float:
    """Discrete ||p||^2 over the unit square, (1/K^2) sum_ij P[i,j]^2."""
    P = kernel.matrix(grid)
    return float(np.sum(P * P)) / grid.K**2


# --------------------------------------------------------------------------
# grid
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform mesh of ``K`` compartments, the first ``k`` of which are active.

    Use :meth:`from_alpha` for model grids; it enforces ``alpha == k / K``.
    The bare constructor allows ``k == K`` so scalar reductions remain
    expressible.
    """

    K: int
    k: int
    midpoints: np.ndarray = field(init=False, repr=False, compare=False)
    chi: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if isinstance(self.K, bool) or int(self.K) != self.K or self.K < 1:
            raise GridError(f"K must be a positive integer, got {self.K!r}")
        if isinstance(self.k, bool) or int(self.k) != self.k or not 1 <= self.k <= self.K:
            raise GridError(f"k must be an integer in [1, K], got {self.k!r}")
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "k", int(self.k))
        mid = (np.arange(self.K) + 0.5) / self.K
        chi = (np.arange(self.K) < self.k).astype(float)
        mid.setflags(write=False)
        chi.setflags(write=False)
        object.__setattr__(self, "midpoints", mid)
        object.__setattr__(self, "chi", chi)

    @classmethod
    def from_alpha(cls, K: int, alpha: float) -> "Grid":
        if not 0.0 < alpha < 1.0:
            raise GridError("alpha out of (0,1)")
        k_real = alpha * K
        k = int(round(k_real))
        if abs(k_real - k) > 1e-9:
            raise GridError(f"alpha*K not integral (alpha={alpha}, K={K})")
        if not 1 <= k < K:
            raise GridError(f"cutoff index k={k} must satisfy 1 <= k < K={K}")
        return cls(K, k)

    @property
    def weight(self) -> float:
        return 1.0 / self.K

    @property
    def alpha(self) -> float:
        return self.k / self.K

    @property
    def faces(self) -> np.ndarray:
        """Interior faces x_{i+1/2} = i / K, i = 1..K-1."""
        return np.arange(1, self.K) / self.K

    def integrate(self, n) -> float:
        """Midpoint quadrature of a compartment vector over [0, 1]."""
        return float(np.sum(n)) / self.K

    def integrate_active(self, n) -> float:
        return float(np.sum(np.asarray(n)[: self.k])) / self.K
