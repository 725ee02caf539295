"""Dense matrix assembly of the linear operators on a phenotype grid.

``A`` is advection-diffusion with death of active cells, ``N`` the birth
operator, in which a fraction ``mu`` of offspring are redistributed through the
kernel, and ``L(R) = A + b R N`` the linearized generator at resource ``R``.

Two advection discretizations are available:

``flux_form`` (default)
    conservative face fluxes ``F_{i+1/2} = v(x_{i+1/2}) (n_i + n_{i+1}) / 2``
    with zero boundary fluxes. Column sums of ``A`` are exactly ``-d chi``.
``paper_central``
    central differences of ``v n`` with ghost cells ``n_0 = n_1``,
    ``n_{K+1} = n_K``; the ghost velocities are taken at the reflected
    midpoints ``-x_1`` and ``2 - x_K``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import AssemblyError, ParameterError
from .model import Grid, ModelParams, kernel_l2_norm_sq, velocity_sup_norm

__all__ = [
    "SCHEMES",
    "NonMetzlerWarning",
    "OperatorMatrix",
    "assemble_A",
    "assemble_N",
    "assemble_L",
    "adjoint",
    "column_sum_residual",
    "is_metzler",
    "n_operator_bound",
    "dump_matrix",
    "Discretization",
]

SCHEMES = ("flux_form", "paper_central")


class NonMetzlerWarning(RuntimeWarning):
    """Advection beats diffusion on some face, so off-diagonal entries go negative."""


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """An assembled K x K operator together with how it was built.

    ``kind`` is ``"A"``, ``"N"`` or ``"L"``; ``R`` is set for L-kind matrices.
    ``transposed`` marks the discrete adjoint.
    """

    entries: np.ndarray
    kind: str
    scheme: str | None
    grid: Grid
    params: ModelParams
    R: float | None = None
    transposed: bool = False

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.shape != (self.grid.K, self.grid.K):
            raise AssemblyError(f"entries have shape {entries.shape}, grid needs {(self.grid.K,) * 2}")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def K(self) -> int:
        return self.grid.K

    def __matmul__(self, x):
        return self.entries @ x

    def inf_norm(self) -> float:
        return float(np.max(np.sum(np.abs(self.entries), axis=1)))


def _check_scheme(scheme: str) -> str:
    if scheme not in SCHEMES:
        raise AssemblyError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    return scheme


def _diffusion(K: int, m: float) -> np.ndarray:
    D = np.zeros((K, K))
    idx = np.arange(K)
    D[idx, idx] = -2.0
    D[idx[:-1], idx[:-1] + 1] = 1.0
    D[idx[1:], idx[1:] - 1] = 1.0
    # reflected neighbours from the Neumann ghost cells
    D[0, 0] += 1.0
    D[K - 1, K - 1] += 1.0
    return m * K * K * D


def _advection_flux(grid: Grid, v) -> np.ndarray:
    K = grid.K
    Adv = np.zeros((K, K))
    if K == 1:
        return Adv
    vf = 0.5 * K * np.asarray(v.evaluate(grid.faces), dtype=float)
    i = np.arange(K - 1)
    # face between i and i+1 drains cell i and feeds cell i+1
    Adv[i, i] -= vf
    Adv[i, i + 1] -= vf
    Adv[i + 1, i] += vf
    Adv[i + 1, i + 1] += vf
    return Adv


def _advection_central(grid: Grid, v) -> np.ndarray:
    K = grid.K
    x = grid.midpoints
    ghost_x = np.concatenate([[-x[0]], x, [2.0 - x[-1]]])
    vx = np.asarray(v.evaluate(ghost_x), dtype=float)  # vx[j] = v at extended index j
    half = 0.5 * K
    Adv = np.zeros((K, K))
    for i in range(K):
        # -(v_{i+1} n_{i+1} - v_{i-1} n_{i-1}) K/2, ghosts fold back onto n_1 / n_K
        right = i + 1 if i + 1 < K else K - 1
        left = i - 1 if i - 1 >= 0 else 0
        Adv[i, right] -= half * vx[i + 2]
        Adv[i, left] += half * vx[i]
    return Adv


def is_metzler(op: OperatorMatrix | np.ndarray, tol: float = 0.0) -> bool:
    M = op.entries if isinstance(op, OperatorMatrix) else np.asarray(op)
    off = M - np.diag(np.diag(M))
    return bool(np.min(off) >= -tol)


def assemble_A(grid: Grid, params: ModelParams, v, scheme: str = "flux_form") -> OperatorMatrix:
    """Discretize ``-d chi n - (v n)' + m n''`` with Neumann boundaries."""
    _check_scheme(scheme)
    if grid.K > 1 and abs(grid.k / grid.K - params.alpha) > 1e-9 and grid.k < grid.K:
        raise AssemblyError(
            f"grid cutoff k/K={grid.k}/{grid.K} does not match alpha={params.alpha}"
        )
    entries = _diffusion(grid.K, params.m)
    entries += _advection_flux(grid, v) if scheme == "flux_form" else _advection_central(grid, v)
    entries -= params.d * np.diag(grid.chi)
    if not is_metzler(entries):
        warnings.warn(
            f"{scheme} operator is not Metzler (m*K={params.m * grid.K:.3g}, "
            f"||v||_inf/2={velocity_sup_norm(v) / 2:.3g}); positivity is not guaranteed",
            NonMetzlerWarning,
            stacklevel=2,
        )
    return OperatorMatrix(entries, "A", scheme, grid, params)


def assemble_N(grid: Grid, params: ModelParams, kernel) -> OperatorMatrix:
    """N[i, j] = (1 - mu) delta_ij chi_j + mu chi_j P[i, j] / K."""
    try:
        P = kernel.matrix(grid)
    except ParameterError as exc:
        raise AssemblyError(str(exc)) from exc
    chi = grid.chi
    entries = (1.0 - params.mu) * np.diag(chi) + params.mu * P * chi[None, :] / grid.K
    return OperatorMatrix(entries, "N", None, grid, params)


def assemble_L(
    grid: Grid, params: ModelParams, v, kernel, R: float, scheme: str = "flux_form"
) -> OperatorMatrix:
    if R < 0:
        raise ValueError(f"resource level must be nonnegative, got R={R}")
    A = assemble_A(grid, params, v, scheme)
    N = assemble_N(grid, params, kernel)
    return _combine(A, N, R)


def _combine(A: OperatorMatrix, N: OperatorMatrix, R: float) -> OperatorMatrix:
    if R < 0:
        raise ValueError(f"resource level must be nonnegative, got R={R}")
    if A.grid != N.grid:
        raise AssemblyError("A and N were assembled on different grids")
    R = float(R)
    entries = A.entries + (A.params.b * R) * N.entries if R else np.array(A.entries)
    return OperatorMatrix(entries, "L", A.scheme, A.grid, A.params, R=R)


def adjoint(op: OperatorMatrix) -> OperatorMatrix:
    """Discrete L2 adjoint; with equal quadrature weights this is the transpose."""
    return OperatorMatrix(
        op.entries.T, op.kind, op.scheme, op.grid, op.params, R=op.R, transposed=not op.transposed
    )


def column_sum_residual(op: OperatorMatrix, R: float | None = None) -> float:
    """max_j |sum_i L[i, j] - (b R - d) chi_j|.

    For flux-form operators this vanishes to rounding at every ``R``; it is the
    discrete statement that total biomass changes at rate (bR - d) N_alpha.
    """
    if R is None:
        R = op.R if op.R is not None else 0.0
    expected = (op.params.b * R - op.params.d) * op.grid.chi
    return float(np.max(np.abs(op.entries.sum(axis=0) - expected)))


def n_operator_bound(params: ModelParams, kernel, grid: Grid) -> float:
    """(1 - mu) + mu sqrt(C_p), an upper bound for the 2-norm of N."""
    return (1.0 - params.mu) + params.mu * np.sqrt(kernel_l2_norm_sq(kernel, grid))


def dump_matrix(op: OperatorMatrix | np.ndarray, path) -> None:
    """Write a matrix as row-major CSV at full precision."""
    M = op.entries if isinstance(op, OperatorMatrix) else np.asarray(op)
    np.savetxt(path, M, delimiter=",", fmt="%.17g")


class Discretization:
    """Everything needed to assemble ``L(R)`` for one model on one grid.

    ``A`` and ``N`` are assembled once and shared; instances are read-only in
    practice and safe to hand to concurrent workers.
    """

    def __init__(self, grid: Grid, params: ModelParams, velocity, kernel, scheme: str = "flux_form"):
        self.grid = grid
        self.params = params
        self.velocity = velocity
        self.kernel = kernel
        self.scheme = _check_scheme(scheme)

    @classmethod
    def build(cls, params: ModelParams, K: int = 200, scheme: str = "flux_form", kernel=None, velocity=None):
        """Convenience constructor: grid from ``alpha``, cubic velocity, uniform kernel."""
        from .model import CubicVelocity, UniformKernel

        grid = Grid.from_alpha(K, params.alpha)
        return cls(
            grid,
            params,
            velocity if velocity is not None else CubicVelocity.from_params(params),
            kernel if kernel is not None else UniformKernel(),
            scheme,
        )

    @cached_property
    def A(self) -> OperatorMatrix:
        return assemble_A(self.grid, self.params, self.velocity, self.scheme)

    @cached_property
    def N(self) -> OperatorMatrix:
        return assemble_N(self.grid, self.params, self.kernel)

    def L(self, R: float) -> OperatorMatrix:
        return _combine(self.A, self.N, R)

    def with_params(self, params: ModelParams) -> "Discretization":
        grid = self.grid
        if abs(params.alpha - self.params.alpha) > 0:
            grid = Grid.from_alpha(self.grid.K, params.alpha)
        velocity = self.velocity
        if getattr(velocity, "kind", None) == "cubic":
            velocity = type(velocity).from_params(params)
        return Discretization(grid, params, velocity, self.kernel, self.scheme)

    def __repr__(self) -> str:
        return (
            f"Discretization(K={self.grid.K}, k={self.grid.k}, scheme={self.scheme!r}, "
            f"velocity={getattr(self.velocity, 'kind', '?')}, kernel={getattr(self.kernel, 'kind', '?')})"
        )
