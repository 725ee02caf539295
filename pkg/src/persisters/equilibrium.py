"""Washout and positive equilibria.

The positive equilibrium sits at R = d/b. Its profile is the principal
eigenvector of L(d/b), scaled so the resource balance holds:
    N_alpha_hat = (theta - eta d/b) / d.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .model import ModelParams
from .operators import Discretization
from .spectral import spectral_bound

__all__ = [
    "Regime",
    "PositiveEquilibrium",
    "EquilibriumSet",
    "classify_regime",
    "compute_equilibria",
    "equilibrium_residual",
    "kernel_alignment",
    "write_profile_csv",
]


class Regime(str, enum.Enum):
    BELOW = "below_threshold"
    AT = "at_threshold"
    ABOVE = "above_threshold"


@dataclass(frozen=True)
class PositiveEquilibrium:
    n: np.ndarray
    R: float
    c: float
    N_alpha: float


@dataclass(frozen=True)
class EquilibriumSet:
    regime: Regime
    washout_n: np.ndarray
    washout_R: float
    positive: PositiveEquilibrium | None = None

    def __post_init__(self):
        if (self.positive is not None) != (self.regime is Regime.ABOVE):
            raise ValueError("a positive equilibrium exists exactly in the above-threshold regime")


def classify_regime(params: ModelParams) -> Regime:
    washout = params.theta / params.eta
    threshold = params.d / params.b
    if abs(washout - threshold) <= 1e-12 * max(washout, threshold):
        return Regime.AT
    return Regime.ABOVE if washout > threshold else Regime.BELOW


def compute_equilibria(disc: Discretization) -> EquilibriumSet:
    """Both nonnegative equilibria for the discretized model.

    At threshold only the washout state is returned.
    """
    p = disc.params
    K = disc.grid.K
    regime = classify_regime(p)
    washout_R = p.theta / p.eta
    positive = None
    if regime is Regime.ABOVE:
        R_hat = p.d / p.b
        rep = spectral_bound(disc.L(R_hat))
        phi = rep.phi
        if not np.all(phi > 0):
            raise NumericalError(
                f"principal eigenvector of L(d/b) is not positive (min entry {phi.min():.3e})"
            )
        N_alpha = (p.theta - p.eta * R_hat) / p.d
        c = N_alpha / disc.grid.integrate_active(phi)
        positive = PositiveEquilibrium(n=c * phi, R=R_hat, c=c, N_alpha=N_alpha)
    return EquilibriumSet(regime, np.zeros(K), washout_R, positive)


def equilibrium_residual(eq: EquilibriumSet, disc: Discretization) -> dict:
    """``{"washout": (pde, resource), "positive": (pde, resource)}`` residuals.

    pde = ||L(R) n||_inf, resource = |theta - eta R - b R N_alpha(n)|.
    """
    p = disc.params
    out = {}
    states = {"washout": (eq.washout_n, eq.washout_R)}
    if eq.positive is not None:
        states["positive"] = (eq.positive.n, eq.positive.R)
    for name, (n, R) in states.items():
        pde = float(np.max(np.abs(disc.L(R).entries @ n)))
        Na = disc.grid.integrate_active(n)
        res = abs(p.theta - p.eta * R - p.b * R * Na)
        out[name] = (pde, res)
    return out


def kernel_alignment(disc: Discretization, phi: np.ndarray, rel_threshold: float = 1e-8):
    """Numerical kernel of L(d/b) via SVD, compared against ``phi``.

    Returns ``(dimension, angle)`` where ``angle`` is the largest angle
    between ``phi`` and a basis vector of the numerical kernel.
    """
    L = disc.L(disc.params.d / disc.params.b).entries
    _, sv, vt = np.linalg.svd(L)
    cut = rel_threshold * np.max(np.sum(np.abs(L), axis=1))
    null = vt[sv <= cut]
    u = phi / np.linalg.norm(phi)
    angles = [float(np.arccos(min(1.0, abs(float(v @ u)) / np.linalg.norm(v)))) for v in null]
    return len(null), (max(angles) if angles else float("nan"))


def write_profile_csv(disc: Discretization, n: np.ndarray, path, exact: bool = False) -> None:
    fmt = (lambda x: f"{x:.17g}") if exact else (lambda x: f"{x:.10g}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "n_hat"])
        for x, v in zip(disc.grid.midpoints, n):
            w.writerow([fmt(float(x)), fmt(float(v))])
