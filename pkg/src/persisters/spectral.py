"""Principal eigenpairs of ``L(R)`` and the resource threshold where ``s(L(R)) = 0``.

Two routes compute the spectral bound. ``dense_eig`` runs LAPACK on the full
matrix. ``power_iteration`` iterates exp(tau L) (tau = 1/||L||_inf), where the
rightmost eigenvalue of L becomes the dominant one. Each sweep squares the
propagator, so the k-th iterate has seen exp((2^k - 1) tau L); that makes
convergence logarithmic in the inverse gap.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import BracketError, ConvergenceError
from .operators import Discretization, OperatorMatrix

__all__ = [
    "SpectralReport",
    "spectral_bound",
    "spectral_abscissa",
    "monotonicity_scan",
    "threshold_root",
    "adjoint_eigen_check",
    "pairing_increment",
    "resource_sensitivity",
    "write_scan_csv",
]


@dataclass(frozen=True)
class SpectralReport:
    """Principal eigen-data of one ``L(R)``.

    ``phi`` is scaled to quadrature mean one, ``psi`` so that
    (1/K) sum phi_i psi_i = 1. ``spectral_gap`` is ``nan`` for the
    power-iteration route, which never sees the rest of the spectrum.
    """

    R: float
    s: float
    phi: np.ndarray
    psi: np.ndarray
    spectral_gap: float
    method: str
    iterations: int = 0
    residual: float = 0.0
    imag_part: float = 0.0

    @property
    def min_phi(self) -> float:
        return float(np.min(self.phi))

    @property
    def min_psi(self) -> float:
        return float(np.min(self.psi))


def _real_vector(v: np.ndarray) -> np.ndarray:
    # rotate so the largest component is real and positive
    j = int(np.argmax(np.abs(v)))
    v = v / v[j]
    return np.real(v)


def _normalize(phi: np.ndarray, psi: np.ndarray):
    K = phi.size
    phi = phi / (phi.sum() / K)
    psi = psi / (phi @ psi / K)
    return phi, psi


def _dense(L: OperatorMatrix) -> SpectralReport:
    w, vl, vr = sla.eig(L.entries, left=True, right=True)
    order = np.argsort(-w.real, kind="stable")
    i = int(order[0])
    s = float(w[i].real)
    phi = _real_vector(vr[:, i])
    psi = _real_vector(vl[:, i])
    phi, psi = _normalize(phi, psi)
    gap = float(s - w[order[1]].real) if w.size > 1 else math.inf
    res = float(np.max(np.abs(L.entries @ phi - s * phi)))
    return SpectralReport(
        R=L.R if L.R is not None else 0.0,
        s=s,
        phi=phi,
        psi=psi,
        spectral_gap=gap,
        method="dense_eig",
        residual=res,
        imag_part=float(w[i].imag),
    )


def _power(M: np.ndarray, E: np.ndarray, tau: float, max_iter: int, rtol: float):
    """Dominant eigenvector of E = exp(tau M) by power iteration with squaring."""
    Mnorm = float(np.max(np.sum(np.abs(M), axis=1)))
    x = np.ones(M.shape[0])
    B = E.copy()
    s = math.nan
    res = math.inf
    for it in range(1, max_iter + 1):
        x = B @ x
        x /= np.max(np.abs(x))
        Ex = E @ x
        s = math.log(np.linalg.norm(Ex) / np.linalg.norm(x)) / tau
        res = float(np.max(np.abs(M @ x - s * x)))
        if res <= rtol * Mnorm * np.max(np.abs(x)):
            return x, s, it, res
        B = B @ B
        B /= np.max(np.abs(B))  # exp grows or decays without bound; only the direction matters
    raise ConvergenceError(f"power iteration did not converge in {max_iter} sweeps", last_increment=res)


def _power_route(L: OperatorMatrix, max_iter: int, rtol: float) -> SpectralReport:
    M = L.entries
    tau = 1.0 / L.inf_norm()
    E = sla.expm(tau * M)
    phi, s, it_r, res = _power(M, E, tau, max_iter, rtol)
    psi, s_left, it_l, _ = _power(M.T, E.T, tau, max_iter, rtol)
    phi, psi = _normalize(phi * np.sign(phi.sum()), psi * np.sign(psi.sum()))
    return SpectralReport(
        R=L.R if L.R is not None else 0.0,
        s=float(s),
        phi=phi,
        psi=psi,
        spectral_gap=math.nan,
        method="power_iteration",
        iterations=max(it_r, it_l),
        residual=res,
    )


def spectral_bound(
    L: OperatorMatrix, method: str = "dense_eig", max_iter: int = 60, rtol: float = 1e-12
) -> SpectralReport:
    """Rightmost eigenvalue of ``L`` with its right and left eigenvectors.

    If the power route fails to converge it falls back to ``dense_eig`` with
    a warning.
    """
    if L.kind != "L":
        raise ValueError(f"expected an L-kind operator, got {L.kind!r}")
    if method == "dense_eig":
        return _dense(L)
    if method == "power_iteration":
        try:
            return _power_route(L, max_iter, rtol)
        except ConvergenceError as exc:
            warnings.warn(f"{exc}; falling back to dense_eig", RuntimeWarning, stacklevel=2)
            return _dense(L)
    raise ValueError(f"unknown method {method!r}")


def spectral_abscissa(L: OperatorMatrix) -> float:
    """Largest real part of the spectrum (eigenvalues only, no vectors)."""
    return float(np.max(np.linalg.eigvals(L.entries).real))


def monotonicity_scan(R_values, disc: Discretization, method: str = "dense_eig") -> list[SpectralReport]:
    R_values = [float(r) for r in R_values]
    if any(r < 0 for r in R_values):
        raise ValueError("resource levels must be nonnegative")
    if any(b <= a for a, b in zip(R_values, R_values[1:])):
        raise ValueError("R_values must be strictly increasing")
    return [spectral_bound(disc.L(R), method=method) for R in R_values]


def threshold_root(disc: Discretization, bracket=(0.0, 0.1), tol: float = 1e-10, width: float = 1e-8) -> float:
    """Resource level where the spectral bound crosses zero.

    Bisection down to a bracket of ``width`` followed by one secant step;
    returns early once ``|s| < tol`` at a probe.
    """
    lo, hi = (float(x) for x in bracket)
    if not 0 <= lo < hi:
        raise BracketError(f"invalid bracket [{lo}, {hi}]")
    s_lo = spectral_abscissa(disc.L(lo))
    s_hi = spectral_abscissa(disc.L(hi))
    if not (s_lo < 0.0 < s_hi):
        raise BracketError(
            f"bracket [{lo}, {hi}] does not straddle zero: s(lo)={s_lo:.3e}, s(hi)={s_hi:.3e}"
        )
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        s_mid = spectral_abscissa(disc.L(mid))
        if abs(s_mid) < tol:
            return mid
        if s_mid < 0:
            lo, s_lo = mid, s_mid
        else:
            hi, s_hi = mid, s_mid
    return lo - s_lo * (hi - lo) / (s_hi - s_lo)


def adjoint_eigen_check(report: SpectralReport, L: OperatorMatrix) -> float:
    """||L^T psi - s psi||_inf."""
    return float(np.max(np.abs(L.entries.T @ report.psi - report.s * report.psi)))


def pairing_increment(low: SpectralReport, high: SpectralReport, disc: Discretization) -> float:
    """Predicted s(R2) - s(R1) from the eigenvector pairing identity.

    (s2 - s1) <phi1, psi2> = b (R2 - R1) <N phi1, psi2> holds exactly for the
    discrete operators, so this predicts the observed increment to rounding.
    """
    Nphi = disc.N.entries @ low.phi
    return disc.params.b * (high.R - low.R) * float(Nphi @ high.psi) / float(low.phi @ high.psi)


def resource_sensitivity(report: SpectralReport, disc: Discretization) -> float:
    """ds/dR = b <N phi, psi> / <phi, psi> at the report's resource level."""
    Nphi = disc.N.entries @ report.phi
    return disc.params.b * float(Nphi @ report.psi) / float(report.phi @ report.psi)


def write_scan_csv(reports, path, exact: bool = False) -> None:
    fmt = (lambda x: f"{x:.17g}") if exact else (lambda x: f"{x:.10g}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["R", "s", "gap", "min_phi", "min_psi"])
        for r in reports:
            w.writerow([fmt(r.R), fmt(r.s), fmt(r.spectral_gap), fmt(r.min_phi), fmt(r.min_psi)])
