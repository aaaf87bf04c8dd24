"""Exact one-excitation benchmark for undriven spontaneous emission.

The atom plus a discretized bath with one shared excitation is an
``(M+1)``-dimensional arrowhead Hamiltonian

    H = [[w12, g^T], [g, diag(w_l)]],

so the state at any time follows from one symmetric eigendecomposition.
Bath couplings come from a spectral density ``J`` normalized as
``alpha(tau) = int J(w) exp(-i w tau) dw``, i.e. ``g_l = sqrt(J(w_l) dw)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate, linalg, special

from .environment import CorrelationKernel
from .grid import TimeGrid

__all__ = [
    "BathDiscretization",
    "OracleError",
    "OneExcitationResult",
    "cubic_lattice_dos",
    "periodic_band_density",
    "flat_band_density",
    "discretize_bath",
    "one_excitation_exact",
    "recurrence_time",
]


class OracleError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# densities


def _square_lattice_dos(e: float) -> float:
    """DOS of ``cos kx + cos ky`` on ``[-2, 2]``, unit normalized."""
    if abs(e) >= 2.0:
        return 0.0
    m = 1.0 - e * e / 4.0
    return float(special.ellipk(m)) / np.pi**2


@lru_cache(maxsize=None)
def _cubic_dos_scalar(e: float) -> float:
    if abs(e) >= 3.0:
        return 0.0
    # integrate the square-lattice DOS over the third cosine, u = cos kz
    lo, hi = max(-1.0, e - 2.0), min(1.0, e + 2.0)
    if hi <= lo:
        return 0.0

    def f(theta):
        return _square_lattice_dos(e - math.cos(theta))

    th_lo, th_hi = math.acos(hi), math.acos(lo)
    pts = [th for th in (math.acos(max(-1.0, min(1.0, e))),) if th_lo < th < th_hi]
    val, _ = integrate.quad(f, th_lo, th_hi, points=pts or None, limit=200)
    return val / np.pi


def cubic_lattice_dos(e) -> np.ndarray:
    """DOS of ``cos kx + cos ky + cos kz`` on ``[-3, 3]`` (unit normalized).

    Its Fourier transform is ``J0(t)^3``.
    """
    arr = np.atleast_1d(np.asarray(e, dtype=float))
    out = np.array([_cubic_dos_scalar(round(float(x), 15)) for x in arr])
    return out if np.ndim(e) else out[0]


def periodic_band_density(g: float, A: float = 1.0, B: float = 1.0) -> Callable[[np.ndarray], np.ndarray]:
    """``J(w)`` whose transform is ``g^2 exp(-i A tau) J0(B tau / 3)^3``."""

    def density(w):
        e = 3.0 * (np.asarray(w, dtype=float) - A) / B
        return g**2 * cubic_lattice_dos(e) * 3.0 / B

    return density


def flat_band_density(level: float, lo: float, hi: float) -> Callable[[np.ndarray], np.ndarray]:
    def density(w):
        w = np.asarray(w, dtype=float)
        return np.where((w >= lo) & (w <= hi), level, 0.0)

    return density


# ---------------------------------------------------------------------------
# discretization


def recurrence_time(dw: float) -> float:
    return 2.0 * np.pi / dw


@dataclass(frozen=True)
class BathDiscretization:
    omega: np.ndarray = field(repr=False)
    couplings: np.ndarray = field(repr=False)
    dw: float
    horizon: float
    reconstruction_error: float

    @property
    def M(self) -> int:
        return self.omega.size

    @property
    def recurrence_time(self) -> float:
        return recurrence_time(self.dw)

    def correlation(self, tau) -> np.ndarray:
        """``sum_l g_l^2 exp(-i w_l tau)``."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        return np.exp(-1j * np.outer(tau, self.omega)) @ self.couplings**2


def discretize_bath(
    density: Callable,
    omega_range: tuple[float, float],
    M: int,
    horizon: float | None = None,
    target: CorrelationKernel | Callable | None = None,
    tol: float = 0.02,
    samples: int = 400,
) -> BathDiscretization:
    """Midpoint sampling of ``density`` on ``omega_range`` with ``M`` modes.

    ``horizon`` defaults to 0.6 of the recurrence time and may not exceed
    it.  When ``target`` (a kernel or callable ``alpha(tau)``) is given, the
    reconstructed correlation is compared on ``[0, horizon]``; the maximal
    deviation relative to ``|alpha(0)|`` must stay below ``tol``.
    """
    if M < 100:
        raise OracleError(f"bath needs M >= 100 modes, got {M}")
    lo, hi = map(float, omega_range)
    if not hi > lo:
        raise OracleError("empty frequency range")
    dw = (hi - lo) / M
    t_rec = recurrence_time(dw)
    if horizon is None:
        horizon = 0.6 * t_rec
    if horizon > 0.6 * t_rec * (1 + 1e-12):
        raise OracleError(
            f"horizon {horizon:g} exceeds 0.6 x recurrence time {t_rec:g}; use M >= "
            f"{math.ceil(M * horizon / (0.6 * t_rec))} or a shorter horizon"
        )
    w = lo + (np.arange(M) + 0.5) * dw
    j = np.asarray(density(w), dtype=float)
    if np.any(j < 0):
        raise OracleError("spectral density must be non-negative")
    g = np.sqrt(j * dw)
    err = 0.0
    if target is not None:
        tau = np.linspace(0.0, horizon, samples)
        ref = target.evaluate(tau) if isinstance(target, CorrelationKernel) else np.asarray(target(tau))
        rec = np.exp(-1j * np.outer(tau, w)) @ g**2
        err = float(np.max(np.abs(rec - ref)) / max(abs(ref[0]), 1e-300))
        if err > tol:
            raise OracleError(
                f"bath reconstruction error {err:.3g} > {tol:g} over [0, {horizon:g}]; "
                "increase M or shorten the horizon"
            )
    return BathDiscretization(w, g, dw, float(horizon), err)


# ---------------------------------------------------------------------------
# exact evolution


@dataclass(frozen=True)
class OneExcitationResult:
    times: np.ndarray
    b: np.ndarray  # atomic amplitude
    c_final: np.ndarray  # bath amplitudes at the last time
    bath: BathDiscretization
    norm_drift: float

    @property
    def population(self) -> np.ndarray:
        return np.abs(self.b) ** 2

    def emission_spectrum(self) -> tuple[np.ndarray, np.ndarray]:
        """``|c_l(T)|^2 / dw`` against ``w_l``."""
        return self.bath.omega, np.abs(self.c_final) ** 2 / self.bath.dw

    def to_csv(self, directory) -> tuple[Path, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        p1, p2 = d / "oracle_population.csv", d / "oracle_spectrum.csv"
        with open(p1, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "population"])
            wr.writerows([repr(float(t)), repr(float(p))] for t, p in zip(self.times, self.population))
        w, s = self.emission_spectrum()
        with open(p2, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["omega", "density"])
            wr.writerows([repr(float(a)), repr(float(b))] for a, b in zip(w, s))
        return p1, p2


def one_excitation_exact(
    bath: BathDiscretization,
    omega_12: float,
    grid: TimeGrid,
    psi0=None,
    norm_tol: float = 1e-8,
) -> OneExcitationResult:
    """Exact amplitudes for the excited atom in the bath vacuum.

    ``psi0`` defaults to the excited atom; otherwise a length ``M + 1``
    amplitude vector (atom first).
    """
    if grid.T > bath.horizon * (1 + 1e-12):
        raise OracleError(f"grid horizon {grid.T:g} exceeds the bath horizon {bath.horizon:g}")
    m = bath.M
    h = np.zeros((m + 1, m + 1))
    h[0, 0] = omega_12
    h[0, 1:] = h[1:, 0] = bath.couplings
    h[np.arange(1, m + 1), np.arange(1, m + 1)] = bath.omega
    e, v = linalg.eigh(h)
    if psi0 is None:
        psi0 = np.zeros(m + 1, dtype=complex)
        psi0[0] = 1.0
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (m + 1,) or abs(np.linalg.norm(psi0) - 1.0) > norm_tol:
        raise OracleError("initial amplitudes must be a normalized vector of length M + 1")
    coef = v.T @ psi0  # v is real
    t = grid.times
    b = np.empty(t.size, dtype=complex)
    for lo in range(0, t.size, 256):
        ph = np.exp(-1j * np.outer(t[lo : lo + 256], e))
        b[lo : lo + 256] = ph @ (v[0] * coef)
    final = v @ (np.exp(-1j * e * grid.T) * coef)
    drift = abs(float(np.linalg.norm(final)) - 1.0)
    if drift > norm_tol:
        raise OracleError(f"norm drift {drift:.2e} exceeds {norm_tol:g}")
    return OneExcitationResult(t, b, final[1:], bath, drift)
