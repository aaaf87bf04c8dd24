"""Emission spectra from two-time correlations.

Sign convention: spectra are reported against absolute frequency with
emission lines at the frequencies actually radiated.  Written out,

    P(w, T) = sum_{t, t'} e^{-i w (t - t')} a*(t - tau) a(t' - tau') <L^+(tau) L(tau')>_lab

and correlations computed in the frame rotating at ``w_L`` pick up
``exp(i w_L (tau - tau'))``.  The one-sided kernel transform is
``a(w) = int_0^inf a(tau) e^{+i w tau} dtau`` (see ``kernel_laplace``), and
the stationary density is ``S_LL(nu) = 2 Re int_0^inf e^{i nu s} (C_ss(s) - |<L>|^2) ds``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal import find_peaks

from .dynamics import StationaryCorrelation, TriangleStream, TwoTimeCorrelation
from .environment import CorrelationKernel, SpatialKernelTransform, kernel_laplace
from .grid import TimeGrid

__all__ = [
    "SpectrumResult",
    "SpectrumError",
    "frequency_grid",
    "incoherent_density",
    "spectrum_finite_T",
    "spectrum_stationary",
    "spectrum_markov",
    "pipeline_crosscheck",
    "CrosscheckReport",
    "local_maxima",
    "refine_peak",
]


class SpectrumError(RuntimeError):
    pass


@dataclass
class SpectrumResult:
    omega: np.ndarray
    P: np.ndarray
    pipeline: str
    d2P: np.ndarray | None = None
    coherent_weight: float = 0.0
    T: float | None = None
    d: float | None = None
    preset: str | None = None
    flags: list[str] = field(default_factory=list)
    imag_residue: float = 0.0

    def __post_init__(self) -> None:
        self.omega = np.asarray(self.omega, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        if not (np.all(np.isfinite(self.P)) and np.all(np.isfinite(self.omega))):
            raise SpectrumError(f"{self.pipeline}: non-finite spectrum values")

    @property
    def bin(self) -> float:
        return float(self.omega[1] - self.omega[0])

    @property
    def converged(self) -> bool:
        return not self.flags

    def normalized(self) -> np.ndarray:
        peak = np.max(np.abs(self.P))
        return self.P / peak if peak > 0 else self.P

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        d2 = self.d2P if self.d2P is not None else np.full(self.P.shape, np.nan)
        flags = ";".join(self.flags) or "ok"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["omega", "P", "d2P", "coherent_weight", "flags"])
            for om, p, q in zip(self.omega, self.P, d2):
                w.writerow([repr(float(om)), repr(float(p)), repr(float(q)), repr(self.coherent_weight), flags])

    @classmethod
    def from_csv(cls, path, pipeline: str = "csv") -> SpectrumResult:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise SpectrumError(f"{path}: empty spectrum file")
        d2 = np.array([float(r["d2P"]) for r in rows])
        flags = rows[0]["flags"]
        return cls(
            omega=np.array([float(r["omega"]) for r in rows]),
            P=np.array([float(r["P"]) for r in rows]),
            pipeline=pipeline,
            d2P=None if np.all(np.isnan(d2)) else d2,
            coherent_weight=float(rows[0]["coherent_weight"]),
            flags=[] if flags == "ok" else flags.split(";"),
        )


def frequency_grid(laser_frequency: float, rabi: float, points: int = 801, span: float = 4.0) -> np.ndarray:
    """Default grid ``[w_L - span*rabi, w_L + span*rabi]``."""
    return np.linspace(laser_frequency - span * rabi, laser_frequency + span * rabi, points)


def _trapezoid_weights(n: int, dt: float) -> np.ndarray:
    w = np.full(n, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def incoherent_density(corr: StationaryCorrelation, nu, taper: bool = False, chunk: int = 64) -> np.ndarray:
    """``S_LL(nu) = 2 Re int_0^{s_max} e^{i nu s} (C_ss(s) - offset) ds``."""
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    s = corr.s
    f = corr.values - corr.offset
    if taper:
        f = f * np.cos(0.5 * np.pi * s / s[-1]) ** 2
    fw = f * _trapezoid_weights(s.size, corr.dt)
    out = np.empty(nu.shape)
    for lo in range(0, nu.size, chunk):
        out[lo : lo + chunk] = 2.0 * (np.exp(1j * np.outer(nu[lo : lo + chunk], s)) @ fw).real
    return out


def _tail_flags(corr: StationaryCorrelation, rel_tol: float) -> list[str]:
    scale = max(abs(corr.values[0] - corr.offset), 1e-300)
    if corr.tail_residual > rel_tol * scale:
        return [f"tail_not_decayed({corr.tail_residual / scale:.2e})"]
    return []


def _filter(transfer, omega: np.ndarray) -> tuple[np.ndarray, float | None, list[str]]:
    """``|transfer(w)|^2`` for a detector kernel or a plain reservoir kernel."""
    if isinstance(transfer, SpatialKernelTransform):
        return np.abs(transfer.evaluate(omega)) ** 2, transfer.d, transfer.regime_warnings()
    if isinstance(transfer, CorrelationKernel):
        lt = kernel_laplace(transfer.with_frame_shift(0.0), omega)
        flags = [] if lt.converged else [f"laplace_tail({lt.relative_tail_change:.2e})"]
        return np.abs(lt.values) ** 2, None, flags
    vals = np.asarray(transfer(omega))
    return np.abs(vals) ** 2, None, []


def spectrum_stationary(
    corr: StationaryCorrelation,
    transfer,
    omega,
    laser_frequency: float,
    taper: bool = False,
    tail_tol: float = 1e-2,
    preset: str | None = None,
) -> SpectrumResult:
    """``P(w) = |S(w)|^2 S_LL(w - w_L)`` with the coherent weight kept apart.

    ``transfer`` is a :class:`SpatialKernelTransform` (detector at distance
    ``d``), a reservoir kernel (no spatial dependence: its one-sided
    transform is used) or any callable returning complex values.
    """
    omega = np.asarray(omega, dtype=float)
    filt, d, flags = _filter(transfer, omega)
    s_ll = incoherent_density(corr, omega - laser_frequency, taper=taper)
    p = filt * s_ll
    flags = list(flags) + _tail_flags(corr, tail_tol)
    coh_filter, _, _ = _filter(transfer, np.array([laser_frequency]))
    return SpectrumResult(
        omega=omega,
        P=p,
        pipeline="stationary",
        d2P=None if d is None else d**2 * p,
        coherent_weight=float(coh_filter[0] * corr.offset),
        T=corr.t_star + corr.s[-1],
        d=d,
        preset=preset,
        flags=flags,
    )


def refine_peak(corr: StationaryCorrelation, transfer, laser_frequency: float, bracket, xatol: float = 1e-7):
    """Continuous maximum of the stationary spectrum inside ``bracket``.

    Returns ``(omega, P)``.  Narrow gap lines are often sharper than any
    practical output grid, so height laws are measured this way.
    """

    def neg(w):
        filt, _, _ = _filter(transfer, np.array([w]))
        return -float(filt[0] * incoherent_density(corr, np.array([w - laser_frequency]))[0])

    lo, hi = map(float, bracket)
    r = minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": xatol})
    return float(r.x), -float(r.fun)


def spectrum_markov(
    corr: StationaryCorrelation,
    gamma: float,
    omega,
    laser_frequency: float,
    taper: bool = False,
    tail_tol: float = 1e-2,
    preset: str | None = None,
) -> SpectrumResult:
    """``P(w) = gamma^2 S_LL(w - w_L)`` for a delta-correlated reservoir."""
    omega = np.asarray(omega, dtype=float)
    if gamma == 0:
        p = np.zeros(omega.shape)
    else:
        p = gamma**2 * incoherent_density(corr, omega - laser_frequency, taper=taper)
    return SpectrumResult(
        omega=omega,
        P=p,
        pipeline="markov",
        coherent_weight=float(gamma**2 * corr.offset),
        T=corr.t_star + corr.s[-1],
        preset=preset,
        flags=_tail_flags(corr, tail_tol) if gamma else [],
    )


def _window_vectors(kernel: CorrelationKernel, grid: TimeGrid, omega: np.ndarray, laser_frequency: float) -> np.ndarray:
    """``x[tau, w] = e^{i (w - w_L) tau} sum_{u=0}^{T - tau} a(u) e^{i w u}`` with trapezoid weights.

    The inner sum is a cumulative trapezoid in ``u`` read backwards, so the
    whole table costs ``O(N * len(omega))``.
    """
    n = grid.N + 1
    tau = grid.times
    a = kernel.with_frame_shift(0.0).evaluate(tau)
    wt = _trapezoid_weights(n, grid.dt)
    x = np.empty((n, omega.size), dtype=complex)
    for lo in range(0, omega.size, 64):
        om = omega[lo : lo + 64]
        f = a[:, None] * np.exp(1j * np.outer(tau, om))
        # partial[m] = trapezoid integral of f over [0, m dt]
        partial = np.zeros_like(f)
        partial[1:] = np.cumsum(0.5 * grid.dt * (f[1:] + f[:-1]), axis=0)
        head = partial[::-1]  # head[j] = int_0^{T - t_j}
        x[:, lo : lo + 64] = head * np.exp(1j * np.outer(tau, om - laser_frequency)) * wt[:, None]
    return x


def spectrum_finite_T(
    corr: TwoTimeCorrelation | TriangleStream | np.ndarray,
    kernel: CorrelationKernel,
    grid: TimeGrid,
    omega,
    laser_frequency: float = 0.0,
    mean=None,
    preset: str | None = None,
    residue_tol: float = 1e-6,
) -> SpectrumResult:
    """Finite-observation-time spectrum as the bilinear form ``x^H C x``.

    ``corr`` is the two-time triangle, a :class:`TriangleStream` that
    yields it in column blocks, or an already completed square ``C_L``.  The kernel convolutions over ``tau`` and ``tau'`` are folded
    into the window vectors ``x``.  When ``mean`` (``<L(t)>`` on the grid)
    is given, the coherent part ``|sum_t x_t <L(t)>|^2`` is removed from the
    curve and its per-unit-time weight is reported instead.

    With a triangle, only ``y = C_low x`` is formed; hermitian completion
    then gives ``P = 2 Re(x^H y) - sum_t C(t, t) |x_t|^2``, whose imaginary
    part can only come from a non-real diagonal.
    """
    if kernel.is_markov:
        raise SpectrumError("finite-T pipeline needs a non-Markov kernel; use spectrum_markov")
    omega = np.asarray(omega, dtype=float)
    n = grid.N + 1
    x = _window_vectors(kernel, grid, omega, laser_frequency)
    if isinstance(corr, TwoTimeCorrelation):
        if corr.lower.shape != (n, n):
            raise SpectrumError("correlation triangle does not match the grid")
        q1 = np.einsum("tw,tw->w", x.conj(), corr.lower @ x)
        diag = np.einsum("t,tw->w", np.diagonal(corr.lower), np.abs(x) ** 2)
        quad = 2.0 * q1.real - diag
    elif isinstance(corr, TriangleStream):
        if corr.grid.N + 1 != n or not math.isclose(corr.grid.T, grid.T):
            raise SpectrumError("correlation stream does not match the grid")
        y = np.zeros_like(x)
        diag = np.zeros(omega.size, dtype=complex)
        for j0, cols in corr.blocks():
            j1 = j0 + cols.shape[1]
            y += cols @ x[j0:j1]
            d = cols[np.arange(j0, j1), np.arange(j1 - j0)]
            diag += d @ np.abs(x[j0:j1]) ** 2
        quad = 2.0 * np.einsum("tw,tw->w", x.conj(), y).real - diag
    else:
        c = np.asarray(corr)
        if c.shape != (n, n):
            raise SpectrumError("correlation square does not match the grid")
        quad = np.einsum("tw,tw->w", x.conj(), c @ x)
    scale = max(float(np.max(np.abs(quad))), 1e-300)
    residue = float(np.max(np.abs(quad.imag)))
    if residue > residue_tol * scale:
        raise SpectrumError(
            f"finite-T spectrum has imaginary residue {residue / scale:.2e} of max|P|; "
            "the correlation square is not hermitian"
        )
    p = quad.real
    coherent = 0.0
    if mean is not None:
        m = np.asarray(mean, dtype=complex)
        p = p - np.abs(m @ x) ** 2
        a_l = kernel_laplace(kernel.with_frame_shift(0.0), [laser_frequency]).values[0]
        coherent = float(abs(a_l) ** 2 * abs(m[-1]) ** 2)
    return SpectrumResult(
        omega=omega,
        P=p,
        pipeline="finite_T",
        coherent_weight=coherent,
        T=grid.T,
        preset=preset,
        imag_residue=residue,
    )


def local_maxima(result: SpectrumResult, rel_height: float = 1e-3, prominence: float = 1e-3) -> np.ndarray:
    """Indices of interior local maxima above ``rel_height * max``."""
    y = result.P
    top = np.max(y)
    if top <= 0:
        return np.array([], dtype=int)
    idx, _ = find_peaks(y, height=rel_height * top, prominence=prominence * top)
    return idx


@dataclass
class CrosscheckReport:
    passed: bool
    positions_a: np.ndarray
    positions_b: np.ndarray
    ratios_a: np.ndarray
    ratios_b: np.ndarray
    max_position_error_bins: float
    max_ratio_error: float
    message: str
    finite_T: SpectrumResult | None = None
    stationary: SpectrumResult | None = None


def pipeline_crosscheck(
    finite: SpectrumResult,
    stationary: SpectrumResult,
    ratio_tol: float = 0.10,
    expected_peaks: int | None = None,
) -> CrosscheckReport:
    """Compare peak positions (within one bin) and peak-height ratios (within ``ratio_tol``)."""
    if finite.omega.shape != stationary.omega.shape or not np.allclose(finite.omega, stationary.omega):
        raise SpectrumError("cross-check needs both spectra on the same frequency grid")
    pa, pb = local_maxima(finite), local_maxima(stationary)
    if np.max(np.abs(finite.P)) == 0 and np.max(np.abs(stationary.P)) == 0:
        return CrosscheckReport(True, pa, pb, pa * 0.0, pb * 0.0, 0.0, 0.0, "both spectra vanish", finite, stationary)
    if pa.size != pb.size or (expected_peaks is not None and pa.size != expected_peaks):
        return CrosscheckReport(
            False, pa, pb, np.array([]), np.array([]), math.inf, math.inf,
            f"peak count differs: finite-T {pa.size}, stationary {pb.size}", finite, stationary,
        )
    bins = float(np.max(np.abs(pa - pb))) if pa.size else 0.0
    ra = finite.P[pa] / np.max(finite.P[pa])
    rb = stationary.P[pb] / np.max(stationary.P[pb])
    rerr = float(np.max(np.abs(ra / rb - 1.0))) if pa.size else 0.0
    ok = bins <= 1 and rerr <= ratio_tol
    msg = f"peak offset {bins:.0f} bins, height-ratio error {rerr:.3f}"
    return CrosscheckReport(ok, pa, pb, ra, rb, bins, rerr, msg, finite, stationary)
