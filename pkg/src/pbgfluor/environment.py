"""Reservoir memory kernels, their transforms and the detector kernel.

All kernels are one-sided, ``alpha(tau)`` for ``tau >= 0``, and follow
``alpha(tau) = sum_l g_l^2 exp(-i w_l tau)``.  A kernel may carry a
``frame_shift``: the value is multiplied by ``exp(+i frame_shift tau)``,
which is what a reservoir looks like from a frame rotating at that
frequency.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from .grid import TimeGrid

__all__ = [
    "CorrelationKernel",
    "MarkovKernel",
    "PeriodicBand3DKernel",
    "ParabolicEdgeKernel",
    "TabulatedKernel",
    "MarkovEvaluationError",
    "parabolic_from_band",
    "evaluate_kernel",
    "memory_coefficient",
    "memory_coefficients",
    "MemoryAccumulator",
    "LaplaceTransform",
    "kernel_laplace",
    "SpatialKernelTransform",
    "spatial_kernel_ft",
    "q_constant",
    "spectral_density_check",
    "load_tabulated_kernel",
    "FAR_FIELD_FLOOR",
]

# detector distances below this many lattice periods are outside the
# far-field regime the closed-form detector kernel was derived for
FAR_FIELD_FLOOR = 3.0


class MarkovEvaluationError(ValueError):
    """Raised when a delta-correlated kernel is asked for pointwise values."""


class CorrelationKernel:
    """Base class; concrete kernels are frozen dataclasses below."""

    is_markov = False
    frame_shift: float = 0.0

    def _bare(self, tau: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def evaluate(self, tau) -> np.ndarray | complex:
        scalar = np.ndim(tau) == 0
        t = np.asarray(tau, dtype=float)
        if np.any(t < 0) or not np.all(np.isfinite(t)):
            raise ValueError("kernels are one-sided: tau must be finite and >= 0")
        out = self._bare(t)
        if self.frame_shift:
            out = out * np.exp(1j * self.frame_shift * t)
        return complex(out) if scalar else out

    def with_frame_shift(self, shift: float) -> CorrelationKernel:
        return dataclasses.replace(self, frame_shift=float(shift))

    def frequency_scale(self) -> float:
        """Largest oscillation frequency of the (frame-shifted) kernel."""
        return 0.0

    def correlation_time(self) -> float:
        return 0.0

    def default_dt(self) -> float:
        return 0.1 / max(self.frequency_scale(), 1.0 / max(self.correlation_time(), 1e-12), 1.0)


@dataclass(frozen=True)
class MarkovKernel(CorrelationKernel):
    """``alpha(tau) = gamma * delta(tau)`` with full endpoint weight."""

    gamma: float
    frame_shift: float = 0.0
    is_markov = True

    def __post_init__(self) -> None:
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise ValueError(f"Markov rate must be >= 0, got {self.gamma}")

    def evaluate(self, tau):
        raise MarkovEvaluationError(
            "a delta-correlated kernel has no pointwise values; use the analytic "
            "Markov path (memory_coefficient / spectrum_markov)"
        )


@dataclass(frozen=True)
class PeriodicBand3DKernel(CorrelationKernel):
    """``g^2 exp(-i A tau) J0(B tau / 3)^3``: cubic-lattice band ``[A - B, A + B]``."""

    g: float
    A: float = 1.0
    B: float = 1.0
    frame_shift: float = 0.0

    def __post_init__(self) -> None:
        if self.g < 0 or self.B <= 0:
            raise ValueError("PeriodicBand3D needs g >= 0 and B > 0")

    def _bare(self, tau):
        return self.g**2 * np.exp(-1j * self.A * tau) * special.j0(self.B * tau / 3.0) ** 3

    def frequency_scale(self) -> float:
        return abs(self.A - self.frame_shift) + self.B

    def correlation_time(self) -> float:
        return 3.0 / self.B


@dataclass(frozen=True)
class ParabolicEdgeKernel(CorrelationKernel):
    """Long-time band-edge kernel ``sqrt_beta exp(i(pi/4 - w_c tau)) / tau^1.5``.

    The ``tau^-1.5`` divergence is not integrable, so the kernel is held at
    its ``tau_min`` value for ``tau < tau_min``.
    """

    sqrt_beta: float
    omega_c: float = 0.0
    tau_min: float = 0.1
    frame_shift: float = 0.0

    def __post_init__(self) -> None:
        if self.sqrt_beta < 0 or not self.tau_min > 0:
            raise ValueError("ParabolicEdge needs sqrt_beta >= 0 and tau_min > 0")

    def _bare(self, tau):
        tc = np.maximum(tau, self.tau_min)
        return self.sqrt_beta * np.exp(1j * (np.pi / 4 - self.omega_c * tc)) / tc**1.5

    def frequency_scale(self) -> float:
        return abs(self.omega_c - self.frame_shift)

    def correlation_time(self) -> float:
        return self.tau_min


@dataclass(frozen=True)
class TabulatedKernel(CorrelationKernel):
    """Kernel sampled on ``tau = k * dtau``; linear interpolation in between."""

    dtau: float
    values: np.ndarray = field(repr=False)
    frame_shift: float = 0.0

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=complex)
        if v.ndim != 1 or v.size < 2 or not self.dtau > 0:
            raise ValueError("tabulated kernel needs >= 2 samples and dtau > 0")
        if not np.all(np.isfinite(v)):
            raise ValueError("tabulated kernel values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def tau_max(self) -> float:
        return self.dtau * (self.values.size - 1)

    def _bare(self, tau):
        if np.any(tau > self.tau_max * (1 + 1e-12)):
            raise ValueError(f"tau beyond tabulated range {self.tau_max}")
        grid = np.arange(self.values.size) * self.dtau
        return np.interp(tau, grid, self.values.real) + 1j * np.interp(tau, grid, self.values.imag)

    def correlation_time(self) -> float:
        return self.dtau


def parabolic_from_band(
    g: float, B: float, omega_c: float, tau_min: float = 0.1, frame_shift: float = 0.0
) -> ParabolicEdgeKernel:
    """Band-edge kernel whose amplitude is tied to a periodic band by
    ``sqrt_beta = g^2 (6 / B)^1.5 / 8``."""
    return ParabolicEdgeKernel(g**2 * (6.0 / B) ** 1.5 / 8.0, omega_c, tau_min, frame_shift)


def evaluate_kernel(kernel: CorrelationKernel, tau):
    return kernel.evaluate(tau)


def load_tabulated_kernel(path, frame_shift: float = 0.0) -> TabulatedKernel:
    """Read a ``tau, re, im`` CSV (with header) on a uniform tau grid."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 3:
            raise ValueError(f"{path}: expected a header with columns tau, re, im")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                rows.append([float(x) for x in row[:3]])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    data = np.array(rows)
    if data.shape[0] < 2:
        raise ValueError(f"{path}: need at least two samples")
    tau = data[:, 0]
    if abs(tau[0]) > 1e-12:
        raise ValueError(f"{path}: tau grid must start at 0")
    steps = np.diff(tau)
    dtau = steps.mean()
    if dtau <= 0 or np.max(np.abs(steps - dtau)) > 1e-9 * max(1.0, dtau):
        raise ValueError(f"{path}: tau spacing must be uniform and increasing")
    return TabulatedKernel(float(dtau), data[:, 1] + 1j * data[:, 2], frame_shift)


def save_tabulated_kernel(path, kernel: CorrelationKernel, tau) -> None:
    vals = np.asarray(kernel.evaluate(np.asarray(tau, dtype=float)))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "re", "im"])
        for t, v in zip(tau, vals):
            w.writerow([repr(float(t)), repr(float(v.real)), repr(float(v.imag))])


# ---------------------------------------------------------------------------
# memory integrals  int_0^t alpha(u) exp(i phase u) du


def memory_coefficients(kernel: CorrelationKernel, phases, grid: TimeGrid) -> np.ndarray:
    """Cumulative trapezoid integrals for every grid time and phase.

    Returns an array of shape ``(grid.N + 1, len(phases))``.  A Markov kernel
    returns its rate everywhere (full endpoint weight of the delta).
    """
    phases = np.atleast_1d(np.asarray(phases, dtype=float))
    if kernel.is_markov:
        return np.full((grid.N + 1, phases.size), complex(kernel.gamma))
    tau = grid.times
    f = kernel.evaluate(tau)[:, None] * np.exp(1j * tau[:, None] * phases[None, :])
    out = np.zeros_like(f)
    out[1:] = np.cumsum(0.5 * grid.dt * (f[1:] + f[:-1]), axis=0)
    return out


class MemoryAccumulator:
    """Incremental trapezoid accumulator for one phase; O(1) per step.

    Each evolution run owns its own accumulator.
    """

    def __init__(self, kernel: CorrelationKernel, phase: float, grid: TimeGrid):
        self.kernel = kernel
        self.phase = float(phase)
        self.grid = grid
        self.index = 0
        self.value = complex(kernel.gamma) if kernel.is_markov else 0j
        self._last = None if kernel.is_markov else self._integrand(0)

    def _integrand(self, n: int) -> complex:
        t = n * self.grid.dt
        return self.kernel.evaluate(t) * np.exp(1j * self.phase * t)

    def step(self) -> complex:
        if self.index >= self.grid.N:
            raise IndexError("accumulator already at the end of the grid")
        self.index += 1
        if not self.kernel.is_markov:
            nxt = self._integrand(self.index)
            self.value += 0.5 * self.grid.dt * (self._last + nxt)
            self._last = nxt
        return self.value


def memory_coefficient(kernel: CorrelationKernel, phase: float, t: float, grid: TimeGrid) -> complex:
    """``int_0^t alpha(u) exp(i phase u) du`` on the grid (``t`` must be a grid time)."""
    n = grid.index_of(t)
    if kernel.is_markov:
        return complex(kernel.gamma)
    return complex(memory_coefficients(kernel, [phase], grid)[n, 0])


# ---------------------------------------------------------------------------
# frequency-domain transforms


@dataclass(frozen=True)
class LaplaceTransform:
    omega: np.ndarray
    values: np.ndarray
    T: float
    converged: bool
    relative_tail_change: float


def kernel_laplace(
    kernel: CorrelationKernel,
    omega,
    T: float | None = None,
    dt: float | None = None,
    tol: float = 2e-2,
    chunk: int = 64,
) -> LaplaceTransform:
    """One-sided transform ``alpha(omega) = int_0^T alpha(tau) exp(+i omega tau) dtau``.

    Evaluating "at -omega" is the complex conjugate pairing used for the
    first (conjugated) kernel of a spectrum.  ``T=None`` picks a long window
    and checks convergence: if the running integral still changes by more
    than ``tol`` (relative to the largest transform value) over the last 10%
    of the window, ``converged`` is False.
    """
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    if kernel.is_markov:
        return LaplaceTransform(w, np.full(w.shape, complex(kernel.gamma)), math.inf, True, 0.0)
    if T is None:
        T = 1000.0 * max(kernel.correlation_time(), 1.0)
    if dt is None:
        dt = min(kernel.default_dt(), 0.1 / max(np.max(np.abs(w)), 1.0))
    n = max(int(math.ceil(T / dt)), 2)
    grid = TimeGrid(T, n)
    tau = grid.times
    a = kernel.evaluate(tau)
    wts = np.full(n + 1, grid.dt)
    wts[0] = wts[-1] = 0.5 * grid.dt
    n_tail = int(round(0.9 * n))
    wts_head = np.full(n_tail + 1, grid.dt)
    wts_head[0] = wts_head[-1] = 0.5 * grid.dt
    vals = np.empty(w.shape, dtype=complex)
    head = np.empty(w.shape, dtype=complex)
    for lo in range(0, w.size, chunk):
        ph = np.exp(1j * np.outer(w[lo : lo + chunk], tau))
        vals[lo : lo + chunk] = ph @ (a * wts)
        head[lo : lo + chunk] = ph[:, : n_tail + 1] @ (a[: n_tail + 1] * wts_head)
    scale = max(np.max(np.abs(vals)), 1e-300)
    change = float(np.max(np.abs(vals - head)) / scale)
    return LaplaceTransform(w, vals, T, change <= tol, change)


def spectral_density_check(
    kernel: CorrelationKernel,
    omega,
    window: float,
    dt: float | None = None,
    taper: str | None = "hann",
) -> np.ndarray:
    """Numerically invert a kernel into its spectral density.

    Uses ``alpha(tau) = int J(w) exp(-i w tau) dw``, so that
    ``J(w) = (1/pi) Re int_0^inf alpha(tau) exp(i w tau) dtau``.  A diagnostic
    only; the evolution never calls it.
    """
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    if kernel.is_markov:
        return np.full(w.shape, kernel.gamma / (2 * np.pi))
    if w.size > 1:
        spacing = np.min(np.diff(np.sort(w)))
        if spacing > 0 and 2 * np.pi / window > spacing:
            raise ValueError(
                f"window {window} resolves only {2 * np.pi / window:.3g} in frequency; "
                f"requested spacing is {spacing:.3g}"
            )
    if dt is None:
        dt = kernel.default_dt()
    n = max(int(math.ceil(window / dt)), 2)
    grid = TimeGrid(window, n)
    tau = grid.times
    a = kernel.evaluate(tau)
    if taper == "hann":
        a = a * np.cos(0.5 * np.pi * tau / window) ** 2
    elif taper is not None:
        raise ValueError(f"unknown taper {taper!r}")
    wts = np.full(n + 1, grid.dt)
    wts[0] = wts[-1] = 0.5 * grid.dt
    out = np.empty(w.shape)
    for lo in range(0, w.size, 64):
        ph = np.exp(1j * np.outer(w[lo : lo + 64], tau))
        out[lo : lo + 64] = (ph @ (a * wts)).real / np.pi
    return out


@dataclass(frozen=True)
class SpatialKernelTransform:
    """Far-field detector kernel for a parabolic band edge.

    Attributes
    ----------
    Q : complex
        Geometric prefactor (see :func:`q_constant`).
    curvature : float
        Dispersion curvature ``A`` in ``w = w_c + A q^2``.
    omega_c : float
        Band-edge frequency; ``w < w_c`` is the gap.
    d : float
        Atom-detector distance in lattice periods.
    """

    Q: complex
    curvature: float
    omega_c: float
    d: float

    def __post_init__(self) -> None:
        if not self.d > 0:
            raise ValueError(f"spatial.d > 0 required, got {self.d}")
        if not self.curvature > 0:
            raise ValueError(f"spatial.curvature > 0 required, got {self.curvature}")

    def localization_length(self, omega) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.sqrt(self.curvature / np.abs(np.asarray(omega, dtype=float) - self.omega_c))

    def regime_warnings(self) -> list[str]:
        if self.d < FAR_FIELD_FLOOR:
            return [f"d={self.d} below far-field floor {FAR_FIELD_FLOOR}"]
        return []

    def evaluate(self, omega):
        return spatial_kernel_ft(self, omega)


def spatial_kernel_ft(s: SpatialKernelTransform, omega):
    """``Q 2 pi^2 / (i d A)`` times ``exp(-d/l)`` in the gap or ``exp(-i d/l)`` in the band."""
    scalar = np.ndim(omega) == 0
    w = np.asarray(omega, dtype=float)
    pref = s.Q * 2 * np.pi**2 / (1j * s.d * s.curvature)
    kappa = np.sqrt(np.abs(w - s.omega_c) / s.curvature)  # 1 / l
    out = np.where(w < s.omega_c, np.exp(-s.d * kappa), np.exp(-1j * s.d * kappa)) * pref
    return complex(out) if scalar else out


def q_constant(gamma: float, a: float, k0_points, d_vec, theta, theta_D) -> complex:
    """Geometric prefactor summed over the symmetry-related band-edge points.

    ``theta`` and ``theta_D`` may be scalars (shared by all points) or one
    value per point.
    """
    k0 = np.atleast_2d(np.asarray(k0_points, dtype=float))
    if k0.size == 0:
        raise ValueError("q_constant needs at least one band-edge wavevector")
    d = np.asarray(d_vec, dtype=float)
    if not np.linalg.norm(d) > 0:
        raise ValueError("displacement must be nonzero")
    th = np.broadcast_to(np.asarray(theta, dtype=float), (k0.shape[0],))
    thd = np.broadcast_to(np.asarray(theta_D, dtype=float), (k0.shape[0],))
    terms = np.exp(1j * (k0 @ d)) * np.sin(th) ** 2 * np.sin(thd) ** 2
    return complex(gamma * (a / (2 * np.pi)) ** 3 * terms.sum())
