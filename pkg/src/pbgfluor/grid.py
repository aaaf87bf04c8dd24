"""Uniform time grid shared by the memory integrals and the evolution."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = ["TimeGrid", "GridResolutionWarning"]


class GridResolutionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """``N + 1`` equally spaced points on ``[0, T]``."""

    T: float
    N: int

    def __post_init__(self) -> None:
        if not (isinstance(self.N, (int, np.integer)) and self.N >= 2):
            raise ValueError(f"TimeGrid needs N >= 2, got {self.N!r}")
        if not (math.isfinite(self.T) and self.T > 0):
            raise ValueError(f"TimeGrid needs T > 0, got {self.T!r}")

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.dt

    def index_of(self, t: float, atol: float = 1e-9) -> int:
        """Grid index of ``t``; raises if ``t`` is not on the grid."""
        x = t / self.dt
        n = int(round(x))
        if abs(x - n) > atol * max(1.0, abs(x)) or not 0 <= n <= self.N:
            raise ValueError(f"time {t!r} is not on the grid (dt={self.dt}, T={self.T})")
        return n

    def resolution_ok(self, max_frequency: float, correlation_time: float | None = None) -> bool:
        rate = abs(max_frequency)
        if correlation_time:
            rate = max(rate, 1.0 / correlation_time)
        return self.dt * rate < 0.2

    def check_resolution(self, max_frequency: float, correlation_time: float | None = None) -> bool:
        ok = self.resolution_ok(max_frequency, correlation_time)
        if not ok:
            warnings.warn(
                f"time step {self.dt:.4g} under-resolves frequency scale "
                f"{max_frequency:.4g} / correlation time {correlation_time}",
                GridResolutionWarning,
                stacklevel=2,
            )
        return ok

    def refined(self, factor: int = 2) -> TimeGrid:
        return TimeGrid(self.T, self.N * factor)
