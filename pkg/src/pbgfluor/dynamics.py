"""Weak-coupling Heisenberg evolution of mean values and two-time correlations.

For every basis element ``A = E_k`` the one-time equation reads

    d<A>/dt = i<[H, A]> + <Lt(t)^+ [A, L]> + <[L^+, A] Lt(t)>

with ``Lt(t) = int_0^t alpha(t - tau) V_{tau - t} L dtau``.  Because ``H`` is
diagonal, ``V_s L`` only multiplies each matrix entry ``L_jk`` by
``exp(i (h_j - h_k) s)`` and ``Lt(t)`` reduces to ``L_jk * I(-(h_j - h_k), t)``
with the scalar memory integrals ``I(phase, t) = int_0^t alpha(u) e^{i phase u} du``.

The two-time correlation ``C_km(t1, t2) = <E_k(t1) E_m(t2)>`` obeys the same
equation in its first index plus the extra term

    sum_jr a_kj b_mr(t1, t2) C_jr(t1, t2),

where ``[L^+, E_k] = sum_j a_kj E_j`` and ``[E_m, Lh] = sum_r b_mr E_r`` with
``Lh_jk = L_jk exp(i p_jk s) (I(-p_jk, t1) - I(-p_jk, s))``, ``s = t1 - t2``.
For a delta kernel this term vanishes and the regression theorem holds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .algebra import BASIS, OperatorBasis, SystemOperator, is_hermitian
from .environment import CorrelationKernel, memory_coefficients
from .grid import TimeGrid

__all__ = [
    "TimeGrid",
    "OneTimeTrajectory",
    "TwoTimeRow",
    "TwoTimeCorrelation",
    "TriangleStream",
    "StationaryCorrelation",
    "EvolutionError",
    "SteadyStateError",
    "Dynamics",
    "initial_expectations",
    "equal_time_matrix",
    "evolve_one_time",
    "evolve_two_time",
    "two_time_correlation",
    "correlation_of_L",
    "stationary_correlation",
    "qrt_reference_row",
]

_E = np.array([e.entries for e in OperatorBasis.elements])  # (4, 2, 2)


class EvolutionError(RuntimeError):
    pass


class SteadyStateError(RuntimeError):
    pass


def initial_expectations(psi0) -> np.ndarray:
    """``<E_k>`` for a pure state: ``<R_ij> = conj(psi_i) psi_j``."""
    psi = np.asarray(psi0, dtype=complex)
    nrm = np.linalg.norm(psi)
    if psi.shape != (2,) or not abs(nrm - 1.0) < 1e-10:
        raise ValueError("initial state must be a normalized 2-vector")
    return np.outer(psi.conj(), psi).reshape(4)


def equal_time_matrix(y: np.ndarray) -> np.ndarray:
    """``<E_k E_m>`` from ``<E_j>`` through the basis product table."""
    return np.einsum("kmj,...j->...km", BASIS.product_table, y)


@dataclass(frozen=True)
class OneTimeTrajectory:
    grid: TimeGrid
    values: np.ndarray = field(repr=False)  # (N + 1, 4) in basis order
    psi0: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def expectation(self, op: SystemOperator) -> np.ndarray:
        return self.values @ op.coefficients()

    @property
    def trace(self) -> np.ndarray:
        return self.values[:, 0] + self.values[:, 3]

    @property
    def populations(self) -> np.ndarray:
        return self.values[:, [0, 3]].real


@dataclass(frozen=True)
class TwoTimeRow:
    """``C_km(t1, t2)`` for fixed ``t2`` and ``t1`` from ``t2`` to ``T``."""

    grid: TimeGrid
    t2_index: int
    matrices: np.ndarray = field(repr=False)  # (N - t2_index + 1, 4, 4)

    @property
    def t1(self) -> np.ndarray:
        return self.grid.times[self.t2_index :]

    def contract(self, left: SystemOperator, right: SystemOperator) -> np.ndarray:
        """``<left(t1) right(t2)>`` along the row."""
        return np.einsum("k,nkm,m->n", left.coefficients(), self.matrices, right.coefficients())


@dataclass(frozen=True)
class TwoTimeCorrelation:
    """Lower triangle ``t1 >= t2`` of the two-time correlations.

    ``lower[i, j]`` (``i >= j``) holds ``<L^+(t_i) L(t_j)>`` for the operator
    the triangle was contracted with; ``matrices`` optionally keeps the full
    4x4 data (memory ``16 (N+1)^2``).
    """

    grid: TimeGrid
    coupling: SystemOperator
    lower: np.ndarray = field(repr=False)
    matrices: np.ndarray | None = field(default=None, repr=False)

    def square(self) -> np.ndarray:
        """Full ``C_L(t, t')`` with the upper triangle from hermitian completion."""
        low = np.tril(self.lower)
        return low + np.tril(low, -1).conj().T


class Dynamics:
    """Generator data shared by the one- and two-time evolutions.

    Parameters
    ----------
    L : SystemOperator
        Coupling operator.
    H : SystemOperator
        Hermitian system Hamiltonian.  A non-diagonal ``H`` is handled by
        working in its eigenbasis and rotating results back.
    kernel : CorrelationKernel
        Reservoir memory kernel, already in the evolution frame.
    grid : TimeGrid
    """

    def __init__(self, L: SystemOperator, H: SystemOperator, kernel: CorrelationKernel, grid: TimeGrid):
        if not is_hermitian(H):
            raise ValueError("system Hamiltonian must be hermitian")
        self.L, self.H, self.kernel, self.grid = L, H, kernel, grid
        hm = H.entries
        if hm[0, 1] == 0 and hm[1, 0] == 0:
            self._u = None
            h = hm.diagonal().real.copy()
            lw = L.entries
        else:
            h, u = np.linalg.eigh(hm)
            self._u = u
            lw = u.conj().T @ L.entries @ u
        self.h = h
        self.L_work = lw
        self.bohr = h[:, None] - h[None, :]  # p_jk
        self.rabi_splitting = float(np.max(np.abs(self.bohr)))

        phases, inverse = np.unique(np.round(-self.bohr, 14).ravel(), return_inverse=True)
        self.memory_phases = phases
        mem = memory_coefficients(kernel, phases, grid)  # (N + 1, P)
        self.memory = mem[:, inverse].reshape(grid.N + 1, 2, 2)

        hw = np.diag(h).astype(complex)
        ldag = lw.conj().T
        term_h = 1j * (hw[None] @ _E - _E @ hw[None])
        comm_EL = _E @ lw[None] - lw[None] @ _E  # [E_k, L]
        comm_LdE = ldag[None] @ _E - _E @ ldag[None]  # [L^+, E_k]
        ltil = lw[None] * self.memory  # (N + 1, 2, 2)
        ltil_dag = ltil.conj().transpose(0, 2, 1)
        x = (
            term_h[None]
            + np.einsum("nab,kbc->nkac", ltil_dag, comm_EL)
            + np.einsum("kab,nbc->nkac", comm_LdE, ltil)
        )
        self.G = x.reshape(grid.N + 1, 4, 4)
        self.A4 = comm_LdE.reshape(4, 4)
        # _comm_q[q, 4 m + r]: coefficient of E_r in [E_m, E_q]
        self._comm_q = np.ascontiguousarray(BASIS.commutator_table.transpose(1, 0, 2).reshape(4, 16))
        # Heun in the interaction picture of the free rotation (Lawson form):
        # the diagonal i[H, .] part is exponentiated exactly, the dissipative
        # remainder D is stepped at second order
        dt = grid.dt
        free = np.diagonal(term_h.reshape(4, 4)).copy()
        self.D = self.G - np.diag(free)[None]
        self.free_step = np.exp(free * dt)
        ef = self.free_step
        d0, d1 = self.D[:-1], self.D[1:]
        with np.errstate(over="ignore", invalid="ignore"):
            efd0 = ef[:, None] * d0
            self.propagators = np.diag(ef)[None] + 0.5 * dt * (efd0 + d1 * ef[None, :] + dt * d1 @ efd0)

        if self._u is not None:
            u = self._u
            self._back = np.array([(u.conj().T @ e @ u).reshape(4) for e in _E])
        else:
            self._back = None

    # -- helpers ----------------------------------------------------------
    def _to_work_state(self, psi0) -> np.ndarray:
        psi = np.asarray(psi0, dtype=complex)
        return psi if self._u is None else self._u.conj().T @ psi

    def _vec_back(self, y: np.ndarray) -> np.ndarray:
        return y if self._back is None else y @ self._back.T

    def _vec_to_work(self, y: np.ndarray) -> np.ndarray:
        return y if self._back is None else y @ np.linalg.inv(self._back).T

    def _mat_back(self, c: np.ndarray) -> np.ndarray:
        if self._back is None:
            return c
        return np.einsum("kj,...jr,mr->...km", self._back, c, self._back)

    def extra_term_matrix(self, t1_index, s_index) -> np.ndarray:
        """``b_mr(t1, t2)`` for the two-time extra term (``s = t1 - t2``).

        Both indices broadcast against each other.
        """
        t1_index, s_index = np.broadcast_arrays(np.asarray(t1_index), np.asarray(s_index))
        if self.kernel.is_markov:
            return np.zeros(t1_index.shape + (4, 4), dtype=complex)
        s = (s_index * self.grid.dt)[..., None, None]
        diff = self.memory[t1_index] - self.memory[s_index]
        lhat = self.L_work * np.exp(1j * self.bohr * s) * diff  # (..., 2, 2)
        flat = lhat.reshape(lhat.shape[:-2] + (4,)) @ self._comm_q
        return flat.reshape(flat.shape[:-1] + (4, 4))

    # -- evolutions -------------------------------------------------------
    def one_time(self, psi0) -> OneTimeTrajectory:
        y0 = initial_expectations(self._to_work_state(psi0))
        n = self.grid.N
        out = np.empty((n + 1, 4), dtype=complex)
        out[0] = y = y0
        prop = self.propagators
        for i in range(n):
            y = prop[i] @ y
            out[i + 1] = y
        _check_finite(out, "one-time evolution")
        return OneTimeTrajectory(self.grid, self._vec_back(out), np.asarray(psi0, dtype=complex))

    def two_time_row(self, traj: OneTimeTrajectory, t2_index: int) -> TwoTimeRow:
        n_last = self.grid.N
        if not 0 <= t2_index <= n_last:
            raise ValueError(f"t2 index {t2_index} outside the grid")
        dt = self.grid.dt
        D, A4 = self.D, self.A4
        ef = self.free_step[:, None]
        c = equal_time_matrix(self._vec_to_work(traj.values[t2_index]))
        out = np.empty((n_last - t2_index + 1, 4, 4), dtype=complex)
        out[0] = c
        lags = np.arange(n_last - t2_index + 1)
        b_all = self.extra_term_matrix(t2_index + lags, lags)
        for j in range(n_last - t2_index):
            n = t2_index + j
            f0 = D[n] @ c + A4 @ c @ b_all[j].T
            pred = ef * (c + dt * f0)
            f1 = D[n + 1] @ pred + A4 @ pred @ b_all[j + 1].T
            c = ef * (c + 0.5 * dt * f0) + 0.5 * dt * f1
            out[j + 1] = c
        _check_finite(out.reshape(len(out), 16), "two-time evolution")
        return TwoTimeRow(self.grid, t2_index, self._mat_back(out))

    def _lag_step(self, c: np.ndarray, t2: np.ndarray, lag: int) -> np.ndarray:
        """Advance the matrices of rows ``t2`` from lag ``lag`` to ``lag + 1``."""
        dt = self.grid.dt
        ef = self.free_step[:, None]
        t1 = t2 + lag
        f0 = self.D[t1] @ c
        if not self.kernel.is_markov:
            f0 += self.A4 @ c @ self.extra_term_matrix(t1, lag).transpose(0, 2, 1)
        pred = ef * (c + dt * f0)
        f1 = self.D[t1 + 1] @ pred
        if not self.kernel.is_markov:
            f1 += self.A4 @ pred @ self.extra_term_matrix(t1 + 1, lag + 1).transpose(0, 2, 1)
        c = ef * (c + 0.5 * dt * f0) + 0.5 * dt * f1
        if not np.all(np.isfinite(c)):
            raise EvolutionError(f"two-time evolution produced non-finite values at lag step {lag + 1}")
        return c

    def _pair(self) -> np.ndarray:
        ld = self.L.adjoint().coefficients()
        lc = self.L.coefficients()
        if self._back is not None:
            ld, lc = ld @ self._back, lc @ self._back
        return np.outer(ld, lc).reshape(16)

    def two_time_columns(self, traj: OneTimeTrajectory, j0: int, j1: int) -> np.ndarray:
        """Columns ``t2 = j0..j1-1`` of the ``<L^+(t1) L(t2)>`` triangle.

        Returns an ``(N + 1, j1 - j0)`` array that is zero above the diagonal.
        """
        n_last = self.grid.N
        if not 0 <= j0 < j1 <= n_last + 1:
            raise ValueError(f"column range [{j0}, {j1}) outside the grid")
        pair = self._pair()
        t2 = np.arange(j0, j1)
        c = equal_time_matrix(self._vec_to_work(traj.values[j0:j1]))
        cols = np.zeros((n_last + 1, j1 - j0), dtype=complex)
        cols[t2, t2 - j0] = c.reshape(-1, 16) @ pair
        for lag in range(n_last - j0):
            rows = min(j1, n_last - lag) - j0
            c, t2 = c[:rows], t2[:rows]
            c = self._lag_step(c, t2, lag)
            cols[t2 + lag + 1, t2 - j0] = c.reshape(rows, 16) @ pair
        return cols

    def two_time_all(self, traj: OneTimeTrajectory, store_full: bool = False) -> TwoTimeCorrelation:
        """Every row of the triangle, advanced together lag by lag."""
        n_last = self.grid.N
        pair = self._pair()
        c = equal_time_matrix(self._vec_to_work(traj.values))  # rows t2 = 0..N at lag 0
        lower = np.zeros((n_last + 1, n_last + 1), dtype=complex)
        idx = np.arange(n_last + 1)
        lower[idx, idx] = c.reshape(-1, 16) @ pair
        full = None
        if store_full:
            full = np.zeros((n_last + 1, n_last + 1, 4, 4), dtype=complex)
            full[idx, idx] = c
        for lag in range(n_last):
            rows = n_last - lag  # rows t2 = 0..rows-1 can advance
            t2 = idx[:rows]
            c = self._lag_step(c[:rows], t2, lag)
            lower[t2 + lag + 1, t2] = c.reshape(rows, 16) @ pair
            if full is not None:
                full[t2 + lag + 1, t2] = c
        if full is not None and self._back is not None:
            full = self._mat_back(full)
        return TwoTimeCorrelation(self.grid, self.L, lower, full)


@dataclass(frozen=True)
class TriangleStream:
    """The two-time triangle produced block of columns by block of columns.

    Memory stays at ``(N + 1) * block`` entries instead of ``(N + 1)^2``,
    which is what makes long finite-T windows affordable.
    """

    dynamics: Dynamics
    trajectory: OneTimeTrajectory
    block: int = 0

    @property
    def grid(self) -> TimeGrid:
        return self.dynamics.grid

    def blocks(self):
        """Yield ``(j0, columns)`` pairs covering ``t2 = 0..N``."""
        n = self.grid.N + 1
        b = self.block or max(64, int(2**23 // n))
        for j0 in range(0, n, b):
            yield j0, self.dynamics.two_time_columns(self.trajectory, j0, min(j0 + b, n))


def _check_finite(arr: np.ndarray, what: str) -> None:
    bad = ~np.all(np.isfinite(arr), axis=-1)
    if np.any(bad):
        step = int(np.argmax(bad))
        raise EvolutionError(f"{what} produced non-finite values at step {step}")


def evolve_one_time(psi0, L, H, kernel, grid) -> OneTimeTrajectory:
    return Dynamics(L, H, kernel, grid).one_time(psi0)


def evolve_two_time(traj: OneTimeTrajectory, t2: float, L, H, kernel, grid) -> TwoTimeRow:
    if t2 > grid.T * (1 + 1e-12):
        raise ValueError(f"t2={t2} beyond the horizon T={grid.T}")
    return Dynamics(L, H, kernel, grid).two_time_row(traj, grid.index_of(t2))


def two_time_correlation(traj, L, H, kernel, grid, store_full: bool = False) -> TwoTimeCorrelation:
    return Dynamics(L, H, kernel, grid).two_time_all(traj, store_full=store_full)


def correlation_of_L(corr: TwoTimeCorrelation, L: SystemOperator | None = None) -> np.ndarray:
    """Square ``C_L(t, t') = <L^+(t) L(t')>`` with hermitian completion."""
    if L is None or L.allclose(corr.coupling, atol=0.0):
        return corr.square()
    if corr.matrices is None:
        raise ValueError("triangle was stored contracted; recompute with store_full=True")
    low = np.einsum("k,ijkm,m->ij", L.adjoint().coefficients(), corr.matrices, L.coefficients())
    low = np.tril(low)
    return low + np.tril(low, -1).conj().T


def qrt_reference_row(traj: OneTimeTrajectory, t2_index: int, dyn: Dynamics) -> np.ndarray:
    """Regression-theorem row: each column of ``C(t2, t2)`` carried by the one-time propagators."""
    if dyn._back is not None:
        raise ValueError("reference propagation needs a diagonal Hamiltonian")
    c = equal_time_matrix(traj.values[t2_index])
    out = [c]
    for n in range(t2_index, dyn.grid.N):
        c = dyn.propagators[n] @ c
        out.append(c)
    return np.array(out)


@dataclass(frozen=True)
class StationaryCorrelation:
    """``<L^+(t*) L(t* + s)>`` on ``s = 0, dt, ...`` plus the coherent offset ``|<L>|^2``."""

    s: np.ndarray
    values: np.ndarray
    offset: float
    t_star: float
    tail_residual: float

    @property
    def dt(self) -> float:
        return float(self.s[1] - self.s[0])


def steady_state_index(traj: OneTimeTrajectory, tol: float, window: float) -> int | None:
    """First grid index after which every component changes by less than
    ``tol`` per unit time for a full probation ``window``."""
    dt = traj.grid.dt
    rate = np.max(np.abs(np.diff(traj.values, axis=0)), axis=1) / dt
    w = max(int(math.ceil(window / dt)), 1)
    bad = np.concatenate([[0], np.cumsum(rate >= tol)])
    n = rate.size
    if n < w:
        return None
    ok = bad[w:] - bad[:-w] == 0  # ok[i]: steps i..i+w-1 all quiet
    hits = np.flatnonzero(ok)
    return int(hits[0]) if hits.size else None


def stationary_correlation(
    traj: OneTimeTrajectory,
    L: SystemOperator,
    H: SystemOperator,
    kernel: CorrelationKernel,
    grid: TimeGrid,
    tol: float = 1e-6,
    window: float | None = None,
    t_star: float | None = None,
    dynamics: Dynamics | None = None,
) -> StationaryCorrelation:
    """Correlation row started at the detected steady state.

    ``t_star`` bypasses detection (``t_star=0`` gives the transient
    spontaneous-emission correlation of an undriven atom).
    """
    dyn = dynamics or Dynamics(L, H, kernel, grid)
    if t_star is None:
        if window is None:
            split = dyn.rabi_splitting
            window = 5.0 / split if split > 0 else 10 * grid.dt
        idx = steady_state_index(traj, tol, window)
        if idx is None or idx > 0.6 * grid.N:
            raise SteadyStateError(
                f"no steady state (tol {tol:g} per unit time over {window:.3g}) before "
                f"0.6*T = {0.6 * grid.T:g}; increase T or check that the kernel damps the atom"
            )
    else:
        idx = grid.index_of(t_star)
    row = dyn.two_time_row(traj, idx)
    vals = np.conj(row.contract(L.adjoint(), L))
    mean_l = traj.expectation(L)[idx]
    offset = float(abs(mean_l) ** 2)
    resid = float(abs(vals[-1] - offset))
    s = grid.times[: grid.N - idx + 1]
    return StationaryCorrelation(s, vals, offset, idx * grid.dt, resid)
