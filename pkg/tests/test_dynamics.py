import numpy as np
import pytest

from pbgfluor.algebra import R3, R12, R21, R22, SystemOperator, bare_from_dressed, coupling_operator, dressed_parameters
from pbgfluor.dynamics import (
    Dynamics,
    EvolutionError,
    SteadyStateError,
    correlation_of_L,
    equal_time_matrix,
    evolve_one_time,
    evolve_two_time,
    initial_expectations,
    qrt_reference_row,
    stationary_correlation,
    steady_state_index,
    two_time_correlation,
)
from pbgfluor.environment import MarkovKernel, PeriodicBand3DKernel
from pbgfluor.grid import GridResolutionWarning, TimeGrid


def spontaneous(detuning=1.0, laser=0.0):
    atom = dressed_parameters(0.0, detuning, laser)
    return atom, coupling_operator(atom), atom.hamiltonian()


def driven(eps=0.15, det=0.0, laser=0.4):
    atom = dressed_parameters(eps, det, laser)
    return atom, coupling_operator(atom), atom.hamiltonian()


class TestOneTime:
    def test_markov_exponential_decay(self):
        atom, L, H = spontaneous()
        gamma = 0.05
        grid = TimeGrid(60.0, 6000)
        traj = evolve_one_time(atom.bare_excited_state(), L, H, MarkovKernel(gamma), grid)
        assert L.allclose(R12)
        excited = traj.expectation(R22).real
        assert np.max(np.abs(excited - np.exp(-2 * gamma * grid.times))) < 1e-4

    @pytest.mark.parametrize(
        "kernel", [MarkovKernel(0.02), PeriodicBand3DKernel(0.1, frame_shift=0.4), PeriodicBand3DKernel(0.0)]
    )
    def test_trace_and_hermiticity(self, kernel):
        atom, L, H = driven()
        traj = evolve_one_time(atom.bare_excited_state(), L, H, kernel, TimeGrid(200.0, 2000))
        assert np.max(np.abs(traj.trace - 1)) < 1e-8
        assert np.max(np.abs(traj.values[:, 2] - traj.values[:, 1].conj())) < 1e-10

    def test_decoupled_free_rotation(self):
        atom, L, H = driven()
        grid = TimeGrid(50.0, 500)
        traj = evolve_one_time(atom.bare_excited_state(), L, H, PeriodicBand3DKernel(0.0), grid)
        r12 = traj.values[:, 1]
        assert np.allclose(np.abs(r12), abs(r12[0]), atol=1e-12)
        assert np.allclose(r12, r12[0] * np.exp(-2j * atom.rabi * grid.times), atol=1e-12)

    def test_general_hamiltonian_matches_rotated_problem(self, rng):
        atom, L, H = driven(0.3, 0.1, 0.5)
        q, _ = np.linalg.qr(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
        rot = lambda op: SystemOperator(q @ op.entries @ q.conj().T)
        k = PeriodicBand3DKernel(0.1, frame_shift=0.5)
        grid = TimeGrid(100.0, 1000)
        psi = atom.bare_excited_state()
        a = evolve_one_time(psi, L, H, k, grid)
        b = evolve_one_time(q @ psi, rot(L), rot(H), k, grid)
        for op in (R12, R22, R3):
            assert np.allclose(a.expectation(op), b.expectation(rot(op)), atol=1e-10)

    def test_populations_stay_physical(self):
        atom, L, H = driven()
        traj = evolve_one_time(atom.bare_excited_state(), L, H, PeriodicBand3DKernel(0.1, frame_shift=0.4), TimeGrid(400.0, 2000))
        assert traj.populations.min() > -0.05 and traj.populations.max() < 1.05

    def test_nonfinite_reports_step(self):
        atom, L, H = driven()
        with pytest.raises(EvolutionError, match="step"):
            evolve_one_time(atom.bare_excited_state(), L, H, MarkovKernel(1e200), TimeGrid(10.0, 100))

    def test_bad_initial_state(self):
        with pytest.raises(ValueError):
            initial_expectations([1.0, 1.0])

    def test_resolution_warning(self):
        with pytest.warns(GridResolutionWarning):
            TimeGrid(100.0, 100).check_resolution(2.0, 3.0)


class TestTwoTime:
    def test_equal_time_initial_condition(self):
        atom, L, H = driven()
        k = PeriodicBand3DKernel(0.1, frame_shift=0.4)
        grid = TimeGrid(100.0, 500)
        traj = evolve_one_time(atom.bare_excited_state(), L, H, k, grid)
        row = evolve_two_time(traj, 40.0, L, H, k, grid)
        assert np.allclose(row.matrices[0], equal_time_matrix(traj.values[200]), atol=0)

    def test_beyond_horizon(self):
        atom, L, H = driven()
        k = PeriodicBand3DKernel(0.1)
        grid = TimeGrid(10.0, 100)
        traj = evolve_one_time(atom.bare_excited_state(), L, H, k, grid)
        with pytest.raises(ValueError):
            evolve_two_time(traj, 11.0, L, H, k, grid)

    def test_markov_matches_regression_reference(self):
        atom, L, H = driven(0.3, 0.1, 1.0)
        k = MarkovKernel(0.05)
        grid = TimeGrid(40.0, 400)
        dyn = Dynamics(L, H, k, grid)
        traj = dyn.one_time(atom.bare_excited_state())
        for t2 in (0, 123, 400):
            row = dyn.two_time_row(traj, t2)
            assert np.max(np.abs(row.matrices - qrt_reference_row(traj, t2, dyn))) < 1e-12

    def test_decoupled_constant_magnitudes(self):
        atom, L, H = driven()
        k = PeriodicBand3DKernel(0.0)
        grid = TimeGrid(30.0, 300)
        traj = evolve_one_time(atom.bare_excited_state(), L, H, k, grid)
        row = evolve_two_time(traj, 10.0, L, H, k, grid)
        mags = np.abs(row.matrices)
        assert np.allclose(mags, mags[0], atol=1e-12)

    def test_rows_agree_with_triangle(self):
        atom, L, H = driven()
        k = PeriodicBand3DKernel(0.1, frame_shift=0.4)
        grid = TimeGrid(60.0, 300)
        dyn = Dynamics(L, H, k, grid)
        traj = dyn.one_time(atom.bare_excited_state())
        tri = dyn.two_time_all(traj, store_full=True)
        for j in (0, 77, 300):
            row = dyn.two_time_row(traj, j)
            assert np.allclose(tri.matrices[j:, j], row.matrices, atol=1e-12)
            assert np.allclose(tri.lower[j:, j], row.contract(L.adjoint(), L), atol=1e-12)

    def test_non_markov_breaks_regression(self):
        # the extra two-time term is what distinguishes the structured reservoir
        atom, L, H = driven()
        k = PeriodicBand3DKernel(0.1, frame_shift=0.4)
        grid = TimeGrid(60.0, 300)
        dyn = Dynamics(L, H, k, grid)
        traj = dyn.one_time(atom.bare_excited_state())
        row = dyn.two_time_row(traj, 100)
        assert np.max(np.abs(row.matrices - qrt_reference_row(traj, 100, dyn))) > 1e-4


@pytest.fixture(scope="module")
def tri():
    atom, L, H = driven()
    k = PeriodicBand3DKernel(0.1, frame_shift=0.4)
    grid = TimeGrid(80.0, 400)
    traj = evolve_one_time(atom.bare_excited_state(), L, H, k, grid)
    return two_time_correlation(traj, L, H, k, grid, store_full=True), L, traj


class TestCorrelationOfL:

    def test_diagonal_real_nonnegative(self, tri):
        corr, L, traj = tri
        diag = np.diag(correlation_of_L(corr))
        assert np.max(np.abs(diag.imag)) < 1e-10
        assert diag.real.min() >= -1e-10
        assert np.allclose(diag, traj.expectation(L.adjoint() @ L), atol=1e-12)

    def test_hermitian_completion(self, tri):
        corr, L, _ = tri
        sq = correlation_of_L(corr)
        assert np.allclose(sq, sq.conj().T, atol=0)
        other = correlation_of_L(corr, L * 1.0)
        assert np.allclose(other, sq, atol=1e-12)

    def test_other_operator_needs_full_storage(self, tri):
        corr, L, traj = tri
        contracted = type(corr)(corr.grid, corr.coupling, corr.lower)
        with pytest.raises(ValueError):
            correlation_of_L(contracted, R3)

    def test_markov_spontaneous_closed_form(self):
        gamma, det = 0.05, 1.0
        atom, L, H = spontaneous(det)
        grid = TimeGrid(30.0, 3000)
        traj = evolve_one_time(atom.bare_excited_state(), L, H, MarkovKernel(gamma), grid)
        sq = correlation_of_L(two_time_correlation(traj, L, H, MarkovKernel(gamma), grid))
        t = grid.times[::100]
        tt, tp = np.meshgrid(t, t, indexing="ij")
        lo = tt >= tp
        ref = np.exp((1j * det - gamma) * (tt - tp)) * np.exp(-2 * gamma * tp)
        assert np.max(np.abs(sq[::100, ::100][lo] - ref[lo])) < 1e-4


class TestStationary:
    def test_offset_bound(self):
        atom, L, H = driven(0.3, 0.0, 1.0)
        k = MarkovKernel(0.05)
        grid = TimeGrid(600.0, 6000)
        traj = evolve_one_time(atom.bare_excited_state(), L, H, k, grid)
        sc = stationary_correlation(traj, L, H, k, grid)
        assert sc.values[0].real >= sc.offset - 1e-8
        assert 0 < sc.t_star < 0.6 * grid.T

    def test_mollow_frequencies(self):
        eps = 0.3
        atom, L, H = driven(eps, 0.0, 1.0)
        k = MarkovKernel(0.02)
        grid = TimeGrid(1500.0, 15000)
        traj = evolve_one_time(atom.bare_excited_state(), L, H, k, grid)
        sc = stationary_correlation(traj, L, H, k, grid)
        f = sc.values - sc.offset
        nu = np.linspace(-1.0, 1.0, 2001)
        dens = 2 * (np.exp(1j * np.outer(nu, sc.s)) @ f).real * sc.dt
        peaks = [nu[i] for i in range(1, nu.size - 1) if dens[i] > dens[i - 1] and dens[i] >= dens[i + 1] and dens[i] > 0.05 * dens.max()]
        assert np.allclose(sorted(peaks), [-2 * eps, 0.0, 2 * eps], atol=2e-3)

    def test_undamped_fails(self):
        atom, L, H = driven(0.3, 0.0, 1.0)
        k = PeriodicBand3DKernel(0.0)
        grid = TimeGrid(200.0, 2000)
        traj = evolve_one_time(atom.bare_excited_state(), L, H, k, grid)
        with pytest.raises(SteadyStateError, match="increase T"):
            stationary_correlation(traj, L, H, k, grid)

    def test_explicit_sampling_time(self):
        atom, L, H = spontaneous(0.2)
        k = MarkovKernel(0.05)
        grid = TimeGrid(100.0, 1000)
        traj = evolve_one_time(atom.bare_excited_state(), L, H, k, grid)
        sc = stationary_correlation(traj, L, H, k, grid, t_star=0.0)
        assert sc.t_star == 0 and sc.s.size == 1001 and sc.offset == 0

    def test_steady_index_window(self):
        grid = TimeGrid(10.0, 10)
        vals = np.zeros((11, 4), dtype=complex)
        vals[:4, 0] = [1.0, 0.5, 0.2, 0.1]

        class T:
            pass

        tr = T()
        tr.grid, tr.values = grid, vals
        assert steady_state_index(tr, 1e-6, 3.0) == 4
        assert steady_state_index(tr, 1e-6, 20.0) is None


def test_grid_convergence_of_correlation():
    # reduced laserband: halving dt moves C_L on the common grid by < 1%
    atom, L, H = driven(0.15, 0.0, 0.4)
    k = PeriodicBand3DKernel(0.1, frame_shift=0.4)
    rows = []
    for n in (1000, 2000):
        grid = TimeGrid(200.0, n)
        dyn = Dynamics(L, H, k, grid)
        traj = dyn.one_time(atom.bare_excited_state())
        rows.append(dyn.two_time_all(traj).square())
    coarse, fine = rows[0], rows[1][::2, ::2]
    assert np.max(np.abs(coarse - fine)) / np.max(np.abs(fine)) < 0.01
