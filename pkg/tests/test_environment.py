import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pbgfluor.environment import (
    MarkovEvaluationError,
    MarkovKernel,
    MemoryAccumulator,
    ParabolicEdgeKernel,
    PeriodicBand3DKernel,
    SpatialKernelTransform,
    evaluate_kernel,
    kernel_laplace,
    load_tabulated_kernel,
    memory_coefficient,
    memory_coefficients,
    parabolic_from_band,
    q_constant,
    save_tabulated_kernel,
    spatial_kernel_ft,
    spectral_density_check,
)
from pbgfluor.grid import TimeGrid
from pbgfluor.oracle import periodic_band_density

# int_0^inf exp(-i tau) J0(tau/3)^3 dtau, from -i * int J(w)/w dw with the
# cubic-lattice density (adaptive quadrature, error ~1e-11)
LAPLACE_ZERO_BAND = -1.5163860591537002j


def envelope_slope(kernel, lo, hi):
    tau = np.linspace(lo, hi, 200001)
    a = np.abs(kernel.evaluate(tau))
    peaks = np.where((a[1:-1] > a[:-2]) & (a[1:-1] >= a[2:]))[0] + 1
    slope, _ = np.polyfit(np.log(tau[peaks]), np.log(a[peaks]), 1)
    return slope


class TestEvaluate:
    def test_band_at_zero(self):
        assert evaluate_kernel(PeriodicBand3DKernel(1.0), 0.0) == 1.0
        assert PeriodicBand3DKernel(0.3).evaluate(0.0) == pytest.approx(0.09, abs=0, rel=1e-15)

    def test_band_formula(self):
        from scipy.special import j0

        k = PeriodicBand3DKernel(0.2, A=0.7, B=1.3)
        tau = np.array([0.5, 3.0, 17.0])
        assert np.allclose(k.evaluate(tau), 0.04 * np.exp(-0.7j * tau) * j0(1.3 * tau / 3) ** 3)

    def test_markov_not_pointwise(self):
        with pytest.raises(MarkovEvaluationError, match="analytic"):
            MarkovKernel(0.1).evaluate(1.0)

    def test_one_sided(self):
        with pytest.raises(ValueError):
            PeriodicBand3DKernel(1.0).evaluate(-1.0)

    def test_parabolic_frozen_below_cutoff(self):
        k = ParabolicEdgeKernel(2.0, omega_c=0.3, tau_min=0.5)
        assert k.evaluate(0.0) == k.evaluate(0.2) == k.evaluate(0.5)
        tau = 4.0
        assert k.evaluate(tau) == pytest.approx(2.0 * np.exp(1j * (np.pi / 4 - 0.3 * tau)) / tau**1.5)

    def test_frame_shift(self):
        k = PeriodicBand3DKernel(0.5)
        tau = np.linspace(0, 10, 7)
        assert np.allclose(k.with_frame_shift(0.4).evaluate(tau), k.evaluate(tau) * np.exp(0.4j * tau))

    @pytest.mark.parametrize("bad", [dict(g=-1.0), dict(g=1.0, B=0.0)])
    def test_band_invariants(self, bad):
        with pytest.raises(ValueError):
            PeriodicBand3DKernel(**bad)

    def test_other_invariants(self):
        with pytest.raises(ValueError):
            MarkovKernel(-0.1)
        with pytest.raises(ValueError):
            ParabolicEdgeKernel(1.0, tau_min=0.0)

    def test_envelope_slope(self):
        assert envelope_slope(PeriodicBand3DKernel(1.0), 50, 500) == pytest.approx(-1.5, abs=0.1)

    def test_parabolic_amplitude_relation(self):
        k = parabolic_from_band(0.1, 1.0, 0.0)
        assert k.sqrt_beta == pytest.approx(0.01 * 6**1.5 / 8)


class TestMemory:
    def test_markov_full_weight(self):
        grid = TimeGrid(10.0, 100)
        assert memory_coefficient(MarkovKernel(0.3), 1.7, 5.0, grid) == 0.3
        assert np.all(memory_coefficients(MarkovKernel(0.3), [0.0, 2.0], grid) == 0.3)

    def test_zero_at_origin(self):
        assert memory_coefficient(PeriodicBand3DKernel(1.0), 0.4, 0.0, TimeGrid(10.0, 100)) == 0

    def test_off_grid(self):
        with pytest.raises(ValueError, match="not on the grid"):
            memory_coefficient(PeriodicBand3DKernel(1.0), 0.0, 0.033, TimeGrid(10.0, 100))

    def test_incremental_equals_batch(self):
        k = PeriodicBand3DKernel(0.7, A=1.0, B=1.0, frame_shift=0.4)
        grid = TimeGrid(50.0, 2000)
        batch = memory_coefficients(k, [0.3], grid)[:, 0]
        acc = MemoryAccumulator(k, 0.3, grid)
        inc = np.array([0j] + [acc.step() for _ in range(grid.N)])
        assert np.max(np.abs(inc - batch)) < 1e-12

    def test_trapezoid_against_quad(self):
        from scipy.integrate import quad

        k = PeriodicBand3DKernel(1.0)
        grid = TimeGrid(20.0, 4000)
        m = memory_coefficients(k, [0.5], grid)[-1, 0]
        f = lambda t: k.evaluate(t) * np.exp(0.5j * t)
        re = quad(lambda t: f(t).real, 0, 20, limit=200)[0]
        im = quad(lambda t: f(t).imag, 0, 20, limit=200)[0]
        assert m == pytest.approx(re + 1j * im, abs=1e-5)

    def test_long_time_limit(self):
        # w = 0 is the lower band edge: the tail decays like t^-1/2, so
        # extrapolate out the leading correction before comparing
        k = PeriodicBand3DKernel(1.0)
        m = {T: memory_coefficients(k, [0.0], TimeGrid(T, int(T / 0.05)))[-1, 0] for T in (2000.0, 8000.0)}
        assert abs(m[8000.0] - LAPLACE_ZERO_BAND) < abs(m[2000.0] - LAPLACE_ZERO_BAND)
        extrapolated = 2 * m[8000.0] - m[2000.0]
        assert abs(extrapolated - LAPLACE_ZERO_BAND) < 1e-3


class TestLaplace:
    def test_markov(self):
        lt = kernel_laplace(MarkovKernel(0.2), [-3.0, 0.0, 5.0])
        assert np.all(lt.values == 0.2) and lt.converged

    def test_band_support(self):
        w = np.linspace(-2.0, 4.0, 121)
        mag = np.abs(kernel_laplace(PeriodicBand3DKernel(0.1), w).values)
        inside = (w > 0) & (w < 2)
        assert mag[inside].max() > mag[~inside].max()
        # the principal-value tail falls off like g^2 / |w - A|
        far = np.abs(kernel_laplace(PeriodicBand3DKernel(0.1), np.linspace(-20.0, -8.0, 25)).values)
        assert far.max() < 0.05 * mag[inside].max()

    def test_real_part_is_pi_density(self):
        w = np.array([0.3, 0.8, 1.0, 1.6])
        lt = kernel_laplace(PeriodicBand3DKernel(1.0), w, T=4000.0, dt=0.05)
        assert np.allclose(lt.values.real, np.pi * periodic_band_density(1.0)(w), atol=5e-3)

    def test_tail_flag(self):
        lt = kernel_laplace(PeriodicBand3DKernel(1.0), [0.0], T=30.0, tol=1e-3)
        assert not lt.converged and lt.relative_tail_change > 1e-3


class TestSpatial:
    def test_band_edge_value(self):
        s = SpatialKernelTransform(0.7 + 0.2j, 2.0, 0.5, 10.0)
        assert abs(s.evaluate(0.5)) == pytest.approx(abs(0.7 + 0.2j) * 2 * np.pi**2 / 20.0)

    def test_gap_damping(self):
        s = SpatialKernelTransform(1.0, 1.0, 0.0, 10.0)
        assert abs(s.evaluate(-1.0)) / abs(s.evaluate(1.0)) == pytest.approx(math.exp(-10.0), rel=1e-12)

    def test_band_modulus_flat(self):
        s = SpatialKernelTransform(1.0, 1.0, 0.0, 7.0)
        mags = np.abs(s.evaluate(np.linspace(0.01, 3.0, 50)))
        assert np.allclose(mags, mags[0], rtol=1e-14)

    @pytest.mark.parametrize("w", [-0.05, -0.3, -1.2])
    def test_log_linear_in_d(self, w):
        ds = np.array([4.0, 8.0, 16.0, 32.0])
        logs = [math.log(abs(SpatialKernelTransform(1.0, 1.5, 0.0, d).evaluate(w)) * d) for d in ds]
        l = math.sqrt(1.5 / abs(w))
        assert np.allclose(np.diff(logs) / np.diff(ds), -1 / l, atol=1e-12)

    def test_band_d2_invariant(self):
        vals = [d**2 * abs(SpatialKernelTransform(0.3, 1.0, 0.0, d).evaluate(1.4)) ** 2 for d in (3.0, 10.0, 77.0)]
        assert np.allclose(vals, vals[0], rtol=1e-14)

    @given(st.floats(-3, -1e-3), st.floats(3, 50), st.floats(0.1, 20))
    def test_gap_monotone_in_d(self, w, d, extra):
        a = abs(SpatialKernelTransform(1.0, 1.0, 0.0, d).evaluate(w))
        b = abs(SpatialKernelTransform(1.0, 1.0, 0.0, d + extra).evaluate(w))
        assert b <= a

    def test_localization_length(self):
        s = SpatialKernelTransform(1.0, 1.0, 0.0, 10.0)
        assert s.localization_length(-0.1) == pytest.approx(math.sqrt(10.0))

    def test_errors_and_warnings(self):
        with pytest.raises(ValueError, match="spatial.d > 0"):
            SpatialKernelTransform(1.0, 1.0, 0.0, -1.0)
        with pytest.raises(ValueError):
            SpatialKernelTransform(1.0, 0.0, 0.0, 1.0)
        assert SpatialKernelTransform(1.0, 1.0, 0.0, 2.0).regime_warnings()
        assert not SpatialKernelTransform(1.0, 1.0, 0.0, 10.0).regime_warnings()

    def test_function_form(self):
        s = SpatialKernelTransform(1.0, 1.0, 0.0, 5.0)
        assert spatial_kernel_ft(s, -0.2) == s.evaluate(-0.2)


class TestQ:
    def test_single_point(self):
        q = q_constant(2.0, 1.5, [(0, 0, 0)], (1, 0, 0), np.pi / 2, np.pi / 2)
        assert q == pytest.approx(2.0 * (1.5 / (2 * np.pi)) ** 3)

    def test_axial_dipole(self):
        assert q_constant(2.0, 1.0, [(1, 0, 0)], (1, 0, 0), 0.0, 1.0) == 0

    def test_opposite_phases(self):
        k0 = [(np.pi, 0, 0), (-np.pi, 0, 0)]
        th, thd = 0.8, 1.1
        q = q_constant(1.0, 1.0, k0, (1, 0, 0), th, thd)
        assert q == pytest.approx(-2 * (1 / (2 * np.pi)) ** 3 * np.sin(th) ** 2 * np.sin(thd) ** 2)

    def test_errors(self):
        with pytest.raises(ValueError):
            q_constant(1.0, 1.0, [], (1, 0, 0), 1.0, 1.0)
        with pytest.raises(ValueError):
            q_constant(1.0, 1.0, [(0, 0, 0)], (0, 0, 0), 1.0, 1.0)


class TestSpectralDensity:
    def test_markov_flat(self):
        assert np.allclose(spectral_density_check(MarkovKernel(0.4), [0.0, 1.0], 100.0), 0.4 / (2 * np.pi))

    def test_band_support_and_positivity(self):
        w = np.linspace(-1.0, 3.0, 401)
        j = spectral_density_check(PeriodicBand3DKernel(1.0), w, window=1000.0)
        inside = (w >= 0) & (w <= 2)
        dw = w[1] - w[0]
        leakage = np.abs(j[~inside]).sum() / np.abs(j).sum()
        assert leakage < 0.05
        assert j.min() > -0.02 * j.max()
        assert j.sum() * dw == pytest.approx(1.0, rel=0.02)

    def test_matches_lattice_density(self):
        w = np.array([0.2, 0.5, 1.0, 1.5])
        j = spectral_density_check(PeriodicBand3DKernel(1.0), w, window=3000.0, taper=None)
        assert np.allclose(j, periodic_band_density(1.0)(w), atol=3e-3)

    def test_window_too_short(self):
        with pytest.raises(ValueError, match="window"):
            spectral_density_check(PeriodicBand3DKernel(1.0), np.linspace(0, 1, 101), window=50.0)


def test_tabulated_round_trip(tmp_path):
    k = PeriodicBand3DKernel(0.4)
    tau = np.linspace(0, 30, 301)
    path = tmp_path / "k.csv"
    save_tabulated_kernel(path, k, tau)
    t = load_tabulated_kernel(path)
    assert np.allclose(t.evaluate(tau), k.evaluate(tau), atol=1e-15)
    assert np.allclose(t.evaluate(np.array([0.05, 12.34])), k.evaluate(np.array([0.05, 12.34])), atol=2e-3)


def test_tabulated_rejects_nonuniform(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("tau,re,im\n0,1,0\n0.1,1,0\n0.3,1,0\n")
    with pytest.raises(ValueError, match="uniform"):
        load_tabulated_kernel(p)
