import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import lindblad_superoperator
from rydlti.liouvillian import N_STATE, LiouvillianPair, idx
from rydlti.steady_state import solve_steady_state
from rydlti.transfer import (TWO_PI, ResolventError, TransferFunction, VelocityGrid,
                             doppler_detunings, make_velocity_grid, normalize_dc,
                             phase_response, probe_observable, resolvent_response,
                             transfer_sweep, wrap_phase)

K_B = 1.380649e-23
AMU = 1.66053906660e-27


def modal_response(params, omega, dp=None, dc=None):
    """Probe response from the eigen-expansion of the independent generator."""
    a = lindblad_superoperator(params, dp, dc)
    h = 1e3
    b = (lindblad_superoperator(params, dp, dc, params.omega_lo + h)
         - lindblad_superoperator(params, dp, dc, params.omega_lo - h)) / (2 * h)
    ev, vecs = np.linalg.eig(a)
    null = np.argmin(np.abs(ev))
    rho = vecs[:, null] / vecs[[idx(k, k) for k in range(1, 6)], null].sum()
    coef = np.linalg.solve(vecs, b @ rho)
    coef[null] = 0.0  # the forcing is trace free
    keep = np.arange(N_STATE) != null
    x = vecs[:, keep] @ (coef[keep] / (1j * omega - ev[keep]))
    return (x[idx(1, 2)] - x[idx(2, 1)]) / 2j


class TestProbeObservable:
    def test_zero(self):
        assert probe_observable(np.zeros(N_STATE)) == 0

    def test_real_symmetric_cancels(self):
        r = np.zeros(N_STATE, dtype=complex)
        r[idx(1, 2)] = r[idx(2, 1)] = 0.7
        assert probe_observable(r) == 0

    def test_unit(self):
        r = np.zeros(N_STATE, dtype=complex)
        r[idx(1, 2)], r[idx(2, 1)] = 1j, -1j
        assert probe_observable(r) == pytest.approx(1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31), st.floats(-5, 5), st.floats(-5, 5))
    def test_linear(self, seed, a, b):
        rng = np.random.default_rng(seed)
        x, y = (rng.normal(size=(N_STATE, 2)) @ np.array([1, 1j]) for _ in range(2))
        lhs = probe_observable(a * x + b * y)
        rhs = a * probe_observable(x) + b * probe_observable(y)
        assert abs(lhs - rhs) <= 1e-12 * (1 + abs(rhs))


class TestResolvent:
    @pytest.mark.parametrize("f_hz", [0.0, 1e5, 1e6, 5e6, 1e7])
    def test_matches_modal_expansion(self, params, pair, rho_ss, f_hz):
        w = TWO_PI * f_hz
        got = probe_observable(resolvent_response(pair, rho_ss, w))
        assert got == pytest.approx(modal_response(params, w), rel=1e-8)

    @pytest.mark.parametrize("f_hz", [1e5, 1e6, 1e7])
    def test_resolvent_identity(self, pair, rho_ss, f_hz):
        w = TWO_PI * f_hz
        x = resolvent_response(pair, rho_ss, w)
        forcing = pair.b @ rho_ss.data
        resid = (1j * w * np.eye(N_STATE) - pair.a) @ x - forcing
        assert np.max(np.abs(resid)) <= 1e-10 * np.max(np.abs(forcing))

    def test_dc_is_trace_free_limit(self, pair, rho_ss):
        x0 = resolvent_response(pair, rho_ss, 0.0)
        assert abs(x0[[idx(k, k) for k in range(1, 6)]].sum()) <= 1e-12 * np.max(np.abs(x0))
        x_small = resolvent_response(pair, rho_ss, TWO_PI * 1.0)
        assert np.max(np.abs(x_small - x0)) <= 1e-5 * np.max(np.abs(x0))

    def test_zero_forcing(self, params):
        p = params.replace(omega_p=0.0, omega_c=0.0, omega_lo=0.0)
        pair = LiouvillianPair.from_params(p)
        assert not np.any(resolvent_response(pair, solve_steady_state(pair), 1.0))

    def test_singular_flagged(self, pair, rho_ss):
        # drift with an undamped mode exactly at the drive frequency
        undamped = LiouvillianPair(1j * 2.0 * np.eye(N_STATE), pair.b)
        with pytest.raises(ResolventError):
            resolvent_response(undamped, rho_ss, 2.0)


class TestDoppler:
    def test_zero_velocity(self, params):
        assert doppler_detunings(params, 0.0) == (params.delta_p, params.delta_c)

    def test_independent_constants(self, params):
        sv = np.sqrt(2 * K_B * 300.0 / (84.911789738 * AMU))
        dp, dc = doppler_detunings(params, 1.0)
        assert dp - params.delta_p == pytest.approx(TWO_PI * sv / 780.241e-9, rel=1e-9)
        assert dc - params.delta_c == pytest.approx(-TWO_PI * sv / 480e-9, rel=1e-9)

    def test_signs(self, params):
        dp, dc = doppler_detunings(params, 0.3)
        assert dp > params.delta_p and dc < params.delta_c


class TestVelocityGrid:
    def test_single_node(self):
        g = make_velocity_grid(1)
        assert g.nodes.tolist() == [0.0] and g.weights.tolist() == [1.0]

    def test_default_is_61(self):
        assert len(make_velocity_grid()) == 61

    @pytest.mark.parametrize("n", [2, 21, 61])
    def test_moments(self, n):
        g = make_velocity_grid(n)
        assert g.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert g.weights @ g.nodes**2 == pytest.approx(0.5, abs=1e-10)

    def test_odd_rule_has_exact_center(self):
        assert 0.0 in make_velocity_grid(21).nodes

    def test_trapezoid_normalized(self):
        g = make_velocity_grid(401, "trapezoid")
        assert g.weights.sum() == pytest.approx(1.0, abs=1e-9)
        assert g.weights @ g.nodes**2 == pytest.approx(0.5, abs=1e-8)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            make_velocity_grid(0)
        with pytest.raises(ValueError):
            make_velocity_grid(3, "simpson")
        with pytest.raises(ValueError):
            VelocityGrid(np.zeros(2), np.array([1.0, -1.0]))


class TestTransferSweep:
    def test_n1_grid_is_single_class(self, params):
        f = [0, 1e6]
        a = transfer_sweep(params, f)
        b = transfer_sweep(params, f, grid=make_velocity_grid(1))
        assert np.array_equal(a.values, b.values)

    def test_doppler_average_is_weighted_sum(self, params):
        g = make_velocity_grid(5)
        f = [2e6]
        total = sum(w * transfer_sweep(params, f, grid=VelocityGrid([u], [1.0])).values[0]
                    for u, w in zip(g.nodes, g.weights))
        assert transfer_sweep(params, f, grid=g).values[0] == pytest.approx(total, rel=1e-13)

    def test_velocity_class_against_modal(self, params):
        dp, dc = doppler_detunings(params, 0.7)
        got = transfer_sweep(params, [1e6], grid=VelocityGrid([0.7], [1.0])).values[0]
        assert got == pytest.approx(modal_response(params, TWO_PI * 1e6, dp, dc), rel=1e-7)

    def test_threads_identical(self, params):
        g = make_velocity_grid(9)
        a = transfer_sweep(params, [0, 3e6], grid=g, threads=1)
        b = transfer_sweep(params, [0, 3e6], grid=g, threads=4)
        assert np.array_equal(a.values, b.values)

    @pytest.mark.parametrize("grid", [None, make_velocity_grid(21)])
    def test_conjugate_symmetry(self, params, grid):
        f = np.array([1e5, 1e6, 4e6, 1e7])
        pos = transfer_sweep(params, f, grid=grid).values
        neg = transfer_sweep(params, -f[::-1], grid=grid).values[::-1]
        assert np.max(np.abs(neg - pos.conj()) / np.abs(pos)) <= 1e-10

    def test_phase_antisymmetric_after_dc_alignment(self, params):
        f = np.array([-3e6, -1e6, 0.0, 1e6, 3e6])
        ph = phase_response(transfer_sweep(params, f), align_dc=True)
        np.testing.assert_allclose(ph[:2], -ph[-1:-3:-1], atol=1e-10)

    def test_known_lowpass_shape(self, params):
        tf = normalize_dc(transfer_sweep(params, [0, 1e6, 1e7]))
        assert tf.amplitude[1] == pytest.approx(abs(modal_response(params, TWO_PI * 1e6)
                                                    / modal_response(params, 0.0)), rel=1e-8)
        assert tf.amplitude[2] < tf.amplitude[1] < 1

    def test_empty_freqs(self, params):
        with pytest.raises(ValueError):
            transfer_sweep(params, [])

    def test_quadrature_converged_for_cold_vapor(self, params):
        cold = params.replace(temperature=1e-2)
        f = np.linspace(0, 1e7, 11)
        a = transfer_sweep(cold, f, grid=make_velocity_grid(41)).values
        b = transfer_sweep(cold, f, grid=make_velocity_grid(81)).values
        assert np.max(np.abs(a - b) / np.abs(b)) < 1e-6

    def test_quadrature_converged_at_300K(self, params):
        # Doubling the nodes beyond 41 should change the averaged sweep by
        # < 1e-6.  At 300 K the two-photon feature is ~1e-3 wide in u while
        # the Gauss-Hermite spacing near u=0 is ~0.3, so this does not hold.
        f = np.linspace(0, 1e7, 11)
        a = transfer_sweep(params, f, grid=make_velocity_grid(41)).values
        b = transfer_sweep(params, f, grid=make_velocity_grid(81)).values
        assert np.max(np.abs(a - b) / np.abs(b)) < 1e-6


class TestNormalization:
    def test_dc_unity_and_idempotent(self, params):
        tf = transfer_sweep(params, np.linspace(0, 1e7, 11))
        once = normalize_dc(tf)
        twice = normalize_dc(once)
        assert once.values[0] == 1 and abs(once.amplitude[0]) == 1
        np.testing.assert_allclose(twice.values, once.values, rtol=1e-15)
        assert twice.normalization == pytest.approx(once.normalization)

    def test_ratios_preserved(self, params):
        tf = transfer_sweep(params, np.linspace(0, 1e7, 11))
        n = normalize_dc(tf)
        assert n.values[4] / n.values[7] == pytest.approx(tf.values[4] / tf.values[7])

    def test_tiny_dc_rejected(self):
        with pytest.raises(ValueError, match="too small"):
            normalize_dc(TransferFunction([0.0, 1.0], [1e-16, 1.0]))


class TestPhase:
    def test_unit_and_minus_one(self):
        tf = TransferFunction([1.0, 2.0], [1.0, -1.0])
        np.testing.assert_array_equal(phase_response(tf), [0.0, np.pi])

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-100, 100))
    def test_wrap_range(self, x):
        w = wrap_phase(x)
        assert -np.pi < w <= np.pi
        assert np.cos(w) == pytest.approx(np.cos(x), abs=1e-9)

    def test_wrap_boundary(self):
        assert wrap_phase(-np.pi) == np.pi


class TestTransferFunctionType:
    def test_validation(self):
        with pytest.raises(ValueError):
            TransferFunction([1.0, 1.0], [1, 2])
        with pytest.raises(ValueError):
            TransferFunction([1.0], [np.nan])
        with pytest.raises(ValueError):
            TransferFunction([1.0, 2.0], [1.0])

    def test_units(self):
        tf = TransferFunction([TWO_PI * 5.0], [2j])
        assert tf.freqs_hz[0] == pytest.approx(5.0) and tf.amplitude[0] == 2
