import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rydlti.oracle import fit_sinusoid
from rydlti.transfer import TWO_PI, TransferFunction, transfer_sweep
from rydlti.waveforms import (IQWaveform, ImpulseResponse, add_awgn, constellation_report,
                              convolve, demodulate_symbols, equalize, evm, generate_qam16,
                              impulse_response, qam16_constellation, tf_fingerprint,
                              uniform_tf_grid)

from conftest import seeds


def tf_from(fn, f_max=1e6, df=1e4):
    f = uniform_tf_grid(f_max, df)
    return TransferFunction(TWO_PI * f, fn(f))


def lowpass(f, fc=2e5):
    return 1 / (1 + 1j * f / fc)


@pytest.fixture(scope="module")
def sensor_tf(params):
    return transfer_sweep(params, uniform_tf_grid(10e6, 25e3))


class TestImpulseResponse:
    def test_flat_spectrum_is_unit_impulse(self):
        ir = impulse_response(tf_from(np.ones_like), taper=0)
        expected = np.zeros(len(ir))
        expected[ir.delay] = 1
        np.testing.assert_allclose(ir.taps, expected, atol=1e-12)

    @pytest.mark.parametrize("shift", [1, 7, -3])
    def test_linear_phase_is_shifted_impulse(self, shift):
        fs = 2e6
        ir = impulse_response(tf_from(lambda f: np.exp(-1j * TWO_PI * f * shift / fs)),
                              taper=0)
        assert ir.sample_rate == pytest.approx(fs)
        expected = np.zeros(len(ir))
        expected[ir.delay + shift] = 1
        np.testing.assert_allclose(ir.taps, expected, atol=1e-12)

    def test_dtft_round_trip(self):
        tf = tf_from(lowpass)
        ir = impulse_response(tf, taper=0)
        # the Nyquist bin of a minimal-length real transform is forced real
        np.testing.assert_allclose(ir.frequency_response(tf.freqs_hz[:-1]), tf.values[:-1],
                                   atol=1e-8)
        assert ir.frequency_response(tf.freqs_hz[-1:])[0] == pytest.approx(tf.values[-1].real)

    def test_zero_padding_interpolates_band_edge(self):
        tf = tf_from(lowpass)
        ir = impulse_response(tf, n_fft=800, taper=0)
        assert ir.sample_rate == pytest.approx(8e6)
        np.testing.assert_allclose(ir.frequency_response(tf.freqs_hz), tf.values, atol=1e-8)
        assert abs(ir.frequency_response([3e6])[0]) < 1e-8

    def test_taper_only_touches_band_edge(self):
        tf = tf_from(lowpass)
        ir = impulse_response(tf, taper=0.1)
        f = tf.freqs_hz
        got = ir.frequency_response(f)
        inside = f < 0.89e6
        np.testing.assert_allclose(got[inside], tf.values[inside], atol=1e-8)
        assert np.all(np.abs(got[~inside]) <= np.abs(tf.values[~inside]) + 1e-12)

    def test_real_and_provenanced(self, sensor_tf):
        ir = impulse_response(sensor_tf, n_fft=4000)
        assert ir.taps.dtype == float and len(ir) == 4000
        assert ir.provenance["source"] == tf_fingerprint(sensor_tf)
        assert ir.provenance["imag_residue"] < 1e-12
        assert ir.tail_ratio < 1e-6
        assert ir.provenance["df_hz"] == pytest.approx(25e3)

    def test_sensor_response_reproduced(self, sensor_tf):
        ir = impulse_response(sensor_tf, n_fft=4000)
        f = sensor_tf.freqs_hz[sensor_tf.freqs_hz <= 8.9e6]
        np.testing.assert_allclose(ir.frequency_response(f),
                                   sensor_tf.values[:f.size], atol=1e-10 * np.max(sensor_tf.amplitude))

    def test_rejects_bad_grids(self):
        with pytest.raises(ValueError, match="0 Hz"):
            impulse_response(TransferFunction(TWO_PI * np.array([1.0, 2.0]), [1, 1]))
        with pytest.raises(ValueError, match="uniform"):
            impulse_response(TransferFunction(TWO_PI * np.array([0.0, 1.0, 3.0]), [1, 1, 1]))
        with pytest.raises(ValueError, match="n_fft"):
            impulse_response(tf_from(np.ones_like), n_fft=10)
        with pytest.raises(ValueError, match="imaginary"):
            impulse_response(tf_from(lambda f: np.full(f.shape, 1j)))
        with pytest.raises(ValueError, match="at least two"):
            impulse_response(TransferFunction([0.0], [1.0]))

    def test_rejects_bad_taps(self):
        with pytest.raises(ValueError):
            ImpulseResponse(np.array([]), 1.0)
        with pytest.raises(ValueError):
            ImpulseResponse(np.array([1.0, np.nan]), 1.0)
        with pytest.raises(ValueError):
            ImpulseResponse(np.ones(3), 1.0, delay=3)


class TestConvolve:
    ir = impulse_response(tf_from(lowpass), taper=0)

    def signal(self, rng, n=1000, zero_tail=300):
        x = rng.standard_normal(n)
        x[n - zero_tail:] = 0
        return IQWaveform(x, self.ir.sample_rate)

    @settings(max_examples=30, deadline=None)
    @given(seeds, st.floats(-10, 10), st.floats(-10, 10))
    def test_linearity(self, seed, a, b):
        rng = np.random.default_rng(seed)
        x1, x2 = self.signal(rng), self.signal(rng)
        mixed = IQWaveform(a * x1.samples + b * x2.samples, x1.sample_rate)
        lhs = convolve(mixed, self.ir).samples
        rhs = a * convolve(x1, self.ir).samples + b * convolve(x2, self.ir).samples
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, abs(a), abs(b)) * 10

    @settings(max_examples=30, deadline=None)
    @given(seeds, st.integers(1, 100))
    def test_time_invariance(self, seed, s):
        x = self.signal(np.random.default_rng(seed), zero_tail=300)
        shifted = IQWaveform(np.roll(x.samples, s), x.sample_rate)
        y = convolve(x, self.ir).samples
        ys = convolve(shifted, self.ir).samples
        # interior only: the trimmed window drops the response to samples before t=0
        n_ring = len(self.ir)
        np.testing.assert_allclose(ys[s + n_ring // 2:], y[n_ring // 2:len(y) - s], atol=1e-12)

    def test_tone_gets_transfer_gain(self, sensor_tf):
        ir = impulse_response(sensor_tf, n_fft=4000)
        f = 1e6
        t = np.arange(20000) / ir.sample_rate
        y = convolve(IQWaveform(np.cos(TWO_PI * f * t), ir.sample_rate), ir).samples
        mid = slice(8000, 12000)
        fit = fit_sinusoid(t[mid], y[mid], f, n_cycles=40)
        g = sensor_tf.values[np.argmin(np.abs(sensor_tf.freqs_hz - f))]
        assert fit.amplitude == pytest.approx(abs(g), rel=1e-4)
        assert fit.phase == pytest.approx(np.angle(g), abs=1e-4)

    def test_annotations(self):
        y = convolve(IQWaveform(np.ones(500), self.ir.sample_rate, annotation={"k": 1}), self.ir)
        assert y.annotation["k"] == 1
        assert y.annotation["group_delay_samples"] == self.ir.delay

    def test_errors(self):
        with pytest.raises(ValueError, match="sample rate"):
            convolve(IQWaveform(np.ones(500), 1.0), self.ir)
        with pytest.raises(ValueError, match="shorter"):
            convolve(IQWaveform(np.ones(10), self.ir.sample_rate), self.ir)


class TestQAM:
    def test_constellation(self):
        pts = qam16_constellation()
        assert pts.size == 16 and np.unique(pts).size == 16
        assert np.mean(np.abs(pts) ** 2) == pytest.approx(1)
        assert pts[0].real < 0 < pts[0].imag
        assert np.sum(pts) == pytest.approx(0)

    def test_single_level(self):
        pts = qam16_constellation([1.0])
        np.testing.assert_allclose(pts, [(1 + 1j) / np.sqrt(2)])
        wf = generate_qam16(levels=[1.0], repetitions=2)
        got = demodulate_symbols(wf)
        np.testing.assert_allclose(got, pts[0], atol=1e-10)

    def test_default_waveform(self):
        wf = generate_qam16()
        assert wf.duration == pytest.approx(1.6e-3)
        assert len(wf.annotation["symbol_bounds"]) == 80
        assert wf.samples.dtype == float

    @pytest.mark.parametrize("scale", [1.0, 0.01])
    def test_exact_demodulation(self, scale):
        wf = generate_qam16(amplitude_scale=scale)
        got = demodulate_symbols(wf, discard_fraction=0.0)
        np.testing.assert_allclose(got, scale * wf.annotation["ideal_iq"], atol=1e-10 * scale)
        assert evm(wf.annotation["ideal_iq"], got / scale) < 1e-8

    def test_symbol_too_short(self):
        with pytest.raises(ValueError, match="cycles"):
            generate_qam16(if_freq=1e5, symbol_duration=20e-6)

    def test_fit_window_too_short(self):
        wf = generate_qam16(symbol_duration=5e-6)
        with pytest.raises(ValueError, match="cycles"):
            demodulate_symbols(wf, discard_fraction=0.8)

    def test_no_annotation(self):
        with pytest.raises(ValueError, match="annotation"):
            demodulate_symbols(IQWaveform(np.ones(100), 1e6))


class TestNoise:
    def test_measured_snr(self):
        wf = generate_qam16()
        noisy = add_awgn(wf, 10.0, seed=4)
        noise = noisy.samples - wf.samples
        snr = 10 * np.log10(np.mean(wf.samples**2) / np.mean(noise**2))
        assert snr == pytest.approx(10.0, abs=0.1)

    def test_deterministic(self):
        wf = generate_qam16(repetitions=1)
        a, b = add_awgn(wf, 5.0, seed=1), add_awgn(wf, 5.0, seed=1)
        assert np.array_equal(a.samples, b.samples)
        assert not np.array_equal(a.samples, add_awgn(wf, 5.0, seed=2).samples)

    def test_infinite_snr(self):
        wf = generate_qam16(repetitions=1)
        assert add_awgn(wf, np.inf, seed=0) is wf

    def test_zero_signal(self):
        with pytest.raises(ValueError, match="zero power"):
            add_awgn(IQWaveform(np.zeros(10), 1.0), 10.0, seed=0)


class TestEVM:
    def test_examples(self):
        assert evm([1 + 0j], [1 + 0j]) == 0.0
        assert evm([1 + 0j], [0.9 + 0j]) == pytest.approx(10.0)
        assert evm([1, 1j, -1, -1j], [1.1, 1.1j, -1.1, -1.1j]) == pytest.approx(10.0)

    def test_peak_normalization(self):
        ideal = np.array([1, 3])
        err = np.array([0.1, 0.1])
        assert evm(ideal, ideal + err, "peak") == pytest.approx(10 / 3)
        assert evm(ideal, ideal + err, "rms") == pytest.approx(10 / np.sqrt(5))

    @settings(max_examples=100, deadline=None)
    @given(seeds, st.floats(0.01, 100), st.floats(-np.pi, np.pi))
    def test_equalization_invariance(self, seed, mag, ang):
        rng = np.random.default_rng(seed)
        ideal = qam16_constellation()
        rx = ideal + 0.05 * (rng.standard_normal(16) + 1j * rng.standard_normal(16))
        base = constellation_report(ideal, rx).evm_percent
        scaled = constellation_report(ideal, mag * np.exp(1j * ang) * rx).evm_percent
        assert scaled == pytest.approx(base, abs=1e-10)

    def test_equalize_recovers_gain(self):
        ideal = qam16_constellation()
        eq, gain = equalize(ideal, 0.5j * ideal)
        assert gain == pytest.approx(-2j)
        np.testing.assert_allclose(eq, ideal, atol=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(seeds)
    def test_monotone_in_error(self, seed):
        rng = np.random.default_rng(seed)
        ideal = qam16_constellation()
        e = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        vals = [evm(ideal, ideal + s * e) for s in (0.0, 0.01, 0.1, 1.0)]
        assert np.all(np.diff(vals) > 0)

    def test_monotone_in_snr(self):
        wf = generate_qam16(repetitions=2)
        ideal = wf.annotation["ideal_iq"]
        vals = [constellation_report(ideal, demodulate_symbols(add_awgn(wf, s, seed=0))).evm_percent
                for s in (30, 20, 10, 0)]
        assert np.all(np.diff(vals) > 0)

    def test_errors(self):
        with pytest.raises(ValueError, match="empty"):
            evm([], [])
        with pytest.raises(ValueError, match="equally long"):
            evm([1], [1, 2])
        with pytest.raises(ValueError, match="normalization"):
            evm([1], [1], "max")
        with pytest.raises(ValueError, match="zero"):
            evm([0], [1])
        with pytest.raises(ValueError, match="zero"):
            equalize([1], [0])
