"""Waveform propagation through the linear sensor model.

Impulse responses are synthesized from a sampled transfer function, RF
envelopes are convolved with them, and 16QAM symbol streams are generated,
demodulated and scored by error-vector magnitude.

The convention throughout is that a real input ``Re(X exp(i w t))`` produces
the output ``Re(G(w) X exp(i w t))``, so ``G`` is the Fourier transform of the
impulse response with kernel ``exp(-i w t)``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve

from .oracle import fit_sinusoid
from .transfer import TWO_PI, TransferFunction

QAM_LEVELS = (-3.0, -1.0, 1.0, 3.0)
MIN_SYMBOL_CYCLES = 5
MIN_FIT_CYCLES = 2


@dataclass(frozen=True)
class IQWaveform:
    """Uniformly sampled waveform plus optional symbol annotations.

    Attributes
    ----------
    samples : ndarray
        Real (or complex) samples.
    sample_rate : float
        Hz.
    t0 : float
        Time of the first sample (s).
    annotation : dict
        Free-form metadata.  QAM waveforms carry ``symbol_bounds`` (sample
        index pairs), ``ideal_iq`` and ``if_freq``.
    """

    samples: np.ndarray
    sample_rate: float
    t0: float = 0.0
    annotation: dict = field(default_factory=dict)

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 1:
            raise ValueError("samples must be one dimensional")
        if not (self.sample_rate > 0 and math.isfinite(self.sample_rate)):
            raise ValueError("sample_rate must be positive and finite")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.sample_rate

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class ImpulseResponse:
    """Real FIR taps ``taps[k] = h((k - delay) / sample_rate) / sample_rate``.

    ``delay`` taps precede ``t = 0`` (band-limited responses ring on both
    sides); :func:`convolve` removes that delay again.
    """

    taps: np.ndarray
    sample_rate: float
    delay: int = 0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=float)
        if taps.ndim != 1 or taps.size == 0:
            raise ValueError("taps must be a non-empty vector")
        if not np.all(np.isfinite(taps)):
            raise ValueError("taps must be finite")
        if not 0 <= self.delay < taps.size:
            raise ValueError("delay must index into taps")
        object.__setattr__(self, "taps", taps)

    def __len__(self):
        return self.taps.size

    @property
    def tail_ratio(self) -> float:
        """Largest edge tap relative to the peak tap."""
        peak = np.max(np.abs(self.taps))
        return float(max(abs(self.taps[0]), abs(self.taps[-1])) / peak) if peak else 0.0

    def frequency_response(self, freqs_hz) -> np.ndarray:
        """Discrete-time Fourier transform of the taps, delay removed."""
        k = np.arange(self.taps.size) - self.delay
        w = TWO_PI * np.asarray(freqs_hz, dtype=float) / self.sample_rate
        return np.exp(-1j * np.outer(w, k)) @ self.taps


@dataclass(frozen=True)
class ConstellationReport:
    ideal: np.ndarray
    received: np.ndarray
    equalized: np.ndarray
    gain: complex
    evm_percent: float
    normalization: str = "rms"

    def __post_init__(self):
        if not (len(self.ideal) == len(self.received) == len(self.equalized)):
            raise ValueError("symbol counts differ")

    @property
    def error_vectors(self) -> np.ndarray:
        return self.equalized - self.ideal

    @property
    def scatter(self) -> np.ndarray:
        """Per-symbol error magnitude relative to the reference magnitude."""
        return np.abs(self.error_vectors) / _reference(self.ideal, self.normalization)

    def __len__(self):
        return len(self.ideal)


def tf_fingerprint(tf: TransferFunction) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(tf.freqs).tobytes())
    h.update(np.ascontiguousarray(tf.values).tobytes())
    return h.hexdigest()[:16]


def _raised_cosine(n_bins: int, fraction: float) -> np.ndarray:
    """Flat, then a half-cosine roll-off over the top ``fraction`` of the bins."""
    w = np.ones(n_bins)
    n_roll = int(round(fraction * n_bins))
    if n_roll > 0:
        x = (np.arange(n_roll) + 1) / (n_roll + 1)
        w[n_bins - n_roll:] = 0.5 * (1 + np.cos(np.pi * x))
    return w


def impulse_response(tf: TransferFunction, n_fft: int | None = None,
                     taper: float = 0.1, delay: int | None = None) -> ImpulseResponse:
    """FIR taps from a transfer function sampled uniformly on ``[0, f_max]``.

    Parameters
    ----------
    tf : TransferFunction
        Must start at 0 Hz with uniform spacing ``df``.
    n_fft : int, optional
        Transform length, at least ``2 (len(tf) - 1)``; the sample rate
        becomes ``n_fft * df``.  Bins above ``f_max`` are zero-filled.
    taper : float
        Fraction of the sampled band rolled off with a raised cosine before
        the zero fill (0 disables).
    delay : int, optional
        Taps placed before ``t = 0``; defaults to ``n_fft // 2``.
    """
    freqs = tf.freqs_hz
    if freqs.size < 2:
        raise ValueError("need at least two frequency samples")
    df = freqs[1] - freqs[0]
    if abs(freqs[0]) > 1e-9 * df:
        raise ValueError("transfer function grid must start at 0 Hz")
    if np.max(np.abs(np.diff(freqs) - df)) > 1e-9 * df:
        raise ValueError("transfer function grid is not uniform")
    n_min = 2 * (freqs.size - 1)
    n_fft = n_min if n_fft is None else int(n_fft)
    if n_fft < n_min:
        raise ValueError(f"n_fft={n_fft} below 2*(len(tf)-1)={n_min}")
    if not 0 <= taper < 1:
        raise ValueError("taper must be in [0, 1)")
    values = tf.values * _raised_cosine(freqs.size, taper)
    scale = np.max(np.abs(values))
    residue = abs(values[0].imag) / scale if scale else 0.0
    if residue > 1e-6:
        raise ValueError(f"DC sample has imaginary part {residue:.2e}: not the "
                         "spectrum of a real response")

    half = np.zeros(n_fft // 2 + 1, dtype=complex)
    half[:freqs.size] = values
    half[0] = half[0].real
    if n_fft % 2 == 0:
        half[-1] = half[-1].real
    full = np.empty(n_fft, dtype=complex)
    full[:half.size] = half
    n_neg = n_fft - half.size
    full[half.size:] = np.conj(half[1:n_neg + 1][::-1])
    h = np.fft.ifft(full)
    peak = np.max(np.abs(h.real))
    imag_residue = float(np.max(np.abs(h.imag)) / peak) if peak else 0.0
    if imag_residue > 1e-9:
        raise ValueError(f"synthesized taps have imaginary residue {imag_residue:.2e}")
    delay = n_fft // 2 if delay is None else int(delay)
    taps = np.roll(h.real, delay)
    prov = {
        "source": tf_fingerprint(tf),
        "doppler": dict(tf.doppler),
        "f_max_hz": float(freqs[-1]),
        "df_hz": float(df),
        "n_fft": n_fft,
        "window": f"raised-cosine taper over top {taper:g} of band" if taper else "none",
        "imag_residue": imag_residue,
    }
    ir = ImpulseResponse(taps, float(n_fft * df), delay, prov)
    ir.provenance["tail_ratio"] = ir.tail_ratio
    return ir


def convolve(signal: IQWaveform, h: ImpulseResponse) -> IQWaveform:
    """Linear convolution trimmed back to the input's time support."""
    if not math.isclose(signal.sample_rate, h.sample_rate, rel_tol=1e-9):
        raise ValueError(f"sample rate mismatch: signal {signal.sample_rate:g} Hz, "
                         f"impulse response {h.sample_rate:g} Hz")
    if len(signal) < len(h):
        raise ValueError(f"signal ({len(signal)} samples) shorter than impulse "
                         f"response ({len(h)} taps)")
    y = fftconvolve(signal.samples, h.taps)[h.delay:h.delay + len(signal)]
    note = dict(signal.annotation)
    note["group_delay_samples"] = h.delay
    note["impulse_response"] = h.provenance.get("source")
    return IQWaveform(y, signal.sample_rate, signal.t0, note)


def qam16_constellation(levels: Sequence[float] = QAM_LEVELS) -> np.ndarray:
    """Square constellation on ``levels`` x ``levels``, scaled to unit RMS."""
    lv = np.asarray(levels, dtype=float)
    if lv.size == 0:
        raise ValueError("levels must be non-empty")
    # row-major from the top-left corner: Q descending, I ascending
    pts = np.array([i + 1j * q for q in lv[::-1] for i in lv])
    rms = np.sqrt(np.mean(np.abs(pts) ** 2))
    if rms == 0:
        raise ValueError("constellation has zero power")
    return pts / rms


def generate_qam16(if_freq: float = 1e6, symbol_duration: float = 20e-6,
                   repetitions: int = 5, amplitude_scale: float = 1.0,
                   sample_rate: float = 100e6,
                   levels: Sequence[float] = QAM_LEVELS) -> IQWaveform:
    """Real RF envelope stepping through every constellation point.

    Symbol ``s`` is transmitted as ``amplitude_scale * |s| cos(2 pi f t +
    arg s)`` for ``symbol_duration``; the full constellation is repeated
    ``repetitions`` times.
    """
    if symbol_duration * if_freq < MIN_SYMBOL_CYCLES - 1e-9:
        raise ValueError(f"symbol spans {symbol_duration * if_freq:.3g} IF cycles, "
                         f"need >= {MIN_SYMBOL_CYCLES}")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    n_sym = int(round(symbol_duration * sample_rate))
    if abs(n_sym - symbol_duration * sample_rate) > 1e-6 * n_sym:
        raise ValueError("symbol_duration must be a whole number of samples")
    points = np.tile(qam16_constellation(levels), repetitions)
    t = np.arange(n_sym * points.size) / sample_rate
    phasor = np.repeat(points, n_sym) * amplitude_scale
    samples = np.real(phasor * np.exp(1j * TWO_PI * if_freq * t))
    bounds = [(k * n_sym, (k + 1) * n_sym) for k in range(points.size)]
    note = {"if_freq": float(if_freq), "symbol_duration": float(symbol_duration),
            "repetitions": int(repetitions), "amplitude_scale": float(amplitude_scale),
            "symbol_bounds": bounds, "ideal_iq": points}
    return IQWaveform(samples, float(sample_rate), 0.0, note)


def _symbol_region(signal: IQWaveform):
    bounds = signal.annotation.get("symbol_bounds")
    if not bounds:
        return np.arange(len(signal))
    return np.concatenate([np.arange(a, b) for a, b in bounds])


def add_awgn(signal: IQWaveform, snr_db: float, seed: int) -> IQWaveform:
    """Add white Gaussian noise at ``snr_db`` relative to the mean symbol power.

    Each symbol draws from its own ``(seed, symbol_index)`` stream, so the
    result does not depend on evaluation order.  ``snr_db = inf`` returns the
    signal unchanged.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return signal
    x = signal.samples
    power = float(np.mean(np.abs(x[_symbol_region(signal)]) ** 2))
    if power == 0:
        raise ValueError("signal has zero power")
    sigma = math.sqrt(power / 10 ** (snr_db / 10))
    bounds = signal.annotation.get("symbol_bounds") or [(0, len(signal))]
    noise = np.zeros(len(signal))
    covered = np.zeros(len(signal), dtype=bool)
    for k, (a, b) in enumerate(bounds):
        noise[a:b] = np.random.default_rng([seed, k]).standard_normal(b - a)
        covered[a:b] = True
    rest = np.flatnonzero(~covered)
    if rest.size:
        noise[rest] = np.random.default_rng([seed, len(bounds)]).standard_normal(rest.size)
    if np.iscomplexobj(x):
        raise ValueError("add_awgn expects a real RF envelope")
    note = dict(signal.annotation, snr_db=float(snr_db), noise_seed=int(seed))
    return IQWaveform(x + sigma * noise, signal.sample_rate, signal.t0, note)


def demodulate_symbols(received: IQWaveform, f_known: float | None = None,
                       discard_fraction: float = 0.25) -> np.ndarray:
    """Complex amplitude of every annotated symbol.

    The leading ``discard_fraction`` of each symbol is dropped and a linear
    sinusoid fit at ``f_known`` runs over the rest.  Returns ``A exp(i phi)``
    per symbol; ``np.abs``/``np.angle`` give amplitude and phase.
    """
    bounds = received.annotation.get("symbol_bounds")
    if not bounds:
        raise ValueError("waveform has no symbol annotations")
    f = received.annotation.get("if_freq") if f_known is None else f_known
    if f is None or f <= 0:
        raise ValueError("a positive IF is required")
    if not 0 <= discard_fraction < 0.9:
        raise ValueError("discard_fraction must be in [0, 0.9)")
    t = received.times
    y = np.asarray(received.samples, dtype=float)
    out = np.empty(len(bounds), dtype=complex)
    for k, (a, b) in enumerate(bounds):
        start = a + int(math.ceil(discard_fraction * (b - a)))
        cycles = (b - start) / received.sample_rate * f
        if cycles < MIN_FIT_CYCLES:
            raise ValueError(f"symbol {k}: retained window holds {cycles:.3g} cycles, "
                             f"need >= {MIN_FIT_CYCLES}")
        out[k] = fit_sinusoid(t[start:b], y[start:b], f, n_cycles=cycles).phasor
    return out


def equalize(ideal, received) -> tuple[np.ndarray, complex]:
    """Remove the least-squares complex gain mapping ``received`` onto ``ideal``."""
    ideal = np.asarray(ideal, dtype=complex)
    received = np.asarray(received, dtype=complex)
    if ideal.shape != received.shape or ideal.size == 0:
        raise ValueError("ideal and received must be equally long and non-empty")
    denom = np.vdot(received, received)
    if denom == 0:
        raise ValueError("received constellation is identically zero")
    gain = np.vdot(received, ideal) / denom
    return received * gain, complex(gain)


def _reference(ideal, normalization):
    mag = np.abs(np.asarray(ideal, dtype=complex))
    if normalization == "rms":
        ref = np.sqrt(np.mean(mag ** 2))
    elif normalization == "peak":
        ref = np.max(mag)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    if ref == 0:
        raise ValueError("ideal constellation has zero magnitude")
    return ref


def evm(ideal, received, normalization: str = "rms") -> float:
    """RMS error-vector magnitude in percent of the RMS (or peak) ideal magnitude."""
    ideal = np.asarray(ideal, dtype=complex)
    received = np.asarray(received, dtype=complex)
    if ideal.size == 0:
        raise ValueError("empty constellation")
    if ideal.shape != received.shape:
        raise ValueError("ideal and received must be equally long")
    err = np.sqrt(np.mean(np.abs(received - ideal) ** 2))
    return float(100.0 * err / _reference(ideal, normalization))


def constellation_report(ideal, received, normalization: str = "rms") -> ConstellationReport:
    eq, gain = equalize(ideal, received)
    return ConstellationReport(np.asarray(ideal, dtype=complex),
                               np.asarray(received, dtype=complex), eq, gain,
                               evm(ideal, eq, normalization), normalization)


def uniform_tf_grid(f_max: float, df: float) -> np.ndarray:
    """``0, df, ..., f_max`` with ``f_max`` a whole multiple of ``df``."""
    n = int(round(f_max / df))
    if n < 1 or abs(n * df - f_max) > 1e-9 * f_max:
        raise ValueError("f_max must be a positive multiple of df")
    return np.arange(n + 1) * df


__all__ = [
    "IQWaveform", "ImpulseResponse", "ConstellationReport", "impulse_response",
    "convolve", "generate_qam16", "qam16_constellation", "add_awgn",
    "demodulate_symbols", "equalize", "evm", "constellation_report",
    "uniform_tf_grid", "tf_fingerprint",
]
