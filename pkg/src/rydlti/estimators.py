"""scikit-learn style wrapper: fit the sensor model, transform RF envelopes."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .params import SensorParams, default_params
from .transfer import make_velocity_grid, transfer_sweep
from .waveforms import IQWaveform, convolve, impulse_response, uniform_tf_grid


class SensorTransformer(TransformerMixin, BaseEstimator):
    """Map RF envelopes ``Omega_RF^(1)(t)`` to first-order ``Im rho_12(t)``.

    ``fit`` evaluates the (optionally Doppler-averaged) transfer function on
    ``0, df, ..., f_max`` and synthesizes the impulse response; ``transform``
    convolves each row of ``X`` (one envelope per row, sampled at
    ``sample_rate``) with it.

    Parameters
    ----------
    params : SensorParams, optional
        Atomic and field parameters; the bundled defaults when omitted.
    n_velocity_nodes : int
        Gauss-Hermite nodes for Doppler averaging; 1 means a single
        stationary velocity class.
    f_max, df : float
        Sampled band of the transfer function (Hz).
    sample_rate : float
        Sample rate of the envelopes (Hz); must be a multiple of ``df``.
    taper : float
        Raised-cosine roll-off fraction applied at the band edge.
    threads : int
        Worker threads for the velocity sweep.
    """

    def __init__(self, params: SensorParams | None = None, n_velocity_nodes: int = 1,
                 f_max: float = 10e6, df: float = 25e3, sample_rate: float = 100e6,
                 taper: float = 0.1, threads: int = 1):
        self.params = params
        self.n_velocity_nodes = n_velocity_nodes
        self.f_max = f_max
        self.df = df
        self.sample_rate = sample_rate
        self.taper = taper
        self.threads = threads

    def fit(self, X=None, y=None):
        """Build the transfer function and impulse response.

        ``X`` is only used to record the expected envelope length.
        """
        params = default_params() if self.params is None else self.params
        if not isinstance(params, SensorParams):
            raise TypeError("params must be a SensorParams instance")
        n_fft = self.sample_rate / self.df
        if abs(n_fft - round(n_fft)) > 1e-9 * n_fft:
            raise ValueError("sample_rate must be a whole multiple of df")
        if self.n_velocity_nodes < 1:
            raise ValueError("n_velocity_nodes must be >= 1")
        grid = None if self.n_velocity_nodes == 1 else make_velocity_grid(self.n_velocity_nodes)
        freqs = uniform_tf_grid(self.f_max, self.df)
        self.transfer_ = transfer_sweep(params, freqs, grid=grid, threads=self.threads)
        self.impulse_response_ = impulse_response(self.transfer_, n_fft=int(round(n_fft)),
                                                  taper=self.taper)
        if X is not None:
            X = check_array(X, ensure_min_samples=1)
            self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        """Convolve every row of ``X`` with the fitted impulse response."""
        check_is_fitted(self, "impulse_response_")
        X = check_array(X, ensure_min_samples=1)
        if hasattr(self, "n_features_in_") and X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} samples per row, fitted with "
                             f"{self.n_features_in_}")
        rows = [convolve(IQWaveform(row, self.sample_rate), self.impulse_response_).samples
                for row in X]
        return np.vstack(rows)

    def frequency_response(self, freqs_hz) -> np.ndarray:
        """Response of the fitted FIR at arbitrary frequencies (Hz)."""
        check_is_fitted(self, "impulse_response_")
        return self.impulse_response_.frequency_response(freqs_hz)
