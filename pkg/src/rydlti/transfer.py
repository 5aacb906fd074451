"""First-order frequency response of the sensor and its Doppler average."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .liouvillian import N_STATE, LiouvillianPair, idx
from .params import SensorParams
from .steady_state import _DIAG, DensityVector, solve_steady_state

TWO_PI = 2.0 * np.pi
I12, I21 = idx(1, 2), idx(2, 1)
DEFAULT_NODES = 61


class ResolventError(ArithmeticError):
    pass


@dataclass(frozen=True)
class VelocityGrid:
    """Quadrature over the normalized velocity ``u = v / sigma_v``.

    Weights already include the ``1/sqrt(pi)`` of the Maxwell weight so they
    sum to one.
    """

    nodes: np.ndarray
    weights: np.ndarray
    rule: str = "gauss-hermite"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        if nodes.shape != weights.shape or nodes.size == 0:
            raise ValueError("nodes and weights must be non-empty and equally long")
        if np.any(weights <= 0):
            raise ValueError("quadrature weights must be positive")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    def __len__(self):
        return self.nodes.size

    @classmethod
    def single_class(cls) -> "VelocityGrid":
        return cls(np.zeros(1), np.ones(1), rule="single-class")

    def describe(self) -> dict:
        return {"rule": self.rule, "n_nodes": len(self)}


def make_velocity_grid(n_nodes: int = DEFAULT_NODES, rule: str = "gauss-hermite",
                       u_max: float = 5.0) -> VelocityGrid:
    """Quadrature nodes/weights for the weight ``exp(-u**2)/sqrt(pi)``.

    ``rule="trapezoid"`` gives a uniform grid on ``[-u_max, u_max]``, kept for
    validating the Gauss-Hermite rule.
    """
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    if rule == "gauss-hermite":
        nodes, weights = np.polynomial.hermite.hermgauss(n_nodes)
        weights = weights / np.sqrt(np.pi)
        if n_nodes % 2:
            nodes[n_nodes // 2] = 0.0
    elif rule == "trapezoid":
        if n_nodes < 2:
            raise ValueError("trapezoid rule needs at least 2 nodes")
        nodes = np.linspace(-u_max, u_max, n_nodes)
        weights = np.exp(-nodes**2) / np.sqrt(np.pi) * (nodes[1] - nodes[0])
        weights[[0, -1]] *= 0.5
    else:
        raise ValueError(f"unknown quadrature rule {rule!r}")
    return VelocityGrid(nodes, weights, rule=rule)


def doppler_detunings(params: SensorParams, u: float) -> tuple[float, float]:
    """Probe and control detunings seen by velocity class ``u`` (counter-propagating)."""
    sv = params.sigma_v
    return (params.delta_p + TWO_PI * sv / params.lambda_p * u,
            params.delta_c - TWO_PI * sv / params.lambda_c * u)


def resolvent_response(liouvillian: LiouvillianPair, rho_ss: DensityVector,
                       omega: float) -> np.ndarray:
    """First-order density response per unit RF input, ``(i w - A)^-1 B rho_ss``.

    At ``omega == 0`` the drift matrix is singular along ``rho_ss``; the
    trace-free solution is returned, which is the ``omega -> 0`` limit of the
    resolvent (the forcing is trace-free and the trace is conserved).
    """
    a, b = liouvillian.a, liouvillian.b
    forcing = b @ rho_ss.data
    scale = np.max(np.abs(forcing))
    if scale == 0:
        return np.zeros(N_STATE, dtype=complex)
    m = 1j * omega * np.eye(N_STATE) - a
    if omega == 0:
        trace_row = np.zeros((1, N_STATE), dtype=complex)
        trace_row[0, _DIAG] = 1.0
        m_aug = np.vstack([m, trace_row * np.max(np.abs(a))])
        rhs = np.concatenate([forcing, [0.0]])
        x = np.linalg.lstsq(m_aug, rhs, rcond=None)[0]
    else:
        try:
            x = np.linalg.solve(m, forcing)
        except np.linalg.LinAlgError as exc:
            raise ResolventError(f"singular resolvent at omega={omega}") from exc
    resid = np.max(np.abs(m @ x - forcing)) / scale
    if resid > 1e-8:
        raise ResolventError(f"resolvent residual {resid:.2e} at omega={omega}")
    return x


def probe_observable(response: np.ndarray) -> complex:
    """Fourier amplitude of ``Im rho_12`` from a full density response."""
    response = np.asarray(response)
    return (response[..., I12] - response[..., I21]) / 2j


@dataclass(frozen=True)
class TransferFunction:
    """Sampled complex response ``G(w_IF)`` of ``Im rho_12`` to the RF envelope.

    ``freqs`` are angular intermediate frequencies (rad/s).
    """

    freqs: np.ndarray
    values: np.ndarray
    normalization: complex = 1.0
    doppler: dict = field(default_factory=lambda: {"rule": "single-class", "n_nodes": 1})

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=float).ravel()
        values = np.asarray(self.values, dtype=complex).ravel()
        if freqs.shape != values.shape:
            raise ValueError("freqs and values must have the same length")
        if freqs.size > 1 and np.any(np.diff(freqs) <= 0):
            raise ValueError("freqs must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("transfer function values must be finite")
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "values", values)

    @property
    def freqs_hz(self) -> np.ndarray:
        return self.freqs / TWO_PI

    @property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.values)

    def __len__(self):
        return self.freqs.size


def _node_responses(params, u, omegas):
    dp, dc = doppler_detunings(params, u)
    pair = LiouvillianPair.from_params(params, dp, dc)
    rho = solve_steady_state(pair)
    out = np.empty(len(omegas), dtype=complex)
    for k, w in enumerate(omegas):
        try:
            out[k] = probe_observable(resolvent_response(pair, rho, w))
        except ArithmeticError as exc:
            raise ResolventError(f"{exc} (omega={w}, u={u})") from exc
    return out


def transfer_sweep(params: SensorParams, freqs_hz: Sequence[float],
                   grid: VelocityGrid | None = None, threads: int = 1) -> TransferFunction:
    """Transfer function on a grid of intermediate frequencies (given in Hz).

    Each velocity node gets its own drift matrix and steady state; node
    results are combined with the grid weights.
    """
    grid = VelocityGrid.single_class() if grid is None else grid
    omegas = TWO_PI * np.asarray(freqs_hz, dtype=float).ravel()
    if omegas.size == 0:
        raise ValueError("freqs must be non-empty")
    work = [(params, u, omegas) for u in grid.nodes]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(lambda w: _node_responses(*w), work))
    else:
        rows = [_node_responses(*w) for w in work]
    values = grid.weights @ np.array(rows)
    return TransferFunction(omegas, values, doppler=grid.describe())


def normalize_dc(tf: TransferFunction) -> TransferFunction:
    """Scale so the lowest-frequency (DC) sample is exactly 1."""
    dc = tf.values[0]
    if abs(dc) < 1e-14:
        raise ValueError(f"DC response {abs(dc):.2e} too small to normalize")
    values = tf.values / dc
    values[0] = 1.0
    return replace(tf, values=values, normalization=tf.normalization / dc)


def wrap_phase(phase: np.ndarray) -> np.ndarray:
    """Wrap into ``(-pi, pi]``."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(phase, dtype=float), 2 * np.pi)
    return wrapped


def phase_response(tf: TransferFunction, align_dc: bool = False) -> np.ndarray:
    """Wrapped argument of every sample.

    ``align_dc`` subtracts the phase at 0 Hz (or at the lowest frequency when
    the grid has no DC sample).
    """
    phase = np.angle(tf.values)
    if align_dc:
        dc = np.flatnonzero(tf.freqs == 0)
        phase = phase - phase[dc[0] if dc.size else 0]
    return wrap_phase(phase)
