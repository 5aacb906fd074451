"""Brute-force time-domain reference for the linear response.

The full equation ``rho' = (A + Omega_1(t) B) rho`` is integrated at any
drive strength (no linearization) and the probe observable is fitted with a
sinusoid at the known IF.  Moderate-stiffness velocity classes use an
adaptive Dormand-Prince 5(4) scheme; classes whose drift matrix has a large
spectral radius (fast Doppler-shifted coherences) use a fixed-step
exponential Runge-Kutta scheme (ETDRK4) that treats ``A`` exactly.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from . import _dopri
from .liouvillian import idx, transpose_permutation
from .liouvillian import LiouvillianPair
from .params import SensorParams
from .steady_state import _DIAG, DensityVector, solve_steady_state
from .transfer import TWO_PI, TransferFunction, VelocityGrid, doppler_detunings, wrap_phase

log = logging.getLogger(__name__)

RTOL = 1e-9
ATOL = 1e-12
SETTLE_RELAXATIONS = 10.0
SETTLE_CYCLES = 10
FIT_CYCLES = 5
SAMPLES_PER_CYCLE = 40
TRACE_ABORT = 1e-7
# beyond this spectral radius (rad/s) explicit RK is stability-bound
STIFF_RADIUS = TWO_PI * 200e6
ETD_MAX_STEP = 2e-9


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class ToneSegment:
    """``offset + amplitude * cos(2 pi freq_hz t + phase)`` on ``[t_start, t_end)``."""

    t_start: float
    t_end: float
    amplitude: float
    freq_hz: float
    phase: float = 0.0
    offset: float = 0.0


@dataclass(frozen=True)
class DriveEnvelope:
    """Real RF perturbation ``Omega_RF^(1)(t)`` in rad/s.

    Either piecewise tones (fast compiled path) or an arbitrary callable
    (integrated with scipy).
    """

    duration: float
    segments: tuple[ToneSegment, ...] = ()
    func: Callable[[float], float] | None = None
    description: str = ""
    linear_regime: bool = True

    def __call__(self, t):
        if self.func is not None:
            return np.vectorize(self.func, otypes=[float])(t)
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for s in self.segments:
            mask = (t >= s.t_start) & (t < s.t_end)
            out[mask] = s.offset + s.amplitude * np.cos(TWO_PI * s.freq_hz * t[mask] + s.phase)
        return out

    @classmethod
    def am_tone(cls, omega_lo: float, depth: float, f_if: float, duration: float,
                phase: float = 0.0) -> "DriveEnvelope":
        """Weak amplitude modulation ``depth * Omega_LO * cos(2 pi f t + phase)``."""
        seg = ToneSegment(0.0, duration, depth * omega_lo, f_if, phase)
        return cls(duration, (seg,), description=f"AM tone, m={depth:g}, f_IF={f_if:g} Hz")

    @classmethod
    def constant(cls, value: float, duration: float) -> "DriveEnvelope":
        seg = ToneSegment(0.0, duration, 0.0, 0.0, 0.0, value)
        return cls(duration, (seg,), description=f"step, {value:g} rad/s")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    n_steps: int
    n_rejected: int
    max_trace_drift: float
    max_hermiticity_error: float

    def observable(self) -> np.ndarray:
        """``Im rho_12(t)``."""
        return self.states[:, idx(1, 2)].imag


@dataclass(frozen=True)
class FitResult:
    amplitude: float
    phase: float
    offset: float
    freq_hz: float
    residual_rms: float
    window: tuple[float, float]
    a: float = 0.0
    b: float = 0.0

    @property
    def phasor(self) -> complex:
        """Complex amplitude ``c`` with ``series ~ Re(c exp(i w t)) + offset``."""
        return complex(self.a, -self.b)


def _csr(m):
    m = sparse.csr_matrix(np.asarray(m))
    m.eliminate_zeros()
    return (m.indptr.astype(np.int64), m.indices.astype(np.int64),
            m.data.astype(np.complex128))


def _diagnostics(states):
    trace = states[:, _DIAG].sum(axis=1)
    drift = float(np.max(np.abs(trace - 1.0))) if len(states) else 0.0
    perm = transpose_permutation()
    herm = float(np.max(np.abs(states - states[:, perm].conj()))) if len(states) else 0.0
    return drift, herm


def _segment_arrays(envelope):
    segs = envelope.segments
    arr = lambda attr: np.array([getattr(s, attr) for s in segs], dtype=float)
    return (arr("t_start"), arr("t_end"), arr("amplitude"), TWO_PI * arr("freq_hz"),
            arr("phase"), arr("offset"))


def phi_matrices(m: np.ndarray, order: int = 3) -> list[np.ndarray]:
    """``[exp(m), phi_1(m), ..., phi_order(m)]`` from one augmented exponential."""
    n = m.shape[0]
    big = np.zeros(((order + 1) * n, (order + 1) * n), dtype=complex)
    big[:n, :n] = m
    for k in range(order):
        big[k * n:(k + 1) * n, (k + 1) * n:(k + 2) * n] = np.eye(n)
    top = expm(big)[:n]
    return [top[:, k * n:(k + 1) * n] for k in range(order + 1)]


def _run_etdrk4(pair, b_csr, y0, sample_times, seg_arrays, envelope, substeps):
    if sample_times.size > 1:
        dt = float(sample_times[1] - sample_times[0])
        if not np.allclose(np.diff(sample_times), dt, rtol=1e-9, atol=0):
            raise ValueError("etdrk4 needs uniformly spaced sample_times")
    else:
        dt = float(sample_times[0]) if sample_times[0] > 0 else 1.0
    h = dt / substeps
    start = sample_times[0] / h
    record_from = int(round(start))
    if abs(start - record_from) > 1e-6:
        raise ValueError("etdrk4: first sample time must be a whole number of steps")
    edges = np.concatenate([seg_arrays[0], seg_arrays[1]]) / h
    inside = edges < sample_times[-1] / h
    if np.any(np.abs(edges[inside] - np.round(edges[inside])) > 1e-6):
        raise ValueError("etdrk4: drive segment edges must fall on step boundaries")
    n_steps = record_from + (sample_times.size - 1) * substeps
    e_full, p1, p2, p3 = phi_matrices(h * pair.a)
    e_half, q1 = phi_matrices(0.5 * h * pair.a, order=1)
    f1 = h * (p1 - 3 * p2 + 4 * p3)
    f2 = h * (2 * p2 - 4 * p3)
    f3 = h * (4 * p3 - p2)
    states = _dopri.etdrk4_kernel(
        np.ascontiguousarray(e_half), np.ascontiguousarray(0.5 * h * q1),
        np.ascontiguousarray(e_full), np.ascontiguousarray(f1), np.ascontiguousarray(f2),
        np.ascontiguousarray(f3), *b_csr, y0, h, n_steps, substeps, record_from,
        *seg_arrays)
    return states, n_steps


def integrate(params: SensorParams, envelope: DriveEnvelope,
              rho0: DensityVector | None = None, t_end: float | None = None,
              sample_dt: float | None = None, *, velocity: float = 0.0,
              sample_times: np.ndarray | None = None, rtol: float = RTOL,
              atol: float = ATOL, method: str = "dopri5", etd_substeps: int = 1,
              max_steps: int = 200_000_000) -> Trajectory:
    """Integrate the full master equation under ``envelope``.

    Parameters
    ----------
    params : SensorParams
    envelope : DriveEnvelope
        RF perturbation added to the LO Rabi frequency.
    rho0 : DensityVector, optional
        Initial state; the unperturbed steady state by default.
    t_end, sample_dt : float
        Output grid ``0, sample_dt, ..., t_end``.  Ignored when
        ``sample_times`` is given.
    velocity : float
        Normalized velocity class ``u``; shifts the optical detunings.
    method : str
        ``"dopri5"``: compiled adaptive Dormand-Prince 5(4).  ``"etdrk4"``:
        fixed-step exponential RK4 that treats ``A`` exactly, for classes with
        GHz-scale Doppler detunings; needs a uniform ``sample_times`` grid whose
        start is a whole number of steps.  Both take piecewise-tone envelopes
        only.  Any :func:`scipy.integrate.solve_ivp` method name (``"DOP853"``,
        ``"Radau"``) integrates arbitrary callables with scipy.
    etd_substeps : int
        ETDRK4 steps per output sample.

    Raises
    ------
    OracleError
        On step-size underflow, step budget exhaustion, or trace drift above
        ``1e-7``.
    """
    dp, dc = doppler_detunings(params, velocity)
    pair = LiouvillianPair.from_params(params, dp, dc)
    if rho0 is None:
        rho0 = solve_steady_state(pair)
    if sample_times is None:
        if t_end is None or sample_dt is None:
            raise ValueError("give either sample_times or both t_end and sample_dt")
        n = int(round(t_end / sample_dt)) + 1
        sample_times = np.arange(n) * sample_dt
    sample_times = np.asarray(sample_times, dtype=float)
    if np.any(np.diff(sample_times) <= 0) or sample_times[0] < 0:
        raise ValueError("sample_times must be non-negative and increasing")
    y0 = np.array(rho0.data, dtype=complex)

    if method in ("dopri5", "etdrk4"):
        if envelope.func is not None:
            raise ValueError("callable envelopes need a scipy method, e.g. method='DOP853'")
        seg_arrays = _segment_arrays(envelope)
        b_csr = _csr(pair.b)
        if method == "dopri5":
            radius = np.max(np.abs(np.linalg.eigvals(pair.a)))
            h_init = 0.01 / max(radius, 1.0)
            states, n_acc, n_rej, status = _dopri.integrate_kernel(
                *_csr(pair.a), *b_csr, y0, sample_times, *seg_arrays, rtol, atol,
                h_init, max_steps)
            if status == _dopri.STEP_UNDERFLOW:
                raise OracleError(f"step size underflow (u={velocity})")
            if status == _dopri.TOO_MANY_STEPS:
                raise OracleError(f"step budget {max_steps} exhausted (u={velocity})")
        else:
            states, n_acc = _run_etdrk4(pair, b_csr, y0, sample_times, seg_arrays,
                                        envelope, etd_substeps)
            n_rej = 0
    else:
        a, b = pair.a, pair.b
        sol = solve_ivp(lambda t, y: (a + float(envelope(t)) * b) @ y,
                        (0.0, float(sample_times[-1])), y0, method=method,
                        t_eval=sample_times, rtol=rtol, atol=atol)
        if not sol.success:
            raise OracleError(f"{method} failed: {sol.message}")
        states, n_acc, n_rej = sol.y.T, int(sol.nfev), 0

    drift, herm = _diagnostics(states)
    if drift > TRACE_ABORT:
        raise OracleError(f"trace drift {drift:.2e} exceeds {TRACE_ABORT:g} (u={velocity})")
    return Trajectory(sample_times, states, int(n_acc), int(n_rej), drift, herm)


def fit_sinusoid(times: np.ndarray, series: np.ndarray, f_known: float,
                 n_cycles: float = FIT_CYCLES) -> FitResult:
    """Least-squares ``a cos + b sin + c`` fit at a known frequency.

    Only the final ``n_cycles`` periods of the series are used. ``f_known ==
    0`` fits the offset alone over the whole series.
    """
    times = np.asarray(times, dtype=float)
    series = np.asarray(series, dtype=float)
    if f_known < 0:
        raise ValueError("f_known must be >= 0")
    if f_known == 0:
        c = float(series.mean())
        resid = series - c
        return FitResult(0.0, 0.0, c, 0.0, float(np.sqrt(np.mean(resid**2))),
                         (float(times[0]), float(times[-1])))
    span = n_cycles / f_known
    # window [t_last + dt - span, t_last + dt): uniform samples, half-open
    dt = times[-1] - times[-2] if times.size > 1 else 0.0
    t0 = times[-1] + dt - span
    if t0 < times[0] - 1e-12 * span:
        raise ValueError(f"series spans {(times[-1] + dt - times[0]) * f_known:.3g} cycles, "
                         f"need {n_cycles}")
    if span * f_known < 1:
        raise ValueError("fit window shorter than one cycle")
    mask = times >= t0 - 1e-9 * span
    t, y = times[mask], series[mask]
    ph = TWO_PI * f_known * t
    design = np.column_stack([np.cos(ph), np.sin(ph), np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    if np.linalg.matrix_rank(design) < 3:
        raise ValueError("rank-deficient sinusoid fit")
    a, b, c = (float(v) for v in coef)
    resid = y - design @ coef
    return FitResult(float(np.hypot(a, b)), float(wrap_phase(np.arctan2(-b, a))), c, float(f_known),
                     float(np.sqrt(np.mean(resid**2))), (float(t[0]), float(t[-1])), a, b)


def relaxation_rate(params: SensorParams, velocity: float = 0.0,
                    weight_floor: float = 1e-9) -> float:
    """Slowest decay rate among the modes the RF perturbation actually excites.

    The forcing ``B rho_ss`` is expanded in the eigenvectors of ``A``; modes
    with relative weight below ``weight_floor`` (e.g. coherences that are
    decoupled from the driven block) do not delay settling and are skipped.
    """
    dp, dc = doppler_detunings(params, velocity)
    pair = LiouvillianPair.from_params(params, dp, dc)
    rho = solve_steady_state(pair)
    ev, vecs = np.linalg.eig(pair.a)
    coef = np.linalg.lstsq(vecs, pair.b @ rho.data, rcond=None)[0]
    weight = np.abs(coef) * np.linalg.norm(vecs, axis=0)
    rates = -ev.real
    scale = np.max(np.abs(ev))
    keep = (rates > 1e-9 * scale) & (weight > weight_floor * weight.max())
    if not np.any(keep):
        return float(np.sort(rates)[1])
    return float(rates[keep].min())


def settle_time(gap: float, f_hz: float) -> float:
    t = SETTLE_RELAXATIONS / gap
    if f_hz > 0:
        t = max(t, SETTLE_CYCLES / f_hz)
    return t


def spectral_radius(params: SensorParams, velocity: float = 0.0) -> float:
    dp, dc = doppler_detunings(params, velocity)
    return float(np.max(np.abs(np.linalg.eigvals(
        LiouvillianPair.from_params(params, dp, dc).a))))


def choose_method(params: SensorParams, velocity: float) -> str:
    """Adaptive RK while its stability bound is mild, exponential RK beyond."""
    return "dopri5" if spectral_radius(params, velocity) <= STIFF_RADIUS else "etdrk4"


def _sample_grid(f_hz, gap):
    """Cycle-aligned settle time plus a uniform half-open fit window."""
    if f_hz > 0:
        dt = 1.0 / (f_hz * SAMPLES_PER_CYCLE)
        n = FIT_CYCLES * SAMPLES_PER_CYCLE
    else:
        dt = 1.0 / (gap * SAMPLES_PER_CYCLE)
        n = SAMPLES_PER_CYCLE
    start = np.ceil(settle_time(gap, f_hz) / dt - 1e-9) * dt
    return start + np.arange(n) * dt, dt


def _tone_run(params, f_hz, depth, u, gap, rtol, atol, method="auto"):
    """Response of ``Im rho_12`` at one (f, u) and the sample times."""
    if method == "auto":
        method = choose_method(params, u)
    times, dt = _sample_grid(f_hz, gap)
    substeps = max(1, int(np.ceil(dt / ETD_MAX_STEP))) if method == "etdrk4" else 1
    t_stop = times[-1] + 2 * dt
    kw = dict(velocity=u, sample_times=times, rtol=rtol, atol=atol, method=method,
              etd_substeps=substeps)
    if f_hz > 0:
        env = DriveEnvelope.am_tone(params.omega_lo, depth, f_hz, t_stop)
        traj = integrate(params, env, **kw)
        return traj.observable(), times, traj
    # DC: symmetric static steps cancel the second-order shift
    amp = depth * params.omega_lo
    obs = []
    for sign in (1.0, -1.0):
        traj = integrate(params, DriveEnvelope.constant(sign * amp, t_stop), **kw)
        obs.append(traj.observable())
    return (obs[0] - obs[1]) / 2.0, times, traj


@dataclass
class OracleSweep:
    transfer: TransferFunction
    fits: list
    wall_time: float
    traces: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)


def oracle_transfer_sweep(params: SensorParams, freqs_hz: Sequence[float],
                          modulation_depth: float = 0.01,
                          grid: VelocityGrid | None = None, threads: int = 1,
                          rtol: float = RTOL, atol: float = ATOL,
                          keep_traces: bool = False, method: str = "auto") -> OracleSweep:
    """Transfer function measured by time integration of AM tones.

    Per frequency, velocity-class traces of ``Im rho_12`` are weight-averaged
    first and the average is fitted over its last five cycles.  DC uses the
    symmetric static response ``(y(+m) - y(-m)) / 2``.
    """
    if modulation_depth <= 0:
        raise ValueError("modulation_depth must be > 0 (nothing to fit)")
    grid = VelocityGrid.single_class() if grid is None else grid
    freqs_hz = np.asarray(freqs_hz, dtype=float).ravel()
    if freqs_hz.size == 0:
        raise ValueError("freqs must be non-empty")
    amp = modulation_depth * params.omega_lo
    t_start = time.perf_counter()
    gaps = {float(u): relaxation_rate(params, u) for u in grid.nodes}
    gap = min(gaps.values())

    jobs = [(k, f, float(u)) for k, f in enumerate(freqs_hz) for u in grid.nodes]

    def run(job):
        k, f, u = job
        try:
            return job, _tone_run(params, f, modulation_depth, u, gap, rtol, atol, method)
        except (OracleError, ValueError, ArithmeticError) as exc:
            raise OracleError(f"{exc} (f={f:g} Hz, u={u:g})") from exc

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    by_freq: dict[int, list] = {}
    drift = herm = 0.0
    steps = 0
    for (k, f, u), (obs, times, traj) in results:
        by_freq.setdefault(k, []).append((obs, times))
        drift = max(drift, traj.max_trace_drift)
        herm = max(herm, traj.max_hermiticity_error)
        steps += traj.n_steps

    values = np.empty(freqs_hz.size, dtype=complex)
    fits, traces = [], {}
    for k, f in enumerate(freqs_hz):
        times = by_freq[k][0][1]
        avg = sum(w * obs for w, (obs, _) in zip(grid.weights, by_freq[k]))
        fit = fit_sinusoid(times, avg, f)
        fits.append(fit)
        values[k] = fit.offset / amp if f == 0 else fit.phasor / amp
        if keep_traces:
            traces[float(f)] = (times, avg)
    wall = time.perf_counter() - t_start
    tf = TransferFunction(TWO_PI * freqs_hz, values, doppler=grid.describe())
    diag = {"max_trace_drift": drift, "max_hermiticity_error": herm,
            "n_steps": steps, "relaxation_rate": gap}
    log.info("oracle sweep: %d points x %d nodes in %.1f s", freqs_hz.size, len(grid), wall)
    return OracleSweep(tf, fits, wall, traces, diag)
