"""LTI-versus-oracle comparison, run manifests and plot-data export."""

from __future__ import annotations

import csv
import io
import json
import logging
import platform
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .oracle import oracle_transfer_sweep
from .params import SensorParams
from .transfer import (TransferFunction, VelocityGrid, normalize_dc, phase_response,
                       transfer_sweep, wrap_phase)

log = logging.getLogger(__name__)

# (amplitude relative, phase rad) tolerances, compared from this IF upward
SINGLE_CLASS_BOUNDS = (0.01, 0.02)
DOPPLER_BOUNDS = (0.02, 0.05)
COMPARE_FROM_HZ = 0.1e6
MIN_CONFIDENT_POINTS = 5


class AcceptanceError(RuntimeError):
    """Deviation between the pipelines exceeds the acceptance bounds."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


def _versions() -> dict:
    import numba
    import scipy
    import sklearn

    from . import __version__
    return {"rydlti": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "scikit-learn": sklearn.__version__}


@dataclass
class RunManifest:
    """Record of one run: inputs, timings and every file written."""

    command: str
    config: dict
    seeds: dict = field(default_factory=dict)
    versions: dict = field(default_factory=_versions)
    started: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    finished: str | None = None
    timings: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    status: str = "ok"

    def time_stage(self, name: str):
        return _StageTimer(self, name)

    def add_output(self, path) -> None:
        path = str(path)
        if path not in self.outputs:
            self.outputs.append(path)

    def finish(self, status: str = "ok") -> "RunManifest":
        self.status = status
        self.finished = datetime.now(timezone.utc).isoformat()
        return self

    def to_dict(self) -> dict:
        return asdict(self)


class _StageTimer:
    def __init__(self, manifest, name):
        self.manifest, self.name = manifest, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.manifest.timings[self.name] = max(0.0, time.perf_counter() - self.t0)
        return False


def _same_grid(a: VelocityGrid, b: VelocityGrid) -> bool:
    return (len(a) == len(b) and np.array_equal(a.nodes, b.nodes)
            and np.array_equal(a.weights, b.weights))


def deviations(tf_lti: TransferFunction, tf_oracle: TransferFunction,
               f_min_hz: float = COMPARE_FROM_HZ) -> dict:
    """Pointwise deviations of DC-normalized amplitude and phase."""
    if not np.allclose(tf_lti.freqs, tf_oracle.freqs, rtol=1e-12, atol=0):
        raise ValueError("transfer functions are sampled on different frequencies")
    a, b = normalize_dc(tf_lti), normalize_dc(tf_oracle)
    amp_rel = np.abs(b.amplitude / a.amplitude - 1.0)
    dphase = np.abs(wrap_phase(np.angle(b.values) - np.angle(a.values)))
    mask = tf_lti.freqs_hz >= f_min_hz
    if not np.any(mask):
        mask = np.ones(len(tf_lti), dtype=bool)
    return {"freqs_hz": tf_lti.freqs_hz, "amplitude_rel": amp_rel, "phase_rad": dphase,
            "compared": mask,
            "max_amplitude_rel": float(amp_rel[mask].max()),
            "max_phase_rad": float(dphase[mask].max())}


@dataclass
class BenchmarkResult:
    report: dict
    tf_lti: TransferFunction
    tf_oracle: TransferFunction


def run_benchmark(params: SensorParams, freqs_hz: Sequence[float],
                  grid: VelocityGrid | None = None, *,
                  oracle_grid: VelocityGrid | None = None,
                  threads: int = 1, modulation_depth: float = 0.01,
                  bounds: tuple[float, float] | None = None,
                  manifest: RunManifest | None = None) -> "BenchmarkResult":
    """Time both pipelines on identical inputs and compare them.

    A forced single-thread pass is always timed; with ``threads > 1`` a
    multi-thread pass is timed as well.  The speedup is only reported when
    the deviations are within ``bounds``.

    Raises
    ------
    ValueError
        If the two pipelines would not see the same velocity grid.
    AcceptanceError
        If the deviations exceed ``bounds``; the report is attached.
    """
    grid = VelocityGrid.single_class() if grid is None else grid
    if oracle_grid is not None and not _same_grid(grid, oracle_grid):
        raise ValueError(f"velocity grids differ: LTI {grid.describe()} vs oracle "
                         f"{oracle_grid.describe()}; a speedup on different inputs "
                         "is meaningless")
    freqs_hz = np.asarray(freqs_hz, dtype=float).ravel()
    if bounds is None:
        bounds = SINGLE_CLASS_BOUNDS if len(grid) == 1 else DOPPLER_BOUNDS
    manifest = manifest or RunManifest("benchmark", params.to_config())

    timing = {}
    with manifest.time_stage("lti_single_thread"):
        t0 = time.perf_counter()
        tf_lti = transfer_sweep(params, freqs_hz, grid=grid, threads=1)
        timing["lti_single_thread_s"] = time.perf_counter() - t0
    with manifest.time_stage("oracle_single_thread"):
        sweep = oracle_transfer_sweep(params, freqs_hz, modulation_depth, grid=grid,
                                      threads=1)
        timing["oracle_single_thread_s"] = sweep.wall_time
    if threads > 1:
        with manifest.time_stage("lti_multi_thread"):
            t0 = time.perf_counter()
            transfer_sweep(params, freqs_hz, grid=grid, threads=threads)
            timing["lti_multi_thread_s"] = time.perf_counter() - t0
        with manifest.time_stage("oracle_multi_thread"):
            timing["oracle_multi_thread_s"] = oracle_transfer_sweep(
                params, freqs_hz, modulation_depth, grid=grid, threads=threads).wall_time

    dev = deviations(tf_lti, sweep.transfer)
    within = dev["max_amplitude_rel"] <= bounds[0] and dev["max_phase_rad"] <= bounds[1]
    low_conf = freqs_hz.size < MIN_CONFIDENT_POINTS
    report = {
        "n_freqs": int(freqs_hz.size),
        "velocity_grid": grid.describe(),
        "modulation_depth": modulation_depth,
        "threads": int(threads),
        "bounds": {"amplitude_rel": bounds[0], "phase_rad": bounds[1],
                   "compared_from_hz": COMPARE_FROM_HZ},
        "max_amplitude_rel": dev["max_amplitude_rel"],
        "max_phase_rad": dev["max_phase_rad"],
        "within_bounds": bool(within),
        "timing": timing,
        "speedup": None,
        "low_confidence": bool(low_conf),
        "oracle_diagnostics": sweep.diagnostics,
    }
    result = BenchmarkResult(report, tf_lti, sweep.transfer)
    if not within:
        msg = (f"LTI/oracle deviation (amplitude {dev['max_amplitude_rel']:.3g}, "
               f"phase {dev['max_phase_rad']:.3g} rad) exceeds bounds {bounds}; "
               "speedup not reported")
        raise AcceptanceError(msg, result)
    report["speedup"] = timing["oracle_single_thread_s"] / max(timing["lti_single_thread_s"],
                                                               1e-12)
    if low_conf:
        manifest.warnings.append(f"only {freqs_hz.size} frequency point(s): speedup is "
                                 "low-confidence")
    return result


def _fmt(x: float) -> str:
    # shortest round-trip form: rounding must not push a phase past pi
    return repr(float(x))


def _join(tf_lti: TransferFunction, tf_oracle: TransferFunction | None):
    if tf_oracle is None or len(tf_oracle) == 0:
        return {}
    index = {}
    for j, f in enumerate(tf_oracle.freqs_hz):
        hit = np.flatnonzero(np.isclose(tf_lti.freqs_hz, f, rtol=1e-9, atol=1e-6))
        if hit.size == 0:
            raise ValueError(f"oracle frequency {f:g} Hz is not on the LTI grid")
        index[int(hit[0])] = j
    return index


def plot_data_csv(tf_lti: TransferFunction, tf_oracle: TransferFunction | None) -> tuple[str, list]:
    """CSV text for an amplitude/phase overlay plus any warnings."""
    warnings = []
    index = _join(tf_lti, tf_oracle)
    if not index:
        warnings.append("oracle transfer function empty: LTI-only plot data")
    ph_lti = phase_response(tf_lti)
    ph_or = phase_response(tf_oracle) if index else None
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["f_if_hz", "lti_amplitude", "lti_phase_rad", "oracle_amplitude",
                "oracle_phase_rad"])
    for k, f in enumerate(tf_lti.freqs_hz):
        row = [_fmt(f), _fmt(tf_lti.amplitude[k]), _fmt(ph_lti[k])]
        if k in index:
            j = index[k]
            row += [_fmt(tf_oracle.amplitude[j]), _fmt(ph_or[j])]
        else:
            row += ["", ""]
        w.writerow(row)
    return buf.getvalue(), warnings


def emit_plot_data(tf_lti: TransferFunction, tf_oracle: TransferFunction | None,
                   path, manifest: RunManifest | None = None) -> Path:
    """Write the overlay CSV (both inputs DC-normalized by the caller)."""
    text, warnings = plot_data_csv(tf_lti, tf_oracle)
    path = Path(path)
    path.write_text(text)
    if manifest is not None:
        manifest.add_output(path)
        manifest.warnings.extend(warnings)
    for msg in warnings:
        log.warning(msg)
    return path


def dump_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, (complex, np.complexfloating)):
        return {"re": float(o.real), "im": float(o.imag)}
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


__all__ = ["AcceptanceError", "BenchmarkResult", "RunManifest", "run_benchmark", "deviations",
           "emit_plot_data", "plot_data_csv", "dump_json"]
