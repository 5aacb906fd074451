"""Command-line entry point: ``rydlti <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 acceptance-bound violation (benchmark).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .benchmark import (AcceptanceError, RunManifest, deviations, dump_json,
                        plot_data_csv, run_benchmark)
from .liouvillian import LiouvillianPair
from .oracle import OracleError, oracle_transfer_sweep
from .params import ConfigError, SensorParams, load_config
from .steady_state import solve_steady_state
from .transfer import (TWO_PI, TransferFunction, VelocityGrid, doppler_detunings,
                       make_velocity_grid, normalize_dc, phase_response, transfer_sweep)
from .waveforms import (add_awgn, constellation_report, convolve, demodulate_symbols,
                        generate_qam16, impulse_response, uniform_tf_grid)

log = logging.getLogger("rydlti")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ACCEPTANCE = 0, 2, 3, 4


def parse_doppler(text: str) -> dict:
    """``"21"``, ``"nodes=21"`` or ``"nodes=41,rule=trapezoid"``."""
    opts = {"nodes": 1, "rule": "gauss-hermite"}
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, sep, value = part.partition("=")
        if not sep:
            key, value = "nodes", key
        if key == "nodes":
            try:
                opts["nodes"] = int(value)
            except ValueError:
                raise argparse.ArgumentTypeError(f"bad node count {value!r}") from None
            if opts["nodes"] < 1:
                raise argparse.ArgumentTypeError("nodes must be >= 1")
        elif key == "rule":
            if value not in ("gauss-hermite", "trapezoid"):
                raise argparse.ArgumentTypeError(f"unknown rule {value!r}")
            opts["rule"] = value
        else:
            raise argparse.ArgumentTypeError(f"unknown doppler option {key!r}")
    return opts


def _grid(opts: dict) -> VelocityGrid:
    if opts["nodes"] == 1 and opts["rule"] == "gauss-hermite":
        return VelocityGrid.single_class()
    return make_velocity_grid(opts["nodes"], opts["rule"])


def _fmt(x: float) -> str:
    # shortest round-trip form: rounding must not push a phase past pi
    return repr(float(x))


class Writer:
    """Single funnel for output files so every artifact lands in the manifest."""

    def __init__(self, out_dir: Path, manifest: RunManifest):
        self.out_dir = out_dir
        self.manifest = manifest
        out_dir.mkdir(parents=True, exist_ok=True)

    def text(self, name: str, content: str) -> Path:
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content)
        self.manifest.add_output(path.relative_to(self.out_dir).as_posix())
        return path

    def csv(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return self.text(name, buf.getvalue())

    def json(self, name: str, obj) -> Path:
        path = dump_json(obj, self.out_dir / name)
        self.manifest.add_output(path.relative_to(self.out_dir).as_posix())
        return path

    def close(self, status: str = "ok") -> None:
        self.manifest.finish(status)
        dump_json(self.manifest.to_dict(), self.manifest_path)

    @property
    def manifest_path(self) -> Path:
        return self.out_dir / f"{self.manifest.command}.manifest.json"


def _freqs(args) -> np.ndarray:
    if args.points < 1:
        raise ConfigError("--points must be >= 1")
    if args.f_start < 0 or args.f_stop < args.f_start:
        raise ConfigError("need 0 <= --f-start <= --f-stop")
    if args.points == 1:
        return np.array([args.f_start])
    return np.linspace(args.f_start, args.f_stop, args.points)


def _tf_rows(tf: TransferFunction, normalize: bool):
    ref = abs(tf.values[0])
    shown = normalize_dc(tf) if normalize else tf
    phase = phase_response(shown)
    for k, f in enumerate(tf.freqs_hz):
        v = shown.values[k]
        yield [_fmt(f), _fmt(v.real), _fmt(v.imag), _fmt(abs(v)),
               _fmt(abs(tf.values[k]) / ref if ref else float("nan")), _fmt(phase[k])]


TF_HEADER = ["f_if_hz", "re", "im", "amplitude", "amplitude_normalized", "phase_rad"]


def read_tf_csv(path) -> TransferFunction:
    """Load a transfer-function CSV written by ``transfer``/``oracle-transfer``."""
    path = Path(path)
    try:
        with path.open() as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    if not rows:
        return TransferFunction(np.zeros(0), np.zeros(0, dtype=complex))
    try:
        f = np.array([float(r["f_if_hz"]) for r in rows])
        v = np.array([complex(float(r["re"]), float(r["im"])) for r in rows])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path} is not a transfer-function CSV ({exc})") from None
    return TransferFunction(TWO_PI * f, v)


# subcommands ------------------------------------------------------------

def cmd_steady_state(args, params: SensorParams, out: Writer) -> int:
    dp, dc = doppler_detunings(params, args.velocity)
    pair = LiouvillianPair.from_params(params, dp, dc)
    with out.manifest.time_stage("steady_state"):
        rho = solve_steady_state(pair)
    a_inf = float(np.max(np.sum(np.abs(pair.a), axis=1)))
    cplx = lambda z: {"re": z.real, "im": z.imag}
    result = {
        "velocity_u": args.velocity,
        "populations": rho.populations.tolist(),
        "rho12": cplx(rho[1, 2]), "rho23": cplx(rho[2, 3]), "rho34": cplx(rho[3, 4]),
        "trace": rho.trace.real,
        "residual_inf_rel": float(np.max(np.abs(pair.a @ rho.data)) / a_inf),
        "hermiticity_error": rho.hermiticity_error(),
    }
    text = json.dumps(result, indent=2, sort_keys=True)
    print(text)
    out.text("steady_state.json", text + "\n")
    return EXIT_OK


def cmd_transfer(args, params, out: Writer) -> int:
    freqs = _freqs(args)
    grid = _grid(args.doppler)
    with out.manifest.time_stage("transfer_sweep"):
        tf = transfer_sweep(params, freqs, grid=grid, threads=args.threads)
    out.csv("transfer.csv", TF_HEADER, _tf_rows(tf, args.normalize_dc))
    out.manifest.results["velocity_grid"] = grid.describe()
    return EXIT_OK


def cmd_oracle_transfer(args, params, out: Writer) -> int:
    freqs = _freqs(args)
    grid = _grid(args.doppler)
    with out.manifest.time_stage("oracle_sweep"):
        sweep = oracle_transfer_sweep(params, freqs, args.modulation_depth, grid=grid,
                                      threads=args.threads,
                                      keep_traces=args.save_traces is not None)
    out.csv("oracle_transfer.csv", TF_HEADER, _tf_rows(sweep.transfer, args.normalize_dc))
    fits = [{"f_if_hz": f.freq_hz, "amplitude": f.amplitude, "phase_rad": f.phase,
             "offset": f.offset, "residual_rms": f.residual_rms, "window_s": list(f.window)}
            for f in sweep.fits]
    out.json("oracle_report.json", {"modulation_depth": args.modulation_depth,
                                    "velocity_grid": grid.describe(), "fits": fits,
                                    "diagnostics": sweep.diagnostics})
    out.manifest.results["oracle_wall_time_s"] = sweep.wall_time
    if args.save_traces is not None:
        for k, (f, (t, y)) in enumerate(sorted(sweep.traces.items())):
            out.csv(f"{args.save_traces}/trace_{k:03d}_{f:.0f}Hz.csv", ["t_s", "im_rho12"],
                    ([_fmt(a), _fmt(b)] for a, b in zip(t, y)))
    return EXIT_OK


def _impulse(params, args):
    grid = _grid(args.doppler)
    freqs = uniform_tf_grid(args.f_max, args.df)
    n_fft = args.sample_rate / args.df
    if abs(n_fft - round(n_fft)) > 1e-9 * n_fft:
        raise ConfigError("--sample-rate must be a whole multiple of --df")
    tf = transfer_sweep(params, freqs, grid=grid, threads=args.threads)
    return impulse_response(tf, n_fft=int(round(n_fft)), taper=args.taper)


def cmd_impulse(args, params, out: Writer) -> int:
    with out.manifest.time_stage("impulse_response"):
        ir = _impulse(params, args)
    t = (np.arange(len(ir)) - ir.delay) / ir.sample_rate
    out.csv("impulse.csv", ["t_s", "tap"], ([_fmt(a), _fmt(b)] for a, b in zip(t, ir.taps)))
    out.json("impulse.json", {"sample_rate_hz": ir.sample_rate, "n_taps": len(ir),
                              "delay_taps": ir.delay, "provenance": ir.provenance})
    return EXIT_OK


def cmd_qam(args, params, out: Writer) -> int:
    seed = args.seed
    out.manifest.seeds["noise"] = seed
    with out.manifest.time_stage("impulse_response"):
        ir = _impulse(params, args)
    amp = args.modulation_depth * params.omega_lo
    with out.manifest.time_stage("propagate"):
        tx = generate_qam16(args.if_freq, args.symbol_us * 1e-6, args.reps, amp,
                            args.sample_rate)
        noisy = tx if args.snr_db is None else add_awgn(tx, args.snr_db, seed)
        rx = convolve(noisy, ir)
        iq = demodulate_symbols(rx, args.if_freq, args.discard_fraction)
        report = constellation_report(tx.annotation["ideal_iq"], iq, args.normalization)
    out.csv("constellation.csv", ["symbol_index", "ideal_i", "ideal_q", "rx_i", "rx_q"],
            ([k, _fmt(s.real), _fmt(s.imag), _fmt(r.real), _fmt(r.imag)]
             for k, (s, r) in enumerate(zip(report.ideal, report.equalized))))
    summary = {
        "evm_percent": report.evm_percent,
        "normalization": report.normalization,
        "equalizer_gain": report.gain,
        "n_symbols": len(report),
        "per_symbol_scatter": report.scatter,
        "settings": {"if_freq_hz": args.if_freq, "symbol_us": args.symbol_us,
                     "repetitions": args.reps, "snr_db": args.snr_db, "seed": seed,
                     "sample_rate_hz": args.sample_rate, "amplitude_rad_s": amp,
                     "discard_fraction": args.discard_fraction,
                     "duration_s": tx.duration},
        "impulse_response": {"sample_rate_hz": ir.sample_rate, "n_taps": len(ir),
                             "delay_taps": ir.delay, **ir.provenance},
    }
    out.json("qam_summary.json", summary)
    if args.save_trace:
        out.csv("qam_trace.csv", ["t_s", "rf_envelope", "im_rho12"],
                ([_fmt(t), _fmt(x), _fmt(y)]
                 for t, x, y in zip(tx.times, noisy.samples, rx.samples)))
    return EXIT_OK


def cmd_benchmark(args, params, out: Writer) -> int:
    freqs = _freqs(args)
    grid = _grid(args.doppler)
    status = EXIT_OK
    try:
        res = run_benchmark(params, freqs, grid, threads=args.threads,
                            modulation_depth=args.modulation_depth, manifest=out.manifest)
    except AcceptanceError as exc:
        log.error("%s", exc)
        res, status = exc.result, EXIT_ACCEPTANCE
    if res is None:
        return EXIT_ACCEPTANCE
    report = dict(res.report)
    # wall-clock numbers are not reproducible: they live in the manifest
    out.manifest.results["timing"] = report.pop("timing")
    out.manifest.results["speedup"] = report.pop("speedup")
    out.json("benchmark.json", report)
    text, warnings = plot_data_csv(normalize_dc(res.tf_lti), normalize_dc(res.tf_oracle))
    out.text("plot_data.csv", text)
    out.manifest.warnings.extend(warnings)
    if status == EXIT_OK:
        print(f"speedup {out.manifest.results['speedup']:.1f}x "
              f"(max deviation: amplitude {report['max_amplitude_rel']:.2e}, "
              f"phase {report['max_phase_rad']:.2e} rad)")
    return status


def cmd_compare(args, params, out: Writer) -> int:
    lti = read_tf_csv(args.lti)
    oracle = read_tf_csv(args.oracle) if args.oracle else None
    if len(lti) == 0:
        raise ConfigError(f"{args.lti} holds no frequencies")
    lti_n = normalize_dc(lti)
    oracle_n = normalize_dc(oracle) if oracle is not None and len(oracle) else None
    text, warnings = plot_data_csv(lti_n, oracle_n)
    out.text("plot_data.csv", text)
    out.manifest.warnings.extend(warnings)
    for msg in warnings:
        log.warning(msg)
    if oracle_n is not None and np.allclose(lti.freqs, oracle.freqs, rtol=1e-12, atol=0):
        dev = deviations(lti, oracle)
        out.json("compare.json", {"max_amplitude_rel": dev["max_amplitude_rel"],
                                  "max_phase_rad": dev["max_phase_rad"],
                                  "n_freqs": len(lti)})
    return EXIT_OK


# parser -----------------------------------------------------------------

def _global_flags(p, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="TOML parameter file")
    p.add_argument("--out-dir", default=d("rydlti_out"), type=Path)
    p.add_argument("--threads", default=d(1), type=int)
    p.add_argument("--seed", default=d(0), type=int)
    p.add_argument("-v", "--verbose", action="count", default=d(0))


def _sweep_flags(p, points=101):
    p.add_argument("--f-start", type=float, default=0.0, help="Hz")
    p.add_argument("--f-stop", type=float, default=10e6, help="Hz")
    p.add_argument("--points", type=int, default=points)
    p.add_argument("--doppler", type=parse_doppler, default=parse_doppler("nodes=1"),
                   metavar="nodes=N", help="velocity quadrature, e.g. nodes=21")
    p.add_argument("--normalize-dc", action="store_true")


def _impulse_flags(p):
    p.add_argument("--f-max", type=float, default=10e6)
    p.add_argument("--df", type=float, default=25e3)
    p.add_argument("--sample-rate", type=float, default=100e6)
    p.add_argument("--taper", type=float, default=0.1)
    p.add_argument("--doppler", type=parse_doppler, default=parse_doppler("nodes=1"),
                   metavar="nodes=N")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    parser = argparse.ArgumentParser(prog="rydlti", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("steady-state", parents=[common], help="print the operating point")
    p.add_argument("--velocity", type=float, default=0.0, help="normalized velocity u")
    p.set_defaults(func=cmd_steady_state)

    p = sub.add_parser("transfer", parents=[common], help="LTI transfer-function sweep")
    _sweep_flags(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("oracle-transfer", parents=[common], help="time-domain sweep")
    _sweep_flags(p)
    p.add_argument("--modulation-depth", type=float, default=0.01)
    p.add_argument("--save-traces", metavar="DIR", default=None,
                   help="subdirectory of --out-dir for per-frequency traces")
    p.set_defaults(func=cmd_oracle_transfer)

    p = sub.add_parser("impulse", parents=[common], help="impulse response taps")
    _impulse_flags(p)
    p.set_defaults(func=cmd_impulse)

    p = sub.add_parser("qam", parents=[common], help="16QAM through the sensor")
    _impulse_flags(p)
    p.add_argument("--if-freq", type=float, default=1e6)
    p.add_argument("--symbol-us", type=float, default=20.0)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--modulation-depth", type=float, default=0.01,
                   help="unit-RMS symbol amplitude as a fraction of Omega_LO")
    p.add_argument("--discard-fraction", type=float, default=0.25)
    p.add_argument("--normalization", choices=("rms", "peak"), default="rms")
    p.add_argument("--save-trace", action="store_true")
    p.set_defaults(func=cmd_qam)

    p = sub.add_parser("benchmark", parents=[common], help="LTI vs oracle speedup")
    _sweep_flags(p)
    p.add_argument("--modulation-depth", type=float, default=0.01)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("compare", parents=[common], help="join LTI and oracle CSVs")
    p.add_argument("--lti", required=True, type=Path)
    p.add_argument("--oracle", type=Path, default=None)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    manifest = RunManifest(args.command, {"config_file": args.config},
                           seeds={"global": args.seed})
    manifest.results["threads"] = args.threads
    out = Writer(args.out_dir, manifest)
    try:
        params = load_config(args.config)
        manifest.config.update(params.to_config())
        code = args.func(args, params, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except (ArithmeticError, OracleError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    out.close({EXIT_OK: "ok", EXIT_CONFIG: "config-error", EXIT_NUMERIC: "numerical-failure",
               EXIT_ACCEPTANCE: "acceptance-violation"}[code])
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
