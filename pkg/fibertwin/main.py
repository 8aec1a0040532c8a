"""Command-line interface: predict, simulate, analyze and reproduce.

Reports go to stdout, logs to stderr. Exit codes: 0 success, 1 runtime or I/O failure,
2 usage or validation error.
"""

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from loguru import logger

from fibertwin import __version__
from fibertwin.config import config
from fibertwin.errors import ConfigError, DomainError, FormatError, TwinError
from fibertwin.services.model import (
    MID_FRINGE,
    PhysicalConstants,
    SignalSpec,
    averaged_sensitivity,
    band_rms_flat,
    detected_rate,
    fractional_displacement_asd,
    gravitational_phase_shift,
    loss_budget_total,
    shot_noise_asd,
)
from fibertwin.services.pipeline import AnalysisSettings, PipelineService
from fibertwin.services.reproduce import FIGURES, ReproductionService
from fibertwin.utils.logging import setup_logging
from fibertwin.utils.scenario_file import load_budget, load_scenario

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

HEADLINE_HOURS = 160.0
HEADLINE_BAND_HZ = (0.01, 5.0)


def _output_dir(args: argparse.Namespace, command: str) -> Path:
    return Path(args.out) if args.out else Path(config.OUTPUT_DIR) / command


def command_predict(args: argparse.Namespace) -> int:
    consts = PhysicalConstants(g=args.g)
    phase = gravitational_phase_shift(consts, args.index, args.height, args.length, args.wavelength)
    floor = shot_noise_asd(args.rate, args.visibility)
    displacement = fractional_displacement_asd(floor, args.wavelength, args.index, args.length)

    lines = [
        f"gravitational phase shift: {phase:.4e} rad",
        f"  (n={args.index}, g={consts.g} m/s^2, h={args.height} m, l={args.length} m, lambda={args.wavelength} m)",
        f"shot-noise phase ASD: {floor:.4e} rad/sqrt(Hz) (R={args.rate:g} Hz, V={args.visibility})",
        f"fractional displacement ASD: {displacement:.4e} 1/sqrt(Hz)",
        f"band RMS {HEADLINE_BAND_HZ[0]}-{HEADLINE_BAND_HZ[1]} Hz: {band_rms_flat(floor, *HEADLINE_BAND_HZ):.4e} rad",
        f"averaged over {HEADLINE_HOURS:g} h: {averaged_sensitivity(floor, HEADLINE_HOURS * 3600):.4e} rad",
    ]
    if args.budget:
        budget = load_budget(args.budget)
        totals = loss_budget_total(budget)
        lines += [
            f"loss budget: {totals.total_db:.2f} dB ± {totals.total_uncertainty_db:.2f} dB "
            f"(linear sum ± {totals.linear_uncertainty_db:.2f} dB)",
            f"transmission: {100 * totals.transmission_fraction:.2f}% ± {100 * totals.transmission_uncertainty:.2f}%",
        ]
        if args.source_rate:
            lines.append(f"detected rate: {detected_rate(args.source_rate, budget):.4e} Hz")
    print("\n".join(lines))
    return EXIT_OK


def command_simulate(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.config)
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    if args.duration is not None:
        scenario = replace(scenario, duration=args.duration)

    out_dir = _output_dir(args, "simulate")
    if args.runs != 1:
        ensemble = PipelineService(out_dir).simulate_ensemble(scenario, args.runs, threads=args.threads)
        print(f"simulated {len(ensemble)} runs of {len(ensemble[0])} bins -> {out_dir}")
        return EXIT_OK
    counts = PipelineService(out_dir).simulate(scenario)
    print(f"simulated {len(counts)} bins ({counts.duration:.0f} s) -> {out_dir}")
    return EXIT_OK


def command_analyze(args: argparse.Namespace) -> int:
    if (args.ref_freq is None) != (args.ref_rms is None):
        raise DomainError("--ref-freq and --ref-rms must be given together")
    reference = SignalSpec(args.ref_freq, args.ref_rms, args.ref_phase) if args.ref_freq is not None else None
    settings = AnalysisSettings(
        visibility=args.visibility,
        phi0=args.phi0,
        reference=reference,
        signal_frequency=args.signal_freq,
        signal_phase=args.signal_phase,
        n_segments=args.segments,
        lpf_cutoff=args.lpf,
        spectrum_segments=args.spectrum_segments,
    )

    out_dir = _output_dir(args, "analyze")
    summaries = PipelineService(out_dir).analyze_files(args.counts, settings, threads=args.threads)
    print("\n\n".join(_format_summary(summary) for summary in summaries))
    return EXIT_OK


def _format_summary(summary: Dict[str, Any]) -> str:
    lines = [f"analyzed {summary['n_bins']} bins ({summary['duration_s']:.0f} s) -> {summary['out_dir']}"]
    if "floor_asd_rad_per_rthz" in summary:
        lines.append(f"flat floor: {summary['floor_asd_rad_per_rthz']:.3e} rad/sqrt(Hz)")
    if "amplitude_rad" in summary:
        lines.append(
            f"signal: {summary['amplitude_rad']:.4e} ± {summary['sem_rad']:.2e} rad "
            f"(calibration ± {summary['calibration_sem_rad']:.1e}, snr {summary['snr']:.1f})"
        )
    if "adev_fit_slope" in summary and not math.isnan(summary["adev_fit_slope"]):
        lines.append(f"ADEV slope: {summary['adev_fit_slope']:.3f} (white noise: {summary['white_noise']})")
    return "\n".join(lines)


def command_reproduce(args: argparse.Namespace) -> int:
    seed = config.DEFAULT_SEED if args.seed is None else args.seed
    service = ReproductionService(_output_dir(args, "reproduce"), seed, threads=args.threads, scale=args.scale)
    report = service.run(args.figure)
    print(report.format_table())
    return EXIT_OK if report.passed else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fibertwin", description="Fiber interferometer digital twin")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    parser.add_argument("--log-dir", type=Path, default=None, help="also write log files here")
    subparsers = parser.add_subparsers(dest="command", required=True)

    predict = subparsers.add_parser("predict", help="closed-form predictions")
    predict.add_argument("--height", type=float, default=1.0, help="height difference in m")
    predict.add_argument("--length", type=float, default=5.0e4, help="arm length in m")
    predict.add_argument("--wavelength", type=float, default=1.55e-6, help="wavelength in m")
    predict.add_argument("--index", type=float, default=1.46, help="effective refractive index")
    predict.add_argument("--g", type=float, default=9.81, help="gravitational acceleration in m/s^2")
    predict.add_argument("--rate", type=float, default=1.066e5, help="detected pair rate in Hz")
    predict.add_argument("--visibility", type=float, default=0.98)
    predict.add_argument("--budget", type=Path, default=None, help="loss budget file")
    predict.add_argument("--source-rate", type=float, default=None, help="source pair rate in Hz")
    predict.set_defaults(handler=command_predict)

    simulate = subparsers.add_parser("simulate", help="simulate counts from a scenario file")
    simulate.add_argument("config", type=Path, help="scenario YAML file")
    simulate.add_argument("--out", default=None)
    simulate.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    simulate.add_argument("--duration", type=float, default=None, help="override the duration in s")
    simulate.add_argument("--runs", type=int, default=1, help="independent realizations with derived seeds")
    simulate.add_argument("--threads", type=int, default=config.DEFAULT_THREADS)
    simulate.set_defaults(handler=command_simulate)

    analyze = subparsers.add_parser("analyze", help="analyze a counts file")
    analyze.add_argument("counts", type=Path, nargs="+", help="counts CSV or binary files")
    analyze.add_argument("--visibility", type=float, default=0.98)
    analyze.add_argument("--phi0", type=float, default=MID_FRINGE, help="lock point in rad")
    analyze.add_argument("--ref-freq", type=float, default=None, help="calibration dither frequency in Hz")
    analyze.add_argument("--ref-rms", type=float, default=None, help="calibration dither RMS in rad")
    analyze.add_argument("--ref-phase", type=float, default=0.0, help="calibration dither phase in rad")
    analyze.add_argument("--signal-freq", type=float, default=None, help="signal frequency in Hz")
    analyze.add_argument("--signal-phase", type=float, default=None, help="fixed lock-in reference phase in rad")
    analyze.add_argument("--segments", type=int, default=10, help="recalibration segments")
    analyze.add_argument("--lpf", type=float, default=0.01, help="lock-in low-pass cutoff in Hz")
    analyze.add_argument("--spectrum-segments", type=int, default=1, help="Welch segments for the spectrum")
    analyze.add_argument("--out", default=None)
    analyze.add_argument("--threads", type=int, default=config.DEFAULT_THREADS)
    analyze.set_defaults(handler=command_analyze)

    reproduce = subparsers.add_parser("reproduce", help="run a canned scenario")
    reproduce.add_argument("figure", choices=FIGURES)
    reproduce.add_argument("--out", default=None)
    reproduce.add_argument("--seed", type=int, default=None)
    reproduce.add_argument("--threads", type=int, default=config.DEFAULT_THREADS)
    reproduce.add_argument("--scale", type=float, default=1.0, help="fraction of the full durations")
    reproduce.set_defaults(handler=command_reproduce)

    return parser


USAGE_ERRORS = (DomainError, ConfigError, FormatError)


def main(argv: Optional[List[str]] = None) -> int:
    """Run the CLI and return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    handler: Callable[[argparse.Namespace], int] = args.handler

    try:
        config.validate()
        setup_logging("DEBUG" if args.verbose else None, log_dir=args.log_dir)
        return handler(args)
    except USAGE_ERRORS as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, TwinError) as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception(f"{args.command} failed")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
