"""Canned end-to-end scenarios for the headline sensitivity and signal-recovery numbers.

Each figure id runs its scenario(s), writes plot-ready CSVs and returns a report of
PASS/FAIL checks against fixed tolerances.
"""

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from fibertwin.errors import DomainError
from fibertwin.services import adev, dsp
from fibertwin.services.model import (
    CALIBRATION_DITHER,
    HEADLINE_SIGNAL,
    MEASURED_LOSS_BUDGET,
    MID_FRINGE,
    InterferometerConfig,
    SignalSpec,
    fractional_displacement_asd,
    loss_budget_total,
    shot_noise_asd,
    snr_threshold_amplitude,
)
from fibertwin.services.pipeline import lockin_step
from fibertwin.services.sim import (
    CountSeries,
    VisibilityDrift,
    concatenate,
    headline_scenario,
    run_experiment,
    run_stitched,
    simulate_phase_scan,
)
from fibertwin.utils import io
from fibertwin.utils.logging import get_logger
from fibertwin.utils.manifest import reproduction_manifest, write_manifest
from fibertwin.utils.seeding import derive_seed

logger = get_logger(__name__)

PathLike = Union[str, Path]

FIGURES = ("table1", "fig2", "fig3a", "fig3b")

HOUR = 3600.0
STITCHED_HOURS = (91.2, 68.8)
N_SEGMENTS = 10
LPF_HZ = dsp.DEFAULT_LPF_HZ
SCAN_POINTS = 64
SCAN_COUNTS = 1.0e6
FLOOR_BAND_HZ = (0.02, 5.0)
FLOOR_SEGMENTS = 16
FLOOR_HOURS = 1.0
TONE_CONTRAST_MIN = 5.0
REFERENCE_DISPLACEMENT = 1.52e-14
LOCKIN_CACHE = "lockin_signal.npz"
THRESHOLD_SNRS = (5.0, 10.0)

SCAN_STREAM = 300
LADDER_STREAM = 400
FLOOR_STREAM = 500


@dataclass(frozen=True)
class LadderRung:
    """One injected amplitude of the signal-recovery ladder, with the measured reference value."""

    rms_rad: float
    hours: Tuple[float, ...]
    measured_rad: float
    measured_sem_rad: float


LADDER = (
    LadderRung(2.59e-4, (18.2,), 2.40e-4, 1.3e-5),
    LadderRung(1.30e-4, (33.1,), 1.30e-4, 0.9e-5),
    LadderRung(HEADLINE_SIGNAL.rms_amplitude, STITCHED_HOURS, 6.18e-5, 4.4e-6),
)


@dataclass
class Check:
    """One acceptance comparison."""

    name: str
    value: float
    target: str
    passed: bool


@dataclass
class Report:
    figure: str
    checks: List[Check] = field(default_factory=list)
    outputs: List[Path] = field(default_factory=list)
    cache_digests: Dict[str, str] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def add(self, name: str, value: float, target: str, passed: bool) -> None:
        self.checks.append(Check(name, float(value), target, bool(passed)))
        logger.info(f"{self.figure} {name}: {value:.4g} [{target}] {'PASS' if passed else 'FAIL'}")

    def format_table(self) -> str:
        width = max([len(c.name) for c in self.checks] + [5])
        lines = [self.figure, f"{'check'.ljust(width)}  {'value':>12}  {'target':<24}  result"]
        for c in self.checks:
            lines.append(f"{c.name.ljust(width)}  {c.value:>12.4g}  {c.target:<24}  {'PASS' if c.passed else 'FAIL'}")
        lines.append(f"{self.figure}: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


@dataclass
class Recovery:
    """Outcome of one simulated and analyzed signal injection."""

    combined: dsp.SignalEstimate
    per_run: List[dsp.SignalEstimate]
    runs: List[CountSeries]
    visibility: float
    durations: List[float]


def _within_sigma(measured: float, truth: float, sigma: float, k: float = 2.0) -> bool:
    return abs(measured - truth) <= k * sigma


class ReproductionService:
    """Runs the canned scenarios into ``out_dir``.

    Args:
        out_dir: Output directory.
        seed: Top-level seed.
        threads: Worker threads for independent scenarios.
        scale: Fraction of the full durations, below 1 for quick looks.
    """

    def __init__(self, out_dir: PathLike, seed: int, threads: int = 1, scale: float = 1.0) -> None:
        if not 0 < scale <= 1:
            raise DomainError(f"scale must be in (0, 1], got {scale}")
        if threads < 1:
            raise DomainError(f"threads must be >= 1, got {threads}")
        self.out_dir = Path(out_dir)
        self.seed = seed
        self.threads = threads
        self.scale = scale

    @property
    def full_scale(self) -> bool:
        return self.scale == 1.0

    def run(self, figure: str) -> Report:
        handlers: Dict[str, Callable[[], Report]] = {
            "table1": self.table1,
            "fig2": self.fig2,
            "fig3a": self.fig3a,
            "fig3b": self.fig3b,
        }
        if figure not in handlers:
            raise DomainError(f"unknown figure '{figure}', expected one of {FIGURES}")
        self.out_dir.mkdir(parents=True, exist_ok=True)
        logger.info(f"Reproducing {figure} (seed {self.seed}, scale {self.scale})")
        report = handlers[figure]()
        report.outputs.append(self._write_manifest(report))
        return report

    def _write_manifest(self, report: Report) -> Path:
        params = {"scale": self.scale, "threads": self.threads, "lpf_hz": LPF_HZ, "max_segments": N_SEGMENTS}
        manifest = reproduction_manifest(report.figure, self.seed, params)
        for path in report.outputs:
            # npz archives carry write timestamps, their content is hashed into the stage params instead
            if path.suffix != ".npz":
                manifest.add_output(path)
        manifest.stages["reproduce"].update(report.cache_digests)
        return write_manifest(manifest, self.out_dir, name=f"manifest_{report.figure}.json")

    def _duration(self, hours: float) -> float:
        fs = InterferometerConfig().bin_rate_fs
        return round(hours * HOUR * self.scale * fs) / fs

    def _segments(self, durations: Sequence[float]) -> int:
        # Shortened runs keep every segment longer than two lock-in settling periods
        settle_s = dsp.settling_samples(1.0, LPF_HZ)
        fitting = int(min(durations) // (2 * settle_s))
        return max(1, min(N_SEGMENTS, fitting))

    def _measure_visibility(self, seed: int) -> float:
        cfg = InterferometerConfig()
        phases, n1, n2 = simulate_phase_scan(cfg, SCAN_POINTS, SCAN_COUNTS, derive_seed(seed, SCAN_STREAM))
        visibility, offset = dsp.fit_visibility(phases, n1, n2)
        logger.info(f"Fringe scan: V={visibility:.4f}, offset {offset:.2e} rad")
        return visibility

    def _recover(self, rms_rad: float, hours: Sequence[float], seed: int) -> Recovery:
        durations = [self._duration(h) for h in hours]
        signal = SignalSpec(HEADLINE_SIGNAL.frequency, rms_rad)
        scenario = headline_scenario(durations[0], seed, injections=(CALIBRATION_DITHER, signal))
        runs = run_stitched(scenario, durations)
        visibility = self._measure_visibility(seed)
        combined, per_run = dsp.extract_signal_runs(
            runs, visibility, MID_FRINGE, CALIBRATION_DITHER, signal.frequency, self._segments(durations), LPF_HZ
        )
        return Recovery(combined, per_run, runs, visibility, durations)

    def table1(self) -> Report:
        report = Report("table1")
        totals = loss_budget_total(MEASURED_LOSS_BUDGET)
        rows: List[List[object]] = [[e.label, e.loss_db, e.uncertainty_db] for e in MEASURED_LOSS_BUDGET.entries]
        rows.append(["Total", totals.total_db, totals.total_uncertainty_db])
        report.outputs.append(io.write_table_csv(self.out_dir / "table1.csv", ["source", "loss_db", "err_db"], rows))

        percent = 100 * totals.transmission_fraction
        linear = totals.linear_uncertainty_db
        report.add("total_db", totals.total_db, "14.99", round(totals.total_db, 2) == 14.99)
        report.add("transmission_percent", percent, "3.17", round(percent, 2) == 3.17)
        report.add("linear_uncertainty_db", linear, "0.10", round(linear, 2) == 0.10)
        report.add("rss_uncertainty_db", totals.total_uncertainty_db, "<= 0.10", totals.total_uncertainty_db <= linear)
        return report

    def fig2(self) -> Report:
        report = Report("fig2")
        recovery = self._recover(HEADLINE_SIGNAL.rms_amplitude, STITCHED_HOURS, self.seed)
        combined = recovery.combined

        report.add(
            "signal_rad",
            combined.amplitude,
            "6.48e-5 within 2 sem",
            _within_sigma(combined.amplitude, HEADLINE_SIGNAL.rms_amplitude, combined.sem),
        )
        if self.full_scale:
            report.add("sem_rad", combined.sem, "[3e-6, 8e-6]", 3e-6 <= combined.sem <= 8e-6)

        half = dsp.asd(combined.series)
        for tone in (HEADLINE_SIGNAL, CALIBRATION_DITHER):
            contrast = dsp.tone_contrast(half, tone.frequency)
            passed = contrast >= TONE_CONTRAST_MIN
            report.add(f"contrast_{tone.frequency:g}hz", contrast, f">= {TONE_CONTRAST_MIN:g}", passed)

        self._write_fig2_outputs(report, recovery, half)
        self._shot_noise_floor(report)
        return report

    def _write_fig2_outputs(self, report: Report, recovery: Recovery, half: dsp.SpectrumEstimate) -> None:
        out = self.out_dir
        combined = recovery.combined

        freqs, level, _ = dsp.log_bin_spectrum(half)
        report.outputs.append(io.write_spectrum_csv(out / "fig2_spectrum_half_difference.csv", freqs, level))
        # Single ports from the raw counts, without recalibration
        ports = dsp.counts_to_phase(concatenate(recovery.runs), recovery.visibility, MID_FRINGE)
        for port in ports:
            freqs, level, _ = dsp.log_bin_spectrum(dsp.asd(port))
            report.outputs.append(io.write_spectrum_csv(out / f"fig2_spectrum_{port.source}.csv", freqs, level))

        fs = combined.series.fs
        report.outputs.append(io.write_lockin_csv(out / "fig2_lockin.csv", combined.lock_in, lockin_step(fs, LPF_HZ)))
        report.outputs.append(io.write_calibration_csv(out / "fig2_calibration.csv", combined.calibrations))

        rows: List[List[object]] = [
            [str(index), recovery.durations[index] / HOUR, e.amplitude, e.sem, e.statistical_sem, e.calibration_sem]
            for index, e in enumerate(recovery.per_run)
        ]
        hours = sum(recovery.durations) / HOUR
        rows.append(
            ["stitched", hours, combined.amplitude, combined.sem, combined.statistical_sem, combined.calibration_sem]
        )
        header = ["run", "hours", "signal_rad", "sem_rad", "statistical_sem_rad", "calibration_sem_rad"]
        report.outputs.append(io.write_table_csv(out / "fig2_runs.csv", header, rows))

        cache = out / LOCKIN_CACHE
        np.savez(
            cache,
            i_series=combined.lock_in.i_series,
            fs=fs,
            sem=combined.sem,
            statistical_sem=combined.statistical_sem,
            duration=combined.series.duration,
            seed=self.seed,
            scale=self.scale,
        )
        report.outputs.append(cache)
        report.cache_digests["lockin_series_sha256"] = hashlib.sha256(combined.lock_in.i_series.tobytes()).hexdigest()

        summary = {
            "visibility": recovery.visibility,
            "signal_rad": combined.amplitude,
            "sem_rad": combined.sem,
            "statistical_sem_rad": combined.statistical_sem,
            "calibration_sem_rad": combined.calibration_sem,
            "snr": combined.snr,
        }
        summary_path = out / "fig2_summary.json"
        summary_path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
        report.outputs.append(summary_path)

    def _shot_noise_floor(self, report: Report) -> None:
        """1 h run without classical noise: the half-difference floor against the closed form."""
        cfg = InterferometerConfig()
        drift = VisibilityDrift(v_start=cfg.visibility_V, v_end=cfg.visibility_V, kind="constant")
        seed = derive_seed(self.seed, FLOOR_STREAM)
        scenario = headline_scenario(FLOOR_HOURS * HOUR, seed, classical_noise=False, drift=drift)
        p1, p2 = dsp.counts_to_phase(run_experiment(scenario), cfg.visibility_V, MID_FRINGE)
        spectrum = dsp.asd(dsp.half_difference(p1, p2), "hann", FLOOR_SEGMENTS)

        lo, hi = FLOOR_BAND_HZ
        band = (spectrum.frequencies >= lo) & (spectrum.frequencies <= hi)
        measured = math.sqrt(float(np.mean(spectrum.asd[band] ** 2)))
        expected = shot_noise_asd(cfg.detected_pair_rate_R, cfg.visibility_V)
        report.add("shot_noise_floor", measured, f"{expected:.3g} ± 10%", abs(measured / expected - 1) <= 0.10)

        displacement = fractional_displacement_asd(
            expected, cfg.wavelength_lambda, cfg.refractive_index_n, cfg.arm_length_l
        )
        passed = abs(displacement / REFERENCE_DISPLACEMENT - 1) <= 0.02
        report.add("fractional_displacement", displacement, "1.52e-14 ± 2%", passed)

        freqs, level, _ = dsp.log_bin_spectrum(spectrum)
        report.outputs.append(io.write_spectrum_csv(self.out_dir / "fig2_shot_noise_floor.csv", freqs, level))

    def fig3a(self) -> Report:
        report = Report("fig3a")
        seeds = [derive_seed(self.seed, LADDER_STREAM + index) for index in range(len(LADDER))]

        def recover(index: int) -> Recovery:
            rung = LADDER[index]
            return self._recover(rung.rms_rad, rung.hours, seeds[index])

        indices = range(len(LADDER))
        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                recoveries = list(pool.map(recover, indices))
        else:
            recoveries = [recover(index) for index in indices]

        rows: List[List[object]] = []
        for rung, recovery in zip(LADDER, recoveries):
            estimate = recovery.combined
            hours = sum(recovery.durations) / HOUR
            label = f"{rung.rms_rad:.3g}@{hours:.1f}h"
            report.add(
                f"{label} signal",
                estimate.amplitude,
                f"{rung.rms_rad:.3g} within 2 sem",
                _within_sigma(estimate.amplitude, rung.rms_rad, estimate.sem),
            )
            if self.full_scale:
                ratio = estimate.sem / rung.measured_sem_rad
                report.add(f"{label} sem ratio", ratio, "[0.5, 2]", 0.5 <= ratio <= 2.0)
            rows.append(
                [
                    rung.rms_rad,
                    hours,
                    estimate.amplitude,
                    estimate.sem,
                    estimate.statistical_sem,
                    rung.measured_rad,
                    rung.measured_sem_rad,
                ]
            )

        header = [
            "injected_rad", "hours", "signal_rad", "sem_rad", "statistical_sem_rad", "measured_rad", "measured_sem_rad"
        ]
        report.outputs.append(io.write_table_csv(self.out_dir / "fig3a.csv", header, rows))
        report.outputs.append(self._snr_thresholds())
        return report

    def _snr_thresholds(self) -> Path:
        cfg = InterferometerConfig()
        floor = shot_noise_asd(cfg.detected_pair_rate_R, cfg.visibility_V)
        hours = np.logspace(0, math.log10(200), 41)
        rows = [
            [h] + [snr_threshold_amplitude(floor, snr, h * HOUR) for snr in THRESHOLD_SNRS] for h in hours.tolist()
        ]
        header = ["hours"] + [f"snr{snr:g}_rad" for snr in THRESHOLD_SNRS]
        return io.write_table_csv(self.out_dir / "snr_thresholds.csv", header, rows)

    def _load_lockin_cache(self) -> Optional[Dict[str, Any]]:
        """Lock-in series left by ``fig2``, or None when absent or produced with another seed or scale."""
        cache = self.out_dir / LOCKIN_CACHE
        if not cache.exists():
            logger.info(f"No {LOCKIN_CACHE} in {self.out_dir}, running fig2 first")
            return None
        with np.load(cache) as data:
            cached = {key: data[key] for key in data.files}
        expected = {"seed": self.seed, "scale": self.scale}
        for key, value in expected.items():
            if key not in cached or not math.isclose(float(cached[key]), float(value)):
                found = cached[key] if key in cached else "nothing"
                logger.info(f"{LOCKIN_CACHE} has {key}={found}, expected {value}; running fig2 again")
                return None
        return cached

    def fig3b(self) -> Report:
        """ADEV of the demodulated in-phase series cached by ``fig2``, which runs first if needed."""
        cached = self._load_lockin_cache()
        if cached is None:
            self.run("fig2")
            cached = self._load_lockin_cache()
            if cached is None:
                raise DomainError(f"fig2 did not leave a usable {LOCKIN_CACHE} in {self.out_dir}")

        report = Report("fig3b")
        i_series = cached["i_series"]
        fs = float(cached["fs"])
        sem = float(cached["statistical_sem"])
        duration = float(cached["duration"])
        report.cache_digests["lockin_series_sha256"] = hashlib.sha256(i_series.tobytes()).hexdigest()

        taus = adev.default_taus(i_series.size, fs, tau_min=20 / LPF_HZ)
        result = adev.analyze_stability(i_series, fs, taus)
        report.outputs.append(io.write_adev_csv(self.out_dir / "fig3b_adev.csv", result))

        extrapolated = adev.extrapolate(result.fit_level, result.fit_slope, duration)
        slope_ok = abs(result.fit_slope + 0.5) <= 0.05
        report.add("adev_slope", result.fit_slope, "-0.5 ± 0.05", slope_ok)
        ratio = extrapolated / sem
        report.add("extrapolated_over_sem", ratio, "[0.67, 1.5]", 0.67 <= ratio <= 1.5)
        return report
