"""Simulate and analyze commands as a service over an output directory."""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from fibertwin.errors import DomainError
from fibertwin.services import adev, dsp
from fibertwin.services.model import MID_FRINGE, SignalSpec
from fibertwin.services.sim import CountSeries, Scenario, run_ensemble, run_experiment
from fibertwin.utils import io
from fibertwin.utils.logging import get_logger
from fibertwin.utils.manifest import analysis_manifest, new_manifest, write_manifest
from fibertwin.utils.scenario_file import dump_scenario
from fibertwin.utils.seeding import ENSEMBLE_STREAM, derive_seed

logger = get_logger(__name__)

PathLike = Union[str, Path]

# Lock-in traces are written at ten samples per filter cutoff period
LOCKIN_SAMPLES_PER_CUTOFF = 10
FLOOR_BAND_HZ = (1.5, 4.5)


@dataclass(frozen=True)
class AnalysisSettings:
    """Flags of the ``analyze`` command."""

    visibility: float = 0.98
    phi0: float = MID_FRINGE
    reference: Optional[SignalSpec] = None
    signal_frequency: Optional[float] = None
    signal_phase: Optional[float] = None
    n_segments: int = 10
    lpf_cutoff: float = dsp.DEFAULT_LPF_HZ
    spectrum_segments: int = 1

    def stage_params(self) -> Dict[str, Any]:
        ref = self.reference
        return {
            "counts_to_phase": {"visibility": self.visibility, "phi0": self.phi0},
            "segmented_recalibration": (
                {
                    "frequency_hz": ref.frequency,
                    "rms_rad": ref.rms_amplitude,
                    "phase_rad": ref.phase,
                    "n_segments": self.n_segments,
                }
                if ref
                else None
            ),
            "asd": {"window": "rectangular", "n_segments": self.spectrum_segments},
            "lock_in": {
                "f_demod_hz": self.signal_frequency,
                "lpf_cutoff_hz": self.lpf_cutoff,
                "reference_phase": self.signal_phase,
                "order": 4,
            },
            "adev": {"edf_model": "white"},
        }


def lockin_step(fs: float, lpf_cutoff: float) -> int:
    return max(1, int(fs / (LOCKIN_SAMPLES_PER_CUTOFF * lpf_cutoff)))


def flat_floor(spectrum: dsp.SpectrumEstimate, band: tuple[float, float] = FLOOR_BAND_HZ) -> float:
    """Mean ASD level over a band free of injected tones and comb lines."""
    lo, hi = band
    return dsp.band_rms(spectrum, lo, hi) / math.sqrt(hi - lo)


class PipelineService:
    """Writes simulation and analysis products into one output directory."""

    def __init__(self, out_dir: PathLike) -> None:
        self.out_dir = Path(out_dir)

    def simulate(self, scenario: Scenario) -> CountSeries:
        """Run a scenario and write counts (CSV and binary), the resolved scenario and a manifest."""
        counts = run_experiment(scenario)
        self._write_counts(scenario, counts)
        return counts

    def simulate_ensemble(self, scenario: Scenario, runs: int, threads: int = 1) -> List[CountSeries]:
        """Independent realizations of one scenario, each in its own ``run_NNN`` subdirectory.

        Run ``i`` uses the seed derived from the scenario seed for ensemble stream ``i``.
        """
        if runs < 1:
            raise DomainError(f"runs must be >= 1, got {runs}")
        scenarios = [scenario.with_seed(derive_seed(scenario.seed, ENSEMBLE_STREAM + i)) for i in range(runs)]
        ensemble = run_ensemble(scenarios, threads)
        for index, (member, counts) in enumerate(zip(scenarios, ensemble)):
            PipelineService(self.out_dir / f"run_{index:03d}")._write_counts(member, counts)
        return ensemble

    def _write_counts(self, scenario: Scenario, counts: CountSeries) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        manifest = new_manifest(scenario)
        manifest.stages["simulate"] = {"loop_mode": scenario.loop.mode, "n_bins": len(counts)}
        for path in (
            io.write_counts_csv(self.out_dir / "counts.csv", counts),
            io.write_counts_binary(self.out_dir / "counts.bin", counts),
            dump_scenario(scenario, self.out_dir / "scenario.yml"),
        ):
            manifest.add_output(path)
        write_manifest(manifest, self.out_dir)
        logger.info(f"Simulation outputs written to {self.out_dir}")

    def analyze(
        self, counts: CountSeries, settings: AnalysisSettings, source: Optional[PathLike] = None
    ) -> Dict[str, Any]:
        """Spectrum and ADEV, plus the signal extraction when a signal frequency is given.

        Args:
            counts: Counts to analyze.
            settings: Analysis flags.
            source: Counts file, recorded in the manifest.

        Returns:
            The summary also written to ``summary.json``.
        """
        if (
            settings.reference is not None
            and settings.signal_frequency is not None
            and math.isclose(settings.signal_frequency, settings.reference.frequency)
        ):
            raise DomainError(f"signal frequency {settings.signal_frequency} Hz coincides with the calibration dither")

        self.out_dir.mkdir(parents=True, exist_ok=True)
        manifest = analysis_manifest(source)
        manifest.stages.update(settings.stage_params())

        p1, p2 = dsp.counts_to_phase(counts, settings.visibility, settings.phi0)
        calibrations: List[dsp.CalibrationResult] = []
        if settings.reference is not None:
            p1, p2, calibration = dsp.segmented_recalibration(
                p1, p2, settings.reference, settings.n_segments, settings.lpf_cutoff
            )
            calibrations.append(calibration)
            manifest.add_output(io.write_calibration_csv(self.out_dir / "calibration.csv", calibrations))
        combined = dsp.half_difference(p1, p2)

        spectrum = dsp.asd(combined, "rectangular", settings.spectrum_segments)
        manifest.add_output(io.write_spectrum_csv(self.out_dir / "spectrum.csv", spectrum.frequencies, spectrum.asd))

        summary: Dict[str, Any] = {
            "n_bins": len(counts),
            "bin_rate_hz": counts.bin_rate_fs,
            "duration_s": counts.duration,
            "linearization_warning": combined.warning,
        }
        if spectrum.frequencies[-1] > FLOOR_BAND_HZ[1]:
            summary["floor_asd_rad_per_rthz"] = flat_floor(spectrum)
        if calibrations:
            summary["calibration_scales"] = list(calibrations[0].per_segment_scale)

        stability_input = combined.values
        if settings.signal_frequency is not None:
            estimate = dsp.estimate_signal(
                combined, calibrations, settings.signal_frequency, settings.lpf_cutoff, settings.signal_phase
            )
            step = lockin_step(counts.bin_rate_fs, settings.lpf_cutoff)
            manifest.add_output(io.write_lockin_csv(self.out_dir / "lockin.csv", estimate.lock_in, step))
            stability_input = estimate.lock_in.i_series
            summary.update(
                amplitude_rad=estimate.amplitude,
                sem_rad=estimate.sem,
                statistical_sem_rad=estimate.statistical_sem,
                calibration_sem_rad=estimate.calibration_sem,
                snr=estimate.snr,
                reference_phase_rad=estimate.lock_in.reference_phase,
            )

        stability = self._stability(stability_input, counts.bin_rate_fs, settings)
        if stability is not None:
            manifest.add_output(io.write_adev_csv(self.out_dir / "adev.csv", stability))
            summary.update(
                adev_fit_level=stability.fit_level,
                adev_fit_slope=stability.fit_slope,
                white_noise=stability.is_white,
            )

        summary_path = self.out_dir / "summary.json"
        summary_path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
        manifest.add_output(summary_path)
        write_manifest(manifest, self.out_dir)
        logger.info(f"Analysis outputs written to {self.out_dir}")
        return summary

    def analyze_files(
        self, paths: Sequence[Path], settings: AnalysisSettings, threads: int = 1
    ) -> List[Dict[str, Any]]:
        """Analyze several counts files with the same settings.

        A single file is written into ``out_dir`` itself, several into ``NNN_<stem>``
        subdirectories. Summaries come back in input order.
        """
        if threads < 1:
            raise DomainError(f"threads must be >= 1, got {threads}")
        if not paths:
            raise DomainError("no counts files to analyze")
        if len(paths) == 1:
            targets = [self.out_dir]
        else:
            targets = [self.out_dir / f"{index:03d}_{Path(p).stem}" for index, p in enumerate(paths)]

        def analyze_one(index: int) -> Dict[str, Any]:
            summary = PipelineService(targets[index]).analyze(io.read_counts(paths[index]), settings, paths[index])
            summary["out_dir"] = str(targets[index])
            return summary

        if threads == 1:
            return [analyze_one(index) for index in range(len(paths))]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(analyze_one, range(len(paths))))

    def _stability(self, values: np.ndarray, fs: float, settings: AnalysisSettings) -> Optional[adev.AdevResult]:
        # Demodulated series are correlated over the filter time, so start the grid beyond it
        tau_min = 20 / settings.lpf_cutoff if settings.signal_frequency is not None else None
        try:
            taus = adev.default_taus(len(values), fs, tau_min=tau_min)
            return adev.analyze_stability(values, fs, taus)
        except DomainError as e:
            logger.warning(f"Skipping ADEV: {e}")
            return None
