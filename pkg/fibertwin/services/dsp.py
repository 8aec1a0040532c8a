"""Analysis chain from photon counts to a calibrated signal amplitude.

Counts are inverted to phase at each port, combined into the half-difference, recalibrated
segment by segment against the known dither, and demodulated at the signal frequency.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from fibertwin.errors import CalibrationError, DomainError
from fibertwin.services.model import MID_FRINGE, SignalSpec
from fibertwin.services.sim import CountSeries
from fibertwin.utils.logging import get_logger

logger = get_logger(__name__)

PHASE_SOURCES = ("port1", "port2", "half_difference")
WINDOWS = ("rectangular", "hann")

LINEARIZATION_LIMIT = 0.3
SETTLING_CUTOFF_PERIODS = 5.0
MIN_SPECTRUM_SAMPLES = 16
MIN_REFERENCE_PERIODS = 20
DEFAULT_LPF_HZ = 0.01
# Squared magnitude SNR over which the quadrature term of a Q-nulled error fades out
MAGNITUDE_FADE_SNR2 = 18.0


@dataclass
class PhaseSeries:
    """Phase estimates per bin.

    Attributes:
        fs: Sample rate in Hz.
        values: Phase in radians.
        source: ``port1``, ``port2`` or ``half_difference``.
        t0: Time of the first sample (bin center) in seconds.
        warning: Set when the linearized inversion is outside its valid range.
    """

    fs: float
    values: np.ndarray
    source: str = "half_difference"
    t0: float = 0.0
    warning: bool = False

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if not self.fs > 0:
            raise DomainError(f"fs must be > 0, got {self.fs}")
        if self.source not in PHASE_SOURCES:
            raise DomainError(f"source must be one of {PHASE_SOURCES}, got '{self.source}'")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("phase series has non-finite values")

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def duration(self) -> float:
        return len(self) / self.fs

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self)) / self.fs

    def segment(self, start: int, stop: int) -> "PhaseSeries":
        return replace(self, values=self.values[start:stop], t0=self.t0 + start / self.fs)


@dataclass
class SpectrumEstimate:
    """One-sided ASD in rad/√Hz, DC bin excluded."""

    frequencies: np.ndarray
    asd: np.ndarray
    resolution_hz: float
    window: str
    n_averages: int
    enbw_hz: float


@dataclass
class LockInResult:
    """Demodulated in-phase and quadrature components in the RMS-amplitude convention."""

    f_demod: float
    lpf_cutoff: float
    reference_phase: float
    t: np.ndarray
    i_series: np.ndarray
    q_series: np.ndarray
    i_mean: float
    i_sem: float
    q_mean: float
    n_effective: float

    @property
    def amplitude_series(self) -> np.ndarray:
        return np.hypot(self.i_series, self.q_series)


@dataclass
class CalibrationResult:
    """Outcome of the segment-wise dither recalibration."""

    n_segments: int
    per_segment_scale: Tuple[float, ...]
    reference: SignalSpec
    segment_bounds: Tuple[Tuple[int, int], ...] = ()
    dither_amplitudes: Tuple[float, ...] = ()
    dither_sems: Tuple[float, ...] = ()

    @property
    def scale_rel_errs(self) -> Tuple[float, ...]:
        return tuple(sem / amp for sem, amp in zip(self.dither_sems, self.dither_amplitudes))

    @property
    def scale_rel_err(self) -> float:
        """Relative calibration error of the whole series, segments weighted by length."""
        if not self.segment_bounds:
            return 0.0
        total = self.segment_bounds[-1][1] - self.segment_bounds[0][0]
        weighted = [
            (stop - start) / total * rel for (start, stop), rel in zip(self.segment_bounds, self.scale_rel_errs)
        ]
        return math.sqrt(math.fsum(w * w for w in weighted))


@dataclass
class SignalEstimate:
    """Recovered signal amplitude; unpacks as ``(amplitude, sem)``.

    ``sem`` is the single reported uncertainty: the lock-in error and the propagated
    dither calibration error added in quadrature.
    """

    amplitude: float
    statistical_sem: float
    calibration_sem: float
    lock_in: LockInResult
    series: PhaseSeries
    calibrations: List[CalibrationResult] = field(default_factory=list)

    @property
    def sem(self) -> float:
        return math.hypot(self.statistical_sem, self.calibration_sem)

    @property
    def snr(self) -> float:
        return abs(self.amplitude) / self.sem if self.sem > 0 else math.inf

    def __iter__(self) -> Iterator[float]:
        yield self.amplitude
        yield self.sem


def counts_to_phase(cs: CountSeries, visibility: float, phi0: float = MID_FRINGE) -> Tuple[PhaseSeries, PhaseSeries]:
    """Linearized inversion of both ports around the lock point.

    With N̄ the mean of ``n1 + n2`` over the run, the ports give
    ``δ̂₁ = (N̄/2·(1 + V cos φ₀) − n1) / (N̄/2·V sin φ₀)`` and
    ``δ̂₂ = (n2 − N̄/2·(1 − V cos φ₀)) / (N̄/2·V sin φ₀)``, both estimating ``φ − φ₀``.

    Raises:
        DomainError: Non-positive visibility or a lock point with ``sin φ₀ = 0``.
        CalibrationError: Zero mean counts.
    """
    if not 0 < visibility <= 1:
        raise DomainError(f"visibility must be in (0, 1], got {visibility}")
    slope = math.sin(phi0)
    if abs(slope) < 1e-12:
        raise DomainError(f"phi0={phi0} sits on a fringe extremum, the inversion is singular")

    n1 = cs.n1.astype(float)
    n2 = cs.n2.astype(float)
    n_mean = float(np.mean(n1 + n2)) if len(cs) else 0.0
    if n_mean <= 0:
        raise CalibrationError("mean counts per bin are zero, cannot calibrate phase")

    gain = 0.5 * n_mean * visibility * slope
    offset = 0.5 * n_mean * visibility * math.cos(phi0)
    delta1 = (0.5 * n_mean + offset - n1) / gain
    delta2 = (n2 - (0.5 * n_mean - offset)) / gain

    t_first = cs.t0 + 0.5 / cs.bin_rate_fs
    ports = []
    for source, values in (("port1", delta1), ("port2", delta2)):
        flagged = abs(float(np.mean(values))) > LINEARIZATION_LIMIT
        if flagged:
            logger.warning(f"{source}: mean phase {np.mean(values):.3f} rad exceeds the linearization range")
        ports.append(PhaseSeries(fs=cs.bin_rate_fs, values=values, source=source, t0=t_first, warning=flagged))
    return ports[0], ports[1]


def half_difference(p1: PhaseSeries, p2: PhaseSeries) -> PhaseSeries:
    """Average of the sign-fixed port estimates; common rate fluctuations cancel."""
    if len(p1) != len(p2):
        raise DomainError(f"port series lengths differ: {len(p1)} and {len(p2)}")
    if p1.fs != p2.fs:
        raise DomainError(f"port series rates differ: {p1.fs} and {p2.fs}")
    return PhaseSeries(
        fs=p1.fs,
        values=0.5 * (p1.values + p2.values),
        source="half_difference",
        t0=p1.t0,
        warning=p1.warning or p2.warning,
    )


def asd(series: PhaseSeries, window: str = "rectangular", n_segments: int = 1) -> SpectrumEstimate:
    """One-sided amplitude spectral density.

    ``n_segments=1`` with the rectangular window is the full-length periodogram. More
    segments give a Welch average of non-overlapping segments.

    Raises:
        DomainError: Fewer than 16 samples, or more than n/16 segments.
    """
    n = len(series)
    if n < MIN_SPECTRUM_SAMPLES:
        raise DomainError(f"spectrum needs at least {MIN_SPECTRUM_SAMPLES} samples, got {n}")
    if window not in WINDOWS:
        raise DomainError(f"window must be one of {WINDOWS}, got '{window}'")
    if not 1 <= n_segments <= n // MIN_SPECTRUM_SAMPLES:
        raise DomainError(f"n_segments must be in [1, {n // MIN_SPECTRUM_SAMPLES}], got {n_segments}")

    nperseg = n // n_segments
    scipy_window = "boxcar" if window == "rectangular" else "hann"
    freqs, psd = signal.welch(
        series.values,
        fs=series.fs,
        window=scipy_window,
        nperseg=nperseg,
        noverlap=0,
        detrend="constant",
        scaling="density",
    )
    taper = signal.get_window(scipy_window, nperseg)
    enbw = series.fs * float(np.sum(taper**2)) / float(np.sum(taper)) ** 2

    return SpectrumEstimate(
        frequencies=freqs[1:],
        asd=np.sqrt(psd[1:]),
        resolution_hz=series.fs / nperseg,
        window=window,
        n_averages=n_segments,
        enbw_hz=enbw,
    )


def _check_lock_in(fs: float, f_demod: float, lpf_cutoff: float) -> None:
    if not 0 < f_demod < fs / 2:
        raise DomainError(f"f_demod must be in (0, {fs / 2}) Hz, got {f_demod}")
    if not 0 < lpf_cutoff < f_demod / 2:
        raise DomainError(f"lpf_cutoff must be in (0, {f_demod / 2}) Hz, got {lpf_cutoff}")


def settling_samples(fs: float, lpf_cutoff: float) -> int:
    """Samples discarded at the start of a lock-in output."""
    return int(math.ceil(SETTLING_CUTOFF_PERIODS / lpf_cutoff * fs))


def _lowpass(sos: np.ndarray, mixed: np.ndarray, period: int) -> np.ndarray:
    # Start from the steady state of the first reference period's mean
    zi = signal.sosfilt_zi(sos) * float(np.mean(mixed[:period]))
    filtered, _ = signal.sosfilt(sos, mixed, zi=zi)
    return filtered


def magnitude_sem(magnitude: float, axis_sem: float) -> float:
    """Standard error of a Q-nulled lock-in magnitude.

    Nulling Q rotates all the noise into a non-negative magnitude, which is Rayleigh
    distributed when no signal is present. The quadrature spread is folded in until the
    magnitude is resolved well above the noise, where the per-axis error is recovered.
    """
    if axis_sem <= 0:
        return 0.0
    snr = magnitude / axis_sem
    return axis_sem * math.sqrt(1.0 + math.exp(-(snr**2) / MAGNITUDE_FADE_SNR2))


def lock_in(
    series: PhaseSeries,
    f_demod: float,
    lpf_cutoff: float = DEFAULT_LPF_HZ,
    reference_phase: Optional[float] = None,
    order: int = 4,
) -> LockInResult:
    """Digital lock-in demodulation.

    Mixes with ``√2·sin`` and ``√2·cos`` references on the absolute time base, low-passes
    with a Butterworth filter and drops the first ``5/lpf_cutoff`` seconds. Without a
    ``reference_phase`` the reference is rotated to null the mean quadrature.

    Args:
        series: Phase series.
        f_demod: Demodulation frequency in Hz.
        lpf_cutoff: Low-pass cutoff in Hz.
        reference_phase: Fixed reference phase in radians, skips Q-nulling.
        order: Low-pass filter order.

    Returns:
        I/Q series and the mean and standard error of I.

    Raises:
        DomainError: Frequencies out of range, or a series too short to settle.
    """
    fs = series.fs
    _check_lock_in(fs, f_demod, lpf_cutoff)
    n_settle = settling_samples(fs, lpf_cutoff)
    if len(series) < n_settle + 2:
        raise DomainError(
            f"series of {series.duration:.1f} s is too short for {n_settle / fs:.1f} s lock-in settling"
        )

    t = series.times()
    carrier = 2 * np.pi * f_demod * t
    period = max(1, int(round(fs / f_demod)))
    sos = signal.butter(order, lpf_cutoff, btype="low", fs=fs, output="sos")
    i_raw = _lowpass(sos, math.sqrt(2) * series.values * np.sin(carrier), period)[n_settle:]
    q_raw = _lowpass(sos, math.sqrt(2) * series.values * np.cos(carrier), period)[n_settle:]

    theta = math.atan2(float(np.mean(q_raw)), float(np.mean(i_raw))) if reference_phase is None else reference_phase
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    i_series = cos_t * i_raw + sin_t * q_raw
    q_series = cos_t * q_raw - sin_t * i_raw

    n = i_series.size
    n_eff = max(1.0, n * 2 * lpf_cutoff / fs)
    # Demodulated noise is isotropic in the I/Q plane, so both axes estimate the same spread
    axis_sem = math.sqrt(0.5 * (np.var(i_series, ddof=1) + np.var(q_series, ddof=1)) / n_eff)
    i_mean = float(np.mean(i_series))
    i_sem = axis_sem if reference_phase is not None else magnitude_sem(i_mean, axis_sem)

    return LockInResult(
        f_demod=f_demod,
        lpf_cutoff=lpf_cutoff,
        reference_phase=theta,
        t=t[n_settle:],
        i_series=i_series,
        q_series=q_series,
        i_mean=i_mean,
        i_sem=i_sem,
        q_mean=float(np.mean(q_series)),
        n_effective=n_eff,
    )


def _segment_bounds(n: int, n_segments: int) -> Tuple[Tuple[int, int], ...]:
    edges = np.linspace(0, n, n_segments + 1).round().astype(int)
    return tuple((int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]))


def segmented_recalibration(
    p1: PhaseSeries,
    p2: PhaseSeries,
    ref: SignalSpec,
    n_segments: int = 10,
    lpf_cutoff: float = DEFAULT_LPF_HZ,
) -> Tuple[PhaseSeries, PhaseSeries, CalibrationResult]:
    """Rescale each segment so the known dither reads its nominal amplitude.

    The dither is measured on each segment's half-difference and the resulting scale is
    applied to both ports.

    Raises:
        DomainError: Segments shorter than 20 reference periods or the lock-in settling time.
        CalibrationError: A segment whose dither amplitude is not positive.
    """
    if len(p1) != len(p2):
        raise DomainError(f"port series lengths differ: {len(p1)} and {len(p2)}")
    if n_segments < 1:
        raise DomainError(f"n_segments must be >= 1, got {n_segments}")

    bounds = _segment_bounds(len(p1), n_segments)
    shortest = min(stop - start for start, stop in bounds) / p1.fs
    if shortest * ref.frequency < MIN_REFERENCE_PERIODS:
        raise DomainError(
            f"segments of {shortest:.1f} s hold fewer than {MIN_REFERENCE_PERIODS} periods of {ref.frequency} Hz"
        )

    combined = half_difference(p1, p2)
    scaled1 = p1.values.copy()
    scaled2 = p2.values.copy()
    scales: List[float] = []
    amplitudes: List[float] = []
    sems: List[float] = []

    for index, (start, stop) in enumerate(bounds):
        result = lock_in(combined.segment(start, stop), ref.frequency, lpf_cutoff)
        # Q-nulling yields a magnitude; a reference rotated away from the dither phase means an inverted dither
        amplitude = result.i_mean if math.cos(result.reference_phase - ref.phase) >= 0 else -result.i_mean
        if not amplitude > 0:
            raise CalibrationError(f"segment {index}: dither amplitude {amplitude:.3e} rad is not positive")

        scale = ref.rms_amplitude / amplitude
        scaled1[start:stop] *= scale
        scaled2[start:stop] *= scale
        scales.append(scale)
        amplitudes.append(amplitude)
        sems.append(result.i_sem)
        logger.debug(f"Segment {index}: dither {amplitude:.4e} ± {result.i_sem:.1e} rad, scale {scale:.4f}")

    calibration = CalibrationResult(
        n_segments=n_segments,
        per_segment_scale=tuple(scales),
        reference=ref,
        segment_bounds=bounds,
        dither_amplitudes=tuple(amplitudes),
        dither_sems=tuple(sems),
    )
    return replace(p1, values=scaled1), replace(p2, values=scaled2), calibration


def _calibrated_half_difference(
    cs: CountSeries,
    visibility: float,
    phi0: float,
    ref: Optional[SignalSpec],
    n_segments: int,
    lpf_cutoff: float,
) -> Tuple[PhaseSeries, Optional[CalibrationResult]]:
    p1, p2 = counts_to_phase(cs, visibility, phi0)
    if ref is None:
        return half_difference(p1, p2), None
    c1, c2, calibration = segmented_recalibration(p1, p2, ref, n_segments, lpf_cutoff)
    return half_difference(c1, c2), calibration


def estimate_signal(
    series: PhaseSeries,
    calibrations: List[CalibrationResult],
    f_signal: float,
    lpf_cutoff: float = DEFAULT_LPF_HZ,
    signal_phase: Optional[float] = None,
) -> SignalEstimate:
    """Lock-in a calibrated half-difference and attach the propagated calibration error."""
    result = lock_in(series, f_signal, lpf_cutoff, reference_phase=signal_phase)
    if calibrations:
        total = sum(c.segment_bounds[-1][1] for c in calibrations)
        rel = math.sqrt(math.fsum((c.segment_bounds[-1][1] / total * c.scale_rel_err) ** 2 for c in calibrations))
    else:
        rel = 0.0
    return SignalEstimate(
        amplitude=result.i_mean,
        statistical_sem=result.i_sem,
        calibration_sem=abs(result.i_mean) * rel,
        lock_in=result,
        series=series,
        calibrations=calibrations,
    )


def extract_signal(
    cs: CountSeries,
    visibility: float,
    phi0: float,
    ref: Optional[SignalSpec],
    f_signal: float,
    n_segments: int = 10,
    lpf_cutoff: float = DEFAULT_LPF_HZ,
    signal_phase: Optional[float] = None,
) -> SignalEstimate:
    """Full pipeline from counts to the signal amplitude and its standard error.

    counts_to_phase, half_difference, segmented_recalibration (skipped without ``ref``),
    then lock_in at ``f_signal``.
    """
    if ref is not None and math.isclose(f_signal, ref.frequency):
        raise DomainError(f"signal frequency {f_signal} Hz coincides with the calibration dither")
    series, calibration = _calibrated_half_difference(cs, visibility, phi0, ref, n_segments, lpf_cutoff)
    estimate = estimate_signal(series, [calibration] if calibration else [], f_signal, lpf_cutoff, signal_phase)
    logger.info(
        f"Signal at {f_signal} Hz: {estimate.amplitude:.4e} ± {estimate.sem:.2e} rad "
        f"(lock-in ± {estimate.statistical_sem:.1e}, calibration ± {estimate.calibration_sem:.1e})"
    )
    return estimate


def extract_signal_runs(
    runs: Sequence[CountSeries],
    visibility: float,
    phi0: float,
    ref: Optional[SignalSpec],
    f_signal: float,
    n_segments: int = 10,
    lpf_cutoff: float = DEFAULT_LPF_HZ,
    signal_phase: Optional[float] = None,
) -> Tuple[SignalEstimate, List[SignalEstimate]]:
    """Stitched analysis of consecutive runs.

    Each run is inverted and recalibrated on its own; the calibrated half-differences are
    joined and demodulated once.

    Returns:
        The combined estimate and one estimate per run.
    """
    if not runs:
        raise DomainError("no runs to analyze")
    if ref is not None and math.isclose(f_signal, ref.frequency):
        raise DomainError(f"signal frequency {f_signal} Hz coincides with the calibration dither")

    pieces: List[PhaseSeries] = []
    calibrations: List[CalibrationResult] = []
    per_run: List[SignalEstimate] = []
    for index, cs in enumerate(runs):
        series, calibration = _calibrated_half_difference(cs, visibility, phi0, ref, n_segments, lpf_cutoff)
        run_calibrations = [calibration] if calibration else []
        estimate = estimate_signal(series, run_calibrations, f_signal, lpf_cutoff, signal_phase)
        logger.info(f"Run {index} ({cs.duration / 3600:.1f} h): {estimate.amplitude:.4e} ± {estimate.sem:.2e} rad")
        pieces.append(series)
        calibrations.extend(run_calibrations)
        per_run.append(estimate)

    joined = PhaseSeries(
        fs=pieces[0].fs,
        values=np.concatenate([p.values for p in pieces]),
        source="half_difference",
        t0=pieces[0].t0,
        warning=any(p.warning for p in pieces),
    )
    combined = estimate_signal(joined, calibrations, f_signal, lpf_cutoff, signal_phase)
    logger.info(f"Stitched signal: {combined.amplitude:.4e} ± {combined.sem:.2e} rad")
    return combined, per_run


def fit_visibility(phases: np.ndarray, n1: np.ndarray, n2: np.ndarray) -> Tuple[float, float]:
    """Visibility and phase offset from a fringe scan.

    Fits ``(n1 − n2)/(n1 + n2) = V·cos(φ + offset)`` by linear least squares.
    """
    phases = np.asarray(phases, dtype=float)
    total = np.asarray(n1, dtype=float) + np.asarray(n2, dtype=float)
    if phases.size < 3 or np.any(total <= 0):
        raise CalibrationError("fringe scan needs at least 3 points with non-zero counts")
    contrast = (np.asarray(n1, dtype=float) - np.asarray(n2, dtype=float)) / total
    design = np.column_stack([np.cos(phases), np.sin(phases)])
    (a, b), *_ = np.linalg.lstsq(design, contrast, rcond=None)
    return float(math.hypot(a, b)), float(math.atan2(-b, a))


def band_rms(spectrum: SpectrumEstimate, f_lo: float, f_hi: float) -> float:
    """RMS within ``[f_lo, f_hi]`` from a spectrum."""
    if not f_lo < f_hi:
        raise DomainError(f"need f_lo < f_hi, got {f_lo}, {f_hi}")
    in_band = (spectrum.frequencies >= f_lo) & (spectrum.frequencies <= f_hi)
    return math.sqrt(float(np.sum(spectrum.asd[in_band] ** 2)) * spectrum.resolution_hz)


def tone_amplitude(spectrum: SpectrumEstimate, frequency: float) -> float:
    """RMS amplitude of a tone from the energy of the three bins around it."""
    k = int(np.argmin(np.abs(spectrum.frequencies - frequency)))
    lo, hi = max(0, k - 1), min(spectrum.asd.size, k + 2)
    return math.sqrt(float(np.sum(spectrum.asd[lo:hi] ** 2)) * spectrum.resolution_hz)


def tone_contrast(spectrum: SpectrumEstimate, frequency: float, guard_bins: int = 3, window_bins: int = 50) -> float:
    """Peak ASD at ``frequency`` over the RMS of the surrounding bins outside a guard band."""
    k = int(np.argmin(np.abs(spectrum.frequencies - frequency)))
    lo, hi = max(0, k - window_bins), min(spectrum.asd.size, k + window_bins + 1)
    neighbours = np.arange(lo, hi)
    neighbours = neighbours[np.abs(neighbours - k) > guard_bins]
    if neighbours.size == 0:
        raise DomainError(f"no floor bins around {frequency} Hz")
    floor = math.sqrt(float(np.mean(spectrum.asd[neighbours] ** 2)))
    peak = float(np.max(spectrum.asd[max(0, k - 1) : k + 2]))
    return peak / floor if floor > 0 else math.inf


def log_bin_spectrum(
    spectrum: SpectrumEstimate, bins_per_decade: int = 20
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Average the PSD in logarithmic frequency bins.

    Returns:
        Mean frequency, ASD and number of raw bins for every non-empty log bin.
    """
    if bins_per_decade < 1:
        raise DomainError(f"bins_per_decade must be >= 1, got {bins_per_decade}")
    freqs = spectrum.frequencies
    decades = math.log10(freqs[-1] / freqs[0])
    edges = np.logspace(math.log10(freqs[0]), math.log10(freqs[-1]), int(math.ceil(decades * bins_per_decade)) + 1)
    index = np.clip(np.searchsorted(edges, freqs, side="right") - 1, 0, edges.size - 2)

    counts = np.bincount(index, minlength=edges.size - 1)
    power = np.bincount(index, weights=spectrum.asd**2, minlength=edges.size - 1)
    f_sum = np.bincount(index, weights=freqs, minlength=edges.size - 1)
    filled = counts > 0
    return f_sum[filled] / counts[filled], np.sqrt(power[filled] / counts[filled]), counts[filled]
