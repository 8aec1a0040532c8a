"""Time-domain simulation of the locked interferometer.

Classical phase noise goes through the lock loop, the injected dithers ride on the setpoint,
and the resulting residual phase is turned into Poisson photon counts at both output ports.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from fibertwin.errors import DomainError, SimulationError
from fibertwin.services.model import InterferometerConfig, SignalSpec
from fibertwin.services.noise import NoiseModel, default_classical_model, synthesize
from fibertwin.utils.logging import get_logger
from fibertwin.utils.seeding import DETECT_STREAM, DRIFT_STREAM, NOISE_STREAM, RUN_STREAM, derive_seed, rng_for

logger = get_logger(__name__)

LOOP_MODES = ("effective", "explicit")
DRIFT_KINDS = ("constant", "linear", "bounded_random_walk")

WALK_BOUNDS = (0.85, 0.99)
WALK_KNOT_SECONDS = 60.0
MIN_BINS = 16
DIVERGENCE_RMS = 10.0


@dataclass(frozen=True)
class LockLoopConfig:
    """Phase lock loop model.

    Attributes:
        mode: ``effective`` (first-order high-pass) or ``explicit`` (discrete PI loop).
        unity_gain_hz: High-pass corner of the effective loop.
        ctrl_rate: Controller update rate of the explicit loop, Hz.
        kp: Proportional gain, Hz per unit error.
        ki_fast: Integral gain of the fast actuator, Hz per unit error per second.
        ki_slow: Offload gain from the fast to the slow actuator, 1/s.
        fast_range: Fast actuator range in radians.
        slow_bandwidth_hz: Bandwidth of the slow actuator.
    """

    mode: str = "effective"
    unity_gain_hz: float = 10.0
    ctrl_rate: float = 1000.0
    kp: float = 50.0
    ki_fast: float = 500.0
    ki_slow: float = 0.5
    fast_range: float = 3.0
    slow_bandwidth_hz: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in LOOP_MODES:
            raise DomainError(f"loop mode must be one of {LOOP_MODES}, got '{self.mode}'")
        if not self.unity_gain_hz > 0:
            raise DomainError(f"unity_gain_hz must be > 0, got {self.unity_gain_hz}")
        if not (self.ctrl_rate > 0 and self.fast_range > 0 and self.slow_bandwidth_hz > 0):
            raise DomainError("ctrl_rate, fast_range and slow_bandwidth_hz must be > 0")

    def gains(self) -> str:
        return f"kp={self.kp}, ki_fast={self.ki_fast}, ki_slow={self.ki_slow}"


@dataclass(frozen=True)
class VisibilityDrift:
    """Slow visibility degradation over a run."""

    v_start: float = 0.98
    v_end: float = 0.92
    kind: str = "linear"
    walk_step_per_hour: float = 0.005

    def __post_init__(self) -> None:
        if self.kind not in DRIFT_KINDS:
            raise DomainError(f"drift kind must be one of {DRIFT_KINDS}, got '{self.kind}'")
        if not 0 < self.v_end <= self.v_start <= 1:
            raise DomainError(f"need 0 < v_end <= v_start <= 1, got {self.v_end}, {self.v_start}")
        if not self.walk_step_per_hour >= 0:
            raise DomainError(f"walk_step_per_hour must be >= 0, got {self.walk_step_per_hour}")


@dataclass(frozen=True)
class Scenario:
    """Everything needed to simulate one run."""

    cfg: InterferometerConfig = field(default_factory=InterferometerConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    loop: LockLoopConfig = field(default_factory=LockLoopConfig)
    drift: VisibilityDrift = field(default_factory=VisibilityDrift)
    injections: Tuple[SignalSpec, ...] = ()
    duration: float = 600.0
    seed: int = 0

    def __post_init__(self) -> None:
        exact = self.duration * self.cfg.bin_rate_fs
        if not math.isfinite(exact) or abs(exact - round(exact)) > 1e-6 * max(1.0, exact):
            raise DomainError(f"duration x bin_rate must be an integer, got {exact}")
        if round(exact) < MIN_BINS:
            raise DomainError(f"scenario needs at least {MIN_BINS} bins, got {round(exact)}")
        if not 0 <= self.seed < 2**64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.loop.mode == "explicit":
            ratio = self.loop.ctrl_rate / self.cfg.bin_rate_fs
            if ratio < 10 or abs(ratio - round(ratio)) > 1e-9:
                raise DomainError(f"ctrl_rate must be an integer multiple >= 10 of bin_rate, got ratio {ratio}")

    @property
    def n_bins(self) -> int:
        return int(round(self.duration * self.cfg.bin_rate_fs))

    def with_seed(self, seed: int) -> "Scenario":
        """Copy with a new top-level seed and the noise seed derived from it."""
        seed &= (1 << 64) - 1
        return replace(self, seed=seed, noise=replace(self.noise, seed=derive_seed(seed, NOISE_STREAM)))


@dataclass
class CountSeries:
    """Binned heralded counts at both output ports.

    Bin ``k`` covers ``[t0 + k/fs, t0 + (k+1)/fs)``.
    """

    bin_rate_fs: float
    t0: float
    n1: np.ndarray
    n2: np.ndarray
    ground_truth: Optional[Scenario] = None

    def __post_init__(self) -> None:
        self.n1 = np.asarray(self.n1)
        self.n2 = np.asarray(self.n2)
        if not self.bin_rate_fs > 0:
            raise DomainError(f"bin_rate_fs must be > 0, got {self.bin_rate_fs}")
        if self.n1.shape != self.n2.shape or self.n1.ndim != 1:
            raise DomainError(f"n1 and n2 must be 1-D with equal length, got {self.n1.shape} and {self.n2.shape}")
        for name, counts in (("n1", self.n1), ("n2", self.n2)):
            if counts.size and not np.issubdtype(counts.dtype, np.integer):
                raise DomainError(f"{name} must hold integer counts, got dtype {counts.dtype}")
            if counts.size and counts.min() < 0:
                raise DomainError(f"{name} has negative counts")

    def __len__(self) -> int:
        return int(self.n1.size)

    @property
    def duration(self) -> float:
        return len(self) / self.bin_rate_fs

    @property
    def t_end(self) -> float:
        return self.t0 + self.duration

    def bin_starts(self) -> np.ndarray:
        return self.t0 + np.arange(len(self)) / self.bin_rate_fs


def _bin_center_t0(t0: float, fs: float) -> float:
    return t0 + 0.5 / fs


def _injection_series(injections: Sequence[SignalSpec], fs: float, n: int, t_first: float) -> np.ndarray:
    t = t_first + np.arange(n) / fs
    total = np.zeros(n)
    for spec in injections:
        if spec.frequency >= fs / 2:
            raise DomainError(f"injection at {spec.frequency} Hz is not below Nyquist ({fs / 2} Hz)")
        total += math.sqrt(2) * spec.rms_amplitude * np.sin(2 * np.pi * spec.frequency * t + spec.phase)
    return total


def _loop_highpass(series: np.ndarray, fs: float, corner_hz: float) -> np.ndarray:
    """First-order high-pass ``(jf/fc)/(1 + jf/fc)`` applied in the frequency domain."""
    spectrum = np.fft.rfft(series)
    ratio = 1j * np.fft.rfftfreq(series.size, d=1 / fs) / corner_hz
    return np.fft.irfft(spectrum * ratio / (1 + ratio), n=series.size)


def _effective_residual(scenario: Scenario, t0: float) -> np.ndarray:
    fs = scenario.cfg.bin_rate_fs
    n = scenario.n_bins
    t_first = _bin_center_t0(t0, fs)

    in_loop = synthesize(scenario.noise, fs, n, t0=t_first, suppressed=True)
    bypass = synthesize(scenario.noise, fs, n, t0=t_first, suppressed=False)
    injected = _injection_series(scenario.injections, fs, n, t_first)
    return _loop_highpass(in_loop, fs, scenario.loop.unity_gain_hz) + bypass + injected


def _explicit_residual(scenario: Scenario, t0: float) -> np.ndarray:
    loop = scenario.loop
    fs = scenario.cfg.bin_rate_fs
    n_bins = scenario.n_bins
    ratio = int(round(loop.ctrl_rate / fs))
    n_ctrl = n_bins * ratio
    dt = 1.0 / loop.ctrl_rate
    visibility = scenario.cfg.visibility_V

    # Controller samples sit at the midpoints of the control intervals
    t_ctrl = _bin_center_t0(t0, loop.ctrl_rate)
    disturbance = synthesize(scenario.noise, loop.ctrl_rate, n_ctrl, t0=t_ctrl, suppressed=True)
    setpoint = _injection_series(scenario.injections, loop.ctrl_rate, n_ctrl, t_ctrl)

    residual = np.empty(n_ctrl)
    slow_alpha = 1 - math.exp(-2 * math.pi * loop.slow_bandwidth_hz * dt)
    window = int(round(loop.ctrl_rate))
    integ = c_fast = c_slow = slow_cmd = 0.0
    window_sq = 0.0

    for j in range(n_ctrl):
        phi = disturbance[j] - c_fast - c_slow
        residual[j] = phi
        error = visibility * math.sin(phi - setpoint[j])
        integ += error * dt
        u = loop.kp * error + loop.ki_fast * integ
        c_fast = min(max(c_fast + 2 * math.pi * u * dt, -loop.fast_range), loop.fast_range)
        slow_cmd += loop.ki_slow * c_fast * dt
        c_slow += (slow_cmd - c_slow) * slow_alpha

        window_sq += phi * phi
        if (j + 1) % window == 0:
            rms = math.sqrt(window_sq / window)
            if not math.isfinite(rms) or rms > DIVERGENCE_RMS:
                raise SimulationError(
                    f"lock loop diverged at t={t0 + (j + 1) * dt:.3f} s (residual RMS {rms:.3g} rad) "
                    f"with {loop.gains()}"
                )
            window_sq = 0.0

    decimated = residual.reshape(n_bins, ratio).mean(axis=1)
    bypass = synthesize(scenario.noise, fs, n_bins, t0=_bin_center_t0(t0, fs), suppressed=False)
    return decimated + bypass


def residual_phase(scenario: Scenario, t0: float = 0.0) -> np.ndarray:
    """Locked interferometer phase relative to the lock point, one value per bin.

    Args:
        scenario: Scenario to simulate.
        t0: Start time of the first bin, sets the absolute phase of tones.

    Returns:
        Phase in radians at ``bin_rate``.

    Raises:
        SimulationError: The explicit loop diverged.
    """
    if scenario.loop.mode == "effective":
        return _effective_residual(scenario, t0)
    return _explicit_residual(scenario, t0)


def visibility_profile(drift: VisibilityDrift, n_bins: int, fs: float, seed: int) -> np.ndarray:
    """Visibility at each bin center."""
    if drift.kind == "constant":
        return np.full(n_bins, drift.v_start)

    if drift.kind == "linear":
        return drift.v_start + (drift.v_end - drift.v_start) * (np.arange(n_bins) + 0.5) / n_bins

    duration = n_bins / fs
    n_knots = int(math.ceil(duration / WALK_KNOT_SECONDS)) + 1
    steps = rng_for(seed, DRIFT_STREAM).standard_normal(n_knots - 1)
    steps *= drift.walk_step_per_hour * math.sqrt(WALK_KNOT_SECONDS / 3600.0)

    low, high = WALK_BOUNDS
    knots = np.empty(n_knots)
    knots[0] = min(max(drift.v_start, low), high)
    for i, step in enumerate(steps, start=1):
        knots[i] = min(max(knots[i - 1] + step, low), high)

    centers = (np.arange(n_bins) + 0.5) / fs
    return np.interp(centers, np.arange(n_knots) * WALK_KNOT_SECONDS, knots)


def detect_photons(
    phase: np.ndarray,
    cfg: InterferometerConfig,
    drift: VisibilityDrift,
    seed: int,
    t0: float = 0.0,
) -> CountSeries:
    """Poisson-sample both output ports for a residual phase series.

    Per bin, λ₁,₂ = ½·(R/fs)·[1 ± V(k)·cos(φ₀ + φ_k)].

    Raises:
        SimulationError: A negative expected count.
    """
    phase = np.asarray(phase, dtype=float)
    fs = cfg.bin_rate_fs
    visibility = visibility_profile(drift, phase.size, fs, seed)

    fringe = visibility * np.cos(cfg.lock_offset_phi0 + phase)
    half_counts = 0.5 * cfg.detected_pair_rate_R / fs
    lam1 = half_counts * (1 + fringe)
    lam2 = half_counts * (1 - fringe)
    if lam1.size and min(lam1.min(), lam2.min()) < 0:
        raise SimulationError("negative expected count, visibility profile exceeds 1")

    rng = rng_for(seed, DETECT_STREAM)
    n1 = rng.poisson(lam1).astype(np.int64)
    n2 = rng.poisson(lam2).astype(np.int64)
    return CountSeries(bin_rate_fs=fs, t0=t0, n1=n1, n2=n2)


def run_experiment(scenario: Scenario, t0: float = 0.0) -> CountSeries:
    """Simulate one run: residual phase, then photon detection."""
    logger.info(
        f"Simulating {scenario.duration:.0f} s ({scenario.n_bins} bins, {scenario.loop.mode} loop, "
        f"seed {scenario.seed})"
    )
    phase = residual_phase(scenario, t0)
    counts = detect_photons(phase, scenario.cfg, scenario.drift, scenario.seed, t0)
    counts.ground_truth = scenario
    logger.debug(f"Mean counts per bin: n1={counts.n1.mean():.1f}, n2={counts.n2.mean():.1f}")
    return counts


def run_stitched(scenario: Scenario, durations: Sequence[float]) -> List[CountSeries]:
    """Consecutive runs on one time base, each with its own derived seed and drift."""
    runs: List[CountSeries] = []
    t0 = 0.0
    for index, duration in enumerate(durations):
        run_scenario = replace(scenario.with_seed(derive_seed(scenario.seed, RUN_STREAM + index)), duration=duration)
        runs.append(run_experiment(run_scenario, t0=t0))
        t0 += run_scenario.n_bins / scenario.cfg.bin_rate_fs
    return runs


def concatenate(series: Sequence[CountSeries]) -> CountSeries:
    """Join contiguous runs into one CountSeries."""
    if not series:
        raise DomainError("nothing to concatenate")
    fs = series[0].bin_rate_fs
    for previous, current in zip(series, series[1:]):
        if current.bin_rate_fs != fs:
            raise DomainError(f"bin rates differ: {fs} and {current.bin_rate_fs}")
        if abs(current.t0 - previous.t_end) > 0.5 / fs:
            raise DomainError(f"runs are not contiguous: {previous.t_end} s then {current.t0} s")
    return CountSeries(
        bin_rate_fs=fs,
        t0=series[0].t0,
        n1=np.concatenate([s.n1 for s in series]),
        n2=np.concatenate([s.n2 for s in series]),
    )


def run_ensemble(scenarios: Sequence[Scenario], threads: int = 1) -> List[CountSeries]:
    """Run independent scenarios, results in input order."""
    if threads < 1:
        raise DomainError(f"threads must be >= 1, got {threads}")
    if threads == 1:
        return [run_experiment(s) for s in scenarios]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run_experiment, scenarios))


def simulate_phase_scan(
    cfg: InterferometerConfig, n_points: int, counts_per_point: float, seed: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Counts over one full fringe, used to measure the visibility before a run."""
    if n_points < 3:
        raise DomainError(f"phase scan needs at least 3 points, got {n_points}")
    phases = np.linspace(0.0, 2 * np.pi, n_points, endpoint=False)
    fringe = cfg.visibility_V * np.cos(phases)
    rng = rng_for(seed, DETECT_STREAM)
    n1 = rng.poisson(0.5 * counts_per_point * (1 + fringe)).astype(np.int64)
    n2 = rng.poisson(0.5 * counts_per_point * (1 - fringe)).astype(np.int64)
    return phases, n1, n2


def headline_scenario(
    duration: float,
    seed: int,
    injections: Sequence[SignalSpec] = (),
    classical_noise: bool = True,
    drift: Optional[VisibilityDrift] = None,
) -> Scenario:
    """Default instrument with the canonical classical noise and linear visibility drift."""
    noise = default_classical_model(0) if classical_noise else NoiseModel()
    scenario = Scenario(
        noise=noise,
        drift=drift or VisibilityDrift(),
        injections=tuple(injections),
        duration=duration,
    )
    return scenario.with_seed(seed)
