"""Closed-form physics of the interferometer.

Gravitational phase prediction, fringe counts, shot-noise limits, unit conversions and the
optical loss budget. Everything here is a pure function of its arguments.
"""

import math
from dataclasses import dataclass, field
from typing import Sequence, Tuple

from fibertwin.errors import DomainError

SPEED_OF_LIGHT = 299_792_458.0
STANDARD_GRAVITY = 9.81

# Lock point assumed by the closed-form shot-noise limit
MID_FRINGE = math.pi / 2


@dataclass(frozen=True)
class PhysicalConstants:
    """Constants entering the gravitational phase shift.

    Attributes:
        c: Speed of light in m/s, fixed to the SI definition.
        g: Local gravitational acceleration in m/s².
    """

    g: float = STANDARD_GRAVITY
    c: float = field(default=SPEED_OF_LIGHT, init=False)

    def __post_init__(self) -> None:
        if not (math.isfinite(self.g) and self.g > 0):
            raise DomainError(f"g must be positive and finite, got {self.g}")


@dataclass(frozen=True)
class InterferometerConfig:
    """Physical and optical parameters of the interferometer.

    Attributes:
        arm_length_l: Fiber length of each arm in meters.
        height_diff_h: Height difference between the arms in meters.
        wavelength_lambda: Vacuum wavelength of the interfering photons in meters.
        refractive_index_n: Effective refractive index of the fiber.
        visibility_V: Photon interference visibility.
        lock_offset_phi0: Lock point in radians.
        detected_pair_rate_R: Heralded coincidence rate summed over both ports, Hz.
        bin_rate_fs: Count binning rate, Hz.
    """

    arm_length_l: float = 5.0e4
    height_diff_h: float = 0.0
    wavelength_lambda: float = 1.55012e-6
    refractive_index_n: float = 1.46
    visibility_V: float = 0.98
    lock_offset_phi0: float = MID_FRINGE
    detected_pair_rate_R: float = 1.066e5
    bin_rate_fs: float = 10.0

    def __post_init__(self) -> None:
        if not self.arm_length_l > 0:
            raise DomainError(f"arm_length_l must be > 0, got {self.arm_length_l}")
        if not self.wavelength_lambda > 0:
            raise DomainError(f"wavelength_lambda must be > 0, got {self.wavelength_lambda}")
        if not self.refractive_index_n >= 1:
            raise DomainError(f"refractive_index_n must be >= 1, got {self.refractive_index_n}")
        if not 0 <= self.visibility_V <= 1:
            raise DomainError(f"visibility_V must be in [0, 1], got {self.visibility_V}")
        if not self.detected_pair_rate_R >= 0:
            raise DomainError(f"detected_pair_rate_R must be >= 0, got {self.detected_pair_rate_R}")
        if not self.bin_rate_fs > 0:
            raise DomainError(f"bin_rate_fs must be > 0, got {self.bin_rate_fs}")


@dataclass(frozen=True)
class LossEntry:
    """One line of the loss budget."""

    label: str
    loss_db: float
    uncertainty_db: float = 0.0


@dataclass(frozen=True)
class LossBudget:
    """Itemized optical attenuation along the photon path."""

    entries: Tuple[LossEntry, ...] = ()


@dataclass(frozen=True)
class LossTotals:
    """Totals of a loss budget.

    Attributes:
        total_db: Sum of entry losses.
        total_uncertainty_db: Quadrature sum of entry uncertainties.
        transmission_fraction: 10^(-total_db/10).
        linear_uncertainty_db: Plain sum of entry uncertainties.
        transmission_uncertainty: Transmission uncertainty from the quadrature dB uncertainty.
    """

    total_db: float
    total_uncertainty_db: float
    transmission_fraction: float
    linear_uncertainty_db: float
    transmission_uncertainty: float


@dataclass(frozen=True)
class SignalSpec:
    """A sinusoidal phase modulation ``√2·rms·sin(2πft + phase)``.

    Attributes:
        frequency: Hz.
        rms_amplitude: RMS amplitude in radians.
        phase: Phase in radians.
    """

    frequency: float
    rms_amplitude: float
    phase: float = 0.0

    def __post_init__(self) -> None:
        if not self.frequency > 0:
            raise DomainError(f"signal frequency must be > 0, got {self.frequency}")
        if not self.rms_amplitude >= 0:
            raise DomainError(f"signal rms_amplitude must be >= 0, got {self.rms_amplitude}")


MEASURED_LOSS_BUDGET = LossBudget(
    entries=(
        LossEntry("Fiber spool", 9.75, 0.01),
        LossEntry("AOM", 2.35, 0.02),
        LossEntry("DWDMs", 1.60, 0.02),
        LossEntry("BSs", 0.09, 0.01),
        LossEntry("Fiber connections", 1.00, 0.02),
        LossEntry("SNSPD efficiency", 0.20, 0.02),
    )
)

CALIBRATION_DITHER = SignalSpec(frequency=0.25, rms_amplitude=2.10e-3)
HEADLINE_SIGNAL = SignalSpec(frequency=0.1, rms_amplitude=6.48e-5)


def _require_positive(**values: float) -> None:
    for name, value in values.items():
        if not (math.isfinite(value) and value > 0):
            raise DomainError(f"{name} must be positive and finite, got {value}")


def gravitational_phase_shift(consts: PhysicalConstants, n: float, h: float, l: float, lam: float) -> float:
    """Phase difference between arms at heights differing by ``h``.

    Δφ_g = 2π·n·g·h·l / (λ·c²)

    Args:
        consts: Physical constants.
        n: Effective refractive index (≥ 1).
        h: Height difference in meters, sign selects the higher arm.
        l: Arm length in meters.
        lam: Vacuum wavelength in meters.

    Returns:
        Phase shift in radians.

    Raises:
        DomainError: Non-finite or non-positive ``l``/``lam``, or ``n`` < 1.
    """
    _require_positive(l=l, lam=lam)
    if not (math.isfinite(n) and n >= 1):
        raise DomainError(f"n must be >= 1, got {n}")
    if not math.isfinite(h):
        raise DomainError(f"h must be finite, got {h}")
    return 2 * math.pi * n * consts.g * h * l / (lam * consts.c**2)


def classical_phase_prediction(cfg: InterferometerConfig, consts: PhysicalConstants) -> float:
    """Classical-light gravitational phase for a configured interferometer.

    This is the reference subtracted in a quantum-versus-classical differential measurement.
    """
    return gravitational_phase_shift(
        consts, cfg.refractive_index_n, cfg.height_diff_h, cfg.arm_length_l, cfg.wavelength_lambda
    )


def expected_fringe_counts(n_total: float, visibility: float, phi: float) -> Tuple[float, float]:
    """Expected counts at both output ports.

    Args:
        n_total: Total counts over both ports.
        visibility: Fringe visibility in [0, 1].
        phi: Total interferometer phase in radians.

    Returns:
        Tuple ``(N1, N2)`` with ``N1 + N2 == n_total``.
    """
    if not 0 <= visibility <= 1:
        raise DomainError(f"visibility must be in [0, 1], got {visibility}")
    if n_total < 0:
        raise DomainError(f"n_total must be >= 0, got {n_total}")
    n1 = 0.5 * n_total * (1 + visibility * math.cos(phi))
    # N2 as the complement keeps the total exact
    return n1, n_total - n1


def shot_noise_asd(rate: float, visibility: float) -> float:
    """Shot-noise limited phase ASD of the half-difference estimator at mid-fringe.

    Args:
        rate: Detected heralded rate over both ports, Hz.
        visibility: Fringe visibility in (0, 1].

    Returns:
        One-sided ASD in rad/√Hz, √2/(V·√R).
    """
    if not rate > 0:
        raise DomainError(f"rate must be > 0, got {rate}")
    if not 0 < visibility <= 1:
        raise DomainError(f"visibility must be in (0, 1], got {visibility}")
    return math.sqrt(2) / (visibility * math.sqrt(rate))


def fractional_displacement_asd(asd_phase: float, lam: float, n: float, l: float) -> float:
    """Convert a phase ASD into a fractional optical path (travel time) ASD."""
    _require_positive(lam=lam, n=n, l=l)
    if not asd_phase >= 0:
        raise DomainError(f"asd_phase must be >= 0, got {asd_phase}")
    return asd_phase * lam / (2 * math.pi * n * l)


def loss_budget_total(budget: LossBudget) -> LossTotals:
    """Totals, uncertainties and transmission of a loss budget.

    Raises:
        DomainError: A negative loss or uncertainty entry.
    """
    for entry in budget.entries:
        if entry.loss_db < 0 or entry.uncertainty_db < 0:
            raise DomainError(f"loss entry '{entry.label}' must be non-negative")

    total_db = math.fsum(entry.loss_db for entry in budget.entries)
    quadrature_db = math.sqrt(math.fsum(entry.uncertainty_db**2 for entry in budget.entries))
    linear_db = math.fsum(entry.uncertainty_db for entry in budget.entries)
    transmission = 10 ** (-total_db / 10)

    return LossTotals(
        total_db=total_db,
        total_uncertainty_db=quadrature_db,
        transmission_fraction=transmission,
        linear_uncertainty_db=linear_db,
        transmission_uncertainty=transmission * math.log(10) / 10 * quadrature_db,
    )


def detected_rate(source_rate: float, budget: LossBudget) -> float:
    """Heralded rate reaching the detectors for a given source rate."""
    if not source_rate >= 0:
        raise DomainError(f"source_rate must be >= 0, got {source_rate}")
    return source_rate * loss_budget_total(budget).transmission_fraction


def snr_integration_time(signal_rms: float, asd: float, target_snr: float) -> float:
    """Integration time at which ``asd/√T`` equals ``signal_rms/target_snr``.

    Returns:
        Time in seconds, ``(target_snr·asd/signal_rms)²``.
    """
    if not signal_rms > 0:
        raise DomainError(f"signal_rms must be > 0, got {signal_rms}")
    if asd < 0 or target_snr < 0:
        raise DomainError("asd and target_snr must be non-negative")
    return (target_snr * asd / signal_rms) ** 2


def snr_threshold_amplitude(asd: float, target_snr: float, duration: float) -> float:
    """Smallest signal reaching ``target_snr`` after ``duration`` seconds."""
    _require_positive(duration=duration)
    return target_snr * asd / math.sqrt(duration)


def band_rms_flat(asd: float, f_lo: float, f_hi: float) -> float:
    """Band-integrated RMS of a flat ASD between ``f_lo`` and ``f_hi``."""
    if not 0 <= f_lo < f_hi:
        raise DomainError(f"need 0 <= f_lo < f_hi, got {f_lo}, {f_hi}")
    return asd * math.sqrt(f_hi - f_lo)


def averaged_sensitivity(asd: float, duration: float) -> float:
    """Amplitude resolution ``asd/√T`` after averaging for ``duration`` seconds."""
    _require_positive(duration=duration)
    return asd / math.sqrt(duration)


def loss_budget_from_rows(rows: Sequence[Tuple[str, float, float]]) -> LossBudget:
    """Build a budget from ``(label, loss_db, uncertainty_db)`` rows."""
    return LossBudget(entries=tuple(LossEntry(label, float(loss), float(err)) for label, loss, err in rows))
