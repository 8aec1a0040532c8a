"""Seeded synthesis of interferometer phase noise.

White phase noise, low-frequency power-law noise, injected tones and the compressor
harmonic comb, all specified directly in phase units.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from fibertwin.errors import DomainError
from fibertwin.utils.logging import get_logger
from fibertwin.utils.seeding import derive_seed

logger = get_logger(__name__)

NOISE_KINDS = ("white", "power_law", "tone", "harmonic_comb")

# Classical residual anchor: 6e-4 rad/√Hz at 0.1 Hz, rising as 1/f below 0.01 Hz
RESIDUAL_CORNER_HZ = 0.01
RESIDUAL_FLAT_ASD = 6e-4
COMPRESSOR_HZ = 1.0
COMPRESSOR_RMS = 2e-3
COMPRESSOR_HARMONICS = 5


@dataclass(frozen=True)
class NoiseComponent:
    """One additive phase-noise term.

    Attributes:
        kind: One of ``white``, ``power_law``, ``tone``, ``harmonic_comb``.
        level: rad/√Hz at 1 Hz for white/power_law, RMS radians for tone/comb.
        exponent_alpha: PSD slope for power_law, ASD ∝ f^(α/2).
        frequency: Tone frequency or comb fundamental, Hz.
        n_harmonics: Number of comb lines.
        phase: Tone phase in radians.
        corner_hz: Power-law only; above this frequency the ASD stays flat.
        suppressed: Whether the lock loop sees and suppresses this term.
    """

    kind: str
    level: float
    exponent_alpha: float = 0.0
    frequency: float = 0.0
    n_harmonics: int = 1
    phase: float = 0.0
    corner_hz: Optional[float] = None
    suppressed: bool = True

    def __post_init__(self) -> None:
        if self.kind not in NOISE_KINDS:
            raise DomainError(f"unknown noise kind '{self.kind}', expected one of {NOISE_KINDS}")
        if not self.level >= 0:
            raise DomainError(f"noise level must be >= 0, got {self.level}")
        if self.kind == "power_law" and not -4 <= self.exponent_alpha <= 0:
            raise DomainError(f"power_law exponent must be in [-4, 0], got {self.exponent_alpha}")
        if self.kind in ("tone", "harmonic_comb") and not self.frequency > 0:
            raise DomainError(f"{self.kind} needs a positive frequency, got {self.frequency}")
        if self.kind == "harmonic_comb" and self.n_harmonics < 1:
            raise DomainError(f"comb needs n_harmonics >= 1, got {self.n_harmonics}")
        if self.corner_hz is not None and not self.corner_hz > 0:
            raise DomainError(f"corner_hz must be > 0, got {self.corner_hz}")

    def asd(self, freqs: np.ndarray) -> np.ndarray:
        """Target one-sided ASD of a white or power-law component at ``freqs`` (Hz > 0)."""
        if self.kind == "white":
            return np.full_like(freqs, self.level, dtype=float)
        if self.kind != "power_law":
            raise DomainError(f"{self.kind} has no continuous ASD")
        f_eff = freqs if self.corner_hz is None else np.minimum(freqs, self.corner_hz)
        return self.level * np.power(f_eff, self.exponent_alpha / 2)


@dataclass(frozen=True)
class NoiseModel:
    """A set of noise components and the seed that realizes them."""

    components: Tuple[NoiseComponent, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


def component_seed(seed: int, index: int) -> int:
    """Sub-seed of component ``index`` of a model seeded with ``seed``."""
    return derive_seed(seed, index)


def _sample_times(fs: float, n_samples: int, t0: float) -> np.ndarray:
    return t0 + np.arange(n_samples) / fs


def synthesize_component(
    component: NoiseComponent, fs: float, n_samples: int, seed: int, t0: float = 0.0
) -> np.ndarray:
    """Realize a single component.

    Args:
        component: Component to synthesize.
        fs: Sample rate in Hz.
        n_samples: Number of samples.
        seed: Sub-seed for this component.
        t0: Time of the first sample, used by tones.

    Returns:
        Phase series in radians.
    """
    nyquist = fs / 2

    if component.kind == "white":
        rng = np.random.default_rng(seed)
        return rng.standard_normal(n_samples) * component.level * math.sqrt(fs / 2)

    if component.kind == "power_law":
        rng = np.random.default_rng(seed)
        spectrum = np.fft.rfft(rng.standard_normal(n_samples))
        freqs = np.fft.rfftfreq(n_samples, d=1 / fs)
        shape = np.zeros_like(freqs)
        shape[1:] = component.asd(freqs[1:]) * math.sqrt(fs / 2)
        return np.fft.irfft(spectrum * shape, n=n_samples)

    t = _sample_times(fs, n_samples, t0)
    amplitude = math.sqrt(2) * component.level

    if component.kind == "tone":
        if component.frequency >= nyquist:
            raise DomainError(f"tone at {component.frequency} Hz is not below Nyquist ({nyquist} Hz)")
        return amplitude * np.sin(2 * np.pi * component.frequency * t + component.phase)

    series = np.zeros(n_samples)
    for harmonic in range(1, component.n_harmonics + 1):
        f_h = harmonic * component.frequency
        if f_h >= nyquist:
            logger.warning(f"Dropping comb harmonic {harmonic} at {f_h} Hz (Nyquist {nyquist} Hz)")
            break
        series += amplitude * np.sin(2 * np.pi * f_h * t + component.phase)
    return series


def synthesize(
    model: NoiseModel,
    fs: float,
    n_samples: int,
    t0: float = 0.0,
    suppressed: Optional[bool] = None,
) -> np.ndarray:
    """Sum of all components of ``model``.

    Args:
        model: Noise model.
        fs: Sample rate in Hz.
        n_samples: Number of samples (≥ 2).
        t0: Time of the first sample.
        suppressed: Keep only loop-suppressed (True) or loop-bypassing (False) components.

    Returns:
        Phase series in radians, bit-identical for identical arguments.
    """
    if n_samples < 2:
        raise DomainError(f"n_samples must be >= 2, got {n_samples}")
    if not fs > 0:
        raise DomainError(f"fs must be > 0, got {fs}")

    total = np.zeros(n_samples)
    for index, component in enumerate(model.components):
        if suppressed is not None and component.suppressed != suppressed:
            continue
        total += synthesize_component(component, fs, n_samples, component_seed(model.seed, index), t0)
    return total


def default_classical_model(seed: int) -> NoiseModel:
    """Canonical classical-noise scenario.

    A power-law residual flat at 6e-4 rad/√Hz above 0.01 Hz and rising as 1/f below it,
    plus the 1 Hz compressor comb (five lines of 2e-3 rad RMS). Both are closed-loop
    residuals, so the loop does not suppress them again. Shot noise enters at detection.
    """
    level_at_1hz = RESIDUAL_FLAT_ASD * RESIDUAL_CORNER_HZ
    return NoiseModel(
        components=(
            NoiseComponent(
                kind="power_law",
                level=level_at_1hz,
                exponent_alpha=-2.0,
                corner_hz=RESIDUAL_CORNER_HZ,
                suppressed=False,
            ),
            NoiseComponent(
                kind="harmonic_comb",
                level=COMPRESSOR_RMS,
                frequency=COMPRESSOR_HZ,
                n_harmonics=COMPRESSOR_HARMONICS,
                suppressed=False,
            ),
        ),
        seed=seed & ((1 << 64) - 1),
    )


default_paper_model = default_classical_model
