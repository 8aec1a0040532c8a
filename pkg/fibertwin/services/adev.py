"""Overlapping Allan deviation of demodulated amplitude series and its power-law fit."""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from fibertwin.errors import DomainError, FitError
from fibertwin.utils.logging import get_logger

logger = get_logger(__name__)

WHITE_SLOPE_RANGE = (-0.6, -0.4)
MIN_FIT_POINTS = 4


@dataclass
class AdevResult:
    """Allan deviation against averaging time.

    ``sigma_err`` assumes white noise whatever the data, which ``edf_model`` records.
    """

    taus: np.ndarray
    sigma: np.ndarray
    sigma_err: np.ndarray
    fit_level: float = math.nan
    fit_slope: float = math.nan
    edf_model: str = "white"

    @property
    def is_white(self) -> bool:
        return is_white_noise(self.fit_slope)


def default_taus(n: int, fs: float, tau_min: Optional[float] = None, per_decade: int = 10) -> np.ndarray:
    """Logarithmic τ grid on multiples of ``1/fs``, capped at a third of the duration."""
    max_m = n // 3
    min_m = 1 if tau_min is None else max(1, int(round(tau_min * fs)))
    if max_m < min_m:
        raise DomainError(f"series of {n} samples is too short for tau >= {min_m / fs} s")
    grid = np.logspace(math.log10(min_m), math.log10(max_m), int(per_decade * math.log10(max_m / min_m)) + 1)
    return np.unique(np.round(grid).astype(int)) / fs


def edf_white(n: int, m: int) -> float:
    """Equivalent degrees of freedom of the overlapping ADEV of white noise.

    Args:
        n: Number of samples in the value series.
        m: Averaging factor.
    """
    n_phase = n + 1
    return (3 * (n_phase - 1) / (2 * m) - 2 * (n_phase - 2) / n_phase) * 4 * m * m / (4 * m * m + 5)


def overlapping_adev(series: Sequence[float], fs: float, taus: Sequence[float]) -> AdevResult:
    """Overlapping two-sample deviation of a value series.

    The series is integrated into a phase-like sum and each τ uses every second difference
    of that sum at stride 1.

    Raises:
        DomainError: A τ that is not a multiple of ``1/fs`` or exceeds a third of the duration.
    """
    values = np.asarray(series, dtype=float)
    n = values.size
    max_tau = (n // 3) / fs
    taus = np.asarray(taus, dtype=float)
    if taus.size == 0:
        raise DomainError("no tau values given")
    if np.any(np.diff(taus) <= 0):
        raise DomainError("taus must be strictly increasing")

    summed = np.concatenate(([0.0], np.cumsum(values - np.mean(values))))
    sigma = np.empty(taus.size)
    sigma_err = np.empty(taus.size)
    for index, tau in enumerate(taus):
        exact = tau * fs
        m = int(round(exact))
        if m < 1 or abs(exact - m) > 1e-6 * max(1.0, exact):
            raise DomainError(f"tau={tau} s is not a positive multiple of 1/fs={1 / fs} s")
        if m > n // 3:
            raise DomainError(f"tau={tau} s exceeds the maximum usable tau of {max_tau} s")

        second = (summed[2 * m :] - 2 * summed[m:-m] + summed[: -2 * m]) / m
        sigma[index] = math.sqrt(0.5 * float(np.mean(second**2)))
        sigma_err[index] = sigma[index] / math.sqrt(2 * edf_white(n, m))
        logger.debug(f"ADEV tau={tau:g} s (m={m}): {sigma[index]:.3e}")

    return AdevResult(taus=taus, sigma=sigma, sigma_err=sigma_err)


def fit_white_noise(result: AdevResult) -> Tuple[float, float]:
    """Weighted least squares of log σ against log τ.

    Weights follow the white-noise degrees of freedom through ``σ/σ_err``.

    Returns:
        ``(level, slope)`` with level the fitted σ at τ = 1 s.

    Raises:
        FitError: Fewer than four points or a zero deviation.
    """
    if result.taus.size < MIN_FIT_POINTS:
        raise FitError(f"fit needs at least {MIN_FIT_POINTS} tau points, got {result.taus.size}")
    if np.any(result.sigma <= 0):
        raise FitError("cannot fit a power law through a zero deviation")

    x = np.log(result.taus)
    y = np.log(result.sigma)
    # var(log σ) ≈ (σ_err/σ)²
    weights = (result.sigma / result.sigma_err) ** 2
    design = np.column_stack([np.ones_like(x), x])
    sqrt_w = np.sqrt(weights)
    (intercept, slope), *_ = np.linalg.lstsq(design * sqrt_w[:, None], y * sqrt_w, rcond=None)
    return float(math.exp(intercept)), float(slope)


def extrapolate(level: float, slope: float, tau_total: float) -> float:
    """Deviation of the fitted power law at ``tau_total``."""
    if not tau_total > 0:
        raise DomainError(f"tau_total must be > 0, got {tau_total}")
    return level * tau_total**slope


def is_white_noise(slope: float) -> bool:
    return WHITE_SLOPE_RANGE[0] <= slope <= WHITE_SLOPE_RANGE[1]


def analyze_stability(series: Sequence[float], fs: float, taus: Optional[Sequence[float]] = None) -> AdevResult:
    """ADEV on a default or given τ grid, with the power-law fit filled in."""
    values = np.asarray(series, dtype=float)
    grid = default_taus(values.size, fs) if taus is None else taus
    result = overlapping_adev(values, fs, grid)
    if result.taus.size >= MIN_FIT_POINTS and np.all(result.sigma > 0):
        result.fit_level, result.fit_slope = fit_white_noise(result)
        logger.info(
            f"ADEV fit: slope {result.fit_slope:.3f}, level {result.fit_level:.3e} at 1 s "
            f"({'white' if result.is_white else 'not white'})"
        )
    return result
