"""Shared fixtures for fibertwin tests.

Scenarios here are short so the unit suite stays fast; the long statistical runs live
in tests/integration and are marked slow.
"""

import sys
from pathlib import Path

import pytest

# Add project root to path to ensure imports work correctly
sys.path.insert(0, str(Path(__file__).parent.parent))


@pytest.fixture
def quiet_scenario():
    """Ten minutes of shot-noise-only counts at constant visibility."""
    from fibertwin.services.sim import VisibilityDrift, headline_scenario

    drift = VisibilityDrift(v_start=0.98, v_end=0.98, kind="constant")
    return headline_scenario(600.0, seed=11, classical_noise=False, drift=drift)


@pytest.fixture
def dithered_scenario():
    """One hour with the calibration dither and a strong 0.1 Hz signal, no classical noise."""
    from fibertwin.services.model import CALIBRATION_DITHER, SignalSpec
    from fibertwin.services.sim import VisibilityDrift, headline_scenario

    drift = VisibilityDrift(v_start=0.98, v_end=0.98, kind="constant")
    injections = (CALIBRATION_DITHER, SignalSpec(0.1, 1.0e-3))
    return headline_scenario(3600.0, seed=23, injections=injections, classical_noise=False, drift=drift)


@pytest.fixture
def scenario_yaml(tmp_path):
    """A small scenario file on disk."""
    path = tmp_path / "scenario.yml"
    path.write_text(
        "\n".join(
            [
                "seed: 42",
                "duration_s: 300",
                "interferometer:",
                "  visibility: 0.98",
                "  bin_rate_hz: 10.0",
                "noise:",
                "  components:",
                "    - kind: power_law",
                "      level_rad_per_rthz: 6.0e-6",
                "      exponent_alpha: -2.0",
                "      corner_hz: 0.01",
                "      suppressed: false",
                "drift:",
                "  kind: constant",
                "  v_start: 0.98",
                "  v_end: 0.98",
                "injections:",
                "  - frequency_hz: 0.25",
                "    rms_rad: 2.1e-3",
                "",
            ]
        ),
        encoding="utf-8",
    )
    return path


@pytest.fixture(autouse=True)
def isolated_output_dir(tmp_path, mocker):
    """Point the default output directory at a temporary path."""
    import fibertwin.config as cfg

    out = tmp_path / "out"
    mocker.patch.object(cfg.Config, "OUTPUT_DIR", str(out))
    return out
