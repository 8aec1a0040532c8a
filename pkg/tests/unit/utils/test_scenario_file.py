"""Tests for YAML scenario and loss-budget files."""

import pytest

BASE = "seed: 1\nduration_s: 100\n"


def test_load_scenario(scenario_yaml):
    from fibertwin.services.model import SignalSpec
    from fibertwin.utils.scenario_file import load_scenario
    from fibertwin.utils.seeding import NOISE_STREAM, derive_seed

    scenario = load_scenario(scenario_yaml)

    assert scenario.seed == 42
    assert scenario.duration == 300.0
    assert scenario.n_bins == 3000
    assert scenario.noise.seed == derive_seed(42, NOISE_STREAM)
    assert scenario.noise.components[0].kind == "power_law"
    assert scenario.noise.components[0].corner_hz == 0.01
    assert scenario.injections == (SignalSpec(0.25, 2.1e-3),)
    assert scenario.drift.kind == "constant"
    assert scenario.loop.mode == "effective"


def test_defaults_fill_missing_sections():
    from fibertwin.services.model import InterferometerConfig
    from fibertwin.utils.scenario_file import parse_scenario

    scenario = parse_scenario(BASE)

    assert scenario.cfg == InterferometerConfig()
    assert scenario.noise.components == ()
    assert scenario.injections == ()


def test_dump_and_reload_is_identical(tmp_path, scenario_yaml):
    from fibertwin.utils.scenario_file import dump_scenario, load_scenario

    original = load_scenario(scenario_yaml)
    reloaded = load_scenario(dump_scenario(original, tmp_path / "copy.yml"))
    assert reloaded == original


def test_bundled_configs_load():
    from pathlib import Path

    from fibertwin.utils.scenario_file import load_budget, load_scenario

    configs = Path(__file__).resolve().parents[3] / "configs"
    assert load_scenario(configs / "headline.yml").n_bins == 36_000
    assert load_scenario(configs / "explicit_loop.yml").loop.mode == "explicit"
    assert len(load_budget(configs / "loss_budget.yml").entries) == 6


@pytest.mark.parametrize(
    "text, key, line",
    [
        ("seed: 1\n", "duration_s", 1),
        (BASE + "interferometer:\n  arm_length: 5.0\n", "interferometer.arm_length", 4),
        ("seed: 1\nduration_s: soon\n", "duration_s", 2),
        (BASE + "loop:\n  mode: pid\n", "loop.mode", 4),
        (BASE + "noise:\n  components:\n    - kind: tone\n      level_rad_per_rthz: 1.0\n", "noise.components.0", 5),
        (BASE + "injections:\n  - frequency_hz: 0.1\n    rms_rad: -1.0\n", "injections.0.rms_rad", 5),
    ],
)
def test_schema_errors_carry_key_and_line(text, key, line):
    from fibertwin.errors import ConfigError
    from fibertwin.utils.scenario_file import parse_scenario

    with pytest.raises(ConfigError) as ei:
        parse_scenario(text)
    assert ei.value.key == key
    assert ei.value.line == line
    assert f"key '{key}'" in str(ei.value)


def test_domain_errors_name_the_section():
    from fibertwin.errors import ConfigError
    from fibertwin.utils.scenario_file import parse_scenario

    with pytest.raises(ConfigError) as ei:
        parse_scenario(BASE + "interferometer:\n  visibility: 1.5\n")
    assert ei.value.key == "interferometer"

    with pytest.raises(ConfigError) as ei:
        parse_scenario("seed: 1\nduration_s: 100.05\n")
    assert ei.value.key == "duration_s"


def test_invalid_yaml_reports_line():
    from fibertwin.errors import ConfigError
    from fibertwin.utils.scenario_file import parse_scenario

    with pytest.raises(ConfigError, match="invalid YAML") as ei:
        parse_scenario("seed: 1\nduration_s: [100\nloop: {}\n")
    assert ei.value.line is not None


def test_top_level_must_be_mapping():
    from fibertwin.errors import ConfigError
    from fibertwin.utils.scenario_file import parse_scenario

    with pytest.raises(ConfigError, match="mapping"):
        parse_scenario("- 1\n- 2\n")


def test_load_budget(tmp_path):
    from fibertwin.services.model import loss_budget_total
    from fibertwin.utils.scenario_file import load_budget

    path = tmp_path / "budget.yml"
    path.write_text(
        "entries:\n  - label: spool\n    loss_db: 9.75\n    uncertainty_db: 0.01\n  - label: AOM\n    loss_db: 2.35\n",
        encoding="utf-8",
    )
    budget = load_budget(path)

    assert [e.label for e in budget.entries] == ["spool", "AOM"]
    assert budget.entries[1].uncertainty_db == 0.0
    assert loss_budget_total(budget).total_db == pytest.approx(12.1)


def test_load_budget_rejects_negative_loss(tmp_path):
    from fibertwin.errors import ConfigError
    from fibertwin.utils.scenario_file import load_budget

    path = tmp_path / "budget.yml"
    path.write_text("entries:\n  - label: gain\n    loss_db: -3\n", encoding="utf-8")
    with pytest.raises(ConfigError) as ei:
        load_budget(path)
    assert ei.value.key == "entries.0.loss_db"
    assert ei.value.line == 3
