"""YAML scenario and loss-budget files.

Every physical quantity carries its SI unit in the key name. Files are validated with
pydantic and problems are reported as ``ConfigError`` with the dotted key path and the
line it was found on.
"""

from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

import yaml
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from fibertwin.errors import ConfigError, DomainError
from fibertwin.services.model import MID_FRINGE, InterferometerConfig, LossBudget, LossEntry, SignalSpec
from fibertwin.services.noise import NoiseComponent, NoiseModel
from fibertwin.services.sim import LockLoopConfig, Scenario, VisibilityDrift

PathLike = Union[str, Path]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class InterferometerSection(_Section):
    arm_length_m: float = 5.0e4
    height_diff_m: float = 0.0
    wavelength_m: float = 1.55012e-6
    refractive_index: float = 1.46
    visibility: float = 0.98
    lock_offset_rad: float = MID_FRINGE
    detected_pair_rate_hz: float = 1.066e5
    bin_rate_hz: float = 10.0


class NoiseComponentSection(_Section):
    kind: Literal["white", "power_law", "tone", "harmonic_comb"]
    level_rad_per_rthz: Optional[float] = Field(default=None, ge=0)
    rms_rad: Optional[float] = Field(default=None, ge=0)
    exponent_alpha: float = 0.0
    frequency_hz: float = 0.0
    n_harmonics: int = 1
    phase_rad: float = 0.0
    corner_hz: Optional[float] = None
    suppressed: bool = True

    @model_validator(mode="after")
    def _level_matches_kind(self) -> "NoiseComponentSection":
        spectral = self.kind in ("white", "power_law")
        wanted, other = ("level_rad_per_rthz", "rms_rad") if spectral else ("rms_rad", "level_rad_per_rthz")
        if getattr(self, wanted) is None:
            raise ValueError(f"{self.kind} component needs '{wanted}'")
        if getattr(self, other) is not None:
            raise ValueError(f"{self.kind} component does not take '{other}'")
        return self

    @property
    def level(self) -> float:
        value = self.level_rad_per_rthz if self.kind in ("white", "power_law") else self.rms_rad
        return float(value or 0.0)


class NoiseSection(_Section):
    components: List[NoiseComponentSection] = Field(default_factory=list)


class LoopSection(_Section):
    mode: Literal["effective", "explicit"] = "effective"
    unity_gain_hz: float = 10.0
    ctrl_rate_hz: float = 1000.0
    kp_hz: float = 50.0
    ki_fast_hz_per_s: float = 500.0
    ki_slow_per_s: float = 0.5
    fast_range_rad: float = 3.0
    slow_bandwidth_hz: float = 1.0


class DriftSection(_Section):
    kind: Literal["constant", "linear", "bounded_random_walk"] = "linear"
    v_start: float = 0.98
    v_end: float = 0.92
    walk_step_per_hour: float = 0.005


class InjectionSection(_Section):
    frequency_hz: float
    rms_rad: float = Field(ge=0)
    phase_rad: float = 0.0


class ScenarioFile(_Section):
    seed: int = Field(default=0, ge=0, lt=2**64)
    duration_s: float = Field(gt=0)
    interferometer: InterferometerSection = Field(default_factory=InterferometerSection)
    noise: NoiseSection = Field(default_factory=NoiseSection)
    loop: LoopSection = Field(default_factory=LoopSection)
    drift: DriftSection = Field(default_factory=DriftSection)
    injections: List[InjectionSection] = Field(default_factory=list)


class LossEntrySection(_Section):
    label: str
    loss_db: float = Field(ge=0)
    uncertainty_db: float = Field(default=0.0, ge=0)


class BudgetFile(_Section):
    entries: List[LossEntrySection] = Field(default_factory=list)


def _line_of(node: Optional[yaml.Node], loc: Sequence[Union[str, int]]) -> Optional[int]:
    """1-based line of the deepest node along ``loc`` in a composed YAML tree."""
    line = None
    for part in loc:
        if node is None:
            break
        line = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            match = next(((k, v) for k, v in node.value if k.value == part), None)
            if match is None:
                break
            line = match[0].start_mark.line + 1
            node = match[1]
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
            line = node.start_mark.line + 1
        else:
            break
    return line


def _parse(text: str, source: str) -> tuple[Any, Optional[yaml.Node]]:
    try:
        return yaml.safe_load(text), yaml.compose(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"{source}: invalid YAML: {getattr(e, 'problem', e)}", line=line) from e


def _validate(model: type[_Section], text: str, source: str) -> Any:
    data, root = _parse(text, source)
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: expected a mapping at the top level", line=1)
    try:
        return model.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        loc = [part for part in first["loc"] if isinstance(part, (str, int))]
        key = ".".join(str(part) for part in loc) or None
        raise ConfigError(f"{source}: {first['msg']}", key=key, line=_line_of(root, loc)) from e


def _to_scenario(parsed: ScenarioFile) -> Scenario:
    ifm = parsed.interferometer
    loop = parsed.loop
    drift = parsed.drift
    section = "interferometer"
    try:
        cfg = InterferometerConfig(
            arm_length_l=ifm.arm_length_m,
            height_diff_h=ifm.height_diff_m,
            wavelength_lambda=ifm.wavelength_m,
            refractive_index_n=ifm.refractive_index,
            visibility_V=ifm.visibility,
            lock_offset_phi0=ifm.lock_offset_rad,
            detected_pair_rate_R=ifm.detected_pair_rate_hz,
            bin_rate_fs=ifm.bin_rate_hz,
        )
        section = "noise"
        components = tuple(
            NoiseComponent(
                kind=c.kind,
                level=c.level,
                exponent_alpha=c.exponent_alpha,
                frequency=c.frequency_hz,
                n_harmonics=c.n_harmonics,
                phase=c.phase_rad,
                corner_hz=c.corner_hz,
                suppressed=c.suppressed,
            )
            for c in parsed.noise.components
        )
        section = "loop"
        loop_cfg = LockLoopConfig(
            mode=loop.mode,
            unity_gain_hz=loop.unity_gain_hz,
            ctrl_rate=loop.ctrl_rate_hz,
            kp=loop.kp_hz,
            ki_fast=loop.ki_fast_hz_per_s,
            ki_slow=loop.ki_slow_per_s,
            fast_range=loop.fast_range_rad,
            slow_bandwidth_hz=loop.slow_bandwidth_hz,
        )
        section = "drift"
        drift_cfg = VisibilityDrift(
            v_start=drift.v_start, v_end=drift.v_end, kind=drift.kind, walk_step_per_hour=drift.walk_step_per_hour
        )
        section = "injections"
        injections = tuple(SignalSpec(i.frequency_hz, i.rms_rad, i.phase_rad) for i in parsed.injections)
        section = "duration_s"
        scenario = Scenario(
            cfg=cfg,
            noise=NoiseModel(components=components),
            loop=loop_cfg,
            drift=drift_cfg,
            injections=injections,
            duration=parsed.duration_s,
        )
    except DomainError as e:
        raise ConfigError(str(e), key=section) from e
    return scenario.with_seed(parsed.seed)


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    return _to_scenario(_validate(ScenarioFile, text, source))


def load_scenario(path: PathLike) -> Scenario:
    """Load a scenario file; the noise seed is derived from the top-level seed.

    Raises:
        ConfigError: YAML or schema problems, with key and line.
    """
    path = Path(path)
    scenario = parse_scenario(path.read_text(encoding="utf-8"), str(path))
    logger.info(f"Loaded scenario from {path}: {scenario.duration:.0f} s, seed {scenario.seed}")
    return scenario


def scenario_to_dict(scenario: Scenario) -> Dict[str, Any]:
    """Plain-data form of a scenario, the inverse of ``parse_scenario``."""
    cfg = scenario.cfg
    loop = scenario.loop
    components = []
    for c in scenario.noise.components:
        entry: Dict[str, Any] = {"kind": c.kind}
        entry["level_rad_per_rthz" if c.kind in ("white", "power_law") else "rms_rad"] = c.level
        entry.update(
            exponent_alpha=c.exponent_alpha,
            frequency_hz=c.frequency,
            n_harmonics=c.n_harmonics,
            phase_rad=c.phase,
            corner_hz=c.corner_hz,
            suppressed=c.suppressed,
        )
        components.append(entry)
    return {
        "seed": scenario.seed,
        "duration_s": scenario.duration,
        "interferometer": {
            "arm_length_m": cfg.arm_length_l,
            "height_diff_m": cfg.height_diff_h,
            "wavelength_m": cfg.wavelength_lambda,
            "refractive_index": cfg.refractive_index_n,
            "visibility": cfg.visibility_V,
            "lock_offset_rad": cfg.lock_offset_phi0,
            "detected_pair_rate_hz": cfg.detected_pair_rate_R,
            "bin_rate_hz": cfg.bin_rate_fs,
        },
        "noise": {"components": components},
        "loop": {
            "mode": loop.mode,
            "unity_gain_hz": loop.unity_gain_hz,
            "ctrl_rate_hz": loop.ctrl_rate,
            "kp_hz": loop.kp,
            "ki_fast_hz_per_s": loop.ki_fast,
            "ki_slow_per_s": loop.ki_slow,
            "fast_range_rad": loop.fast_range,
            "slow_bandwidth_hz": loop.slow_bandwidth_hz,
        },
        "drift": {
            "kind": scenario.drift.kind,
            "v_start": scenario.drift.v_start,
            "v_end": scenario.drift.v_end,
            "walk_step_per_hour": scenario.drift.walk_step_per_hour,
        },
        "injections": [
            {"frequency_hz": s.frequency, "rms_rad": s.rms_amplitude, "phase_rad": s.phase} for s in scenario.injections
        ],
    }


def dump_scenario(scenario: Scenario, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(scenario_to_dict(scenario), sort_keys=False), encoding="utf-8")
    return path


def load_budget(path: PathLike) -> LossBudget:
    """Load a loss-budget file (a YAML list of ``label``/``loss_db``/``uncertainty_db`` entries)."""
    path = Path(path)
    parsed = _validate(BudgetFile, path.read_text(encoding="utf-8"), str(path))
    return LossBudget(entries=tuple(LossEntry(e.label, e.loss_db, e.uncertainty_db) for e in parsed.entries))
