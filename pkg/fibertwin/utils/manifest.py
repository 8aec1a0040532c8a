"""Run manifests: enough provenance to regenerate every output bit for bit."""

import hashlib
import json
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml
from loguru import logger

from fibertwin.config import config
from fibertwin.errors import ConfigError
from fibertwin.services.sim import CountSeries, Scenario, run_experiment
from fibertwin.utils.io import write_counts_binary
from fibertwin.utils.scenario_file import parse_scenario, scenario_to_dict

PathLike = Union[str, Path]
MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    """Provenance of one CLI invocation."""

    scenario_sha256: str
    seed: int
    tool_version: str
    created_utc: str
    scenario: Dict[str, Any] = field(default_factory=dict)
    stages: Dict[str, Any] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)

    def add_output(self, path: PathLike) -> None:
        path = Path(path)
        self.outputs[path.name] = file_sha256(path)


def file_sha256(path: PathLike) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def scenario_sha256(scenario: Scenario) -> str:
    normalized = json.dumps(scenario_to_dict(scenario), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()


def new_manifest(scenario: Scenario) -> RunManifest:
    return RunManifest(
        scenario_sha256=scenario_sha256(scenario),
        seed=scenario.seed,
        tool_version=config.TOOL_VERSION,
        created_utc=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        scenario=scenario_to_dict(scenario),
    )


def analysis_manifest(counts_path: Optional[PathLike]) -> RunManifest:
    """Manifest for an analysis, inheriting scenario provenance from a sibling simulate manifest."""
    created = datetime.now(timezone.utc).isoformat(timespec="seconds")
    manifest = RunManifest(scenario_sha256="", seed=0, tool_version=config.TOOL_VERSION, created_utc=created)
    if counts_path is None:
        return manifest

    counts_path = Path(counts_path)
    sibling = counts_path.parent / MANIFEST_NAME
    if sibling.exists():
        source = load_manifest(sibling)
        manifest.scenario_sha256 = source.scenario_sha256
        manifest.seed = source.seed
        manifest.scenario = source.scenario
        manifest.stages.update(source.stages)
    manifest.inputs[counts_path.name] = file_sha256(counts_path)
    return manifest


def reproduction_manifest(figure: str, seed: int, params: Dict[str, Any]) -> RunManifest:
    """Manifest for one canned figure; there is no scenario file, the figure id and seed pin the runs."""
    return RunManifest(
        scenario_sha256="",
        seed=seed,
        tool_version=config.TOOL_VERSION,
        created_utc=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        stages={"reproduce": {"figure": figure, **params}},
    )


def write_manifest(manifest: RunManifest, directory: PathLike, name: str = MANIFEST_NAME) -> Path:
    path = Path(directory) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Manifest written to {path}")
    return path


def verify_outputs(manifest: RunManifest, directory: PathLike) -> List[str]:
    """Names of recorded outputs that are missing from ``directory`` or hash differently."""
    directory = Path(directory)
    stale = []
    for name, digest in sorted(manifest.outputs.items()):
        path = directory / name
        if not path.exists() or file_sha256(path) != digest:
            stale.append(name)
    if stale:
        logger.warning(f"Outputs differing from the manifest: {', '.join(stale)}")
    return stale


def load_manifest(path: PathLike) -> RunManifest:
    """Read a manifest.

    Raises:
        ConfigError: Invalid JSON or missing fields.
    """
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
        return RunManifest(**payload)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid manifest JSON: {e.msg}", line=e.lineno) from e
    except TypeError as e:
        raise ConfigError(f"{path}: malformed manifest: {e}") from e


def regenerate(manifest: RunManifest) -> CountSeries:
    """Re-run the simulation recorded in a manifest."""
    scenario = parse_scenario(yaml.safe_dump(manifest.scenario), "<manifest>")
    if scenario_sha256(scenario) != manifest.scenario_sha256:
        raise ConfigError("embedded scenario does not match the recorded scenario hash", key="scenario")
    return run_experiment(scenario)


def verify_binary(manifest: RunManifest, name: str = "counts.bin") -> bool:
    """Regenerate the counts and compare against the recorded binary hash."""
    if name not in manifest.outputs:
        raise ConfigError(f"manifest has no output named '{name}'", key="outputs")
    counts = regenerate(manifest)
    with tempfile.TemporaryDirectory() as tmp:
        digest = file_sha256(write_counts_binary(Path(tmp) / name, counts))
    matches = digest == manifest.outputs[name]
    logger.info(f"{name}: regenerated hash {'matches' if matches else 'differs'}")
    return matches
