"""Scenario configuration files (TOML)."""

import logging
import sys
from pathlib import Path
from typing import Any, Dict, Union

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - Python 3.10 backport
    import tomli as tomllib

import tomli_w
from pydantic import ValidationError

from .exceptions import ScenarioError
from .models import ScenarioConfig

logger = logging.getLogger(__name__)

SECTIONS = ("tariff", "binning", "inputs", "ess", "ewh", "erh")


def scenario_to_dict(config: ScenarioConfig) -> Dict[str, Any]:
    """Nested mapping with scalar fields under [scenario] and one table per section."""
    data = config.model_dump(mode="json", exclude_none=True)
    document: Dict[str, Any] = {"scenario": {}}
    for key, value in data.items():
        if key in SECTIONS:
            document[key] = value
        else:
            document["scenario"][key] = value
    return document


def scenario_from_dict(document: Dict[str, Any]) -> ScenarioConfig:
    unknown = set(document) - set(SECTIONS) - {"scenario"}
    if unknown:
        raise ScenarioError(f"Unknown config sections: {', '.join(sorted(unknown))}")
    flat: Dict[str, Any] = dict(document.get("scenario", {}))
    for section in SECTIONS:
        if section in flat:
            raise ScenarioError(f"Section [{section}] cannot be set inside [scenario]")
        if section in document:
            flat[section] = document[section]
    try:
        return ScenarioConfig.model_validate(flat)
    except ValidationError as e:
        raise ScenarioError(str(e)) from e


def dumps_scenario(config: ScenarioConfig) -> str:
    return tomli_w.dumps(scenario_to_dict(config))


def loads_scenario(text: str) -> ScenarioConfig:
    try:
        document = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ScenarioError(f"Invalid config file: {e}") from e
    return scenario_from_dict(document)


def save_scenario(config: ScenarioConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps_scenario(config), encoding="utf-8")
    logger.info(f"Saved scenario {config.name} to {path}")


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioError(f"Cannot read config file {path}: {e}") from e
    config = loads_scenario(text)
    logger.info(f"Loaded scenario {config.name} from {path} (devices: {config.system_label})")
    return config
