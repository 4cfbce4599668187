"""
Presets
Bundled experiment configurations reproducing the published figures
"""
import json
import logging
from importlib import resources
from typing import Dict, List

from vortexshaper.config import ExperimentConfig, load_config_text
from vortexshaper.utils.error_handler import UnknownFigure

logger = logging.getLogger(__name__)

PRESET_PACKAGE = "vortexshaper.presets"


def available_presets() -> List[str]:
    """Ids of the bundled presets, sorted"""
    files = resources.files(PRESET_PACKAGE).iterdir()
    return sorted(f.name[:-len(".json")] for f in files if f.name.endswith(".json"))


def preset_text(figure_id: str) -> str:
    """
    Raw JSON text of a bundled preset

    Raises:
        UnknownFigure: no preset with this id
    """
    resource = resources.files(PRESET_PACKAGE) / f"{figure_id}.json"
    if not resource.is_file():
        raise UnknownFigure(f"Unknown figure '{figure_id}'; available: {', '.join(available_presets())}")
    return resource.read_text(encoding='utf-8')


def preset_document(figure_id: str) -> Dict:
    return json.loads(preset_text(figure_id))


def load_preset(figure_id: str) -> ExperimentConfig:
    """Validated configuration of a bundled preset"""
    config = load_config_text(preset_text(figure_id))
    logger.info(f"Preset loaded: {figure_id} ({config.name})")
    return config
