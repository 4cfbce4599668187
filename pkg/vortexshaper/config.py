"""
Experiment Configuration
Loads a JSON experiment description, converts unit-suffixed fields to SI and
validates it into typed settings
"""
import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from vortexshaper.analysis.imaging_analysis import NOISE_MODELS, ImagingConfig
from vortexshaper.atoms.cloud_model import CloudSpec
from vortexshaper.constants import (
    AMU, D2_GAMMA, D2_WAVELENGTH, I_SAT_REF, MHZ, MW_PER_CM2, PER_CM4, PER_MW_CM2, RB87_MASS,
)
from vortexshaper.optics.beam_propagation import VortexBeamModel
from vortexshaper.optics.jones_optics import GaussianBeam, VortexRetarder
from vortexshaper.utils.error_handler import ConfigError
from vortexshaper.utils.export_manager import FORMATS

logger = logging.getLogger(__name__)

# Suffix -> factor to SI; matched longest first
UNIT_SUFFIXES = {
    '_m': 1.0, '_mm': 1e-3, '_um': 1e-6, '_nm': 1e-9,
    '_s': 1.0, '_ms': 1e-3, '_us': 1e-6,
    '_W': 1.0, '_mW': 1e-3, '_uW': 1e-6,
    '_nJ': 1e-9,
    '_MHz': MHZ,
    '_K': 1.0, '_uK': 1e-6,
    '_deg': np.pi / 180, '_rad': 1.0,
    '_mW_cm2': MW_PER_CM2,
    '_amu': AMU,
    '_per_mW_cm2': PER_MW_CM2,
    '_per_cm4': PER_CM4,
}
_SUFFIX_ORDER = sorted(UNIT_SUFFIXES, key=len, reverse=True)

SCHEMES = ("beam", "dynamic", "dark")
SWEEP_PARAMETERS = {
    "beam": ("z_over_z0", "power"),
    "dynamic": ("power", "tau_ill", "tau_2"),
    "dark": ("power", "tau_ill", "energy", "detuning"),
}
NORMALIZATIONS = ("first", "each", "none")
DARK_METHODS = ("analytic", "monte_carlo")


def _split_suffix(key: str) -> Tuple[str, Optional[float]]:
    for suffix in _SUFFIX_ORDER:
        if key.endswith(suffix) and len(key) > len(suffix):
            return key[:-len(suffix)], UNIT_SUFFIXES[suffix]
    return key, None


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def convert_units(raw: Dict[str, Any], path: str = "") -> Dict[str, Any]:
    """
    Strip unit suffixes from keys and scale their values to SI

    Nested sections are converted recursively; lists of numbers are scaled
    elementwise.

    Raises:
        ConfigError: a suffixed field is not numeric, or two keys collide after conversion
    """
    out: Dict[str, Any] = {}
    for key, value in raw.items():
        where = f"{path}.{key}" if path else key
        if isinstance(value, dict):
            name, converted = key, convert_units(value, where)
        else:
            name, factor = _split_suffix(key)
            if factor is None:
                converted = value
            elif _is_number(value):
                converted = float(value) * factor
            elif isinstance(value, list) and all(_is_number(v) for v in value):
                converted = [float(v) * factor for v in value]
            else:
                raise ConfigError("Field with unit suffix must be a number or list of numbers", field=where)
        if name in out:
            raise ConfigError("Field given twice with different units", field=where)
        out[name] = converted
    return out


@dataclass(frozen=True)
class AtomSettings:
    mass: float = RB87_MASS
    wavelength: float = D2_WAVELENGTH
    gamma: float = D2_GAMMA
    gamma1: float = 2 * np.pi * 3e6
    i_sat: float = I_SAT_REF


@dataclass(frozen=True)
class BeamSettings:
    w0: float
    wavelength: float = D2_WAVELENGTH
    order: int = 1
    z_plate: float = 0.0
    z: float = 0.0
    power: float = 0.0
    polarizer: Optional[float] = None
    grid_points: int = 256
    span_factor: float = 4.0
    fft_check: bool = False

    def model(self, power: Optional[float] = None, polarized: bool = True) -> VortexBeamModel:
        beam = GaussianBeam.from_power(self.w0, self.wavelength, self.power if power is None else power)
        return VortexBeamModel(beam, VortexRetarder(self.order, self.z_plate),
                               self.polarizer if polarized else None)

    @property
    def z0(self) -> float:
        return np.pi * self.w0 ** 2 / self.wavelength


@dataclass(frozen=True)
class SequenceSettings:
    scheme: str
    tau_1: float = 0.0
    tau_ill: float = 0.0
    tau_2: float = 0.0
    detuning: float = 0.0
    power: float = 0.0
    beta0: Optional[float] = None
    alpha0: Optional[float] = None
    max_saturation: Optional[float] = None
    shaping_axis: str = "y"
    method: str = "analytic"
    density_mode: str = "exact"


@dataclass(frozen=True)
class SweepSettings:
    parameter: str
    values: Tuple[float, ...]


@dataclass(frozen=True)
class FitSettings:
    enabled: bool = False
    sigma0: Optional[float] = None


@dataclass(frozen=True)
class OutputSettings:
    directory: str = "./output"
    formats: Tuple[str, ...] = ("csv", "json")
    log_dir: str = "./logs"
    trajectory_interval: Optional[float] = None
    trajectory_atoms: int = 0
    snapshot: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment in SI units"""
    name: str
    atom: AtomSettings
    cloud: Optional[CloudSpec]
    beam: Optional[BeamSettings]
    sequence: SequenceSettings
    imaging: ImagingConfig
    normalization: str
    sweep: SweepSettings
    fit: FitSettings
    output: OutputSettings
    document: Dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def with_overrides(self, out: Optional[str] = None, seed: Optional[int] = None,
                       formats: Optional[List[str]] = None) -> "ExperimentConfig":
        """Apply command-line overrides"""
        config = self
        if out is not None:
            config = replace(config, output=replace(config.output, directory=out))
        if seed is not None:
            if config.cloud is not None:
                config = replace(config, cloud=replace(config.cloud, seed=seed))
            config = replace(config, imaging=replace(config.imaging, noise_seed=seed))
        if formats:
            unknown = set(formats) - set(FORMATS)
            if unknown:
                raise ConfigError(f"Unknown output formats {sorted(unknown)}", field="output.formats")
            config = replace(config, output=replace(config.output, formats=tuple(dict.fromkeys(formats))))
        return config

    @property
    def seed(self) -> int:
        return self.cloud.seed if self.cloud is not None else (self.imaging.noise_seed or 0)

    def resolved(self) -> Dict[str, Any]:
        """The configuration as written into the manifest, overrides included"""
        doc = dict(self.document)
        doc['output'] = {**doc.get('output', {}), 'directory': self.output.directory,
                         'formats': list(self.output.formats)}
        if self.cloud is not None:
            doc['cloud'] = {**doc.get('cloud', {}), 'seed': self.cloud.seed}
        return doc


def _section(doc: Dict, name: str, required: bool = False) -> Dict:
    value = doc.get(name, {} if not required else None)
    if value is None:
        raise ConfigError(f"Missing section '{name}'", field=name)
    if not isinstance(value, dict):
        raise ConfigError(f"Section '{name}' must be an object", field=name)
    return value


def _known(section: Dict, name: str, allowed) -> Dict:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"Unknown field(s) {sorted(unknown)}", field=f"{name}.{sorted(unknown)[0]}")
    return section


def _build(name: str, factory, **kwargs):
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e), field=name) from e


def _positive(value, where: str):
    if value is not None and value <= 0:
        raise ConfigError(f"Value must be positive, got {value}", field=where)


def _atom(doc: Dict) -> AtomSettings:
    section = _known(_section(doc, 'atom'), 'atom', ('mass', 'wavelength', 'gamma', 'gamma1', 'i_sat'))
    for key, value in section.items():
        _positive(value, f"atom.{key}")
    return _build('atom', AtomSettings, **section)


def _beam(doc: Dict) -> Optional[BeamSettings]:
    if 'beam' not in doc:
        return None
    section = dict(_known(_section(doc, 'beam'), 'beam',
                          ('w0', 'wavelength', 'order', 'z_plate', 'z', 'z_over_z0', 'power', 'polarizer',
                           'grid_points', 'span_factor', 'fft_check')))
    if 'w0' not in section:
        raise ConfigError("Beam waist is required", field="beam.w0")
    _positive(section['w0'], "beam.w0")
    z_over_z0 = section.pop('z_over_z0', None)
    settings = _build('beam', BeamSettings, **section)
    if z_over_z0 is not None:
        settings = replace(settings, z=settings.z_plate + z_over_z0 * settings.z0)
    try:
        VortexRetarder(settings.order, settings.z_plate)
    except ValueError as e:
        raise ConfigError(str(e), field="beam.order") from e
    if settings.grid_points < 16 or settings.grid_points % 2:
        raise ConfigError("Grid must have an even number >= 16 of points", field="beam.grid_points")
    return settings


def _cloud(doc: Dict, atom: AtomSettings) -> Optional[CloudSpec]:
    if 'cloud' not in doc:
        return None
    section = dict(_known(_section(doc, 'cloud'), 'cloud', ('n_atoms', 'sigma0', 'temperature', 'seed')))
    sigma0 = section.get('sigma0')
    if _is_number(sigma0):
        section['sigma0'] = (sigma0,) * 3
    elif isinstance(sigma0, list):
        section['sigma0'] = tuple(sigma0)
    if 'n_atoms' in section:
        section['n_atoms'] = int(section['n_atoms'])
    section["atom_mass"] = atom.mass
    return _build('cloud', CloudSpec, **section)


def _sequence(doc: Dict) -> SequenceSettings:
    section = _known(_section(doc, 'sequence', required=True), 'sequence',
                     ('scheme', 'tau_1', 'tau_ill', 'tau_2', 'detuning', 'power', 'beta0', 'alpha0',
                      'max_saturation', 'shaping_axis', 'method', 'density_mode'))
    scheme = section.get('scheme')
    if scheme not in SCHEMES:
        raise ConfigError(f"Scheme must be one of {SCHEMES}, got {scheme!r}", field="sequence.scheme")
    for key in ('tau_1', 'tau_ill', 'tau_2', 'power'):
        if section.get(key, 0) < 0:
            raise ConfigError("Value must be non-negative", field=f"sequence.{key}")
    _positive(section.get('beta0'), "sequence.beta0")
    _positive(section.get('alpha0'), "sequence.alpha0")
    if section.get('method', 'analytic') not in DARK_METHODS:
        raise ConfigError(f"Method must be one of {DARK_METHODS}", field="sequence.method")
    return _build('sequence', SequenceSettings, **section)


def _imaging(doc: Dict) -> Tuple[ImagingConfig, str]:
    section = dict(_known(_section(doc, 'imaging'), 'imaging',
                          ('angle', 'pixel', 'frame', 'noise', 'noise_seed', 'counts', 'dark_counts', 'shots',
                           'blur', 'atoms_per_sample', 'normalization')))
    normalization = section.pop('normalization', 'first')
    if normalization not in NORMALIZATIONS:
        raise ConfigError(f"Normalization must be one of {NORMALIZATIONS}", field="imaging.normalization")
    noise = section.pop('noise', 'none')
    if noise not in NOISE_MODELS:
        raise ConfigError(f"Noise model must be one of {NOISE_MODELS}", field="imaging.noise")
    frame = section.pop('frame', None)
    if frame is not None:
        if not (isinstance(frame, list) and len(frame) == 2 and all(isinstance(v, int) for v in frame)):
            raise ConfigError("Frame must be [width, height] in pixels", field="imaging.frame")
        section['n_px'] = tuple(frame)
    return _build('imaging', ImagingConfig, noise_model=noise, **section), normalization


def _sweep(doc: Dict, scheme: str) -> SweepSettings:
    section = _section(doc, 'sweep', required=True)
    value_keys = [k for k in section if k.startswith('values')]
    if len(value_keys) != 1 or set(section) - {'parameter', *value_keys}:
        raise ConfigError("Sweep needs exactly one parameter and one values list", field="sweep")
    parameter = section.get('parameter')
    if parameter not in SWEEP_PARAMETERS[scheme]:
        raise ConfigError(f"Scheme '{scheme}' sweeps one of {SWEEP_PARAMETERS[scheme]}, got {parameter!r}",
                          field="sweep.parameter")
    values = section[value_keys[0]]
    if not isinstance(values, list) or not values:
        raise ConfigError("Sweep values list is empty", field=f"sweep.{value_keys[0]}")
    if not all(_is_number(v) for v in values):
        raise ConfigError("Sweep values must be numbers", field=f"sweep.{value_keys[0]}")
    return SweepSettings(parameter, tuple(float(v) for v in values))


def _fit(doc: Dict) -> FitSettings:
    section = _known(_section(doc, 'fit'), 'fit', ('enabled', 'sigma0'))
    _positive(section.get('sigma0'), "fit.sigma0")
    return _build('fit', FitSettings, **section)


def _output(doc: Dict) -> OutputSettings:
    section = dict(_known(_section(doc, 'output'), 'output',
                          ('directory', 'formats', 'log_dir', 'trajectory', 'snapshot')))
    formats = section.pop('formats', None)
    if formats is not None:
        if not isinstance(formats, list) or set(formats) - set(FORMATS):
            raise ConfigError(f"Formats must be a list drawn from {FORMATS}", field="output.formats")
        section['formats'] = tuple(formats)
    trajectory = section.pop('trajectory', None)
    if trajectory is not None:
        _known(trajectory, 'output.trajectory', ('interval', 'atoms'))
        _positive(trajectory.get('interval'), "output.trajectory.interval")
        section['trajectory_interval'] = trajectory.get('interval')
        section['trajectory_atoms'] = int(trajectory.get('atoms', 10))
    return _build('output', OutputSettings, **section)


def parse_config(raw: Dict[str, Any]) -> ExperimentConfig:
    """
    Validate a raw (unit-suffixed) configuration document

    Raises:
        ConfigError: naming the offending field
    """
    if not isinstance(raw, dict):
        raise ConfigError("Configuration must be a JSON object")
    doc = convert_units(raw)
    _known(doc, 'config', ('name', 'atom', 'beam', 'cloud', 'sequence', 'imaging', 'sweep', 'fit', 'output'))
    sequence = _sequence(doc)
    atom = _atom(doc)
    beam = _beam(doc)
    cloud = _cloud(doc, atom)
    if sequence.scheme == "beam" and beam is None:
        raise ConfigError("Scheme 'beam' needs a beam section", field="beam")
    if sequence.scheme in ("dynamic", "dark") and cloud is None:
        raise ConfigError(f"Scheme '{sequence.scheme}' needs a cloud section", field="cloud")
    if sequence.scheme in ("dynamic", "dark") and sequence.beta0 is None and sequence.alpha0 is None:
        raise ConfigError("Give the core curvature as beta0 or alpha0", field="sequence.beta0")
    imaging, normalization = _imaging(doc)
    config = ExperimentConfig(
        name=str(doc.get('name', 'experiment')),
        atom=atom,
        cloud=cloud,
        beam=beam,
        sequence=sequence,
        imaging=imaging,
        normalization=normalization,
        sweep=_sweep(doc, sequence.scheme),
        fit=_fit(doc),
        output=_output(doc),
        document=raw,
    )
    logger.debug(f"Parsed configuration '{config.name}' ({sequence.scheme} scheme, "
                 f"{len(config.sweep.values)} sweep points)")
    return config


def _line_of(text: str, field_path: Optional[str]) -> Optional[int]:
    """Line of the first occurrence of the last key of a field path, matching suffixed spellings"""
    if not field_path:
        return None
    key = field_path.split('.')[-1]
    pattern = re.compile(r'"' + re.escape(key) + r'(_[A-Za-z0-9_]+)?"\s*:')
    for number, line in enumerate(text.splitlines(), start=1):
        if pattern.search(line):
            return number
    return None


def load_config_text(text: str) -> ExperimentConfig:
    """Parse a configuration from JSON text"""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON: {e.msg}", line=e.lineno) from e
    try:
        return parse_config(raw)
    except ConfigError as e:
        if e.line is None and e.field:
            raise ConfigError(str(e).split(' [field:')[0], field=e.field, line=_line_of(text, e.field)) from e
        raise


def load_config(path) -> ExperimentConfig:
    """
    Load an experiment configuration file

    Args:
        path: JSON file

    Returns:
        ExperimentConfig in SI units
    """
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except FileNotFoundError as e:
        logger.error(f"Config file not found: {path}")
        raise ConfigError(f"Config file not found: {path}") from e
    config = load_config_text(text)
    logger.info(f"Config loaded: {path} ({config.name})")
    return config
