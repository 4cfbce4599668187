"""
Export Manager - Writes run artifacts: CSV tables and images, 16-bit PGM images,
JSON manifests and fit reports, and optional plotly HTML figures
"""

import hashlib
import json
import logging
import os
import tempfile
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

FORMATS = ("csv", "pgm", "json", "html")
PGM_MAX = 65535
FLOAT_FORMAT = '%.10g'
VERSIONED_PACKAGES = ("numpy", "scipy", "pandas", "sympy", "plotly", "psutil")


def _to_builtin(value):
    """json default hook for numpy scalars and arrays"""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def config_hash(config: Dict) -> str:
    """sha256 of the canonical JSON form of a configuration"""
    canonical = json.dumps(config, sort_keys=True, separators=(',', ':'), default=_to_builtin)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def package_versions() -> Dict[str, Optional[str]]:
    versions = {}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    return versions


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    """Read a 16-bit binary PGM written by ExportManager.write_pgm"""
    raw = Path(path).read_bytes()
    header = raw.split(b'\n', 3)
    if header[0] != b'P5':
        raise ValueError(f"{path} is not a binary PGM")
    width, height = (int(v) for v in header[1].split())
    data = np.frombuffer(header[3], dtype='>u2', count=width * height)
    return data.reshape(height, width)


class ExportManager:
    """
    Writes the artifacts of a run into one output directory
    """

    def __init__(self, output_dir: str = "./output", formats: Iterable[str] = ("csv", "json")):
        """
        Initialize export manager

        Args:
            output_dir: Directory for run artifacts
            formats: Enabled artifact formats, a subset of csv, pgm, json, html
        """
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.formats = tuple(formats)
        unknown = set(self.formats) - set(FORMATS)
        if unknown:
            raise ValueError(f"Unknown output formats: {sorted(unknown)}")
        self.written: List[Path] = []
        logger.info(f"ExportManager initialized (output: {self.output_dir}, formats: {', '.join(self.formats)})")

    def enabled(self, fmt: str) -> bool:
        return fmt in self.formats

    def _atomic_write(self, name: str, payload: Union[str, bytes]) -> Path:
        """Write through a temporary file in the same directory, then rename"""
        target = self.output_dir / name
        target.parent.mkdir(parents=True, exist_ok=True)
        mode = 'wb' if isinstance(payload, bytes) else 'w'
        fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.")
        try:
            with os.fdopen(fd, mode, **({} if mode == 'wb' else {'newline': '', 'encoding': 'utf-8'})) as f:
                f.write(payload)
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.written.append(target)
        logger.debug(f"Wrote {target}")
        return target

    def write_table(self, name: str, table: Union[pd.DataFrame, List[Dict]]) -> Optional[Path]:
        """
        Export a summary table to CSV

        Args:
            name: File name relative to the output directory
            table: DataFrame or list of row dictionaries

        Returns:
            Path to the written file, or None when CSV output is disabled
        """
        if not self.enabled("csv"):
            return None
        frame = table if isinstance(table, pd.DataFrame) else pd.DataFrame(table)
        path = self._atomic_write(name, frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator='\n'))
        logger.info(f"Exported table ({len(frame)} rows): {path}")
        return path

    def write_image_csv(self, name: str, image: np.ndarray) -> Optional[Path]:
        """Export an image as a headerless CSV grid, one image row per line"""
        if not self.enabled("csv"):
            return None
        text = pd.DataFrame(np.asarray(image)).to_csv(index=False, header=False, float_format=FLOAT_FORMAT,
                                                      lineterminator='\n')
        return self._atomic_write(name, text)

    def write_pgm(self, name: str, image: np.ndarray, full_scale: Optional[float] = None) -> Optional[Path]:
        """
        Export an image as a 16-bit big-endian binary PGM (P5)

        Args:
            name: File name relative to the output directory
            image: 2D array; NaN pixels are written as 0
            full_scale: Value mapped to 65535; defaults to the image maximum
        """
        if not self.enabled("pgm"):
            return None
        data = np.nan_to_num(np.asarray(image, dtype=float), nan=0.0)
        scale = full_scale if full_scale else float(np.max(data))
        if scale <= 0:
            scale = 1.0
        counts = np.clip(np.rint(data / scale * PGM_MAX), 0, PGM_MAX).astype('>u2')
        height, width = counts.shape
        header = f"P5\n{width} {height}\n{PGM_MAX}\n".encode('ascii')
        return self._atomic_write(name, header + counts.tobytes())

    def write_json(self, name: str, payload: Dict) -> Optional[Path]:
        """Export a fit report or other JSON document"""
        if not self.enabled("json"):
            return None
        return self._atomic_write(name, json.dumps(payload, indent=2, sort_keys=True, default=_to_builtin) + "\n")

    def write_manifest(self, config: Dict, seed: int, extra: Optional[Dict] = None) -> Path:
        """
        Write manifest.json describing the run

        The manifest is always written, independent of the enabled formats.
        """
        manifest = {
            'config_sha256': config_hash(config),
            'seed': seed,
            'versions': package_versions(),
            'timestamp': datetime.now(timezone.utc).isoformat(),
            'artifacts': sorted(str(p.relative_to(self.output_dir)) for p in self.written),
        }
        if extra:
            manifest.update(extra)
        return self._atomic_write("manifest.json",
                                  json.dumps(manifest, indent=2, sort_keys=True, default=_to_builtin) + "\n")

    def write_html(self, name: str, figure) -> Optional[Path]:
        """Export a plotly figure as a standalone HTML page"""
        if not self.enabled("html"):
            return None
        return self._atomic_write(name, figure.to_html(include_plotlyjs='cdn', full_html=True))
