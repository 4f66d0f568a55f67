"""
CSV artifacts, text reports and the run manifest.

Every CSV starts with a versioned comment line naming its column contract;
the manifest records the subcommand, the config echo, the seed and the
SHA-256 of each artifact so a run can be repeated and compared.
"""

import hashlib
import logging
from pathlib import Path
from typing import Iterable, Optional

import pandas as pd
import yaml

from services.errors import ConfigurationError


logger = logging.getLogger(__name__)


CSV_VERSION = "v1"
FLOAT_FORMAT = "%.12g"
MANIFEST_NAME = "manifest.yaml"


def write_csv(frame: pd.DataFrame, path: Path, kind: str) -> Path:
    """Write `frame` under a '# gdesk-csv v1 <kind>' header line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(f"# gdesk-csv {CSV_VERSION} {kind}\n")
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def read_csv(path: Path) -> tuple[str, pd.DataFrame]:
    """
    Read a gdesk CSV.

    Returns:
        (kind, frame)
    """
    path = Path(path)
    with open(path) as f:
        header = f.readline().split()
    if len(header) != 4 or header[:2] != ["#", "gdesk-csv"]:
        raise ConfigurationError(f"{path} is not a gdesk CSV")
    if header[2] != CSV_VERSION:
        raise ConfigurationError(f"{path}: unsupported CSV version {header[2]}")
    return header[3], pd.read_csv(path, skiprows=1)


def write_report(lines: Iterable[str], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: Path, subcommand: str, config: dict, seed: int,
                   artifacts: Iterable[Path]) -> Path:
    """Write manifest.yaml listing artifacts by name with their checksums."""
    out_dir = Path(out_dir)
    manifest = {
        "format": f"gdesk-manifest {CSV_VERSION}",
        "subcommand": subcommand,
        "seed": int(seed),
        "config": config,
        "artifacts": {Path(p).name: sha256_file(Path(p)) for p in artifacts},
    }
    path = out_dir / MANIFEST_NAME
    with open(path, "w") as f:
        yaml.safe_dump(manifest, f, default_flow_style=False, sort_keys=True)
    logger.info(f"Manifest written to {path} ({len(manifest['artifacts'])} artifacts)")
    return path


def read_manifest(path: Path) -> dict:
    """
    Load a run manifest.

    Raises:
        ConfigurationError: If the file is missing, unparsable or incomplete
    """
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise ConfigurationError(f"No manifest at {path}")
    try:
        with open(path) as f:
            manifest = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Error parsing manifest {path}: {e}") from e
    missing = [k for k in ("subcommand", "seed", "config", "artifacts") if k not in (manifest or {})]
    if missing:
        raise ConfigurationError(f"Manifest {path} lacks {missing}")
    return manifest


def compare_checksums(expected: dict[str, str], out_dir: Path) -> list[str]:
    """Names of artifacts whose checksum differs or that are missing."""
    mismatched = []
    for name, checksum in sorted(expected.items()):
        path = Path(out_dir) / name
        actual: Optional[str] = sha256_file(path) if path.exists() else None
        if actual != checksum:
            mismatched.append(name)
    return mismatched
