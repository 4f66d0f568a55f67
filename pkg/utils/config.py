"""
Experiment configuration for gdesk.

Handles loading, validation and defaults of the YAML experiment file.
"""

import os
import yaml
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Optional
from pathlib import Path

from models.band import VolatilityBand
from services.errors import ConfigurationError
from services.glattice import LatticeConfig, build_lattice


logger = logging.getLogger(__name__)


BACKENDS = ("lattice", "scenario")

# Roles a coefficient entry may fill, with the variables each may use.
COEFFICIENT_ROLES = {
    "b": ("x", "y"),
    "h": ("x", "y"),
    "sigma": ("x",),
    "f": ("x", "y", "z"),
    "g": ("x", "y", "z"),
    "terminal": ("x",),
    "barrier": ("x",),
    "phi": ("x",),
    "eta": ("x",),
}


@dataclass
class BandConfig:
    """Volatility band [sigma_lo, sigma_hi]."""
    sigma_lo: float = 0.5
    sigma_hi: float = 1.0

    def to_band(self) -> VolatilityBand:
        return VolatilityBand(float(self.sigma_lo), float(self.sigma_hi))


@dataclass
class GridConfig:
    """Time grid and lattice resolution."""
    horizon: float = 1.0
    steps: int = 200
    courant: float = 0.5
    width_sigmas: float = 6.0
    x0: float = 0.0

    def __post_init__(self):
        """Validate and constrain configuration values."""
        if self.horizon <= 0:
            raise ConfigurationError(f"grid.horizon must be positive, got {self.horizon}")
        if self.steps < 1:
            raise ConfigurationError(f"grid.steps must be >= 1, got {self.steps}")
        # Above 1/2 the explicit scheme loses monotonicity
        if not 0 < self.courant <= 0.5:
            logger.warning(f"grid.courant {self.courant} outside (0, 0.5], using 0.5")
            self.courant = 0.5
        if self.width_sigmas < 3:
            logger.warning(f"grid.width_sigmas {self.width_sigmas} too narrow, using 3")
            self.width_sigmas = 3.0

    def lattice_config(self) -> LatticeConfig:
        return LatticeConfig(horizon=float(self.horizon), n_steps=int(self.steps), x0=float(self.x0),
                             courant=float(self.courant), width_sigmas=float(self.width_sigmas))


@dataclass
class FamilyConfig:
    """Scenario family: bang-bang depth, sample count and root seed."""
    depth: int = 1
    samples: int = 2000
    seed: int = 12345

    def __post_init__(self):
        if self.depth < 1:
            logger.warning(f"family.depth {self.depth} too low, using 1")
            self.depth = 1
        elif self.depth > 10:
            logger.warning(f"family.depth {self.depth} gives too many controls, using 10")
            self.depth = 10
        if self.samples < 1:
            logger.warning(f"family.samples {self.samples} too low, using 1")
            self.samples = 1
        if self.seed < 0:
            raise ConfigurationError(f"family.seed must be non-negative, got {self.seed}")


@dataclass
class ProblemConfig:
    """Built-in coupled problem and optional terminal transform."""
    name: str = "coupled_tanh"
    transform: Optional[str] = None


@dataclass
class ToleranceConfig:
    """Stopping tolerances and audit slack."""
    tol: float = 1e-5
    max_outer: int = 20
    inner_levels: int = 6
    slack_multiplier: float = 10.0
    penalty: float = 1e-2
    bdg_p: float = 2.0

    def __post_init__(self):
        if self.tol <= 0:
            raise ConfigurationError(f"tolerances.tol must be positive, got {self.tol}")
        if self.max_outer < 1:
            logger.warning(f"tolerances.max_outer {self.max_outer} too low, using 1")
            self.max_outer = 1
        if self.inner_levels < 1:
            logger.warning(f"tolerances.inner_levels {self.inner_levels} too low, using 1")
            self.inner_levels = 1
        if self.slack_multiplier <= 0:
            raise ConfigurationError("tolerances.slack_multiplier must be positive")
        if self.penalty <= 0:
            raise ConfigurationError(f"tolerances.penalty must be positive, got {self.penalty}")


@dataclass
class InfConvConfig:
    """Ladder demonstration: coefficient, number of levels and query range."""
    coefficient: str = "square"
    levels: int = 4
    lo: float = -2.0
    hi: float = 2.0
    points: int = 41

    def __post_init__(self):
        if self.levels < 1:
            logger.warning(f"infconv.levels {self.levels} too low, using 1")
            self.levels = 1
        if self.points < 2:
            logger.warning(f"infconv.points {self.points} too low, using 2")
            self.points = 2
        if self.lo >= self.hi:
            raise ConfigurationError(f"infconv range is empty: [{self.lo}, {self.hi}]")


@dataclass
class OutputConfig:
    """Where CSVs and the manifest are written."""
    dir: str = "out"


@dataclass
class ExperimentConfig:
    """Main experiment configuration."""
    band: BandConfig = field(default_factory=BandConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    family: FamilyConfig = field(default_factory=FamilyConfig)
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    coefficients: dict[str, Any] = field(default_factory=dict)
    tolerances: ToleranceConfig = field(default_factory=ToleranceConfig)
    infconv: InfConvConfig = field(default_factory=InfConvConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    backend: str = "lattice"

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigurationError(f"backend must be one of {BACKENDS}, got '{self.backend}'")
        unknown = [role for role in self.coefficients if role not in COEFFICIENT_ROLES]
        if unknown:
            raise ConfigurationError(f"Unknown coefficient roles {unknown}; known: {list(COEFFICIENT_ROLES)}")

    def validate(self) -> None:
        """Pre-validate the band and the lattice stability bound."""
        band = self.band.to_band()
        build_lattice(band, self.grid.lattice_config())

    def to_dict(self) -> dict:
        return asdict(self)


SECTIONS = {
    "band": BandConfig,
    "grid": GridConfig,
    "family": FamilyConfig,
    "problem": ProblemConfig,
    "tolerances": ToleranceConfig,
    "infconv": InfConvConfig,
    "output": OutputConfig,
}


def get_config_path() -> Path:
    """Get the default configuration file path."""
    config_home = os.environ.get("XDG_CONFIG_HOME", os.path.expanduser("~/.config"))
    return Path(config_home) / "gdesk" / "experiment.yaml"


def _section(cls, name: str, data: Any):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigurationError(f"Section '{name}' must be a mapping")
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            logger.warning(f"Ignoring unknown key '{name}.{key}'")
    try:
        return cls(**{k: v for k, v in data.items() if k in known})
    except TypeError as e:
        raise ConfigurationError(f"Invalid section '{name}': {e}") from e


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from parsed YAML data."""
    if not isinstance(data, dict):
        raise ConfigurationError("Config root must be a mapping")
    for key in data:
        if key not in SECTIONS and key not in ("coefficients", "backend"):
            logger.warning(f"Ignoring unknown section '{key}'")
    sections = {name: _section(cls, name, data.get(name)) for name, cls in SECTIONS.items()}
    coefficients = data.get("coefficients") or {}
    if not isinstance(coefficients, dict):
        raise ConfigurationError("Section 'coefficients' must be a mapping")
    return ExperimentConfig(coefficients=dict(coefficients), backend=data.get("backend", "lattice"), **sections)


def load_config(config_path: Optional[Path] = None) -> ExperimentConfig:
    """
    Load the experiment configuration from a YAML file.

    Falls back to defaults if the file doesn't exist.

    Raises:
        ConfigurationError: If the file cannot be parsed or holds invalid values
    """
    if config_path is None:
        config_path = get_config_path()
    config_path = Path(config_path)

    if not config_path.exists():
        logger.info(f"No config file found at {config_path}, using defaults")
        return ExperimentConfig()

    try:
        with open(config_path, 'r') as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Error parsing config file {config_path}: {e}") from e

    if data is None:
        logger.warning("Config file is empty, using defaults")
        return ExperimentConfig()

    config = config_from_dict(data)
    logger.info(f"Configuration loaded from {config_path}")
    return config


def save_config(config: ExperimentConfig, config_path: Path) -> None:
    """Save the configuration to a YAML file."""
    config_path = Path(config_path)
    config_path.parent.mkdir(parents=True, exist_ok=True)
    with open(config_path, 'w') as f:
        yaml.safe_dump(config.to_dict(), f, default_flow_style=False, sort_keys=True)
    logger.info(f"Configuration saved to {config_path}")


def apply_overrides(config: ExperimentConfig, seed: Optional[int] = None, out: Optional[str] = None,
                    tol: Optional[float] = None, steps: Optional[int] = None,
                    family_depth: Optional[int] = None, backend: Optional[str] = None) -> ExperimentConfig:
    """Return a config with command-line values taking precedence; None leaves a value alone."""
    data = config.to_dict()
    overrides = {
        ("family", "seed"): seed,
        ("output", "dir"): out,
        ("tolerances", "tol"): tol,
        ("grid", "steps"): steps,
        ("family", "depth"): family_depth,
    }
    for (section, key), value in overrides.items():
        if value is not None:
            logger.debug(f"Override {section}.{key} = {value}")
            data[section][key] = value
    if backend is not None:
        data["backend"] = backend
    return config_from_dict(data)
