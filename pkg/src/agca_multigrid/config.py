"""Configuration management for AGCA multigrid runs."""

from enum import Enum
from pathlib import Path
from typing import Any, Optional

import yaml
from pydantic import ValidationError

from .models import RunConfig

HEADER = """\
# AGCA multigrid run configuration.
#
# mesh:        nx, ny macro cells on the unit square; levels = uniform refinements L.
# problem:     family 1..6 (sinker viscosities) or "poisson"; dynamic_ratio = eta_high/eta_low;
#              eval_mode one of analytic, interp_p1, mean_arithmetic, mean_harmonic,
#              mean_geometric.
# coarsening:  mode dca | agca | gca; nu = gradient threshold (.inf disables GCA).
# solver:      krylov (FGMRES), vcycle (Chebyshev smoother, coarsest CG), BFBT Z-solves.
# output:      directory for reports, CSVs and plots.
"""


def _plain(value: Any) -> Any:
    """Convert enums and tuples so safe_dump accepts them; floats (.inf) are kept."""
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _to_yaml(config: RunConfig) -> str:
    data = _plain(config.model_dump(exclude_none=True))
    return yaml.safe_dump(data, default_flow_style=False, sort_keys=False)


class ConfigManager:
    """Manages run configuration files."""

    DEFAULT_CONFIG_PATH = "agca.yaml"
    EFFECTIVE_CONFIG = "effective-config.yaml"

    def __init__(self, path: Optional[Path] = None):
        """Initialize the config manager.

        Args:
            path: Path of the YAML config file. If None, uses DEFAULT_CONFIG_PATH in the
                current directory.
        """
        self.config_path = Path(path) if path is not None else Path(self.DEFAULT_CONFIG_PATH)

    @staticmethod
    def parse(text: str) -> RunConfig:
        """Parse YAML text into a RunConfig.

        Raises:
            ValueError: If the YAML or the configuration is invalid.
        """
        # Parse YAML, then validate
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ValueError(f"Invalid YAML: {e}") from e
        if not isinstance(data, dict):
            raise ValueError("Invalid configuration: top level must be a mapping")
        try:
            return RunConfig(**data)
        except ValidationError as e:
            raise ValueError(f"Invalid configuration: {e}") from e

    def load(self) -> RunConfig:
        """Load configuration from file.

        Returns:
            RunConfig object.

        Raises:
            FileNotFoundError: If config file doesn't exist.
            ValueError: If config is invalid.
        """
        if not self.config_path.exists():
            raise FileNotFoundError(f"Config file not found: {self.config_path}")

        with open(self.config_path, "r") as f:
            return self.parse(f.read())

    def save(self, config: RunConfig) -> None:
        """Save configuration to file.

        Args:
            config: RunConfig object to save.
        """
        # Ensure directory exists
        self.config_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.config_path, "w") as f:
            f.write(HEADER)
            f.write(_to_yaml(config))

    def init(self) -> RunConfig:
        """Initialize a new configuration file with defaults.

        Returns:
            The initialized RunConfig.

        Raises:
            FileExistsError: If config file already exists.
        """
        if self.config_path.exists():
            raise FileExistsError(f"Config file already exists: {self.config_path}")

        # Create default config
        config = RunConfig()
        self.save(config)
        return config

    def load_or_init(self) -> RunConfig:
        """Load existing config or initialize a new one."""
        try:
            return self.load()
        except FileNotFoundError:
            return self.init()

    @classmethod
    def echo(cls, config: RunConfig, out_dir: Path) -> Path:
        """Write the effective configuration (after defaults) into an output directory.

        Args:
            config: The configuration a run used.
            out_dir: Output directory of the run.

        Returns:
            Path of the written file.
        """
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / cls.EFFECTIVE_CONFIG
        path.write_text(_to_yaml(config))
        return path
