"""
Configuration management using Pydantic Settings.

Configuration is loaded from:
1. Environment variables (RTPROBE_*, nested with __)
2. ~/.rtprobe/config.yaml
"""

import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, Field
from pydantic_settings import BaseSettings, SettingsConfigDict

from .timing import DurationNs, PositiveDurationNs

logger = logging.getLogger(__name__)

_SECTIONS = ("bench", "load", "sysconfig", "experiment", "analysis")


def get_config_dir() -> Path:
    """Get the configuration directory (~/.rtprobe/)."""
    config_dir = Path(os.environ.get("RTPROBE_HOME", Path.home() / ".rtprobe"))
    config_dir.mkdir(parents=True, exist_ok=True)
    return config_dir


def load_yaml_config() -> dict[str, Any]:
    """Load configuration from YAML file."""
    config_file = get_config_dir() / "config.yaml"
    if config_file.exists():
        try:
            # Read with UTF-8 encoding, handle BOM
            content = config_file.read_text(encoding="utf-8-sig")
            return yaml.safe_load(content) or {}
        except yaml.YAMLError as e:
            print(f"Error parsing config file {config_file}: {e}", file=sys.stderr)
            raise
    return {}


class BenchSettings(BaseModel):
    """Cyclic benchmark defaults."""

    interval: PositiveDurationNs = Field(default=1_000_000, description="Cycle time")
    loops: int = Field(default=10_000_000, ge=0, description="Iterations per worker")
    priority: int = Field(default=98, ge=1, le=99, description="SCHED_FIFO priority")
    strict: bool = Field(default=False, description="Fail instead of degrading without RT privileges")
    warmup: int = Field(default=0, ge=0, description="Samples discarded at the start")
    distribute_offset: DurationNs = Field(default=0, description="Start stagger between workers")


class LoadSettings(BaseModel):
    """Load generator defaults."""

    mem_bytes: int = Field(default=256 * 1024 * 1024, gt=0, description="Bytes per allocation")
    hdd_bytes: int = Field(default=1024 * 1024 * 1024, gt=0, description="Bytes per scratch file")
    scratch_dir: Path = Field(
        default_factory=lambda: Path(tempfile.gettempdir()),
        description="Directory for disk worker files",
    )


class SysconfigSettings(BaseModel):
    """Host configuration paths and partition names."""

    cgroup_root: Path = Field(default=Path("/sys/fs/cgroup"), description="cgroup mount point")
    proc_root: Path = Field(default=Path("/proc"), description="procfs mount point")
    sys_root: Path = Field(default=Path("/sys"), description="sysfs mount point")
    rt_partition: str = Field(default="rtprobe-rt", description="cpuset for RT workloads")
    system_partition: str = Field(default="rtprobe-sys", description="cpuset for everything else")
    scope: Literal["host", "guest"] = Field(
        default="guest",
        description="Where this machine sits: hypervisor host or guest",
    )


class ExperimentSettings(BaseModel):
    """Experiment matrix runner settings."""

    settle_seconds: float = Field(default=10.0, ge=0, description="Quiet time between cases")
    load_ramp_seconds: float = Field(default=1.0, ge=0, description="Load warm-up before sampling")


class AnalysisSettings(BaseModel):
    """Statistics defaults."""

    bucket_width: PositiveDurationNs = Field(default=1_000, description="Histogram bucket width")
    buckets: int = Field(default=10_000, gt=0, description="Histogram buckets before overflow")
    statistic: str = Field(default="max", description="max, mean or qNN.NNN")


class Settings(BaseSettings):
    """Main application settings."""

    model_config = SettingsConfigDict(
        env_prefix="RTPROBE_",
        env_nested_delimiter="__",
    )

    # Sub-settings
    bench: BenchSettings = Field(default_factory=BenchSettings)
    load: LoadSettings = Field(default_factory=LoadSettings)
    sysconfig: SysconfigSettings = Field(default_factory=SysconfigSettings)
    experiment: ExperimentSettings = Field(default_factory=ExperimentSettings)
    analysis: AnalysisSettings = Field(default_factory=AnalysisSettings)

    # Paths
    data_dir: Path = Field(
        default_factory=get_config_dir,
        description="Data directory (~/.rtprobe/)",
    )
    config_path: Path = Field(
        default_factory=lambda: get_config_dir() / "config.yaml",
        description="Path to config file",
    )
    db_path: Path = Field(
        default_factory=lambda: get_config_dir() / "state.db",
        description="Path to SQLite state database",
    )

    # Logging
    log_level: str = Field(default="INFO", description="Logging level")
    log_file: Path | None = Field(
        default=None,
        description="Log file path (None for data_dir/rtprobe.log)",
    )

    @classmethod
    def load(cls) -> "Settings":
        """Load settings from YAML and environment."""
        yaml_config = load_yaml_config()

        # Flatten nested config for Pydantic
        env_overrides = {}
        for section in _SECTIONS:
            for key, value in (yaml_config.get(section) or {}).items():
                env_overrides[f"{section}__{key}"] = value

        for key in ("log_level", "log_file"):
            if key in yaml_config:
                env_overrides[key] = yaml_config[key]

        # Set environment variables for Pydantic to pick up
        for key, value in env_overrides.items():
            env_key = f"RTPROBE_{key.upper()}"
            if env_key not in os.environ:
                os.environ[env_key] = str(value)

        return cls()


# Global settings instance
_settings: Settings | None = None


def get_settings() -> Settings:
    """Get the global settings instance."""
    global _settings
    if _settings is None:
        _settings = Settings.load()
    return _settings


def setup_logging(settings: Settings):
    """Configure logging based on settings. stdout stays free for command output."""
    log_level = getattr(logging, settings.log_level.upper(), logging.INFO)
    log_file = settings.log_file or settings.data_dir / "rtprobe.log"
    log_file.parent.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=log_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[
            logging.StreamHandler(sys.stderr),
            logging.FileHandler(log_file, mode="a", encoding="utf-8"),
        ],
    )
    # Reduce noise
    logging.getLogger("aiosqlite").setLevel(logging.WARNING)
    logging.getLogger("asyncio").setLevel(logging.WARNING)


def create_default_config() -> Path | None:
    """Create a default configuration file."""
    config_file = get_config_dir() / "config.yaml"

    default_config = """# rtprobe configuration
# Durations accept ns integers or unit strings: 500us, 1ms, 2s

bench:
  interval: 1ms
  loops: 10000000
  priority: 98
  strict: false      # true: exit 2 instead of running without RT privileges
  warmup: 0

load:
  mem_bytes: 268435456    # 256MiB per allocation
  hdd_bytes: 1073741824   # 1GiB per scratch file

sysconfig:
  cgroup_root: /sys/fs/cgroup
  rt_partition: rtprobe-rt
  system_partition: rtprobe-sys
  scope: guest       # or 'host' when running on the hypervisor host / bare metal

experiment:
  settle_seconds: 10
  load_ramp_seconds: 1

analysis:
  bucket_width: 1us
  buckets: 10000
  statistic: max     # max, mean or q99.999

log_level: INFO
"""

    if not config_file.exists():
        with open(config_file, "w", encoding="utf-8") as f:
            f.write(default_config)
        return config_file

    return None
