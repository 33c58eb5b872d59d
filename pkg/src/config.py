"""
Experiment configuration.

Typed sections loaded from a TOML file, with ``MASKSIM_<SECTION>__<KEY>``
environment variables taking precedence over file values.
"""
import logging
from enum import Enum
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import toml
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .addressing import MAX_CONCURRENT_APPS
from .workload import SyntheticSpec

logger = logging.getLogger(__name__)

ENV_PREFIX = "MASKSIM_"


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key

    @classmethod
    def from_validation(cls, error: ValidationError) -> "ConfigError":
        first = error.errors()[0]
        key = ".".join(str(part) for part in first["loc"])
        extra = f" (+{error.error_count() - 1} more)" if error.error_count() > 1 else ""
        return cls(f"{first['msg']}{extra}", key=key or None)


class Design(str, Enum):
    STATIC = "Static"
    GPU_MMU = "GPU-MMU"
    MASK_TLB = "MASK-TLB"
    MASK_CACHE = "MASK-Cache"
    MASK_DRAM = "MASK-DRAM"
    MASK_FULL = "MASK-Full"
    IDEAL = "Ideal"
    PWC_BASELINE = "PWC-baseline"


class DesignFlags(BaseModel):
    """Independent switches composing a memory-hierarchy design."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    shared_l2_tlb: bool = True
    tlb_tokens: bool = False
    l2_bypass: bool = False
    dram_scheduler: bool = False
    ideal_tlb: bool = False
    static_partition: bool = False
    page_walk_cache: bool = False


DESIGN_FLAGS: Dict[Design, DesignFlags] = {
    Design.STATIC: DesignFlags(static_partition=True),
    Design.GPU_MMU: DesignFlags(),
    Design.MASK_TLB: DesignFlags(tlb_tokens=True),
    Design.MASK_CACHE: DesignFlags(l2_bypass=True),
    Design.MASK_DRAM: DesignFlags(dram_scheduler=True),
    Design.MASK_FULL: DesignFlags(tlb_tokens=True, l2_bypass=True, dram_scheduler=True),
    Design.IDEAL: DesignFlags(ideal_tlb=True),
    Design.PWC_BASELINE: DesignFlags(shared_l2_tlb=False, page_walk_cache=True),
}


class HardwareConfig(BaseModel):
    """Machine parameters; defaults are the 30-core, 8-partition baseline GPU."""
    model_config = ConfigDict(extra="forbid")

    num_cores: int = Field(30, ge=1)
    warps_per_core: int = Field(64, ge=1)
    memory_partitions: int = Field(8, ge=1)

    l1_tlb_entries: int = Field(64, ge=0)
    l1_tlb_assoc: int = Field(0, ge=0)
    l1_tlb_latency: int = Field(1, ge=1)
    l2_tlb_entries: int = Field(512, ge=0)
    l2_tlb_assoc: int = Field(16, ge=0)
    l2_tlb_latency: int = Field(10, ge=1)
    l2_tlb_ports_per_partition: int = Field(2, ge=1)
    bypass_cache_entries: int = Field(32, ge=0)

    l2_cache_kb: int = Field(2048, ge=1)
    l2_cache_assoc: int = Field(16, ge=1)
    l2_cache_line: int = Field(128, ge=8)
    l2_cache_banks_per_partition: int = Field(2, ge=1)
    l2_cache_latency: int = Field(10, ge=1)

    dram_channels: int = Field(8, ge=1)
    dram_banks: int = Field(8, ge=1)
    dram_row_size: int = Field(2048, ge=128)
    dram_row_hit_latency: int = Field(20, ge=1)
    dram_row_miss_latency: int = Field(60, ge=1)
    dram_burst_cycles: int = Field(2, ge=1)
    dram_row_policy: Literal["open", "closed"] = "open"
    golden_queue_entries: int = Field(16, ge=1)
    silver_queue_entries: int = Field(64, ge=1)
    normal_queue_entries: int = Field(192, ge=1)

    walker_threads: int = Field(64, ge=1)
    pwc_entries: int = Field(1024, ge=0)
    pwc_assoc: int = Field(16, ge=0)
    pwc_latency: int = Field(1, ge=0)
    physical_memory_mb: int = Field(4096, ge=1)

    @property
    def l2_tlb_ports(self) -> int:
        return self.l2_tlb_ports_per_partition * self.memory_partitions

    @property
    def l2_cache_banks(self) -> int:
        return self.l2_cache_banks_per_partition * self.memory_partitions

    @property
    def physical_frames(self) -> int:
        return self.physical_memory_mb * 256


class MaskConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epoch_length: int = Field(100_000, ge=1)
    initial_tokens: float = Field(0.8, ge=0.0, le=1.0)
    # None: 1/16 of each application's warps; 0 freezes the first epoch's count
    token_step: Optional[int] = Field(None, ge=0)
    thres_max: int = Field(500, ge=0)
    silver_idle_window: int = Field(1000, ge=1)
    bypass_min_samples: int = Field(32, ge=1)


class DesignConfig(BaseModel):
    """Designs to evaluate, with optional per-flag overrides applied to all of them."""
    model_config = ConfigDict(extra="forbid")

    names: List[Design] = Field(default_factory=lambda: [Design.GPU_MMU], min_length=1)
    shared_l2_tlb: Optional[bool] = None
    tlb_tokens: Optional[bool] = None
    l2_bypass: Optional[bool] = None
    dram_scheduler: Optional[bool] = None
    page_walk_cache: Optional[bool] = None

    def flags_for(self, design: Design) -> DesignFlags:
        overrides = {k: v for k, v in self.model_dump(exclude={"names"}).items() if v is not None}
        return DESIGN_FLAGS[design].model_copy(update=overrides)


class AppSpec(BaseModel):
    """One application: a trace file or an inline synthetic spec."""
    model_config = ConfigDict(extra="forbid")

    name: Optional[str] = None
    trace: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.trace is None) == (self.synthetic is None):
            raise ValueError("exactly one of 'trace' or 'synthetic' must be given")
        return self

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        return self.synthetic.name if self.synthetic is not None else Path(self.trace).stem


class WorkloadConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "workload"
    apps: List[AppSpec] = Field(default_factory=list, max_length=MAX_CONCURRENT_APPS)


class PartitionConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: Literal["equal", "explicit", "sweep"] = "equal"
    # core counts per app, in app order (explicit mode)
    cores: Optional[List[int]] = None

    @model_validator(mode="after")
    def _explicit_needs_cores(self):
        if self.mode == "explicit" and not self.cores:
            raise ValueError("explicit partition mode needs 'cores'")
        return self


class OutputConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    csv: Optional[str] = None
    format: Literal["text", "markdown", "json"] = "text"
    debug_counters: bool = False


class ExperimentConfig(BaseSettings):
    """Complete description of one experiment."""
    model_config = SettingsConfigDict(env_prefix=ENV_PREFIX, env_nested_delimiter="__",
                                      extra="forbid")

    seed: int = 1
    max_cycles: int = Field(20_000_000, ge=1)
    hardware: HardwareConfig = Field(default_factory=HardwareConfig)
    mask: MaskConfig = Field(default_factory=MaskConfig)
    design: DesignConfig = Field(default_factory=DesignConfig)
    workload: WorkloadConfig = Field(default_factory=WorkloadConfig)
    partition: PartitionConfig = Field(default_factory=PartitionConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    _base_dir: Path = PrivateAttr(default_factory=Path.cwd)

    @classmethod
    def settings_customise_sources(cls, settings_cls, init_settings, env_settings,
                                   dotenv_settings, file_secret_settings):
        # environment wins over file values passed as init kwargs
        return env_settings, init_settings

    @model_validator(mode="after")
    def _check_apps(self):
        n_apps = len(self.workload.apps)
        if self.partition.mode == "sweep" and n_apps != 2:
            raise ValueError(f"partition sweep needs exactly 2 apps, got {n_apps}")
        if self.partition.mode == "explicit" and self.partition.cores is not None:
            if len(self.partition.cores) != n_apps:
                raise ValueError(f"{len(self.partition.cores)} core counts for {n_apps} apps")
        return self

    @property
    def base_dir(self) -> Path:
        return self._base_dir

    def resolve_path(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        return path if path.is_absolute() else self._base_dir / path


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Load a TOML experiment config and apply environment overrides.

    Raises:
        ConfigError: If the file is unreadable, malformed or fails validation
    """
    path = Path(path)
    try:
        data = toml.load(path)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except (toml.TomlDecodeError, OSError) as e:
        raise ConfigError(f"cannot parse {path}: {e}")
    config = build_config(data)
    config._base_dir = path.parent
    logger.debug("loaded config %s (%d apps)", path, len(config.workload.apps))
    return config


def build_config(data: dict) -> ExperimentConfig:
    """Validate a config mapping, converting pydantic errors to ConfigError."""
    try:
        return ExperimentConfig(**data)
    except ValidationError as e:
        raise ConfigError.from_validation(e) from e
