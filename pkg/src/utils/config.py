"""
Configuration management for the P6LoWPAN codec and simulator

Loads configuration from config.yaml with environment variable overrides.
Provides singleton access to configuration throughout the application.
"""

import os
import yaml
from pathlib import Path
from typing import Any, Dict, Optional
from pydantic import BaseModel, Field, model_validator
from dotenv import load_dotenv

# 802.15.4 physical frame size; never configurable
MAX_FRAME_SIZE = 127

# IPv6 minimum MTU, the cap on every datagram in the repo
IPV6_MIN_MTU = 1280


class LinkConfig(BaseModel):
    """Abstract 802.15.4 link parameters"""
    frame_size: int = Field(default=MAX_FRAME_SIZE, ge=16, le=MAX_FRAME_SIZE)
    # Extended addresses, no security
    mac_overhead: int = Field(default=21, ge=0, le=MAX_FRAME_SIZE)

    @model_validator(mode="after")
    def validate_payload(self):
        if self.frame_size - self.mac_overhead < 16:
            raise ValueError("frame_size - mac_overhead must leave at least 16 octets")
        return self

    @property
    def mtu_payload(self) -> int:
        return self.frame_size - self.mac_overhead


class LimitsConfig(BaseModel):
    """Header decompression bounds"""
    max_expansion: int = Field(default=50, ge=0, le=IPV6_MIN_MTU)
    max_tunnel_depth: int = Field(default=1, ge=0, le=32)
    spec_max_decompression: int = Field(default=1200, ge=0, le=IPV6_MIN_MTU)


class ReassemblyConfig(BaseModel):
    """Fragment reassembly pool"""
    timeout_ticks: int = Field(default=60, ge=1)
    buffer_count: int = Field(default=2, ge=1, le=64)


class DiscoveryConfig(BaseModel):
    """Capability discovery"""
    neighbor_capacity: int = Field(default=16, ge=1)
    stale_after_ticks: Optional[int] = Field(default=None, ge=1)
    offending_prefix_len: int = Field(default=64, ge=1, le=1024)
    icmp_type: int = Field(default=200, ge=0, le=255)


class SimulationConfig(BaseModel):
    """Discrete-event simulator defaults"""
    seed: int = Field(default=0, ge=0)
    default_delay: int = Field(default=1, ge=0)
    default_loss: float = Field(default=0.0, ge=0.0, le=1.0)
    max_retransmissions: int = Field(default=1, ge=0, le=8)
    mesh_hops: int = Field(default=3, ge=1, le=14)
    max_pending: int = Field(default=16, ge=1)
    max_ticks: int = Field(default=100000, ge=1)


class LoggingConfig(BaseModel):
    """Logging configuration"""
    level: str = "WARNING"
    format: str = "text"
    file: Optional[str] = None
    max_bytes: int = Field(default=10 * 1024 * 1024, ge=0)
    backup_count: int = 5
    console: bool = True


class LowpanConfig(BaseModel):
    """Main P6LoWPAN configuration"""
    version: str = "0.1.0"
    link: LinkConfig = Field(default_factory=LinkConfig)
    limits: LimitsConfig = Field(default_factory=LimitsConfig)
    reassembly: ReassemblyConfig = Field(default_factory=ReassemblyConfig)
    discovery: DiscoveryConfig = Field(default_factory=DiscoveryConfig)
    simulation: SimulationConfig = Field(default_factory=SimulationConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)


class Config:
    """
    Configuration manager for P6LoWPAN

    Loads configuration from config.yaml and applies environment variable overrides.
    Provides singleton access to configuration.
    """

    _instance: Optional['Config'] = None
    _config: Optional[LowpanConfig] = None

    def __new__(cls):
        """Singleton pattern"""
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self):
        """Initialize configuration if not already loaded"""
        if self._config is None:
            self.load()

    def load(self, config_path: Optional[str] = None) -> None:
        """
        Load configuration from file and environment variables

        Args:
            config_path: Path to config.yaml (default: ./config.yaml)
        """
        load_dotenv()

        if config_path is None:
            config_path = os.getenv('P6LOWPAN_CONFIG_PATH', 'config.yaml')

        config_file = Path(config_path)

        config_dict: Dict[str, Any] = {}
        if config_file.exists():
            with open(config_file, 'r') as f:
                loaded = yaml.safe_load(f) or {}
            # Extract p6lowpan section if it exists
            config_dict = loaded.get('p6lowpan', loaded)

        config_dict = self._apply_env_overrides(config_dict)

        self._config = LowpanConfig(**config_dict)

    def _apply_env_overrides(self, config_dict: Dict[str, Any]) -> Dict[str, Any]:
        """
        Apply environment variable overrides to configuration

        Environment variables follow the pattern: P6LOWPAN_<KEY>
        Example: P6LOWPAN_LOG_LEVEL, P6LOWPAN_SEED
        """
        if log_level := os.getenv('P6LOWPAN_LOG_LEVEL'):
            config_dict.setdefault('logging', {})['level'] = log_level

        if seed := os.getenv('P6LOWPAN_SEED'):
            config_dict.setdefault('simulation', {})['seed'] = int(seed)

        if max_expansion := os.getenv('P6LOWPAN_MAX_EXPANSION'):
            config_dict.setdefault('limits', {})['max_expansion'] = int(max_expansion)

        return config_dict

    @property
    def lowpan(self) -> LowpanConfig:
        """Get P6LoWPAN configuration"""
        if self._config is None:
            self.load()
        return self._config

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get configuration value by dot-notation key

        Args:
            key: Configuration key in dot notation (e.g., 'limits.max_expansion')
            default: Default value if key not found

        Returns:
            Configuration value or default
        """
        value: Any = self.lowpan
        for part in key.split('.'):
            if hasattr(value, part):
                value = getattr(value, part)
            else:
                return default
        return value

    def reload(self, config_path: Optional[str] = None) -> None:
        """
        Reload configuration from file

        Args:
            config_path: Path to config.yaml
        """
        self._config = None
        self.load(config_path)

    def to_dict(self) -> Dict[str, Any]:
        """Convert configuration to dictionary"""
        return self.lowpan.model_dump()

    def __repr__(self) -> str:
        return f"Config(version={self.lowpan.version}, max_expansion={self.lowpan.limits.max_expansion})"


# Global configuration instance
_config_instance: Optional[Config] = None


def get_config() -> Config:
    """
    Get global configuration instance

    Returns:
        Config: Global configuration instance
    """
    global _config_instance
    if _config_instance is None:
        _config_instance = Config()
    return _config_instance


def reload_config(config_path: Optional[str] = None) -> Config:
    """
    Reload global configuration

    Args:
        config_path: Path to config.yaml

    Returns:
        Config: Reloaded configuration instance
    """
    config = get_config()
    config.reload(config_path)
    return config
