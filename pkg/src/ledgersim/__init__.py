"""Deterministic time-stepped simulation of PoW blockchain attacks over gossip overlays."""

from .config import ConfigError, SimConfig, parse_config
from .engine import EventTrace, SimResult, run_simulation
from .metrics import MetricsRecord

__all__ = ["ConfigError", "EventTrace", "MetricsRecord", "SimConfig", "SimResult", "parse_config", "run_simulation"]
__version__ = "0.1.0"
