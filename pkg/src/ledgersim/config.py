"""Experiment configuration: sectioned ``key=value`` files with strict validation.

Example::

    [topology]
    kind = random
    nodes = 500
    edges = 2000

    [attack]
    attack = fifty_one
    attacker_hashrate = 0.30

Unknown sections or keys, type mismatches and out-of-range values raise
:class:`ConfigError` naming the offending key.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .agents import Attack, AttackConfig
from .chain import MiningParams
from .gossip import Protocol, ProtocolParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TopologyConfig:
    kind: str = "random"
    nodes: int = 500
    edges: int = 2000
    k: int = 8
    beta: float = 0.1

    def __post_init__(self):
        if self.kind not in ("random", "small_world"):
            raise ValueError("kind must be 'random' or 'small_world'")
        if self.nodes < 2:
            raise ValueError("nodes must be >= 2")
        if self.kind == "random":
            if self.edges < self.nodes - 1:
                raise ValueError("edges must be >= nodes - 1 for a connected graph")
            if self.edges > self.nodes * (self.nodes - 1) // 2:
                raise ValueError("edges exceed the complete-graph bound")
        else:
            if self.k % 2 or self.k < 2 or self.k >= self.nodes:
                raise ValueError("k must be even with 2 <= k < nodes")
            if not 0.0 <= self.beta <= 1.0:
                raise ValueError("beta must lie in [0,1]")

    @property
    def edge_count(self) -> int:
        return self.edges if self.kind == "random" else self.nodes * self.k // 2


@dataclass(frozen=True)
class RunConfig:
    seed: int = 1
    workers: int = 1
    jobs: int = 1
    repetitions: int = 20
    substeps_per_step: int = 32
    trace: str = "chain"
    out: str = "results"
    h_values: tuple[int, ...] = tuple(range(1, 100))
    pools: str = "both"
    sybil_fractions: tuple[float, ...] = (0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50)
    protocols: tuple[str, ...] = (
        "broadcast",
        "fixed_probability:0.5",
        "probabilistic_broadcast:0.5",
        "dandelion",
        "dandelion_pm",
    )

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not 1 <= self.substeps_per_step < 1024:
            raise ValueError("substeps_per_step must lie in [1, 1023]")
        if self.trace not in ("chain", "full"):
            raise ValueError("trace must be 'chain' or 'full'")
        if self.pools not in ("on", "off", "both"):
            raise ValueError("pools must be 'on', 'off' or 'both'")
        if any(not 1 <= h <= 99 for h in self.h_values):
            raise ValueError("h_values must lie in [1,99]")
        if any(not 0.0 <= f < 1.0 for f in self.sybil_fractions):
            raise ValueError("sybil_fractions must lie in [0,1)")
        for spec in self.protocols:
            protocol_from_spec(spec)


@dataclass(frozen=True)
class SimConfig:
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    mining: MiningParams = field(default_factory=MiningParams)
    attack: AttackConfig = field(default_factory=AttackConfig)
    run: RunConfig = field(default_factory=RunConfig)

    @property
    def seed(self) -> int:
        return self.run.seed

    def with_(self, **changes: Any) -> SimConfig:
        """Copy with ``section__key=value`` replacements, e.g. ``attack__victim=3``."""
        grouped: dict[str, dict[str, Any]] = {}
        for name, value in changes.items():
            section, key = name.split("__", 1)
            grouped.setdefault(section, {})[key] = value
        return replace(self, **{s: replace(getattr(self, s), **kv) for s, kv in grouped.items()})

    def to_text(self) -> str:
        out = []
        for section in SECTIONS:
            out.append(f"[{section}]")
            obj = getattr(self, section)
            for f in fields(obj):
                out.append(f"{f.name} = {_format(getattr(obj, f.name))}")
            out.append("")
        return "\n".join(out)

    def digest(self) -> str:
        """Short hash of the resolved configuration.

        Execution-only settings (output directory, workers, jobs) are excluded
        because they never change results.
        """
        cfg = self.with_(run__out="", run__workers=1, run__jobs=1)
        return hashlib.sha256(cfg.to_text().encode()).hexdigest()[:12]


SECTIONS = ("topology", "protocol", "mining", "attack", "run")
_CLASSES = {
    "topology": TopologyConfig,
    "protocol": ProtocolParams,
    "mining": MiningParams,
    "attack": AttackConfig,
    "run": RunConfig,
}


def protocol_from_spec(spec: str, base: ProtocolParams | None = None) -> ProtocolParams:
    """Parse ``name[:p]`` / ``dandelion[:stem_hops]`` sweep entries."""
    base = base or ProtocolParams()
    name, _, arg = spec.strip().partition(":")
    try:
        proto = Protocol(name)
    except ValueError:
        raise ConfigError(f"unknown protocol {name!r} in protocols") from None
    try:
        if not arg:
            return replace(base, protocol=proto)
        if proto in (Protocol.FIXED_PROBABILITY, Protocol.PROBABILISTIC_BROADCAST):
            return replace(base, protocol=proto, p=float(arg))
        if proto.is_dandelion:
            return replace(base, protocol=proto, stem_hops=int(arg))
    except ValueError as exc:
        raise ConfigError(f"protocols entry {spec!r}: {exc}") from None
    raise ConfigError(f"protocols entry {spec!r}: {name} takes no argument")


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if hasattr(value, "value"):
        return str(value.value)
    if value is None:
        return "none"
    return str(value)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            a, b = part.split("..", 1)
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return tuple(out)


def _parse_value(section: str, key: str, text: str, default: Any) -> Any:
    text = text.strip()
    if key == "pool_shares":
        return None if text.lower() in ("", "none") else tuple(float(x) for x in text.split(","))
    if key == "h_values":
        return _parse_int_list(text)
    if key == "sybil_fractions":
        return tuple(float(x) for x in text.split(",") if x.strip())
    if key == "protocols":
        return tuple(x.strip() for x in text.split(",") if x.strip())
    if key == "protocol":
        return Protocol(text)
    if key == "attack":
        return Attack(text)
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text, 0)
    if isinstance(default, float):
        return float(text)
    return text


def _key_index() -> dict[str, list[str]]:
    index: dict[str, list[str]] = {}
    for section, cls in _CLASSES.items():
        for f in fields(cls):
            index.setdefault(f.name, []).append(section)
    return index


def _apply(values: dict[str, dict[str, str]], section: str, key: str, raw: str) -> None:
    if section not in _CLASSES:
        raise ConfigError(f"unknown section [{section}]")
    if key not in {f.name for f in fields(_CLASSES[section])}:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    values.setdefault(section, {})[key] = raw


def parse_config(path: str | Path | None = None, overrides: list[str] | tuple[str, ...] = ()) -> SimConfig:
    """Load a config file (optional) and apply ``key=value`` overrides on top.

    Override keys may be ``section.key`` or a bare key that is unique across
    sections.
    """
    raw: dict[str, dict[str, str]] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        parser = configparser.ConfigParser(
            interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"), inline_comment_prefixes=("#", ";")
        )
        parser.optionxform = str
        try:
            parser.read_string(p.read_text(), source=str(p))
        except configparser.Error as exc:
            raise ConfigError(f"{p}: malformed config: {exc}") from None
        for section in parser.sections():
            if section not in _CLASSES:
                raise ConfigError(f"unknown section [{section}]")
            for key, value in parser.items(section):
                _apply(raw, section, key, value)
    index = _key_index()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        key = key.strip()
        if "." in key:
            section, key = key.split(".", 1)
        else:
            sections = index.get(key)
            if not sections:
                raise ConfigError(f"unknown key {key!r}")
            if len(sections) > 1:
                raise ConfigError(f"key {key!r} is ambiguous; use one of " + ", ".join(f"{s}.{key}" for s in sections))
            section = sections[0]
        _apply(raw, section, key, value)
    return build_config(raw)


def build_config(raw: dict[str, dict[str, str]]) -> SimConfig:
    parts = {}
    for section, cls in _CLASSES.items():
        defaults = cls()
        kwargs = {}
        for key, text in raw.get(section, {}).items():
            try:
                kwargs[key] = _parse_value(section, key, text, getattr(defaults, key))
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
        try:
            parts[section] = cls(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {exc}") from None
    return SimConfig(**parts)

