"""Run configuration: TOML file plus command-line overrides (flags win)."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

import tomli

from .errors import ConfigError


@dataclass(frozen=True)
class ForgeConfig:
    model: str = "gpt-4o"
    llm_mode: str = "live"  # live | record | replay
    cassette: str | None = None
    embeddings: str | None = None  # precomputed embedding table (embedding match mode)
    match_mode: str = "full"  # full | image_only | text_only | embedding
    budget: int = 10
    generations: int = 30
    oracle_runs: int = 3
    seed: int = 0
    fuel: int = 1_000_000
    jobs: int = 1
    clip_fraction: float = 0.01
    out_dir: str = "runs"

    def __post_init__(self):
        if self.llm_mode not in ("live", "record", "replay"):
            raise ConfigError(f"llm_mode must be live, record, or replay, got {self.llm_mode!r}")
        if self.llm_mode in ("record", "replay") and not self.cassette:
            raise ConfigError(f"llm_mode {self.llm_mode!r} needs a cassette path")
        if self.match_mode not in ("full", "image_only", "text_only", "embedding"):
            raise ConfigError(f"unknown match_mode {self.match_mode!r}")
        if self.budget < 0:
            raise ConfigError("budget must be >= 0")
        for name in ("generations", "oracle_runs", "fuel", "jobs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not (0 <= self.clip_fraction < 0.5):
            raise ConfigError("clip_fraction must be in [0, 0.5)")


_FIELD_TYPES = {f.name: f.type for f in fields(ForgeConfig)}


def load_config(path: Path | str | None) -> ForgeConfig:
    """Config from a TOML file; missing path means all defaults."""
    if path is None:
        return ForgeConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    try:
        data = tomli.loads(p.read_text(encoding="utf-8"))
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"bad config file {p}: {exc}")
    unknown = set(data) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        return ForgeConfig(**data)
    except TypeError as exc:
        raise ConfigError(f"bad config values: {exc}")


def apply_overrides(config: ForgeConfig, **overrides) -> ForgeConfig:
    """Replace fields with any non-None override values."""
    updates = {k: v for k, v in overrides.items() if v is not None}
    bad = set(updates) - set(_FIELD_TYPES)
    if bad:
        raise ConfigError(f"unknown config overrides: {', '.join(sorted(bad))}")
    if not updates:
        return config
    return replace(config, **updates)
