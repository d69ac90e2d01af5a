"""Run configuration layered from defaults, a key=value file, the environment
and command-line flags (later layers win)."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Mapping

from .cache_sim import CacheConfig
from .classifier import FilterThresholds
from .pipeline import ProfileConfig
from .profiler_core import BreakpointConfig, SamplerConfig

ENV_PREFIX = "CACHESCOPE_"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # cache geometry (used when generating; profiling takes it from the trace)
    line_size: int = 64
    sets: int = 128
    assoc: int = 8
    cores: int = 16
    # sampling
    seed: int = 0
    load_period: int = 20_000
    store_period: int = 50_000
    period_jitter: float = 0.10
    window: int = 1000
    window_ratio: float = 0.005
    # breakpoints
    expiry_events: int = 100_000
    bp_max_accesses: int = 64
    bp_same_set: int = 8
    k_consec: int = 4
    t_set: int = 8
    # object store
    skip_min_samples: int = 1000
    skip_fraction: float = 0.1
    # filters
    global_load_gate: float = 0.03
    global_store_gate: float = 0.01
    instr_access_floor: float = 0.0001
    instr_miss_floor: float = 0.01
    line_set_miss_floor: float = 0.01
    # output
    format: str = "text"
    warmup: float = 0.1

    def __post_init__(self):
        if self.format not in ("text", "structured"):
            raise ConfigError(f"format must be 'text' or 'structured', got {self.format!r}")
        if self.skip_min_samples < 0 or not 0 <= self.skip_fraction <= 1:
            raise ConfigError("skip_min_samples must be >= 0 and skip_fraction in [0, 1]")
        if not 0 <= self.warmup < 1:
            raise ConfigError("warmup must be in [0, 1)")
        try:
            self.cache()
            self.profile()
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def cache(self) -> CacheConfig:
        return CacheConfig(self.line_size, self.sets, self.assoc, self.cores)

    def profile(self) -> ProfileConfig:
        return ProfileConfig(
            sampler=SamplerConfig(self.load_period, self.store_period, self.period_jitter, self.seed),
            window=self.window,
            thresholds=FilterThresholds(
                self.global_load_gate, self.global_store_gate, self.instr_access_floor,
                self.instr_miss_floor, self.line_set_miss_floor, self.window_ratio),
            breakpoint=BreakpointConfig(self.bp_max_accesses, self.bp_same_set,
                                        self.expiry_events, self.k_consec, self.t_set),
            skip_min_samples=self.skip_min_samples,
            skip_fraction=self.skip_fraction,
        )

    def as_dict(self) -> dict:
        return asdict(self)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _norm(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def _coerce(key: str, raw, origin: str):
    if key not in _TYPES:
        raise ConfigError(f"{origin}: unknown setting {key!r}")
    typ = _TYPES[key]
    if not isinstance(raw, str):
        return raw
    try:
        if typ == "int":
            return int(raw, 0)
        if typ == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{origin}: bad value {raw!r} for {key}") from None
    return raw


def parse_config_text(text: str, origin: str = "config") -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        k = _norm(k)
        out[k] = _coerce(k, v.strip(), f"{origin}:{n}")
    return out


def env_overrides(env: Mapping[str, str]) -> dict:
    out = {}
    for name, value in env.items():
        if name.startswith(ENV_PREFIX):
            k = _norm(name[len(ENV_PREFIX):])
            if k in _TYPES:
                out[k] = _coerce(k, value, f"${name}")
    return out


def resolve(flags: Mapping[str, object] | None = None, config_path: str | Path | None = None,
            env: Mapping[str, str] | None = None) -> RunConfig:
    """Flags beat environment, environment beats the file, the file beats defaults."""
    env = os.environ if env is None else env
    layered: dict = {}
    path = config_path or env.get(ENV_PREFIX + "CONFIG")
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
        layered.update(parse_config_text(text, str(path)))
    layered.update(env_overrides(env))
    for k, v in (flags or {}).items():
        if v is not None:
            k = _norm(k)
            layered[k] = _coerce(k, v, "flag")
    return replace(RunConfig(), **layered)
