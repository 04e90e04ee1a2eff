"""Run configuration: defaults, a ``key = value`` file, environment, CLI overrides.

Later sources win: file < environment (``ATOMCHAIN_<KEY>``) < command line.
The API key is read from the environment only and never written out.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .chain import DEFAULT_MAX_PLANS
from .orchestrator import ChainConfig, ConfigError
from .tables import RowConvention

ENV_PREFIX = "ATOMCHAIN_"
BACKENDS = ("live", "replay", "mock")


@dataclass(frozen=True)
class RunConfig:
    backend: str = "replay"
    base_url: str = "http://localhost:8000"
    model_id: str = "default"
    temperature: float = 0.8
    top_p: float = 0.9
    top_k: int | None = None
    max_tokens: int = 1024
    seed: int = 0
    max_plans: int = DEFAULT_MAX_PLANS
    retries: int = 3
    concurrency: int = 4
    timeout: float = 60.0
    templates: str | None = None
    session: str | None = None
    script: str | None = None
    record: str | None = None
    train_size: int = 350
    val_size: int = 50
    nei_policy: str = "wrong"
    recap_includes_history: bool = False
    row_convention: str = "absolute"

    def __post_init__(self) -> None:
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}")
        for name in ("max_plans", "max_tokens", "concurrency"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.retries < 0 or self.train_size < 0 or self.val_size < 0:
            raise ConfigError("retries and split sizes must be >= 0")
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")
        if self.nei_policy not in ("wrong", "exclude"):
            raise ConfigError("nei_policy must be 'wrong' or 'exclude'")
        RowConvention(self.row_convention)

    def chain_config(self) -> ChainConfig:
        return ChainConfig(
            model_id=self.model_id,
            temperature=self.temperature,
            top_p=self.top_p,
            top_k=self.top_k,
            max_tokens=self.max_tokens,
            seed=self.seed,
            max_plans=self.max_plans,
            retries=self.retries,
            recap_includes_history=self.recap_includes_history,
            row_convention=RowConvention(self.row_convention),
        )

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


def _coerce(name: str, text: str) -> Any:
    kinds = {f.name: f.type for f in fields(RunConfig)}
    if name not in kinds:
        raise ConfigError(f"unknown config key {name!r}")
    kind = str(kinds[name])
    text = text.strip()
    if "None" in kind and text.lower() in ("", "none", "null"):
        return None
    try:
        if kind.startswith("bool"):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
    except ValueError as err:
        raise ConfigError(f"bad value for {name}: {text!r}") from err
    return text


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        key = key.strip().replace("-", "_")
        out[key] = _coerce(key, value)
    return out


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, Any]:
    env = os.environ if environ is None else environ
    out = {}
    for f in fields(RunConfig):
        key = ENV_PREFIX + f.name.upper()
        if key in env:
            out[f.name] = _coerce(f.name, env[key])
    return out


def load_config(
    path: str | Path | None = None,
    cli: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    """Merge defaults, file, environment and CLI values (``None`` CLI values are unset)."""
    merged: dict[str, Any] = {}
    if path is not None:
        merged.update(read_config_file(path))
    merged.update(env_overrides(environ))
    merged.update({k: v for k, v in (cli or {}).items() if v is not None})
    return replace(RunConfig(), **merged)
