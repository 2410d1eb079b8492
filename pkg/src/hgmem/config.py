"""Layered runtime settings: flags over environment over file over defaults.

Provider endpoints and tuning knobs can come from a JSON config file, from
HYPERMEM_* environment variables, or from command-line flags; later layers
win. Every value is validated once after merging, and a bad value names the
offending key and layer in the raised ConfigError.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields as dataclass_fields
from pathlib import Path

from .errors import ConfigError
from .indexing import AggMode
from .retrieval import RetrievalConfig

CONFIG_ENV = "HYPERMEM_CONFIG"


def _as_str(value) -> str:
    if not isinstance(value, str) or not value.strip():
        raise ValueError("expected a non-empty string")
    return value


def _as_float(value) -> float:
    if isinstance(value, bool) or (not isinstance(value, (int, float, str))):
        raise ValueError("expected a number")
    return float(value)


def _as_int(value) -> int:
    if isinstance(value, bool):
        raise ValueError("expected an integer")
    if isinstance(value, float) and not value.is_integer():
        raise ValueError("expected an integer")
    return int(value)


def _as_agg(value) -> str:
    text = str(value).strip().lower()
    if text not in ("mean", "sum"):
        raise ValueError("expected 'mean' or 'sum'")
    return text


@dataclass
class Settings:
    llm_url: str | None = None
    llm_model: str | None = None
    llm_key: str | None = None
    emb_url: str | None = None
    emb_model: str | None = None
    emb_key: str | None = None
    rerank_url: str | None = None
    rerank_model: str | None = None
    rerank_key: str | None = None
    lam: float = 0.5
    agg: str = "mean"
    rrf_k: float = 60.0
    k_topics: int = 10
    k_episodes: int = 10
    k_facts: int = 30
    candidate_pool: int = 100
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    candidate_limit: int = 20
    max_buffer_turns: int = 50
    mock_dimension: int = 64
    timeout: float = 120.0

    def validate(self) -> None:
        problems = []
        if self.agg not in ("mean", "sum"):
            problems.append("agg must be 'mean' or 'sum'")
        if self.lam < 0:
            problems.append("lambda must be >= 0")
        if self.rrf_k <= 0:
            problems.append("rrf_k must be > 0")
        for name in ("k_topics", "k_episodes", "k_facts"):
            k = getattr(self, name)
            if k < 1:
                problems.append(f"{name} must be >= 1")
            elif k > self.candidate_pool:
                problems.append(f"{name} must not exceed candidate_pool")
        if self.candidate_pool < 1:
            problems.append("candidate_pool must be >= 1")
        if self.bm25_k1 < 0:
            problems.append("bm25_k1 must be >= 0")
        if not 0.0 <= self.bm25_b <= 1.0:
            problems.append("bm25_b must be within [0, 1]")
        if self.candidate_limit < 1:
            problems.append("candidate_limit must be >= 1")
        if self.max_buffer_turns < 1:
            problems.append("max_buffer_turns must be >= 1")
        if self.mock_dimension < 1:
            problems.append("mock_dimension must be >= 1")
        if self.timeout <= 0:
            problems.append("timeout must be > 0")
        if problems:
            raise ConfigError("; ".join(problems))

    def agg_mode(self) -> AggMode:
        return AggMode(self.agg)

    def retrieval_config(self, **overrides) -> RetrievalConfig:
        cfg = RetrievalConfig(
            k_topics=self.k_topics, k_episodes=self.k_episodes,
            k_facts=self.k_facts, candidate_pool=self.candidate_pool,
            rrf_k=self.rrf_k)
        for name, value in overrides.items():
            if value is not None:
                setattr(cfg, name, value)
        cfg.validate()
        return cfg


# Config-file/environment key -> (Settings attribute, caster). The external
# key for the propagation strength is "lambda"; the attribute avoids the
# Python keyword.
KEYS: dict[str, tuple[str, object]] = {
    "llm_url": ("llm_url", _as_str),
    "llm_model": ("llm_model", _as_str),
    "llm_key": ("llm_key", _as_str),
    "emb_url": ("emb_url", _as_str),
    "emb_model": ("emb_model", _as_str),
    "emb_key": ("emb_key", _as_str),
    "rerank_url": ("rerank_url", _as_str),
    "rerank_model": ("rerank_model", _as_str),
    "rerank_key": ("rerank_key", _as_str),
    "lambda": ("lam", _as_float),
    "agg": ("agg", _as_agg),
    "rrf_k": ("rrf_k", _as_float),
    "k_topics": ("k_topics", _as_int),
    "k_episodes": ("k_episodes", _as_int),
    "k_facts": ("k_facts", _as_int),
    "candidate_pool": ("candidate_pool", _as_int),
    "bm25_k1": ("bm25_k1", _as_float),
    "bm25_b": ("bm25_b", _as_float),
    "candidate_limit": ("candidate_limit", _as_int),
    "max_buffer_turns": ("max_buffer_turns", _as_int),
    "mock_dimension": ("mock_dimension", _as_int),
    "timeout": ("timeout", _as_float),
}


def env_var(key: str) -> str:
    return "HYPERMEM_" + key.upper()


def load_settings(config_path: str | Path | None = None, *,
                  env: dict | None = None,
                  overrides: dict | None = None) -> Settings:
    """Merge defaults, config file, environment, and explicit overrides."""
    env = os.environ if env is None else env
    settings = Settings()

    if config_path is None and env.get(CONFIG_ENV):
        config_path = env[CONFIG_ENV]
    if config_path is not None:
        path = Path(config_path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        for key, value in data.items():
            if key not in KEYS:
                raise ConfigError(f"config file {path}: unknown key {key!r}")
            attr, cast = KEYS[key]
            try:
                setattr(settings, attr, cast(value))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config file {path}: key {key!r}: {exc}") from exc

    for key, (attr, cast) in KEYS.items():
        raw = env.get(env_var(key))
        if raw is None or raw == "":
            continue
        try:
            setattr(settings, attr, cast(raw))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"environment {env_var(key)}: {exc}") from exc

    valid_attrs = {f.name for f in dataclass_fields(Settings)}
    for attr, value in (overrides or {}).items():
        if attr not in valid_attrs:
            raise ConfigError(f"unknown setting {attr!r}")
        if value is not None:
            setattr(settings, attr, value)

    settings.validate()
    return settings
