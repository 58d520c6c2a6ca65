"""Run configuration from INI files.

A config file describes one pipeline run: where the corpus lives, which
completion backend and embedder to use, and the pipeline knobs. Unknown
sections or keys are rejected outright so typos fail fast instead of being
silently ignored. Relative paths are resolved against the config file's
directory. Service tokens never appear in the file; they come from the
GRAPHUSION_LLM_TOKEN and GRAPHUSION_EMBED_TOKEN environment variables.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .corpus import DEFAULT_MAX_TOKENS, DEFAULT_OVERLAP
from .embed import Embedder, HashEmbedder, RemoteEmbedder
from .llm import LLMBackend, RemoteBackend, ScriptedBackend
from .pipeline import PipelineConfig

LLM_TOKEN_ENV = "GRAPHUSION_LLM_TOKEN"
EMBED_TOKEN_ENV = "GRAPHUSION_EMBED_TOKEN"

_ALLOWED_KEYS = {
    "corpus": {"path", "format", "max_tokens", "overlap"},
    "llm": {"backend", "script", "on_miss", "model_id", "url", "retries", "backoff"},
    "embedder": {"provider", "dim", "url", "batch_size"},
    "pipeline": {
        "n_clusters",
        "top_n",
        "random_seed",
        "extract_k",
        "background_k",
        "parallelism",
        "failure_threshold",
    },
    "inputs": {"seeds", "expert_kg"},
}


class ConfigError(ValueError):
    """A run configuration file is malformed or inconsistent."""


@dataclass
class RunConfig:
    corpus_path: Path
    corpus_format: str = "jsonl"
    max_tokens: int = DEFAULT_MAX_TOKENS
    overlap: int = DEFAULT_OVERLAP

    llm_backend: str = "scripted"
    script_path: Optional[Path] = None
    on_miss: str = "error"
    model_id: str = "scripted"
    llm_url: str = ""
    retries: int = 3
    backoff: float = 1.0

    embed_provider: str = "hash"
    embed_dim: int = 256
    embed_url: str = ""
    embed_batch_size: int = 32

    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    seeds_path: Optional[Path] = None
    expert_kg_path: Optional[Path] = None


def _check_known_keys(parser: configparser.ConfigParser, path: Path) -> None:
    for section in parser.sections():
        if section not in _ALLOWED_KEYS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key in parser[section]:
            if key not in _ALLOWED_KEYS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in section [{section}]")


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else (base / p)


def _existing(path: Path, what: str, config_path: Path) -> Path:
    if not path.exists():
        raise ConfigError(f"{config_path}: {what} does not exist: {path}")
    return path


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file does not exist: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    _check_known_keys(parser, path)
    base = path.parent

    if "corpus" not in parser or "path" not in parser["corpus"]:
        raise ConfigError(f"{path}: [corpus] path is required")
    corpus = parser["corpus"]
    corpus_format = corpus.get("format", "jsonl")
    if corpus_format not in ("jsonl", "plain-text-dir"):
        raise ConfigError(f"{path}: unknown corpus format {corpus_format!r}")

    cfg = RunConfig(
        corpus_path=_existing(_resolve(base, corpus["path"]), "corpus path", path),
        corpus_format=corpus_format,
        max_tokens=corpus.getint("max_tokens", DEFAULT_MAX_TOKENS),
        overlap=corpus.getint("overlap", DEFAULT_OVERLAP),
    )

    if "llm" in parser:
        llm = parser["llm"]
        cfg.llm_backend = llm.get("backend", "scripted")
        if cfg.llm_backend not in ("scripted", "remote"):
            raise ConfigError(f"{path}: unknown llm backend {cfg.llm_backend!r}")
        if "script" in llm:
            cfg.script_path = _existing(_resolve(base, llm["script"]), "llm script", path)
        cfg.on_miss = llm.get("on_miss", "error")
        cfg.model_id = llm.get("model_id", cfg.llm_backend)
        cfg.llm_url = llm.get("url", "")
        cfg.retries = llm.getint("retries", 3)
        cfg.backoff = llm.getfloat("backoff", 1.0)
        if cfg.llm_backend == "scripted" and cfg.script_path is None:
            raise ConfigError(f"{path}: scripted backend needs [llm] script")
        if cfg.llm_backend == "remote" and not cfg.llm_url:
            raise ConfigError(f"{path}: remote backend needs [llm] url")

    if "embedder" in parser:
        emb = parser["embedder"]
        cfg.embed_provider = emb.get("provider", "hash")
        if cfg.embed_provider not in ("hash", "remote"):
            raise ConfigError(f"{path}: unknown embedder provider {cfg.embed_provider!r}")
        cfg.embed_dim = emb.getint("dim", 256)
        cfg.embed_url = emb.get("url", "")
        cfg.embed_batch_size = emb.getint("batch_size", 32)
        if cfg.embed_provider == "remote" and not cfg.embed_url:
            raise ConfigError(f"{path}: remote embedder needs [embedder] url")

    pl = parser["pipeline"] if "pipeline" in parser else None
    try:
        cfg.pipeline = PipelineConfig(
            model_id=cfg.model_id,
            n_clusters=pl.getint("n_clusters", 8) if pl else 8,
            top_n=pl.getint("top_n", 10) if pl else 10,
            random_seed=pl.getint("random_seed", 0) if pl else 0,
            max_tokens=cfg.max_tokens,
            overlap=cfg.overlap,
            extract_k=pl.getint("extract_k", 3) if pl else 3,
            background_k=pl.getint("background_k", 2) if pl else 2,
            parallelism=pl.getint("parallelism", 1) if pl else 1,
            failure_threshold=pl.getfloat("failure_threshold", 0.1) if pl else 0.1,
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None

    if "inputs" in parser:
        inputs = parser["inputs"]
        if "seeds" in inputs:
            cfg.seeds_path = _existing(_resolve(base, inputs["seeds"]), "seeds file", path)
        if "expert_kg" in inputs:
            cfg.expert_kg_path = _existing(_resolve(base, inputs["expert_kg"]), "expert graph", path)

    return cfg


def make_backend(cfg: RunConfig) -> LLMBackend:
    if cfg.llm_backend == "scripted":
        return ScriptedBackend.from_jsonl(cfg.script_path, on_miss=cfg.on_miss)
    token = os.environ.get(LLM_TOKEN_ENV, "")
    return RemoteBackend(
        url=cfg.llm_url,
        model=cfg.model_id,
        token=token,
        retries=cfg.retries,
        backoff=cfg.backoff,
    )


def make_embedder(cfg: RunConfig) -> Embedder:
    if cfg.embed_provider == "hash":
        return HashEmbedder(dim=cfg.embed_dim)
    token = os.environ.get(EMBED_TOKEN_ENV, "")
    return RemoteEmbedder(
        url=cfg.embed_url,
        dim=cfg.embed_dim,
        token=token,
        batch_size=cfg.embed_batch_size,
    )
