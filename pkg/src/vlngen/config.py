"""Declarative pipeline configuration: one YAML file, flag overrides on top."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import yaml

from .errors import ConfigError
from .gateway import GatewayConfig
from .model import Granularity
from .sampler import SamplerConfig
from .verifier import VerifyConfig


@dataclass
class PathsConfig:
    videos_dir: str = "data/videos"
    output_dir: str = "out"


@dataclass
class SplitConfig:
    train_videos: list[str] = field(default_factory=list)
    val_videos: list[str] = field(default_factory=list)

    @property
    def all_videos(self) -> list[str]:
        return list(self.train_videos) + list(self.val_videos)


@dataclass
class AdapterConfig:
    backend: str = "stub"  # stub | http
    stub_seed: int = 0
    label_endpoint: Optional[str] = None
    action_endpoint: Optional[str] = None

    def __post_init__(self):
        if self.backend not in ("stub", "http"):
            raise ConfigError(f"unknown adapter backend {self.backend!r}")
        if self.backend == "http" and not (self.label_endpoint and self.action_endpoint):
            raise ConfigError("http adapters need label_endpoint and action_endpoint")


@dataclass
class GenerationConfig:
    granularities: tuple[Granularity, ...] = (Granularity.COARSE,)


@dataclass
class PretextConfig:
    regions_per_node: int = 36
    feature_dim: int = 2048
    mask_prob: float = 0.15
    pr_candidates: int = 4
    seed: int = 13


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    adapters: AdapterConfig = field(default_factory=AdapterConfig)
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    pretext: PretextConfig = field(default_factory=PretextConfig)
    jobs: int = 1
    deterministic_timestamps: bool = False
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def videos_dir(self) -> Path:
        return _resolve(self.base_dir, self.paths.videos_dir)

    @property
    def output_dir(self) -> Path:
        return _resolve(self.base_dir, self.paths.output_dir)

    def override_seed(self, seed: int) -> None:
        """Apply a single CLI seed to every seeded stage."""
        self.sampler = dataclasses.replace(self.sampler, seed=seed)
        self.gateway.seed = seed
        self.adapters.stub_seed = seed
        self.pretext.seed = seed


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def _build_section(cls, data: dict, section: str):
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - valid
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def load_config(path: Path) -> PipelineConfig:
    """Parse and validate a YAML config; referenced video paths must exist."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    known = {
        "paths",
        "split",
        "sampler",
        "adapters",
        "gateway",
        "verify",
        "generation",
        "pretext",
        "jobs",
        "deterministic_timestamps",
    }
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")

    generation_raw = dict(data.get("generation", {}))
    granularities: Sequence[str] = generation_raw.pop("granularities", ["coarse"])
    if generation_raw:
        raise ConfigError(f"generation: unknown keys {sorted(generation_raw)}")
    try:
        generation = GenerationConfig(tuple(Granularity(g) for g in granularities))
    except ValueError as exc:
        raise ConfigError(f"generation.granularities: {exc}") from exc

    verify_raw = dict(data.get("verify", {}))
    if "extractor_order" in verify_raw:
        verify_raw["extractor_order"] = tuple(verify_raw["extractor_order"])

    cfg = PipelineConfig(
        paths=_build_section(PathsConfig, data.get("paths", {}), "paths"),
        split=_build_section(SplitConfig, data.get("split", {}), "split"),
        sampler=_build_section(SamplerConfig, data.get("sampler", {}), "sampler"),
        adapters=_build_section(AdapterConfig, data.get("adapters", {}), "adapters"),
        gateway=_build_section(GatewayConfig, data.get("gateway", {}), "gateway"),
        verify=_build_section(VerifyConfig, verify_raw, "verify"),
        generation=generation,
        pretext=_build_section(PretextConfig, data.get("pretext", {}), "pretext"),
        jobs=int(data.get("jobs", 1)),
        deterministic_timestamps=bool(data.get("deterministic_timestamps", False)),
        base_dir=path.parent.resolve(),
    )
    if cfg.jobs < 1:
        raise ConfigError("jobs must be positive")
    if not cfg.videos_dir.exists():
        raise ConfigError(f"videos_dir {cfg.videos_dir} does not exist")
    for video in cfg.split.all_videos:
        if not (cfg.videos_dir / video).exists():
            raise ConfigError(f"video directory {cfg.videos_dir / video} does not exist")
    if not cfg.split.all_videos:
        raise ConfigError("split lists no videos")
    return cfg


def config_hash(cfg: PipelineConfig) -> str:
    """Content hash of the resolved configuration, for run records."""

    def encode(obj):
        if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            return {f.name: encode(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, Granularity):
            return obj.value
        if isinstance(obj, Path):
            return str(obj)
        if isinstance(obj, (list, tuple)):
            return [encode(x) for x in obj]
        return obj

    payload = json.dumps(encode(cfg), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]
