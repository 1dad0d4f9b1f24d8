"""YAML run configuration shared by the CLI and the service.

Sections: ``data``, ``providers``, ``codec``, ``stage``, ``variant``,
``optimizer``, ``loss_weights``, ``training``, ``ttr`` and ``seed``.
Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from lmcodec.errors import ConfigError
from lmcodec.frontend import Providers, make_synthetic_providers
from lmcodec.profiles import CodecProfile, get_profile
from lmcodec.training import LossWeights, OptimizerConfig, StageConfig
from lmcodec.ttr import TtrPretrainConfig


@dataclass
class DataConfig:
    manifest: str | None = None
    segment_min_s: float | None = None
    segment_max_s: float | None = None
    test_prefixes: tuple = ("LJ021", "LJ022", "LJ023", "LJ024")
    val_prefixes: tuple = ("LJ025", "LJ026", "LJ027")


@dataclass
class TrainingConfig:
    max_steps: int = 1_000_000
    validate_every: int = 1000
    patience_steps: int = 100_000
    asr_targets: str = "greedy"
    crop_frames: int | None = None


# desk-scale segments are seconds long rather than 30-45 s
_SEGMENT_DEFAULTS = {"tiny": (1.0, 3.0), "paper": (30.0, 45.0)}


def _synthetic(profile: CodecProfile, seed: int = 0, **_) -> Providers:
    return make_synthetic_providers(seed=seed, profile=profile)


PROVIDER_REGISTRY = {"synthetic": _synthetic}


def register_providers(name: str, factory) -> None:
    """``factory(profile, **options) -> Providers``."""
    PROVIDER_REGISTRY[name] = factory


@dataclass
class RunConfig:
    profile: str = "tiny"
    codec: dict = field(default_factory=dict)
    data: DataConfig = field(default_factory=DataConfig)
    providers: dict = field(default_factory=lambda: {"name": "synthetic"})
    stage: int | None = None
    variant: str | None = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    ttr: TtrPretrainConfig = field(default_factory=TtrPretrainConfig)
    seed: int = 0

    def codec_profile(self) -> CodecProfile:
        try:
            return get_profile(self.profile, **self.codec)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def segment_bounds(self) -> tuple[float, float]:
        lo, hi = _SEGMENT_DEFAULTS.get(self.profile, _SEGMENT_DEFAULTS["paper"])
        d = self.data
        return (lo if d.segment_min_s is None else d.segment_min_s, hi if d.segment_max_s is None else d.segment_max_s)

    def build_providers(self, profile: CodecProfile | None = None) -> Providers:
        opts = dict(self.providers)
        name = opts.pop("name", "synthetic")
        if name not in PROVIDER_REGISTRY:
            raise ConfigError(f"unknown providers {name!r}; registered: {sorted(PROVIDER_REGISTRY)}")
        opts.setdefault("seed", self.seed)
        return PROVIDER_REGISTRY[name](profile or self.codec_profile(), **opts)

    def stage_config(self, stage: int | None = None, variant: str | None = None, max_steps: int | None = None) -> StageConfig:
        stage = stage if stage is not None else self.stage
        if stage is None:
            raise ConfigError("no stage given")
        t = self.training
        return StageConfig(
            stage=stage,
            variant=variant if variant is not None else self.variant,
            max_steps=t.max_steps if max_steps is None else max_steps,
            optimizer=self.optimizer,
            weights=self.loss_weights,
            validate_every=t.validate_every,
            patience_steps=t.patience_steps,
            seed=self.seed,
            asr_targets=t.asr_targets,
            crop_frames=t.crop_frames,
        )

    def ttr_config(self, max_steps: int | None = None) -> TtrPretrainConfig:
        d = asdict(self.ttr)
        d["seed"] = self.seed
        if max_steps is not None:
            d["max_steps"] = max_steps
        return TtrPretrainConfig(**d)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "data": DataConfig,
    "optimizer": OptimizerConfig,
    "loss_weights": LossWeights,
    "training": TrainingConfig,
    "ttr": TtrPretrainConfig,
}


def _build(cls, values, section: str):
    if values is None:
        return cls()
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def config_from_dict(raw: dict | None) -> RunConfig:
    raw = dict(raw or {})
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        kwargs[key] = _build(_SECTIONS[key], value, key) if key in _SECTIONS else value
    cfg = RunConfig(**kwargs)
    if cfg.profile not in _SEGMENT_DEFAULTS:
        raise ConfigError(f"unknown profile {cfg.profile!r}")
    return cfg


def load_config(path=None, **overrides) -> RunConfig:
    """Read a YAML config (or defaults when ``path`` is None); ``overrides`` win."""
    raw = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path} must contain a mapping")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(raw)
