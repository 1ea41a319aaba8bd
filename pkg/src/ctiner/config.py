"""Single-file run configuration with defaults matching the reference recipe."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .encoder import EncoderConfig
from .external import FinetuneConfig
from .features import MixedFeatureConfig
from .model import AugmentationSwitches, ModelConfig
from .training import TrainConfig

__all__ = [
    "DataConfig",
    "PosPretrainConfig",
    "InternalConfig",
    "ExternalConfig",
    "RunConfig",
    "default_config",
    "load_config",
    "save_config",
]


@dataclass(frozen=True)
class DataConfig:
    corpus: str = "data/corpus.conll"
    dataset: str = ""  # optional: "dnrti" | "malwaretextdb"
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)
    min_count: int = 1
    strict_bio: bool = False
    pretrained_word_vectors: str = ""  # optional GloVe-format file


@dataclass(frozen=True)
class PosPretrainConfig:
    window: int = 3
    epochs: int = 30


@dataclass(frozen=True)
class InternalConfig:
    mode: str = "hsa"  # none | hsa | ssa
    dim: int = 256
    window: int = 3
    min_count: int = 2
    epochs: int = 15
    k_neighbors: int = 5


@dataclass(frozen=True)
class ExternalConfig:
    enabled: bool = True
    provider: str = "stub"  # stub | precomputed | transformer
    hidden_dim: int = 768
    stub_dim: int = 32
    precomputed_path: str = ""
    base_model_path: str = ""  # local uncased base model for finetuning


@dataclass
class RunConfig:
    seed: int = 13
    out_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    features: MixedFeatureConfig = field(default_factory=MixedFeatureConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    share_gate_params: bool = False
    ssa_literal_normalization: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    pos_pretrain: PosPretrainConfig = field(default_factory=PosPretrainConfig)
    internal: InternalConfig = field(default_factory=InternalConfig)
    external: ExternalConfig = field(default_factory=ExternalConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)

    @property
    def switches(self) -> AugmentationSwitches:
        return AugmentationSwitches(
            internal=self.internal.mode, external=self.external.enabled
        )

    def model_config(self, n_labels: int = 2, external_dim: int | None = None) -> ModelConfig:
        return ModelConfig(
            features=self.features,
            encoder=self.encoder,
            internal_dim=self.internal.dim,
            external_dim=external_dim or self.external.hidden_dim,
            n_labels=n_labels,
            share_gate_params=self.share_gate_params,
            ssa_literal_normalization=self.ssa_literal_normalization,
        )

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["data"]["ratios"] = list(self.data.ratios)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        def build(klass, key):
            section = dict(raw.get(key) or {})
            return klass(**section)

        data_raw = dict(raw.get("data") or {})
        if "ratios" in data_raw:
            data_raw["ratios"] = tuple(data_raw["ratios"])
        return cls(
            seed=raw.get("seed", 13),
            out_dir=raw.get("out_dir", "runs/default"),
            data=DataConfig(**data_raw),
            features=build(MixedFeatureConfig, "features"),
            encoder=build(EncoderConfig, "encoder"),
            share_gate_params=raw.get("share_gate_params", False),
            ssa_literal_normalization=raw.get("ssa_literal_normalization", False),
            train=build(TrainConfig, "train"),
            pos_pretrain=build(PosPretrainConfig, "pos_pretrain"),
            internal=build(InternalConfig, "internal"),
            external=build(ExternalConfig, "external"),
            finetune=build(FinetuneConfig, "finetune"),
        )


def default_config() -> RunConfig:
    return RunConfig()


def load_config(path: str | Path) -> RunConfig:
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"config root in {path} must be a mapping")
    return RunConfig.from_dict(raw)


def save_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(
        yaml.safe_dump(config.to_dict(), sort_keys=False), encoding="utf-8"
    )
