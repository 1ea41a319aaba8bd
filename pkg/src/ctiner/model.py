"""The assembled tagging network and its checkpoint container."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .corpus import Vocabulary
from .encoder import ContextEncoder, EncoderConfig
from .features import ConfigurationError, MixedFeatureConfig, MixedFeatureEmbedder
from .fusion import GatedFusion, LabelClassifier
from .internal import SoftNeighborAttention

__all__ = [
    "AugmentationSwitches",
    "ModelConfig",
    "TaggerModel",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_VERSION = 1

_INTERNAL_MODES = ("none", "hsa", "ssa")


@dataclass(frozen=True)
class AugmentationSwitches:
    """Which augmentation channels feed the gates: internal none/hsa/ssa,
    external on/off."""

    internal: str = "none"
    external: bool = False

    def __post_init__(self):
        if self.internal not in _INTERNAL_MODES:
            raise ConfigurationError(
                f"internal switch must be one of {_INTERNAL_MODES}, "
                f"got {self.internal!r}"
            )

    @property
    def label(self) -> str:
        parts = ["base"]
        if self.external:
            parts.append("ext")
        if self.internal != "none":
            parts.append(self.internal)
        return "+".join(parts)

    @classmethod
    def parse(cls, text: str) -> "AugmentationSwitches":
        parts = text.strip().lower().split("+")
        if not parts or parts[0] != "base":
            raise ConfigurationError(
                f"switch string must start with 'base', got {text!r}"
            )
        internal, external = "none", False
        for part in parts[1:]:
            if part in ("hsa", "ssa"):
                if internal != "none":
                    raise ConfigurationError(f"conflicting internal switches in {text!r}")
                internal = part
            elif part == "ext":
                external = True
            else:
                raise ConfigurationError(f"unknown switch {part!r} in {text!r}")
        return cls(internal=internal, external=external)


@dataclass(frozen=True)
class ModelConfig:
    features: MixedFeatureConfig = field(default_factory=MixedFeatureConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    internal_dim: int = 256
    external_dim: int = 768
    n_labels: int = 2
    share_gate_params: bool = False
    ssa_literal_normalization: bool = False

    def validate(self) -> "ModelConfig":
        self.features.validate()
        self.encoder.validate()
        if self.features.fused_dim != self.encoder.input_dim:
            raise ConfigurationError(
                f"fused feature dim {self.features.fused_dim} must equal "
                f"encoder input dim {self.encoder.input_dim}"
            )
        if self.internal_dim != self.encoder.output_dim:
            raise ConfigurationError(
                f"internal augmentation dim {self.internal_dim} must equal "
                f"the encoder output dim {self.encoder.output_dim} for gating"
            )
        if self.n_labels < 2:
            raise ConfigurationError("need at least two labels")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            features=MixedFeatureConfig(**d["features"]),
            encoder=EncoderConfig(**d["encoder"]),
            internal_dim=d["internal_dim"],
            external_dim=d["external_dim"],
            n_labels=d["n_labels"],
            share_gate_params=d.get("share_gate_params", False),
            ssa_literal_normalization=d.get("ssa_literal_normalization", False),
        )


class TaggerModel(nn.Module):
    """Mixed features -> context encoder -> gated augmentation -> softmax.

    The active switch set decides which submodules exist: hard internal
    augmentation arrives precomputed through the batch, soft internal
    augmentation owns a trained bilinear attention, and the external channel
    owns the projection from provider space to the encoder width.
    """

    def __init__(
        self,
        config: ModelConfig,
        switches: AugmentationSwitches,
        vocab: Vocabulary,
        word_matrix: np.ndarray | None = None,
        pos_matrix: np.ndarray | None = None,
    ):
        super().__init__()
        self.config = config.validate()
        self.switches = switches
        self.embedder = MixedFeatureEmbedder(
            config.features, vocab, word_matrix=word_matrix, pos_matrix=pos_matrix
        )
        self.encoder = ContextEncoder(config.encoder)
        dim = config.encoder.output_dim
        self.ssa = (
            SoftNeighborAttention(
                context_dim=dim,
                neighbor_dim=config.internal_dim,
                literal_normalization=config.ssa_literal_normalization,
            )
            if switches.internal == "ssa"
            else None
        )
        self.external_projection = (
            nn.Linear(config.external_dim, dim) if switches.external else None
        )
        self.fusion = GatedFusion(
            dim,
            use_internal=switches.internal != "none",
            use_external=switches.external,
            share_params=config.share_gate_params,
        )
        self.classifier = LabelClassifier(dim, config.n_labels)

    def contextualize(self, batch) -> torch.Tensor:
        """Token representations before augmentation: (B, N, encoder dim)."""
        fused_input = self.embedder(
            batch.word_idx, batch.char_idx, batch.pos_idx, batch.component
        )
        return self.encoder(fused_input, batch.mask)

    def fuse(self, context: torch.Tensor, batch) -> torch.Tensor:
        internal = None
        if self.switches.internal == "hsa":
            internal = batch.internal_vectors
        elif self.switches.internal == "ssa":
            internal = self.ssa(context, batch.neighbor_vectors, batch.internal_mask)
        external = None
        if self.switches.external:
            external = self.external_projection(batch.external)
        return self.fusion(
            context,
            internal=internal,
            internal_mask=batch.internal_mask,
            external=external,
        )

    def forward(self, batch) -> torch.Tensor:
        """Per-token label probabilities: (B, N, n_labels)."""
        return self.classifier(self.fuse(self.contextualize(batch), batch))


def save_checkpoint(
    path: str | Path,
    model: TaggerModel,
    vocab: Vocabulary,
    labels: list[str],
    meta: dict | None = None,
) -> None:
    """Versioned checkpoint: weights with shape metadata plus everything
    needed to rebuild the network."""
    state = model.state_dict()
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "switches": asdict(model.switches),
        "vocab": vocab.to_dict(),
        "labels": list(labels),
        "state_dict": state,
        "shapes": {name: list(t.shape) for name, t in state.items()},
        "meta": meta or {},
    }
    torch.save(payload, str(path))


def load_checkpoint(
    path: str | Path,
) -> tuple[TaggerModel, Vocabulary, list[str], dict]:
    payload = torch.load(str(path), map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(
            f"checkpoint {path} has format version {version}, "
            f"expected {CHECKPOINT_VERSION}"
        )
    config = ModelConfig.from_dict(payload["model_config"])
    switches = AugmentationSwitches(**payload["switches"])
    vocab = Vocabulary.from_dict(payload["vocab"])
    model = TaggerModel(config, switches, vocab)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, vocab, payload["labels"], payload.get("meta", {})
