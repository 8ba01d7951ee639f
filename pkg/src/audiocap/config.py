"""Configuration dataclasses: feature extraction, model variants, training.

Variant names follow the submission convention: a base model ``Model1`` ..
``Model6`` optionally suffixed with ``single`` (no source separation, the
input stacks three copies of the plain log-mel) and/or ``param2`` (0.8
weight on the meta keyword loss, uniform caption selection).
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError

BASE_VARIANTS = ("Model1", "Model2", "Model3", "Model4", "Model5", "Model6")

_VARIANT_RE = re.compile(r"^(Model[1-6])(single)?(param2)?$")


@dataclass(frozen=True)
class FeatureParams:
    """Parameters of the log-mel / source-separation front end."""

    sample_rate: int = 22050
    n_fft: int = 4096
    hop: int = 2048
    n_mels: int = 64
    f_min: float = 0.0
    f_max: float = 11025.0
    log_eps: float = 1e-10
    hpss_kernel: int = 31
    hpss_power: float = 2.0
    hpss_margin: float = 1.0
    single: bool = False

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ModelConfig:
    variant: str = "Model1"
    hidden_dim: int = 120          # D
    length_embed_dim: int = 16     # D_l; never stated upstream, kept small vs D
    top_keywords: int = 15         # K_m
    max_length: int = 20           # L_max, classes of the length head
    caption_steps: int = 20        # N, decoder steps / encoded caption length
    mhsa_heads: int = 4
    encoder_blstm_layers: int = 2
    mel_bins: int = 64             # F
    crop_frames: int = 216         # T
    cnn_channels: int = 64
    single: bool = False           # X = (S, S, S) instead of (S, H, P)
    param2: bool = False           # 0.8 meta-loss weight + uniform caption pick
    text_mixup: bool = True        # off for Model4
    caption_head_fc: bool = False  # Model2: FC replaces the MHSA layer
    use_meta_block: bool = True    # Model3: meta block and decoder attention removed
    transformer_audio: bool = False  # Model5 audio embedding

    def __post_init__(self):
        if self.variant not in {m + s for m in BASE_VARIANTS for s in ("", "single", "param2", "singleparam2")}:
            raise ConfigError(f"unknown model variant {self.variant!r}")
        if self.base_variant == "Model6" and (self.hidden_dim != 160 or self.encoder_blstm_layers != 1):
            raise ConfigError("Model6 requires hidden_dim=160 and a single BLSTM layer")
        for name in ("hidden_dim", "length_embed_dim", "top_keywords", "max_length",
                     "caption_steps", "mhsa_heads", "encoder_blstm_layers", "mel_bins",
                     "crop_frames", "cnn_channels"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.hidden_dim % 2:
            raise ConfigError("hidden_dim must be even (split across BLSTM directions)")
        if self.hidden_dim % self.mhsa_heads:
            raise ConfigError("hidden_dim must be divisible by mhsa_heads")

    @property
    def base_variant(self) -> str:
        return _VARIANT_RE.match(self.variant).group(1)

    @classmethod
    def for_variant(cls, name: str, **overrides) -> "ModelConfig":
        """Build the configuration for a named variant such as ``Model5single``."""
        m = _VARIANT_RE.match(name)
        if not m:
            raise ConfigError(f"unknown model variant {name!r}")
        base, single, param2 = m.group(1), bool(m.group(2)), bool(m.group(3))
        kw: dict = dict(variant=name, single=single, param2=param2)
        if base == "Model2":
            kw["caption_head_fc"] = True
        elif base == "Model3":
            kw["caption_head_fc"] = True
            kw["use_meta_block"] = False
        elif base == "Model4":
            kw["text_mixup"] = False
        elif base == "Model5":
            kw["transformer_audio"] = True
        elif base == "Model6":
            kw["hidden_dim"] = 160
            kw["encoder_blstm_layers"] = 1
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-2
    batch_size: int = 48
    epochs: int = 300
    seed: int = 0
    label_smoothing: float = 0.1
    mixup_enabled: bool = True
    mixup_alpha: float = 0.4
    tfidf_replace_rate: float = 0.05
    idf_audio_sampling: bool = True
    idf_caption_sampling: bool = True
    deterministic: bool = False    # pin torch to one thread for bitwise reruns
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "epochs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.weight_decay < 0 or self.tfidf_replace_rate < 0:
            raise ConfigError("weights and rates must be non-negative")
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class DecodeConfig:
    beam_size: int = 5
    block_ngram: int = 2
    tta_crops: int = 5
    log_domain_tta: bool = True    # average crop outputs as log-probabilities
    seed: int = 0


def desk_model_config(variant: str = "Model1") -> ModelConfig:
    """Miniature model used by CI and the synthetic-corpus smoke tests."""
    return ModelConfig.for_variant(
        variant, hidden_dim=32, length_embed_dim=8, top_keywords=4, crop_frames=64,
    )


def desk_train_config(variant: str = "Model1", **overrides) -> TrainConfig:
    """Desk-scale profile: runs the whole pipeline in minutes on one core.

    Memorization checks need the regularizers out of the way, so label
    smoothing, mix-up, and word replacement are off here; the full-data
    profile keeps them on.
    """
    kw: dict = dict(
        learning_rate=3e-3,
        weight_decay=0.0,
        batch_size=8,
        epochs=150,
        label_smoothing=0.0,
        mixup_enabled=False,
        tfidf_replace_rate=0.0,
        deterministic=True,
        model=desk_model_config(variant),
    )
    kw.update(overrides)
    return TrainConfig(**kw)


def full_data_train_config(variant: str = "Model1") -> TrainConfig:
    """Published hyper-parameters, for users who have the real dataset."""
    return TrainConfig(model=ModelConfig.for_variant(variant))
