"""Pipeline configuration and the stage runner behind the CLI.

Stages form a small DAG: ingest -> build-vocab -> train|sweep -> caption
-> evaluate.  Each completed stage records its config hash, seed, and
package version in ``provenance.json`` under the working directory;
reruns with an unchanged config are skipped.  The ``AC_SEED`` environment
variable overrides every seed (CI hook).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import jsonschema
import numpy as np

from . import dataset, decoding, metrics, training
from .audio import read_wav
from .config import DecodeConfig, FeatureParams, TrainConfig
from .errors import ConfigError, DataError, PrerequisiteError

PIPELINE_SCHEMA = {
    "type": "object",
    "required": ["workdir", "captions_csv", "metadata_csv", "audio_dir"],
    "properties": {
        "seed": {"type": "integer"},
        "workdir": {"type": "string"},
        "captions_csv": {"type": "string"},
        "metadata_csv": {"type": "string"},
        "audio_dir": {"type": "string"},
        "valid_count": {"type": "integer", "minimum": 0},
        "test_count": {"type": "integer", "minimum": 0},
        "single": {"type": "boolean"},
        "train": {"type": "object"},
        "decode": {
            "type": "object",
            "properties": {
                "beam_size": {"type": "integer", "minimum": 1},
                "block_ngram": {"type": "integer", "minimum": 0},
                "tta_crops": {"type": "integer", "minimum": 1},
                "log_domain_tta": {"type": "boolean"},
            },
        },
        "recipe": {"type": ["string", "null"]},
        "variants": {"type": "array", "items": {"type": "string"}},
    },
    "additionalProperties": False,
}

STAGE_ORDER = ["ingest", "build-vocab", "train", "caption", "evaluate"]
STAGE_PREREQS = {
    "ingest": [],
    "build-vocab": ["ingest"],
    "train": ["ingest", "build-vocab"],
    "sweep": ["ingest", "build-vocab"],
    "caption": ["train"],
    "evaluate": ["caption"],
}


@dataclass
class PipelineConfig:
    workdir: Path
    captions_csv: Path
    metadata_csv: Path
    audio_dir: Path
    seed: int = 0
    valid_count: int = 2
    test_count: int = 0
    single: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    recipe: str | None = None
    variants: list[str] = field(default_factory=list)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"pipeline config not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"pipeline config is not valid JSON: {exc}")
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        try:
            jsonschema.validate(raw, PIPELINE_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"pipeline config invalid: {exc.message}")
        cfg = cls(
            workdir=Path(raw["workdir"]),
            captions_csv=Path(raw["captions_csv"]),
            metadata_csv=Path(raw["metadata_csv"]),
            audio_dir=Path(raw["audio_dir"]),
            seed=raw.get("seed", 0),
            valid_count=raw.get("valid_count", 2),
            test_count=raw.get("test_count", 0),
            single=raw.get("single", False),
            train=TrainConfig.from_dict(raw.get("train", {})),
            decode=DecodeConfig(**raw.get("decode", {})),
            recipe=raw.get("recipe"),
            variants=list(raw.get("variants", [])),
        )
        env_seed = os.environ.get("AC_SEED")
        if env_seed is not None:
            cfg.seed = int(env_seed)
            cfg.train.seed = int(env_seed)
            cfg.decode.seed = int(env_seed)
        else:
            cfg.train.seed = raw.get("train", {}).get("seed", cfg.seed)
            cfg.decode.seed = raw.get("decode", {}).get("seed", cfg.seed)
        cfg._raw = raw
        return cfg

    @property
    def feature_params(self) -> FeatureParams:
        return FeatureParams(single=self.single)

    def config_hash(self) -> str:
        raw = getattr(self, "_raw", None) or {"workdir": str(self.workdir)}
        blob = json.dumps(raw, sort_keys=True) + (os.environ.get("AC_SEED") or "")
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # artifact locations
    @property
    def corpus_json(self) -> Path:
        return self.workdir / "corpus" / "corpus.json"

    @property
    def features_dir(self) -> Path:
        return self.workdir / "features"

    @property
    def vocab_dir(self) -> Path:
        return self.workdir / "vocab"

    @property
    def checkpoints_dir(self) -> Path:
        return self.workdir / "checkpoints"

    @property
    def ensemble_json(self) -> Path:
        return self.checkpoints_dir / "ensemble.json"

    @property
    def captions_json(self) -> Path:
        return self.workdir / "captions" / "captions.json"

    @property
    def report_json(self) -> Path:
        return self.workdir / "report.json"


def _package_version() -> str:
    try:
        return metadata.version("audiocap")
    except metadata.PackageNotFoundError:
        return "unknown"


class Provenance:
    def __init__(self, workdir: Path):
        self.path = workdir / "provenance.json"
        self.data = json.loads(self.path.read_text()) if self.path.exists() else {}

    def fresh(self, stage: str, cfg_hash: str) -> bool:
        entry = self.data.get(stage)
        return bool(entry and entry.get("config_hash") == cfg_hash and entry.get("completed"))

    def mark(self, stage: str, cfg_hash: str, seed: int) -> None:
        self.data[stage] = {"config_hash": cfg_hash, "seed": seed,
                            "version": _package_version(), "completed": True}
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=1))


_STAGE_OUTPUTS = {
    "ingest": lambda c: [c.corpus_json, c.features_dir / "manifest.json"],
    "build-vocab": lambda c: [c.vocab_dir / "word_vocab.json", c.vocab_dir / "keyword_vocab.json"],
    "train": lambda c: [c.ensemble_json],
    "sweep": lambda c: [c.ensemble_json],
    "caption": lambda c: [c.captions_json],
    "evaluate": lambda c: [c.report_json],
}


def run_stage(stage: str, cfg: PipelineConfig, provenance: Provenance | None = None) -> str:
    """Run one stage; returns "ok" or "skipped". Prerequisites are enforced."""
    if stage not in STAGE_PREREQS:
        raise ConfigError(f"unknown stage {stage!r}; have {sorted(STAGE_PREREQS)}")
    provenance = provenance or Provenance(cfg.workdir)
    cfg_hash = cfg.config_hash()
    for pre in STAGE_PREREQS[stage]:
        outputs = _STAGE_OUTPUTS[pre](cfg)
        if not all(p.exists() for p in outputs):
            raise PrerequisiteError(f"stage {stage!r} needs {pre!r} first")
    outputs = _STAGE_OUTPUTS[stage](cfg)
    if provenance.fresh(stage, cfg_hash) and all(p.exists() for p in outputs):
        return "skipped"
    _STAGE_IMPLS[stage](cfg)
    provenance.mark(stage, cfg_hash, cfg.seed)
    return "ok"


def run_pipeline(cfg: PipelineConfig, stages: list[str] | None = None) -> dict[str, str]:
    order = stages or STAGE_ORDER
    provenance = Provenance(cfg.workdir)
    return {stage: run_stage(stage, cfg, provenance) for stage in order}


def _stage_ingest(cfg: PipelineConfig) -> None:
    caps = dataset.load_caption_csv(cfg.captions_csv)
    meta = dataset.load_metadata_csv(cfg.metadata_csv)
    corpus = dataset.build_corpus(caps, meta, cfg.audio_dir, cfg.valid_count,
                                  cfg.seed, cfg.test_count)
    cfg.corpus_json.parent.mkdir(parents=True, exist_ok=True)
    corpus.save(cfg.corpus_json)
    dataset.cache_features(corpus, cfg.features_dir, cfg.feature_params)


def _stage_build_vocab(cfg: PipelineConfig) -> None:
    corpus = dataset.Corpus.load(cfg.corpus_json)
    word_vocab, keyword_vocab = training.build_vocabularies(corpus)
    cfg.vocab_dir.mkdir(parents=True, exist_ok=True)
    word_vocab.save(cfg.vocab_dir / "word_vocab.json")
    keyword_vocab.save(cfg.vocab_dir / "keyword_vocab.json")


def _load_training_data(cfg: PipelineConfig) -> training.TrainingData:
    corpus = dataset.Corpus.load(cfg.corpus_json)
    store = dataset.load_cached(cfg.features_dir, cfg.feature_params)
    from .text import KeywordVocabulary, WordVocabulary
    word_vocab = WordVocabulary.load(cfg.vocab_dir / "word_vocab.json")
    keyword_vocab = KeywordVocabulary.load(cfg.vocab_dir / "keyword_vocab.json")
    return training.prepare_training_data(corpus, store, word_vocab, keyword_vocab,
                                          cfg.train.model)


def _stage_train(cfg: PipelineConfig) -> None:
    data = _load_training_data(cfg)
    if cfg.recipe or cfg.variants:
        variants = cfg.variants or training.resolve_recipe(cfg.recipe)
        training.sweep(variants, data, cfg.train, cfg.checkpoints_dir, cfg.feature_params)
        return
    result = training.train(data, cfg.train, cfg.checkpoints_dir, cfg.feature_params)
    manifest = {"models": [str(result.best_checkpoint)],
                "word_vocab_hash": data.word_vocab.content_hash(),
                "variants": [cfg.train.model.variant]}
    cfg.ensemble_json.write_text(json.dumps(manifest, indent=1))


def _stage_caption(cfg: PipelineConfig) -> None:
    manifest = json.loads(cfg.ensemble_json.read_text())
    spec = decoding.EnsembleSpec.load(manifest["models"])
    corpus = dataset.Corpus.load(cfg.corpus_json)
    results = []
    for entry in corpus.entries:
        wave = read_wav(entry.wav_path)
        out = decoding.caption_wave(spec, wave, cfg.feature_params, cfg.decode)
        results.append({"file_name": entry.file_name, "split": entry.split, **out})
    cfg.captions_json.parent.mkdir(parents=True, exist_ok=True)
    cfg.captions_json.write_text(json.dumps(results, indent=1))


def _stage_evaluate(cfg: PipelineConfig) -> None:
    corpus = dataset.Corpus.load(cfg.corpus_json)
    captions = json.loads(cfg.captions_json.read_text())
    candidates = {c["file_name"]: c["caption"] for c in captions}
    references = {e.file_name: e.captions for e in corpus.entries}
    report = metrics.evaluate(candidates, references)
    cfg.report_json.write_text(report.to_json())


_STAGE_IMPLS = {
    "ingest": _stage_ingest,
    "build-vocab": _stage_build_vocab,
    "train": _stage_train,
    "sweep": _stage_train,
    "caption": _stage_caption,
    "evaluate": _stage_evaluate,
}
