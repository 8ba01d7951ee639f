"""Optimization loop, validation-based model selection, and variant sweeps.

One training step: draw a batch by the IDF audio distribution, pick one
caption per clip by its IDF distribution (uniform under param2), apply
TF-IDF word replacement, crop/pad the cached features, mix audio pairs
from a random in-batch permutation, run the teacher-forced forward, and
take one AdamW step on the blended multi-task loss.  The per-step loss
breakdown goes to a JSON-lines log; the checkpoint with the best
validation score (greedy-decode CIDEr) is kept alongside the last one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import augment, decoding, losses, metrics
from .audio import apply_single, crop_or_pad
from .config import FeatureParams, ModelConfig, TrainConfig
from .dataset import Corpus, CorpusEntry, FeatureStore
from .errors import ConfigError, TrainingDivergedError
from .model import CaptionNet, build_model, save_checkpoint
from .text import (CooccurrenceTable, KeywordVocabulary, WordVocabulary,
                   encode_caption, split_keyword_field, tokenize)

SUBMISSION_RECIPES = {
    "submission1": (["Model1"] * 2 + ["Model1single"] * 2 + ["Model1param2"] * 2
                    + ["Model2"] * 2 + ["Model3"] * 2 + ["Model3param2"] * 2
                    + ["Model4"] * 2 + ["Model4single"] * 2 + ["Model4param2"] * 4),
    "submission2": (["Model1"] * 5 + ["Model1single"] * 5 + ["Model1param2"] * 5
                    + ["Model2"] * 5 + ["Model3"] * 5 + ["Model3param2"] * 5
                    + ["Model4"] * 5 + ["Model4single"] * 5 + ["Model4param2"] * 10),
    "submission3": (["Model1"] * 2 + ["Model3"] * 2 + ["Model4"] * 4
                    + ["Model5single"] * 2 + ["Model6single"] * 2),
    "submission4": (["Model1"] * 5 + ["Model3"] * 5 + ["Model4"] * 10
                    + ["Model5single"] * 5 + ["Model6single"] * 5),
}


@dataclass
class PreparedItem:
    entry: CorpusEntry
    caption_tokens: list[list[str]]      # 5 tokenizations
    encodings: list                      # 5 EncodedCaption
    z_meta: np.ndarray                   # (C_key,)
    meta_keywords: set[int]
    penalty_mask: np.ndarray             # (C_cap,)


@dataclass
class TrainingData:
    train: list[PreparedItem]
    valid: list[PreparedItem]
    word_vocab: WordVocabulary
    keyword_vocab: KeywordVocabulary
    cooccurrence: CooccurrenceTable
    idf_stats: augment.IdfStats
    caption_priors: losses.KeywordPriors
    meta_priors: losses.KeywordPriors
    store: FeatureStore


def build_vocabularies(corpus: Corpus, lemma_table=None):
    captions = [c for e in corpus.entries for c in e.captions]
    word_vocab = WordVocabulary.build(captions)
    keyword_vocab = KeywordVocabulary.build(
        [e.keywords_raw for e in corpus.entries],
        [e.file_name for e in corpus.entries], lemma_table)
    return word_vocab, keyword_vocab


def prepare_training_data(corpus: Corpus, store: FeatureStore,
                          word_vocab: WordVocabulary, keyword_vocab: KeywordVocabulary,
                          model_cfg: ModelConfig) -> TrainingData:
    """Encode captions and targets; stats/priors/tables use the train split only."""

    def prep(entry: CorpusEntry) -> PreparedItem:
        toks = [tokenize(c) for c in entry.captions]
        encs = [encode_caption(t, word_vocab, keyword_vocab,
                               model_cfg.caption_steps, model_cfg.max_length)
                for t in toks]
        meta_kws = set()
        for surface in split_keyword_field(entry.file_name) + split_keyword_field(entry.keywords_raw):
            idx = keyword_vocab.lookup(surface)
            if idx is not None:
                meta_kws.add(idx)
        z = np.zeros(len(keyword_vocab))
        z[sorted(meta_kws)] = 1.0
        return PreparedItem(entry, toks, encs, z, meta_kws, np.ones(0))

    train = [prep(e) for e in corpus.split("train")]
    valid = [prep(e) for e in corpus.split("valid")]
    table = CooccurrenceTable.build(
        ((it.caption_tokens, it.meta_keywords) for it in train),
        keyword_vocab, word_vocab)
    for it in train + valid:
        it.penalty_mask = losses.penalty_mask(it.meta_keywords, table)
    stats = augment.build_idf_stats([it.entry.captions for it in train])
    n_train = len(train)
    meta_counts = np.sum([it.z_meta for it in train], axis=0)
    cap_counts = np.zeros(len(keyword_vocab))
    for it in train:
        seen = set().union(*(e.keyword_indices for e in it.encodings)) if it.encodings else set()
        for k in seen:
            cap_counts[k] += 1
    return TrainingData(
        train, valid, word_vocab, keyword_vocab, table, stats,
        losses.KeywordPriors.from_counts(cap_counts, n_train),
        losses.KeywordPriors.from_counts(meta_counts, n_train),
        store)


def _word_targets(ids: list[int], pad_id: int) -> list[int]:
    return list(ids[1:]) + [pad_id]


def _batch_labels(items: list[PreparedItem], caption_ids: list[int],
                  vocab: WordVocabulary, dtype) -> tuple[losses.ItemLabels, torch.Tensor]:
    ids = torch.tensor([it.encodings[ci].ids for it, ci in zip(items, caption_ids)])
    targets = torch.tensor([_word_targets(it.encodings[ci].ids, vocab.pad_id)
                            for it, ci in zip(items, caption_ids)])
    z_cap = np.zeros((len(items), len(items[0].z_meta)))
    for r, (it, ci) in enumerate(zip(items, caption_ids)):
        z_cap[r, sorted(it.encodings[ci].keyword_indices)] = 1.0
    lengths = torch.tensor([it.encodings[ci].length for it, ci in zip(items, caption_ids)])
    masks = np.stack([it.penalty_mask if it.meta_keywords else np.zeros_like(it.penalty_mask)
                      for it in items])
    labels = losses.ItemLabels(
        word_targets=targets,
        z_caption=torch.as_tensor(z_cap, dtype=dtype),
        z_meta=torch.as_tensor(np.stack([it.z_meta for it in items]), dtype=dtype),
        length=lengths,
        penalty_mask=torch.as_tensor(masks, dtype=dtype),
        has_meta_keywords=True,
    )
    return labels, ids


@dataclass
class TrainResult:
    best_checkpoint: Path
    last_checkpoint: Path
    best_score: float | None
    history: list = field(default_factory=list)
    log_path: Path | None = None
    steps: int = 0


def train(data: TrainingData, cfg: TrainConfig, out_dir: str | Path,
          feature_params: FeatureParams = FeatureParams()) -> TrainResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.deterministic:
        torch.set_num_threads(1)
    if not data.train:
        raise ConfigError("empty training split")

    ss = np.random.SeedSequence(cfg.seed)
    sample_rng, crop_rng, mix_rng, valid_rng = map(np.random.default_rng, ss.spawn(4))
    torch.manual_seed(cfg.seed)
    model = CaptionNet(cfg.model, len(data.word_vocab), len(data.keyword_vocab))
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate,
                                  weight_decay=cfg.weight_decay)
    dtype = next(model.parameters()).dtype

    n_train = len(data.train)
    steps_per_epoch = max(1, math.ceil(n_train / cfg.batch_size))
    audio_probs = data.idf_stats.audio_probs if cfg.idf_audio_sampling else None
    log_path = out / "train_log.jsonl"
    log_fh = open(log_path, "w")
    history: list[dict] = []
    best_score, best_path = None, out / "best"
    last_path = out / "last"
    step = 0
    ckpt_extra = {
        "train_config": cfg.to_dict(),
        "feature_params": feature_params.__dict__ | {},
        "word_vocab_hash": data.word_vocab.content_hash(),
        "word_vocab_file": "word_vocab.json",
        "keyword_vocab_file": "keyword_vocab.json",
    }
    data.word_vocab.save(out / "word_vocab.json")
    data.keyword_vocab.save(out / "keyword_vocab.json")

    try:
        for epoch in range(cfg.epochs):
            model.train()
            for _ in range(steps_per_epoch):
                idx = sample_rng.choice(n_train, size=cfg.batch_size, replace=True,
                                        p=audio_probs)
                items = [data.train[i] for i in idx]
                caption_ids = [
                    int(sample_rng.choice(len(it.entry.captions),
                                          p=None if (cfg.model.param2 or not cfg.idf_caption_sampling)
                                          else data.idf_stats.caption_probs[i]))
                    for i, it in zip(idx, items)
                ]
                if cfg.tfidf_replace_rate > 0:
                    items, caption_ids = _replace_words(
                        items, caption_ids, data, cfg, sample_rng)
                feats = [crop_or_pad(_features_for(it, data.store, cfg.model),
                                     cfg.model.crop_frames, crop_rng)
                         for it in items]
                x = torch.as_tensor(np.stack(feats), dtype=dtype)

                labels_a, ids_a = _batch_labels(items, caption_ids, data.word_vocab, dtype)
                if cfg.mixup_enabled:
                    beta = augment.draw_mixup(mix_rng, cfg.mixup_alpha)
                    perm = augment.mixup_partners(len(items), mix_rng)
                    x = torch.as_tensor(
                        np.stack([augment.mix_audio(feats[i], feats[int(j)], beta)
                                  for i, j in enumerate(perm)]), dtype=dtype)
                    partner_items = [items[int(j)] for j in perm]
                    partner_caps = [caption_ids[int(j)] for j in perm]
                    labels_b, ids_b = _batch_labels(partner_items, partner_caps,
                                                    data.word_vocab, dtype)
                else:
                    beta, labels_b, ids_b = 1.0, None, None

                enc, posteriors = model.forward_teacher_forced(x, ids_a, ids_b, beta)
                total, breakdown = losses.total_loss(
                    enc, posteriors, labels_a, labels_b, beta, step,
                    data.caption_priors, data.meta_priors, data.word_vocab.pad_id,
                    cfg.label_smoothing, cfg.model.param2)
                if not torch.isfinite(total):
                    dump = {"step": step, "epoch": epoch, "breakdown": breakdown.to_dict(),
                            "lr": cfg.learning_rate}
                    (out / "diverged_dump.json").write_text(json.dumps(dump, indent=1))
                    raise TrainingDivergedError(f"non-finite loss at step {step}", dump)
                optimizer.zero_grad()
                total.backward()
                optimizer.step()
                step += 1
                log_fh.write(json.dumps(breakdown.to_dict()) + "\n")

            record = {"epoch": epoch, "step": step, "train_total": breakdown.total}
            if data.valid:
                score = validation_score(model, data, cfg, valid_rng)
                record["valid_score"] = score
                if best_score is None or score > best_score:
                    best_score = score
                    save_checkpoint(best_path, model,
                                    ckpt_extra | {"step": step, "valid_score": score})
            history.append(record)
        save_checkpoint(last_path, model, ckpt_extra | {"step": step})
        if best_score is None:  # no validation split: last is best
            save_checkpoint(best_path, model, ckpt_extra | {"step": step})
    finally:
        log_fh.close()
    (out / "history.json").write_text(json.dumps(history, indent=1))
    return TrainResult(best_path.with_suffix(".json"), last_path.with_suffix(".json"),
                       best_score, history, log_path, step)


def _features_for(item: PreparedItem, store: FeatureStore, cfg: ModelConfig) -> np.ndarray:
    x = store.get(item.entry.file_name)
    return apply_single(x) if cfg.single else x


def _replace_words(items, caption_ids, data: TrainingData, cfg: TrainConfig, rng):
    """Clone the prepared items with TF-IDF-replaced caption tokens."""
    out_items, out_caps = [], []
    for it, ci in zip(items, caption_ids):
        tokens = it.caption_tokens[ci]
        protected = {t for t in tokens if data.keyword_vocab.lookup(t) is not None}
        replaced = augment.tfidf_word_replacement(
            tokens, data.idf_stats, rng, cfg.tfidf_replace_rate, protected)
        if replaced != tokens:
            enc = encode_caption(replaced, data.word_vocab, data.keyword_vocab,
                                 cfg.model.caption_steps, cfg.model.max_length)
            # keyword targets stay tied to the original ground truth
            enc.keyword_indices = it.encodings[ci].keyword_indices
            new_encs = list(it.encodings)
            new_encs[ci] = enc
            it = PreparedItem(it.entry, it.caption_tokens, new_encs, it.z_meta,
                              it.meta_keywords, it.penalty_mask)
        out_items.append(it)
        out_caps.append(ci)
    return out_items, out_caps


def validation_score(model: CaptionNet, data: TrainingData, cfg: TrainConfig,
                     rng: np.random.Generator) -> float:
    """Greedy-decode CIDEr over the validation split (fast model selection).

    With a single validation item CIDEr is undefined; fall back to the
    negative teacher-forced word loss.
    """
    model.eval()
    if len(data.valid) >= 2:
        pairs = []
        for it in data.valid:
            crop = crop_or_pad(_features_for(it, data.store, cfg.model),
                               cfg.model.crop_frames, rng)
            decoder = decoding.EnsembleDecoder([model], [crop])
            hyp = decoding.beam_search(decoder, data.word_vocab, beam_size=1,
                                       block_ngram=2, max_steps=cfg.model.caption_steps)
            cand = data.word_vocab.tokens_of(list(hyp.ids))
            pairs.append(metrics.EvalPair(cand, it.caption_tokens))
        return metrics.cider(pairs)
    total = 0.0
    with torch.no_grad():
        for it in data.valid:
            crop = crop_or_pad(_features_for(it, data.store, cfg.model),
                               cfg.model.crop_frames, rng)
            x = torch.as_tensor(crop[None], dtype=next(model.parameters()).dtype)
            ids = torch.tensor([it.encodings[0].ids])
            _, post = model.forward_teacher_forced(x, ids)
            targets = torch.tensor([_word_targets(it.encodings[0].ids, data.word_vocab.pad_id)])
            total += float(losses.word_loss(post, targets, data.word_vocab.pad_id, 0.0))
    return -total / max(1, len(data.valid))


def teacher_forced_word_loss(model: CaptionNet, data: TrainingData, cfg: TrainConfig,
                             items: list[PreparedItem], caption_ids: list[int],
                             rng: np.random.Generator) -> float:
    """Clean (unsmoothed, unmixed) word loss over given items."""
    model.eval()
    dtype = next(model.parameters()).dtype
    feats = [crop_or_pad(_features_for(it, data.store, cfg.model),
                         cfg.model.crop_frames, rng) for it in items]
    x = torch.as_tensor(np.stack(feats), dtype=dtype)
    ids = torch.tensor([it.encodings[ci].ids for it, ci in zip(items, caption_ids)])
    targets = torch.tensor([_word_targets(it.encodings[ci].ids, data.word_vocab.pad_id)
                            for it, ci in zip(items, caption_ids)])
    with torch.no_grad():
        _, post = model.forward_teacher_forced(x, ids)
        return float(losses.word_loss(post, targets, data.word_vocab.pad_id, 0.0))


def derive_variant_config(base: ModelConfig, name: str) -> ModelConfig:
    """Variant config inheriting the base dimensions (Model6 keeps its own)."""
    inherit = dict(
        length_embed_dim=base.length_embed_dim, top_keywords=base.top_keywords,
        max_length=base.max_length, caption_steps=base.caption_steps,
        mhsa_heads=base.mhsa_heads, mel_bins=base.mel_bins,
        crop_frames=base.crop_frames, cnn_channels=base.cnn_channels,
    )
    if not name.startswith("Model6"):
        inherit["hidden_dim"] = base.hidden_dim
        inherit["encoder_blstm_layers"] = base.encoder_blstm_layers
    return ModelConfig.for_variant(name, **inherit)


def resolve_recipe(recipe: str) -> list[str]:
    if recipe not in SUBMISSION_RECIPES:
        raise ConfigError(f"unknown recipe {recipe!r}; have {sorted(SUBMISSION_RECIPES)}")
    return list(SUBMISSION_RECIPES[recipe])


def sweep(variants: list[str], data: TrainingData, base_cfg: TrainConfig,
          out_dir: str | Path, feature_params: FeatureParams = FeatureParams()) -> dict:
    """Train one checkpoint per variant instance and write an ensemble manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stems = []
    for i, name in enumerate(variants):
        cfg_i = TrainConfig.from_dict(base_cfg.to_dict())
        cfg_i.model = derive_variant_config(base_cfg.model, name)
        cfg_i.seed = base_cfg.seed + i   # duplicates get independent seeds
        result = train(data, cfg_i, out / f"m{i:02d}_{name}", feature_params)
        stems.append(str(result.best_checkpoint))
    manifest = {"models": stems, "word_vocab_hash": data.word_vocab.content_hash(),
                "variants": list(variants)}
    (out / "ensemble.json").write_text(json.dumps(manifest, indent=1))
    return manifest
