"""Beam search with n-gram blocking, test-time augmentation, ensembling.

Any object with ``start() -> state`` and ``step(state, token) ->
(state, logprobs)`` can drive the search; the real driver wraps one or
more checkpoints evaluated over several random crops of the input, with
log-probabilities averaged per model over its crops and then across
models.  Hypotheses that would repeat an n-gram (n = 2 by default) are
discarded; finished hypotheses are frozen and compete by raw cumulative
log-probability (no length normalization).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import audio
from .config import DecodeConfig, FeatureParams
from .errors import VocabularyMismatchError
from .model import CaptionNet, load_checkpoint
from .text import WordVocabulary

log = logging.getLogger(__name__)


@dataclass
class BeamHypothesis:
    ids: tuple[int, ...]               # BOS-led token ids
    logprob: float
    ngrams: frozenset[tuple[int, ...]]
    finished: bool
    state: object = None               # decoder state after consuming ids
    next_logprobs: np.ndarray | None = None


def tta_crops(x: np.ndarray, count: int, rng: np.random.Generator,
              frames: int = 216) -> list[np.ndarray]:
    """``count`` independent random crop/pad results of one feature stack."""
    return [audio.crop_or_pad(x, frames, rng) for _ in range(count)]


class EnsembleDecoder:
    """Steps every (model, crop) pair in lockstep and averages log-probs."""

    def __init__(self, models: list[CaptionNet], crops: list[np.ndarray],
                 log_domain: bool = True, dtype: torch.dtype = torch.float32):
        if not models:
            raise VocabularyMismatchError("ensemble needs at least one model")
        sizes = {m.word_vocab_size for m in models}
        if len(sizes) != 1:
            raise VocabularyMismatchError(f"word vocabulary sizes differ: {sizes}")
        self.vocab_size = sizes.pop()
        self.models = models
        self.log_domain = log_domain
        self.contexts = []
        with torch.no_grad():
            for model in models:
                stack = np.stack([audio.apply_single(c) if model.cfg.single else c
                                  for c in crops])
                batch = torch.as_tensor(stack, dtype=dtype)
                self.contexts.append(model.encode_context(batch))

    def start(self):
        return [ctx.decoder_state for ctx in self.contexts]

    def step(self, state, token: int):
        new_state, per_model = [], []
        with torch.no_grad():
            for model, ctx, st in zip(self.models, self.contexts, state):
                n_crops = st[0].shape[0]
                emb = model.word_embedding(torch.full((n_crops,), token, dtype=torch.long))
                posterior, st2 = model.decode_step(emb, st, ctx.meta_embedding)
                new_state.append(st2)
                p = posterior.double().clamp_min(1e-30)
                if self.log_domain:
                    per_model.append(torch.log(p).mean(dim=0))
                else:
                    per_model.append(torch.log(p.mean(dim=0)))
        return new_state, torch.stack(per_model).mean(dim=0).numpy()


class ToyTableDecoder:
    """Prefix-keyed posterior tables for oracle tests; stateless."""

    def __init__(self, tables: dict[tuple[int, ...], np.ndarray], vocab_size: int):
        self.tables = tables
        self.vocab_size = vocab_size

    def start(self):
        return ()

    def step(self, state, token: int):
        prefix = state + (token,)
        probs = self.tables[prefix]
        return prefix, np.log(np.maximum(probs, 1e-300))


def beam_search(decoder, vocab: WordVocabulary | None = None, beam_size: int = 5,
                block_ngram: int = 2, max_steps: int = 20,
                bos_id: int | None = None, eos_id: int | None = None,
                pad_id: int | None = None) -> BeamHypothesis:
    """Best finished hypothesis under repeated-n-gram blocking.

    Returns the hypothesis (BOS-led ids, EOS included when emitted); use
    ``strip_ids`` / the vocabulary to recover tokens.  If every expansion
    is blocked before anything finishes, the best live hypothesis from
    the previous step is returned and a warning logged.
    """
    if vocab is not None:
        bos_id, eos_id, pad_id = vocab.bos_id, vocab.eos_id, vocab.pad_id
    banned = {bos_id, pad_id}

    state, lp = _advance(decoder, decoder.start(), bos_id)
    live = [BeamHypothesis((bos_id,), 0.0, frozenset(), False, state, lp)]
    finished: list[BeamHypothesis] = []
    blocked_out = False
    for _ in range(max_steps):
        candidates = []
        for hyp in live:
            for tok in range(len(hyp.next_logprobs)):
                if tok in banned:
                    continue
                ngram = hyp.ids[-(block_ngram - 1):] + (tok,) if block_ngram > 1 else (tok,)
                if block_ngram > 0 and ngram in hyp.ngrams:
                    continue
                candidates.append((hyp.logprob + float(hyp.next_logprobs[tok]), hyp, tok, ngram))
        candidates.sort(key=lambda c: (-c[0], c[1].ids, c[2]))
        next_live = []
        for score, hyp, tok, ngram in candidates:
            ids = hyp.ids + (tok,)
            ngrams = hyp.ngrams | {ngram}
            if tok == eos_id:
                finished.append(BeamHypothesis(ids, score, ngrams, True))
            elif len(next_live) < beam_size:
                st, nlp = _advance(decoder, hyp.state, tok)
                next_live.append(BeamHypothesis(ids, score, ngrams, False, st, nlp))
        if not next_live:
            blocked_out = True
            break
        live = next_live
    if not blocked_out:
        # anything alive after the full step budget is finished by length
        finished.extend(BeamHypothesis(h.ids, h.logprob, h.ngrams, True) for h in live)
    if not finished:
        log.warning("beam search: all hypotheses blocked; returning best unfinished")
        return max(live, key=lambda h: h.logprob) if live else \
            BeamHypothesis((bos_id,), 0.0, frozenset(), False)
    return max(finished, key=lambda h: (h.logprob, h.ids))


def _advance(decoder, state, token):
    state, logprobs = decoder.step(state, token)
    return state, np.asarray(logprobs, dtype=np.float64)


def strip_ids(ids: tuple[int, ...], bos_id: int, eos_id: int, pad_id: int) -> list[int]:
    out = []
    for i in ids:
        if i == eos_id:
            break
        if i in (bos_id, pad_id):
            continue
        out.append(i)
    return out


def step_logprobs(decoder, prefix: list[int]) -> np.ndarray:
    """Log-probability vector for the token following ``prefix`` (BOS-led)."""
    state = decoder.start()
    for token in prefix:
        state, logprobs = decoder.step(state, token)
    return np.asarray(logprobs, dtype=np.float64)


@dataclass
class EnsembleSpec:
    """Checkpoint stems plus the shared vocabulary they decode with."""

    checkpoints: list[Path]
    word_vocab: WordVocabulary
    models: list[CaptionNet]

    @classmethod
    def load(cls, checkpoint_paths: list[str | Path]) -> "EnsembleSpec":
        models, hashes, vocab = [], set(), None
        paths = [Path(p) for p in checkpoint_paths]
        for p in paths:
            model, manifest = load_checkpoint(p)
            models.append(model)
            hashes.add(manifest.get("word_vocab_hash"))
            vocab_file = manifest.get("word_vocab_file")
            if vocab is None and vocab_file:
                vocab = WordVocabulary.load((p.parent / vocab_file).resolve())
        if len(hashes) != 1:
            raise VocabularyMismatchError(f"checkpoints disagree on vocabulary: {hashes}")
        if vocab is None:
            raise VocabularyMismatchError("checkpoints carry no word vocabulary reference")
        if vocab.content_hash() != hashes.pop():
            raise VocabularyMismatchError("vocabulary file does not match checkpoint hash")
        return cls(paths, vocab, models)


def caption_wave(spec: EnsembleSpec, wave: audio.Waveform,
                 feature_params: FeatureParams = FeatureParams(),
                 decode_cfg: DecodeConfig = DecodeConfig(),
                 crop_frames: int | None = None) -> dict:
    """featurize -> TTA crops -> beam search -> detokenized caption."""
    feats = audio.featurize(wave, feature_params)
    rng = np.random.default_rng(decode_cfg.seed)
    frames = crop_frames or spec.models[0].cfg.crop_frames
    crops = tta_crops(feats, decode_cfg.tta_crops, rng, frames)
    decoder = EnsembleDecoder(spec.models, crops, decode_cfg.log_domain_tta)
    hyp = beam_search(decoder, spec.word_vocab, decode_cfg.beam_size,
                      decode_cfg.block_ngram, spec.models[0].cfg.caption_steps)
    tokens = spec.word_vocab.tokens_of(list(hyp.ids))
    return {"caption": " ".join(tokens), "logprob": hyp.logprob}
