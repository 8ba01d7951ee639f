"""IDF-driven sample selection, TF-IDF word replacement, and mix-up.

Document conventions: for audio selection a "document" is the five
captions of one training clip concatenated; for caption selection the
five captions of the chosen clip are the documents.  IDF is ln(N / df)
with df clamped to at least one, so a word seen in every document scores
zero and a corpus with a single document degenerates to the uniform
fallback (flagged on the stats object).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .text import tokenize


def _idf_map(documents: list[list[str]]) -> tuple[dict[str, float], int]:
    n = len(documents)
    df = Counter()
    for doc in documents:
        df.update(set(doc))
    return {w: math.log(n / df[w]) for w in df}, n


def _normalized_average_idf(documents: list[list[str]], idf: dict[str, float],
                            n_docs: int) -> tuple[np.ndarray, bool]:
    """Per-document normalized mean IDF; falls back to uniform if all zero."""
    avg = np.array([
        np.mean([idf.get(w, math.log(max(n_docs, 1))) for w in doc]) if doc else 0.0
        for doc in documents
    ])
    total = avg.sum()
    if total <= 0:
        return np.full(len(documents), 1.0 / len(documents)), True
    return avg / total, False


@dataclass
class IdfStats:
    """Selection distributions and replacement weights for one training split."""

    idf: dict[str, float]
    n_documents: int
    audio_probs: np.ndarray                  # categorical over training clips
    caption_probs: np.ndarray                # (n_clips, 5) per-clip categoricals
    uniform_fallback: bool                   # true when every IDF was zero
    corpus_counts: Counter = field(default_factory=Counter)

    def idf_of(self, word: str) -> float:
        # unseen words take the maximal score ln(N/1)
        return self.idf.get(word, math.log(max(self.n_documents, 1)))


def build_idf_stats(caption_sets: list[list[str]]) -> IdfStats:
    """``caption_sets`` holds the (five) raw captions of each training clip."""
    if not caption_sets:
        raise DataError("cannot build IDF statistics from an empty corpus")
    sentences = [[t for cap in caps for t in tokenize(cap)] for caps in caption_sets]
    idf, n = _idf_map(sentences)
    audio_probs, fallback = _normalized_average_idf(sentences, idf, n)
    caption_probs = np.stack([caption_selection_distribution(caps) for caps in caption_sets])
    counts = Counter(t for doc in sentences for t in doc)
    return IdfStats(idf, n, audio_probs, caption_probs, fallback, counts)


def caption_selection_distribution(captions: list[str], uniform: bool = False) -> np.ndarray:
    """Per-caption pick probabilities within one clip (uniform under param2)."""
    k = len(captions)
    if uniform:
        return np.full(k, 1.0 / k)
    docs = [tokenize(c) for c in captions]
    idf, n = _idf_map(docs)
    probs, _ = _normalized_average_idf(docs, idf, n)
    return probs


def audio_selection_distribution(stats: IdfStats) -> np.ndarray:
    return stats.audio_probs


def tfidf_word_replacement(tokens: list[str], stats: IdfStats,
                           rng: np.random.Generator, rate: float,
                           protected: set[str] | frozenset[str] = frozenset()) -> list[str]:
    """Replace low TF-IDF tokens, never touching ``protected`` ones.

    Within the caption, each token's replacement probability is
    min(1, rate * (max_score - score) / mean_deficit) with
    score = count_in_caption * idf, so the expected fraction of replaced
    tokens is about ``rate`` and the top-scoring token is never replaced.
    Replacements are drawn from the training unigrams weighted by
    (max_corpus_score - corpus_score), favouring unremarkable words.
    """
    if rate <= 0 or not tokens:
        return list(tokens)
    tf = Counter(tokens)
    scores = np.array([tf[t] * stats.idf_of(t) for t in tokens])
    deficit = scores.max() - scores
    z = deficit.mean()
    if z <= 0:
        return list(tokens)
    probs = np.minimum(1.0, rate * deficit / z)

    vocab, weights = _replacement_weights(stats)
    out = list(tokens)
    for i, token in enumerate(tokens):
        if token in protected:
            continue
        if rng.random() < probs[i]:
            out[i] = vocab[rng.choice(len(vocab), p=weights)]
    return out


def _replacement_weights(stats: IdfStats) -> tuple[list[str], np.ndarray]:
    if not hasattr(stats, "_repl_cache"):
        vocab = sorted(stats.corpus_counts)
        scores = np.array([stats.corpus_counts[w] * stats.idf_of(w) for w in vocab])
        weights = scores.max() - scores
        total = weights.sum()
        weights = weights / total if total > 0 else np.full(len(vocab), 1.0 / len(vocab))
        stats._repl_cache = (vocab, weights)
    return stats._repl_cache


def replacement_probabilities(tokens: list[str], stats: IdfStats, rate: float,
                              protected: set[str] | frozenset[str] = frozenset()) -> np.ndarray:
    """Analytic per-position replacement probabilities (for verification)."""
    if rate <= 0 or not tokens:
        return np.zeros(len(tokens))
    tf = Counter(tokens)
    scores = np.array([tf[t] * stats.idf_of(t) for t in tokens])
    deficit = scores.max() - scores
    z = deficit.mean()
    if z <= 0:
        return np.zeros(len(tokens))
    probs = np.minimum(1.0, rate * deficit / z)
    probs[[t in protected for t in tokens]] = 0.0
    return probs


def draw_mixup(rng: np.random.Generator, alpha: float = 0.4) -> float:
    """Mixing coefficient from Beta(alpha, alpha), kept inside (0, 1)."""
    beta = float(rng.beta(alpha, alpha))
    eps = np.finfo(np.float64).tiny
    return min(max(beta, eps), 1.0 - 1e-12)


def mix_audio(x1: np.ndarray, x2: np.ndarray, beta: float) -> np.ndarray:
    if x1.shape != x2.shape:
        raise DataError(f"mixup shape mismatch: {x1.shape} vs {x2.shape}")
    if beta == 1.0:
        return x1
    if beta == 0.0:
        return x2
    return beta * x1 + (1.0 - beta) * x2


def mixup_partners(batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Partner index for each batch position (random permutation)."""
    return rng.permutation(batch_size)
