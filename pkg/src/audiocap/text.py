"""Caption tokenization, word/keyword vocabularies, and co-occurrence lists.

Tokenization lowercases, splits on whitespace and hyphens, and drops
punctuation; contractions are kept intact (``car's`` stays one token).
Keyword surfaces are reduced to lemmas through a rule lemmatizer backed by
an editable exception table (CSV, ``surface,lemma``), shipped in
``audiocap/data/lemma_exceptions.csv``.
"""

from __future__ import annotations

import csv
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ConfigError, SchemaError

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)

WORD_COUNT_THRESHOLD = 5     # kept if count > 5
KEYWORD_COUNT_THRESHOLD = 10  # kept if count > 10

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:'[a-z]+)*")
_KEYWORD_SPLIT_RE = re.compile(r"[a-z0-9]+")

_VOWELS = set("aeiou")


def tokenize(caption: str) -> list[str]:
    """Lowercase word tokens with punctuation stripped; hyphens split."""
    return _TOKEN_RE.findall(caption.lower())


def split_keyword_field(text: str) -> list[str]:
    """Split a file name or keyword field at spaces and punctuation."""
    return _KEYWORD_SPLIT_RE.findall(text.lower())


def default_lemma_table_path() -> Path:
    return Path(str(resources.files("audiocap"))) / "data" / "lemma_exceptions.csv"


def load_lemma_exceptions(path: str | Path | None = None) -> dict[str, str]:
    path = Path(path) if path is not None else default_lemma_table_path()
    if not path.exists():
        raise ConfigError(f"lemma table not found: {path}")
    table: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 2:
                raise SchemaError(f"lemma table row must be 'surface,lemma': {row!r}")
            table[row[0].strip().lower()] = row[1].strip().lower()
    return table


def rule_lemmatize(surface: str, exceptions: dict[str, str] | None = None) -> str:
    """Strip s/es/ies/ing/ed suffixes; the exception table wins outright."""
    if exceptions and surface in exceptions:
        return exceptions[surface]
    w = surface
    if w.endswith("ies") and len(w) > 4:
        return w[:-3] + "y"
    if w.endswith("sses"):
        return w[:-2]
    if w.endswith("s") and not w.endswith(("ss", "us", "is")) and len(w) > 3:
        return w[:-1]
    for suffix in ("ing", "ed"):
        if w.endswith(suffix) and len(w) - len(suffix) >= 3:
            stem = w[: -len(suffix)]
            # singing -> sing, humming -> hum; keep a final double 's' (hissing)
            if len(stem) >= 4 and stem[-1] == stem[-2] and stem[-1] not in _VOWELS and stem[-1] != "s":
                stem = stem[:-1]
            return stem
    return w


def _ranked(counts: Counter) -> list[str]:
    # frequency-descending, ties broken lexicographically, for reproducible ids
    return sorted(counts, key=lambda t: (-counts[t], t))


@dataclass
class WordVocabulary:
    """Token<->id bijection over caption words, specials included."""

    token_to_id: dict[str, int]
    counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}
        if len(self.id_to_token) != len(self.token_to_id):
            raise SchemaError("word vocabulary ids are not unique")

    @classmethod
    def build(cls, captions: list[str]) -> "WordVocabulary":
        counts = Counter()
        for caption in captions:
            counts.update(tokenize(caption))
        kept = [t for t in _ranked(counts) if counts[t] > WORD_COUNT_THRESHOLD]
        token_to_id = {t: i for i, t in enumerate(SPECIALS)}
        for t in kept:
            token_to_id[t] = len(token_to_id)
        return cls(token_to_id, {t: counts[t] for t in kept})

    def __len__(self) -> int:
        return len(self.token_to_id)

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def bos_id(self) -> int:
        return self.token_to_id[BOS]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[EOS]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, self.token_to_id[UNK])

    def tokens_of(self, ids: list[int]) -> list[str]:
        """Strip specials and map back; inverse of encoding for in-vocab text."""
        out = []
        for i in ids:
            token = self.id_to_token[int(i)]
            if token == EOS:
                break
            if token in (PAD, BOS):
                continue
            out.append(token)
        return out

    def content_hash(self) -> str:
        import hashlib

        blob = json.dumps(sorted(self.token_to_id.items())).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        payload = [
            {"token": t, "id": i, "count": self.counts.get(t, 0)}
            for t, i in sorted(self.token_to_id.items(), key=lambda kv: kv[1])
        ]
        Path(path).write_text(json.dumps(payload, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "WordVocabulary":
        payload = json.loads(Path(path).read_text())
        return cls({e["token"]: e["id"] for e in payload},
                   {e["token"]: e["count"] for e in payload if e["token"] not in SPECIALS})


@dataclass
class KeywordVocabulary:
    """Surface->lemma map plus a dense lemma<->index bijection."""

    surface_to_lemma: dict[str, str]
    lemma_to_index: dict[str, int]
    counts: dict[str, int] = field(default_factory=dict)
    exceptions: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.index_to_lemma = {i: l for l, i in self.lemma_to_index.items()}
        for lemma in self.surface_to_lemma.values():
            if lemma not in self.lemma_to_index:
                raise SchemaError(f"surface map points at unindexed lemma {lemma!r}")

    @classmethod
    def build(cls, metadata_fields: list[str], file_names: list[str],
              lemma_table: str | Path | dict | None = None) -> "KeywordVocabulary":
        if isinstance(lemma_table, dict):
            exceptions = dict(lemma_table)
        else:
            exceptions = load_lemma_exceptions(lemma_table)
        lemma_counts: Counter = Counter()
        surface_lemmas: dict[str, str] = {}
        for text in list(metadata_fields) + list(file_names):
            for surface in split_keyword_field(text):
                lemma = rule_lemmatize(surface, exceptions)
                surface_lemmas[surface] = lemma
                lemma_counts[lemma] += 1
        kept = [l for l in _ranked(lemma_counts) if lemma_counts[l] > KEYWORD_COUNT_THRESHOLD]
        lemma_to_index = {l: i for i, l in enumerate(kept)}
        surface_to_lemma = {s: l for s, l in surface_lemmas.items() if l in lemma_to_index}
        for lemma in kept:  # a lemma always maps to itself
            surface_to_lemma.setdefault(lemma, lemma)
        return cls(surface_to_lemma, lemma_to_index,
                   {l: lemma_counts[l] for l in kept}, exceptions)

    def __len__(self) -> int:
        return len(self.lemma_to_index)

    def lookup(self, surface: str) -> int | None:
        """Index for a surface form, falling back to the rule lemmatizer."""
        lemma = self.surface_to_lemma.get(surface)
        if lemma is None:
            lemma = rule_lemmatize(surface, self.exceptions)
        return self.lemma_to_index.get(lemma)

    def save(self, path: str | Path) -> None:
        payload = {
            "lemmas": [{"token": l, "id": i, "count": self.counts.get(l, 0)}
                       for l, i in sorted(self.lemma_to_index.items(), key=lambda kv: kv[1])],
            "surfaces": self.surface_to_lemma,
            "exceptions": self.exceptions,
        }
        Path(path).write_text(json.dumps(payload, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "KeywordVocabulary":
        payload = json.loads(Path(path).read_text())
        return cls(payload["surfaces"],
                   {e["token"]: e["id"] for e in payload["lemmas"]},
                   {e["token"]: e["count"] for e in payload["lemmas"]},
                   payload.get("exceptions", {}))


def extract_keywords(tokens: list[str], kv: KeywordVocabulary) -> set[int]:
    """Deduplicated keyword indices for the lemmas of the given tokens."""
    found = set()
    for token in tokens:
        idx = kv.lookup(token)
        if idx is not None:
            found.add(idx)
    return found


@dataclass
class EncodedCaption:
    ids: list[int]            # BOS-led, EOS-terminated, PAD-filled, length N
    length: int               # token count pre-padding, clamped to max_length
    keyword_indices: set[int]
    tokens: list[str]


def encode_caption(tokens: list[str], vocab: WordVocabulary,
                   kv: KeywordVocabulary | None = None,
                   n: int = 20, max_length: int = 20) -> EncodedCaption:
    """[BOS, w_1, ..., EOS, PAD...] cropped/padded to exactly ``n`` ids."""
    ids = [vocab.bos_id] + [vocab.id_of(t) for t in tokens] + [vocab.eos_id]
    ids = ids[:n] + [vocab.pad_id] * max(0, n - len(ids))
    length = min(len(tokens), max_length)
    keywords = extract_keywords(tokens, kv) if kv is not None else set()
    return EncodedCaption(ids, length, keywords, list(tokens))


@dataclass
class CooccurrenceTable:
    """keyword index -> word ids seen in captions of items carrying it."""

    lists: dict[int, set[int]]
    word_vocab_size: int

    def words_for(self, keyword_index: int) -> set[int]:
        return self.lists.get(keyword_index, set())

    @classmethod
    def build(cls, items, kv: KeywordVocabulary, vocab: WordVocabulary) -> "CooccurrenceTable":
        """``items`` yields (caption token lists, meta keyword index set)."""
        lists: dict[int, set[int]] = {}
        for caption_token_lists, meta_keywords in items:
            word_ids = {vocab.id_of(t) for tokens in caption_token_lists for t in tokens}
            for k in meta_keywords:
                lists.setdefault(k, set()).update(word_ids)
        return cls(lists, len(vocab))

    def save(self, path: str | Path) -> None:
        payload = {str(k): sorted(v) for k, v in self.lists.items()}
        Path(path).write_text(json.dumps({"size": self.word_vocab_size, "lists": payload}))

    @classmethod
    def load(cls, path: str | Path) -> "CooccurrenceTable":
        payload = json.loads(Path(path).read_text())
        return cls({int(k): set(v) for k, v in payload["lists"].items()}, payload["size"])
