"""Clotho-style corpus ingestion and the processed-feature cache.

CSV dialect: UTF-8, comma separated, quoted fields allowed.  The caption
file needs ``file_name`` plus five caption columns; the metadata file
needs ``file_name`` and a ``keywords`` column (``;``-separated).  Features
are cached one ``.npy`` per clip next to a JSON manifest keyed by the
pre-processing config hash, so parameter changes invalidate cheaply.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import audio
from .config import FeatureParams
from .errors import IngestError, SchemaError, StaleCacheError

CAPTION_COLUMNS = [f"caption_{i}" for i in range(1, 6)]


@dataclass
class CaptionRecord:
    file_name: str
    captions: list[str]  # exactly 5, non-empty after trimming


@dataclass
class MetaRecord:
    file_name: str
    keywords_raw: str


@dataclass
class CorpusEntry:
    file_name: str
    wav_path: Path
    captions: list[str]
    keywords_raw: str
    split: str  # train | valid | test


@dataclass
class Corpus:
    entries: list[CorpusEntry]

    def split(self, name: str) -> list[CorpusEntry]:
        return [e for e in self.entries if e.split == name]

    def __len__(self) -> int:
        return len(self.entries)

    def save(self, path: str | Path) -> None:
        payload = [
            {"file_name": e.file_name, "wav_path": str(e.wav_path),
             "captions": e.captions, "keywords": e.keywords_raw, "split": e.split}
            for e in self.entries
        ]
        Path(path).write_text(json.dumps(payload, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "Corpus":
        payload = json.loads(Path(path).read_text())
        return cls([CorpusEntry(d["file_name"], Path(d["wav_path"]),
                                d["captions"], d["keywords"], d["split"])
                    for d in payload])


def _read_rows(path: str | Path) -> tuple[list[str], list[dict]]:
    path = Path(path)
    if not path.exists():
        raise IngestError(f"csv not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: missing header row")
        return list(reader.fieldnames), list(reader)


def load_caption_csv(path: str | Path) -> list[CaptionRecord]:
    header, rows = _read_rows(path)
    missing = [c for c in ["file_name"] + CAPTION_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")
    records, seen = [], set()
    for i, row in enumerate(rows, start=2):
        name = (row["file_name"] or "").strip()
        if not name:
            raise SchemaError(f"{path}:{i}: empty file_name")
        if name in seen:
            raise SchemaError(f"{path}:{i}: duplicate file_name {name!r}")
        seen.add(name)
        captions = [row[c] if row[c] is not None else "" for c in CAPTION_COLUMNS]
        if any(not c.strip() for c in captions):
            raise SchemaError(f"{path}:{i}: empty caption for {name!r}")
        records.append(CaptionRecord(name, captions))
    return records


def load_metadata_csv(path: str | Path) -> list[MetaRecord]:
    header, rows = _read_rows(path)
    missing = [c for c in ("file_name", "keywords") if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")
    records, seen = [], set()
    for i, row in enumerate(rows, start=2):
        name = (row["file_name"] or "").strip()
        if not name:
            raise SchemaError(f"{path}:{i}: empty file_name")
        if name in seen:
            raise SchemaError(f"{path}:{i}: duplicate file_name {name!r}")
        seen.add(name)
        records.append(MetaRecord(name, row["keywords"] or ""))
    return records


def build_corpus(captions: list[CaptionRecord], metadata: list[MetaRecord],
                 audio_dir: str | Path, valid_count: int, seed: int,
                 test_count: int = 0) -> Corpus:
    """Assemble entries and deterministically split them by seed."""
    audio_dir = Path(audio_dir)
    meta_by_name = {m.file_name: m for m in metadata}
    entries = []
    for rec in captions:
        if rec.file_name not in meta_by_name:
            raise IngestError(f"no metadata row for {rec.file_name!r}")
        wav = audio_dir / rec.file_name
        if not wav.exists():
            raise IngestError(f"audio file missing: {wav}")
        entries.append(CorpusEntry(rec.file_name, wav, rec.captions,
                                   meta_by_name[rec.file_name].keywords_raw, "train"))
    if valid_count + test_count > len(entries):
        raise IngestError("split sizes exceed corpus size")
    entries.sort(key=lambda e: e.file_name)
    order = np.random.default_rng(seed).permutation(len(entries))
    for j in order[:valid_count]:
        entries[j].split = "valid"
    for j in order[valid_count:valid_count + test_count]:
        entries[j].split = "test"
    return Corpus(entries)


@dataclass
class FeatureStore:
    """In-memory view over a feature cache directory."""

    root: Path
    manifest: dict
    _arrays: dict = field(default_factory=dict)

    def get(self, file_name: str) -> np.ndarray:
        if file_name not in self._arrays:
            item = self.manifest["items"].get(file_name)
            if item is None:
                raise IngestError(f"{file_name!r} not in feature cache")
            self._arrays[file_name] = np.load(self.root / item["npy"])
        return self._arrays[file_name]

    def __contains__(self, file_name: str) -> bool:
        return file_name in self.manifest["items"]

    @property
    def config_hash(self) -> str:
        return self.manifest["config_hash"]


def cache_features(corpus: Corpus, path: str | Path,
                   params: FeatureParams = FeatureParams()) -> FeatureStore:
    """Featurize every entry and persist float32 arrays plus a manifest."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    fbank = audio.mel_filterbank(params)
    items = {}
    for entry in corpus.entries:
        wave = audio.read_wav(entry.wav_path)
        feats = audio.featurize(wave, params, fbank)
        npy = entry.file_name + ".npy"
        np.save(root / npy, feats)
        items[entry.file_name] = {"npy": npy, "shape": list(feats.shape), "split": entry.split}
    manifest = {
        "config_hash": params.config_hash(),
        "feature_params": params.__dict__ | {},
        "sample_count": len(items),
        "items": items,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return FeatureStore(root, manifest)


def load_cached(path: str | Path, params: FeatureParams = FeatureParams()) -> FeatureStore:
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise IngestError(f"no feature manifest under {root}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("config_hash") != params.config_hash():
        raise StaleCacheError(
            f"cache at {root} was built with config {manifest.get('config_hash')}, "
            f"current is {params.config_hash()}")
    return FeatureStore(root, manifest)
