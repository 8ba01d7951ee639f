import csv

import numpy as np
import pytest

from audiocap import audio, dataset
from audiocap.config import FeatureParams
from audiocap.errors import IngestError, SchemaError, StaleCacheError


def write_caption_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["file_name"] + [f"caption_{i}" for i in range(1, 6)])
        w.writerows(rows)
    return path


def write_meta_csv(path, rows, header=("file_name", "keywords")):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


class TestCaptionCsv:
    def test_single_row_read_back(self, tmp_path):
        caps = [f"caption number {i}" for i in range(1, 6)]
        path = write_caption_csv(tmp_path / "c.csv", [["a.wav"] + caps])
        records = dataset.load_caption_csv(path)
        assert len(records) == 1
        assert records[0].file_name == "a.wav"
        assert records[0].captions == caps

    def test_empty_caption_is_schema_error(self, tmp_path):
        row = ["a.wav", "one", "two", "   ", "four", "five"]
        path = write_caption_csv(tmp_path / "c.csv", [row])
        with pytest.raises(SchemaError):
            dataset.load_caption_csv(path)

    def test_missing_column_is_schema_error(self, tmp_path):
        path = tmp_path / "c.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["file_name", "caption_1"])
            w.writerow(["a.wav", "only one"])
        with pytest.raises(SchemaError):
            dataset.load_caption_csv(path)

    def test_duplicate_file_name_rejected(self, tmp_path):
        row = ["a.wav"] + ["text"] * 5
        path = write_caption_csv(tmp_path / "c.csv", [row, row])
        with pytest.raises(SchemaError):
            dataset.load_caption_csv(path)

    def test_ten_rows_order_preserved(self, tmp_path):
        rows = [[f"clip_{i:02d}.wav"] + [f"cap {i} {j}" for j in range(5)]
                for i in range(10)]
        records = dataset.load_caption_csv(write_caption_csv(tmp_path / "c.csv", rows))
        assert len(records) == 10
        assert [r.file_name for r in records] == [row[0] for row in rows]
        assert records[7].captions == rows[7][1:]

    def test_quoted_fields_allowed(self, tmp_path):
        row = ["a.wav", 'a "loud, messy" sound', "b", "c", "d", "e"]
        records = dataset.load_caption_csv(write_caption_csv(tmp_path / "c.csv", [row]))
        assert records[0].captions[0] == 'a "loud, messy" sound'


class TestMetadataCsv:
    def test_keywords_preserved_verbatim(self, tmp_path):
        path = write_meta_csv(tmp_path / "m.csv", [["a.wav", "birds;park"]])
        records = dataset.load_metadata_csv(path)
        assert records[0].keywords_raw == "birds;park"

    def test_missing_keywords_column(self, tmp_path):
        path = write_meta_csv(tmp_path / "m.csv", [["a.wav", "x"]],
                              header=("file_name", "tags"))
        with pytest.raises(SchemaError):
            dataset.load_metadata_csv(path)

    def test_ten_rows(self, tmp_path):
        rows = [[f"clip_{i}.wav", f"kw{i};other"] for i in range(10)]
        records = dataset.load_metadata_csv(write_meta_csv(tmp_path / "m.csv", rows))
        assert len(records) == 10

    def test_extra_columns_tolerated(self, tmp_path):
        path = write_meta_csv(tmp_path / "m.csv", [["a.wav", "x;y", "42"]],
                              header=("file_name", "keywords", "sound_id"))
        assert dataset.load_metadata_csv(path)[0].keywords_raw == "x;y"


def tiny_corpus_files(tmp_path, n=20):
    audio_dir = tmp_path / "wav"
    audio_dir.mkdir()
    rng = np.random.default_rng(0)
    caps, meta = [], []
    for i in range(n):
        name = f"clip_{i:02d}.wav"
        audio.write_wav(audio_dir / name, rng.normal(0, 0.1, 11025))
        caps.append(dataset.CaptionRecord(name, [f"sound {i} {j}" for j in range(5)]))
        meta.append(dataset.MetaRecord(name, "sound"))
    return caps, meta, audio_dir


class TestBuildCorpus:
    def test_split_sizes(self, tmp_path):
        caps, meta, audio_dir = tiny_corpus_files(tmp_path)
        corpus = dataset.build_corpus(caps, meta, audio_dir, valid_count=2, seed=9)
        assert len(corpus.split("train")) == 18
        assert len(corpus.split("valid")) == 2
        assert len(corpus) == 20

    def test_same_seed_same_split(self, tmp_path):
        caps, meta, audio_dir = tiny_corpus_files(tmp_path)
        c1 = dataset.build_corpus(caps, meta, audio_dir, 2, seed=9)
        c2 = dataset.build_corpus(caps, meta, audio_dir, 2, seed=9)
        assert [e.split for e in c1.entries] == [e.split for e in c2.entries]
        c3 = dataset.build_corpus(caps, meta, audio_dir, 2, seed=10)
        assert [e.split for e in c1.entries] != [e.split for e in c3.entries]

    def test_missing_wav_names_the_file(self, tmp_path):
        caps, meta, audio_dir = tiny_corpus_files(tmp_path, n=3)
        (audio_dir / "clip_01.wav").unlink()
        with pytest.raises(IngestError, match="clip_01.wav"):
            dataset.build_corpus(caps, meta, audio_dir, 1, seed=0)

    def test_missing_metadata_rejected(self, tmp_path):
        caps, meta, audio_dir = tiny_corpus_files(tmp_path, n=3)
        with pytest.raises(IngestError):
            dataset.build_corpus(caps, meta[:-1], audio_dir, 1, seed=0)

    def test_referential_integrity(self, corpus):
        names = [e.file_name for e in corpus.entries]
        assert len(set(names)) == len(names)
        for e in corpus.entries:
            assert e.wav_path.exists()
            assert len(e.captions) == 5
            assert e.split in ("train", "valid", "test")

    def test_save_load_roundtrip(self, corpus, tmp_path):
        corpus.save(tmp_path / "corpus.json")
        again = dataset.Corpus.load(tmp_path / "corpus.json")
        assert [e.file_name for e in again.entries] == [e.file_name for e in corpus.entries]
        assert [e.split for e in again.entries] == [e.split for e in corpus.entries]


class TestFeatureCache:
    def test_roundtrip_bitwise(self, tmp_path):
        caps, meta, audio_dir = tiny_corpus_files(tmp_path, n=3)
        corpus = dataset.build_corpus(caps, meta, audio_dir, 0, seed=0)
        params = FeatureParams()
        store = dataset.cache_features(corpus, tmp_path / "cache", params)
        fresh = dataset.load_cached(tmp_path / "cache", params)
        for e in corpus.entries:
            assert np.array_equal(store.get(e.file_name), fresh.get(e.file_name))

    def test_stale_cache_detected(self, tmp_path):
        caps, meta, audio_dir = tiny_corpus_files(tmp_path, n=2)
        corpus = dataset.build_corpus(caps, meta, audio_dir, 0, seed=0)
        dataset.cache_features(corpus, tmp_path / "cache", FeatureParams())
        with pytest.raises(StaleCacheError):
            dataset.load_cached(tmp_path / "cache", FeatureParams(hpss_kernel=17))

    def test_manifest_shape_for_twenty_second_clip(self, tmp_path):
        audio_dir = tmp_path / "wav"
        audio_dir.mkdir()
        t = np.arange(20 * 22050) / 22050
        audio.write_wav(audio_dir / "long.wav", 0.3 * np.sin(2 * np.pi * 220 * t))
        caps = [dataset.CaptionRecord("long.wav", ["a"] * 5)]
        meta = [dataset.MetaRecord("long.wav", "tone")]
        corpus = dataset.build_corpus(caps, meta, audio_dir, 0, seed=0)
        store = dataset.cache_features(corpus, tmp_path / "cache", FeatureParams())
        assert store.manifest["items"]["long.wav"]["shape"] == [3, 64, 216]
        assert store.manifest["sample_count"] == 1

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(IngestError):
            dataset.load_cached(tmp_path, FeatureParams())
