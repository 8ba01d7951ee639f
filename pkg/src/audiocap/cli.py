"""Command-line entry point.

Subcommands: ingest, build-vocab, featurize, train, sweep, caption,
evaluate, plus ``run`` which drives the whole stage DAG from a pipeline
config file.  Exit codes: 0 ok, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dataset, decoding, metrics, pipeline, training
from .audio import featurize, read_wav
from .config import DecodeConfig, FeatureParams, TrainConfig
from .errors import ConfigError, DataError
from .text import KeywordVocabulary, WordVocabulary, default_lemma_table_path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="audiocap",
                                     description="multi-task audio captioning pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load CSVs + WAVs, split, cache features")
    p.add_argument("--captions", required=True, help="caption CSV (file_name, caption_1..5)")
    p.add_argument("--metadata", required=True, help="metadata CSV (file_name, keywords)")
    p.add_argument("--audio-dir", required=True)
    p.add_argument("--cache", required=True, help="output directory for corpus + features")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--valid-count", type=int, default=2)
    p.add_argument("--test-count", type=int, default=0)
    p.add_argument("--single", action="store_true", help="skip source separation")

    p = sub.add_parser("featurize", help="featurize a WAV file or directory")
    p.add_argument("--in", dest="inp", required=True, help="wav file or directory")
    p.add_argument("--out", required=True, help="output cache directory")
    p.add_argument("--single", action="store_true")

    p = sub.add_parser("build-vocab", help="build word + keyword vocabularies")
    p.add_argument("--captions", required=True)
    p.add_argument("--metadata", required=True)
    p.add_argument("--lemma-table", default=None, help="surface,lemma CSV override")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--config", required=True, help="TrainConfig JSON")
    p.add_argument("--corpus", required=True, help="ingest cache directory")
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="train a variant set / submission recipe")
    p.add_argument("--config", required=True, help="TrainConfig JSON")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--recipe", help="submission1|submission2|submission3|submission4")
    group.add_argument("--variants", nargs="+", help="explicit variant names")

    p = sub.add_parser("caption", help="caption one WAV with an ensemble")
    p.add_argument("--checkpoints", nargs="+", required=True,
                   help="checkpoint stems or an ensemble.json")
    p.add_argument("--wav", required=True)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--block-ngram", type=int, default=2)
    p.add_argument("--tta", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--single", action="store_true")
    p.add_argument("--out", default=None, help="write the JSON here instead of stdout")

    p = sub.add_parser("evaluate", help="score candidate captions")
    p.add_argument("--candidates", required=True, help="JSON from the caption stage")
    p.add_argument("--references", required=True, help="caption CSV with 5 references")
    p.add_argument("--spice", default=None, help="JSON {\"spice\": <0..100>} for SPIDEr")
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="run pipeline stages from a config file")
    p.add_argument("--config", required=True, help="pipeline JSON config")
    p.add_argument("--stage", default="all", help="stage name or 'all'")
    return parser


def _cmd_ingest(args) -> None:
    caps = dataset.load_caption_csv(args.captions)
    meta = dataset.load_metadata_csv(args.metadata)
    corpus = dataset.build_corpus(caps, meta, args.audio_dir, args.valid_count,
                                  args.seed, args.test_count)
    cache = Path(args.cache)
    cache.mkdir(parents=True, exist_ok=True)
    corpus.save(cache / "corpus.json")
    params = FeatureParams(single=args.single)
    dataset.cache_features(corpus, cache / "features", params)
    print(f"ingested {len(corpus)} items -> {cache}")


def _cmd_featurize(args) -> None:
    inp = Path(args.inp)
    wavs = sorted(inp.glob("*.wav")) if inp.is_dir() else [inp]
    if not wavs:
        raise DataError(f"no wav files under {inp}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = FeatureParams(single=args.single)
    manifest = {"config_hash": params.config_hash(), "items": {}}
    for wav in wavs:
        feats = featurize(read_wav(wav), params)
        np.save(out / (wav.name + ".npy"), feats)
        manifest["items"][wav.name] = {"npy": wav.name + ".npy", "shape": list(feats.shape)}
    manifest["sample_count"] = len(wavs)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    print(f"featurized {len(wavs)} files -> {out}")


def _cmd_build_vocab(args) -> None:
    caps = dataset.load_caption_csv(args.captions)
    meta = dataset.load_metadata_csv(args.metadata)
    word_vocab = WordVocabulary.build([c for r in caps for c in r.captions])
    keyword_vocab = KeywordVocabulary.build(
        [m.keywords_raw for m in meta], [m.file_name for m in meta],
        args.lemma_table or default_lemma_table_path())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    word_vocab.save(out / "word_vocab.json")
    keyword_vocab.save(out / "keyword_vocab.json")
    print(f"word vocab {len(word_vocab)}, keyword vocab {len(keyword_vocab)} -> {out}")


def _load_train_inputs(corpus_dir: str, cfg: TrainConfig):
    corpus = dataset.Corpus.load(Path(corpus_dir) / "corpus.json")
    params = FeatureParams(single=False)
    store = dataset.load_cached(Path(corpus_dir) / "features", params)
    word_vocab, keyword_vocab = training.build_vocabularies(corpus)
    data = training.prepare_training_data(corpus, store, word_vocab, keyword_vocab, cfg.model)
    return data, params


def _cmd_train(args) -> None:
    cfg = TrainConfig.from_dict(json.loads(Path(args.config).read_text()))
    data, params = _load_train_inputs(args.corpus, cfg)
    result = training.train(data, cfg, args.out, params)
    manifest = {"models": [str(result.best_checkpoint)],
                "word_vocab_hash": data.word_vocab.content_hash(),
                "variants": [cfg.model.variant]}
    (Path(args.out) / "ensemble.json").write_text(json.dumps(manifest, indent=1))
    print(f"trained {cfg.model.variant}: best={result.best_checkpoint} "
          f"score={result.best_score}")


def _cmd_sweep(args) -> None:
    cfg = TrainConfig.from_dict(json.loads(Path(args.config).read_text()))
    variants = args.variants or training.resolve_recipe(args.recipe)
    data, params = _load_train_inputs(args.corpus, cfg)
    manifest = training.sweep(variants, data, cfg, args.out, params)
    print(f"swept {len(manifest['models'])} checkpoints -> {args.out}")


def _cmd_caption(args) -> None:
    paths = list(args.checkpoints)
    if len(paths) == 1 and paths[0].endswith("ensemble.json"):
        paths = json.loads(Path(paths[0]).read_text())["models"]
    spec = decoding.EnsembleSpec.load(paths)
    decode_cfg = DecodeConfig(beam_size=args.beam, block_ngram=args.block_ngram,
                              tta_crops=args.tta, seed=args.seed)
    wave = read_wav(args.wav)
    result = decoding.caption_wave(spec, wave, FeatureParams(single=args.single), decode_cfg)
    payload = json.dumps({"file": str(args.wav), **result}, indent=1)
    if args.out:
        Path(args.out).write_text(payload)
    print(payload)


def _cmd_evaluate(args) -> None:
    raw = json.loads(Path(args.candidates).read_text())
    if isinstance(raw, list):
        candidates = {c.get("file_name") or c.get("file"): c["caption"] for c in raw}
    else:
        candidates = dict(raw)
    refs = {r.file_name: r.captions for r in dataset.load_caption_csv(args.references)}
    spice = None
    if args.spice:
        spice = float(json.loads(Path(args.spice).read_text())["spice"])
    report = metrics.evaluate(candidates, refs, spice)
    Path(args.out).write_text(report.to_json())
    print(report.render_table())


def _cmd_run(args) -> None:
    cfg = pipeline.PipelineConfig.from_file(args.config)
    if args.stage == "all":
        statuses = pipeline.run_pipeline(cfg)
    else:
        statuses = {args.stage: pipeline.run_stage(args.stage, cfg)}
    for stage, status in statuses.items():
        print(f"{stage}: {status}")


_COMMANDS = {
    "ingest": _cmd_ingest,
    "featurize": _cmd_featurize,
    "build-vocab": _cmd_build_vocab,
    "train": _cmd_train,
    "sweep": _cmd_sweep,
    "caption": _cmd_caption,
    "evaluate": _cmd_evaluate,
    "run": _cmd_run,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
