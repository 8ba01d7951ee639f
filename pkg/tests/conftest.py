import numpy as np
import pytest
import torch

from audiocap import config, dataset, synthetic, training

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def synth_paths(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    return synthetic.make_synthetic_corpus(
        root, synthetic.SyntheticSpec(n_items=10), seed=7)


@pytest.fixture(scope="session")
def corpus(synth_paths):
    caps = dataset.load_caption_csv(synth_paths["captions_csv"])
    meta = dataset.load_metadata_csv(synth_paths["metadata_csv"])
    return dataset.build_corpus(caps, meta, synth_paths["audio_dir"],
                                valid_count=2, seed=1)


@pytest.fixture(scope="session")
def feature_params():
    return config.FeatureParams()


@pytest.fixture(scope="session")
def store(corpus, feature_params, tmp_path_factory):
    return dataset.cache_features(corpus, tmp_path_factory.mktemp("feats"),
                                  feature_params)


@pytest.fixture(scope="session")
def vocabs(corpus):
    return training.build_vocabularies(corpus)


@pytest.fixture(scope="session")
def desk_cfg():
    return config.desk_train_config()


@pytest.fixture(scope="session")
def training_data(corpus, store, vocabs, desk_cfg):
    word_vocab, keyword_vocab = vocabs
    return training.prepare_training_data(corpus, store, word_vocab,
                                          keyword_vocab, desk_cfg.model)


@pytest.fixture(scope="session")
def mini_run(training_data, desk_cfg, feature_params, tmp_path_factory):
    """A couple of epochs of real training, shared by smoke tests."""
    cfg = config.desk_train_config(epochs=2)
    out = tmp_path_factory.mktemp("mini_run")
    result = training.train(training_data, cfg, out, feature_params)
    return cfg, result


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
