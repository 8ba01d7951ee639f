"""Multi-task audio captioning: features, network, training, decoding."""

__version__ = "0.1.0"
