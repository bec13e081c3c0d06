"""Autoencoder embeddings under pixel-wise and perceptual loss, scored by downstream probes."""

__version__ = "0.1.0"
