"""Unsupervised discrete subword units (Multilabel-Binary Vectors) for voice conversion."""

__version__ = "0.1.0"
