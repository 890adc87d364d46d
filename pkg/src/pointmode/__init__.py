"""Mixture-of-domain-experts point-cloud model with block-to-scene pretraining."""

__version__ = "0.1.0"
