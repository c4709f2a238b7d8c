"""Tokenizer-free byte-burst traffic classification with selective state-space models."""

__version__ = "0.1.0"
