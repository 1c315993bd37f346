"""Desk-scale abstractive summarization with multi-stage pretraining."""

__version__ = "0.1.0"
