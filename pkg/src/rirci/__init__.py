"""Visible watermark removal: watermark component exclusion followed by
dual-path background restoration, plus synthetic dataset generation,
training, evaluation and a small HTTP service."""

__version__ = "0.1.0"
