"""HTTP service wrapping the watermark-removal core."""

from .app import create_app

__all__ = ["create_app"]
