"""HTTP service exposing training, detection, and fixture synthesis."""

from .app import create_app

__all__ = ["create_app"]
