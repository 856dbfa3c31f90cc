"""HTTP service wrapping the analytics core for multi-client use."""

from .app import AppState, create_app

__all__ = ["AppState", "create_app"]
