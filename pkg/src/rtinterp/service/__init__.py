"""HTTP service exposing streaming reconstruction sessions."""
from .app import app, create_app

__all__ = ["app", "create_app"]
