"""HTTP sidecar serving seeded text paraphrases."""

from .app import create_app, serve
from .backends import RuleBackend, load_backend

__all__ = ["create_app", "serve", "RuleBackend", "load_backend"]
__version__ = "0.1.0"
