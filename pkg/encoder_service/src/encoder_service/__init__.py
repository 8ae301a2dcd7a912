"""Sentence-encoder sidecar: two model roles behind /embed, /finetune, /health."""

from .app import ServiceConfig, build_registry, create_app, serve
from .backends import FinetuneUnsupported, HashedProjectionEncoder
from .registry import CheckpointInfo, Registry, UnknownCheckpoint

__version__ = "0.1.0"

__all__ = [
    "CheckpointInfo",
    "FinetuneUnsupported",
    "HashedProjectionEncoder",
    "Registry",
    "ServiceConfig",
    "UnknownCheckpoint",
    "build_registry",
    "create_app",
    "serve",
    "__version__",
]
