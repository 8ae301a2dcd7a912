"""The HTTP surface: GET /health, POST /embed, POST /finetune.

Wire format is JSON over HTTP/1.1. Vectors are serialized at float32
precision; clients that compute in float64 widen on receipt. Models load
eagerly before the server binds its port, so a reachable service always
advertises both roles as ready.
"""

from __future__ import annotations

import os

import numpy as np
import uvicorn
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict, Field

from .backends import (
    FinetuneUnsupported,
    HashedProjectionEncoder,
    SentenceTransformerEncoder,
)
from .registry import Registry, UnknownCheckpoint

# label vocabulary shared with clients; NLI names map onto it
_CANON_LABELS = {
    "conflict": "Conflict",
    "contradiction": "Conflict",
    "duplicate": "Duplicate",
    "entailment": "Duplicate",
    "neutral": "Neutral",
}

# fixed per-role seeds so independently started services agree
ROLE_SEEDS = {"sbert": 11, "simcse": 22}


class ServiceConfig:
    """Service settings, normally read from the environment.

    ENCODER_BACKEND            "hash" (default) or "sentence-transformers"
    ENCODER_SBERT_DIM          role A dimension for the hash backend (48)
    ENCODER_SIMCSE_DIM         role B dimension for the hash backend (64)
    ENCODER_SBERT_MODEL        local model path, sentence-transformers only
    ENCODER_SIMCSE_MODEL       local model path, sentence-transformers only
    ENCODER_MAX_FINETUNE_PAIRS fine-tune requests above this answer 507
    ENCODER_SERVICE_PORT       port for ``serve`` (8900)
    """

    def __init__(self, backend: str = "hash", sbert_dim: int = 48,
                 simcse_dim: int = 64, sbert_model: str = "",
                 simcse_model: str = "", max_finetune_pairs: int = 50_000) -> None:
        self.backend = backend
        self.sbert_dim = sbert_dim
        self.simcse_dim = simcse_dim
        self.sbert_model = sbert_model
        self.simcse_model = simcse_model
        self.max_finetune_pairs = max_finetune_pairs

    @classmethod
    def from_env(cls) -> "ServiceConfig":
        env = os.environ
        return cls(
            backend=env.get("ENCODER_BACKEND", "hash"),
            sbert_dim=int(env.get("ENCODER_SBERT_DIM", "48")),
            simcse_dim=int(env.get("ENCODER_SIMCSE_DIM", "64")),
            sbert_model=env.get("ENCODER_SBERT_MODEL", ""),
            simcse_model=env.get("ENCODER_SIMCSE_MODEL", ""),
            max_finetune_pairs=int(env.get("ENCODER_MAX_FINETUNE_PAIRS", "50000")),
        )


def build_registry(cfg: ServiceConfig) -> Registry:
    reg = Registry()
    if cfg.backend == "hash":
        reg.add_root("sbert", HashedProjectionEncoder(
            "sbert", cfg.sbert_dim, ROLE_SEEDS["sbert"]))
        reg.add_root("simcse", HashedProjectionEncoder(
            "simcse", cfg.simcse_dim, ROLE_SEEDS["simcse"]))
    elif cfg.backend == "sentence-transformers":
        reg.add_root("sbert", SentenceTransformerEncoder("sbert", cfg.sbert_model))
        reg.add_root("simcse", SentenceTransformerEncoder("simcse", cfg.simcse_model))
    else:
        raise ValueError(f"unknown backend {cfg.backend!r}")
    return reg


class EmbedRequest(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    model: str
    texts: list[str]


class PairIn(BaseModel):
    text1: str
    text2: str
    label: str


class FinetuneRequest(BaseModel):
    base: str
    pairs: list[PairIn]
    params: dict = Field(default_factory=dict)


def create_app(cfg: ServiceConfig | None = None,
               registry: Registry | None = None) -> FastAPI:
    """Assemble the ASGI app; ``registry`` can be injected for tests."""
    cfg = cfg or ServiceConfig.from_env()
    reg = registry if registry is not None else build_registry(cfg)
    app = FastAPI(title="encoder-service")

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "models": reg.advertised()}

    @app.post("/embed")
    def embed(req: EmbedRequest) -> dict:
        if not req.texts:
            raise HTTPException(400, "texts must be a non-empty list")
        try:
            _, encoder = reg.get(req.model)
        except UnknownCheckpoint:
            raise HTTPException(404, f"unknown model {req.model!r}") from None
        vectors = np.asarray(encoder.embed(req.texts), dtype=np.float32)
        return {"model": req.model, "dim": int(encoder.dim),
                "vectors": [[float(x) for x in row] for row in vectors]}

    @app.post("/finetune")
    def finetune(req: FinetuneRequest) -> dict:
        if not req.pairs:
            raise HTTPException(422, "need at least one labeled pair")
        if len(req.pairs) > cfg.max_finetune_pairs:
            raise HTTPException(
                507, f"{len(req.pairs)} pairs exceed the service limit "
                     f"of {cfg.max_finetune_pairs}")
        pairs = []
        for p in req.pairs:
            label = _CANON_LABELS.get(p.label.strip().lower())
            if label is None:
                raise HTTPException(422, f"invalid label {p.label!r}")
            pairs.append({"text1": p.text1, "text2": p.text2, "label": label})
        try:
            child_id = reg.finetune(req.base, pairs, req.params)
        except UnknownCheckpoint:
            raise HTTPException(404, f"unknown base {req.base!r}") from None
        except FinetuneUnsupported as exc:
            raise HTTPException(507, str(exc)) from None
        return {"checkpoint_id": child_id, "base": req.base,
                "params": dict(req.params)}

    return app


def serve() -> None:
    """Run the sidecar on ENCODER_SERVICE_PORT (default 8900)."""
    port = int(os.environ.get("ENCODER_SERVICE_PORT", "8900"))
    uvicorn.run(create_app(), host="127.0.0.1", port=port)
