"""Encoder backends.

The default backend is a deterministic hash-projection model: texts are
featurized by salted token hashing and projected to the advertised
dimension by a trainable weight matrix, so the full checkpoint lifecycle
(including real fine-tuning) runs with no model downloads. An adapter
for local sentence-transformers weights is provided for deployments that
have them; it serves embeddings only.
"""

from __future__ import annotations

import hashlib
import re
from typing import Mapping, Sequence

import numpy as np


class FinetuneUnsupported(Exception):
    """Raised by backends that serve a frozen model family."""


_TOKEN = re.compile(r"[a-z0-9]+")

# contrastive recipe per label: duplicates are pulled together, the other
# two relations are pushed apart up to a squared-distance margin
_PULL_LABEL = "Duplicate"
_PUSH_MARGIN = {"Conflict": 1.0, "Neutral": 0.5}


class HashedProjectionEncoder:
    """Salted token hashing into a fixed feature space, then a trainable
    linear projection to the advertised dimension.

    Deterministic end to end: the feature map depends only on (role,
    token) content hashes and the initial projection only on the seed, so
    equal (checkpoint, text) always yields equal vectors. ``finetune``
    copies the projection and nudges the copy with a margin-based
    contrastive objective; the parent weights are never touched.
    """

    n_features = 512

    def __init__(self, role: str, dim: int, seed: int,
                 weights: np.ndarray | None = None) -> None:
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.role = role
        self.dim = dim
        self.seed = seed
        if weights is None:
            rng = np.random.default_rng([seed, dim])
            weights = rng.normal(size=(dim, self.n_features)) / np.sqrt(self.n_features)
        self.W = weights

    @property
    def base_model(self) -> str:
        return f"hash-proj-{self.role}-{self.dim}"

    def _features(self, text: str) -> np.ndarray:
        phi = np.zeros(self.n_features)
        for tok in _TOKEN.findall(text.lower()) or ["<empty>"]:
            digest = hashlib.blake2b(f"{self.role}|{tok}".encode("utf-8"),
                                     digest_size=8).digest()
            idx = int.from_bytes(digest[:4], "little") % self.n_features
            phi[idx] += 1.0 if digest[4] & 1 else -1.0
        norm = float(np.linalg.norm(phi))
        return phi / norm if norm else phi

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """(len(texts), dim) unit-norm rows, order-aligned with the input."""
        U = np.stack([self._features(t) for t in texts]) @ self.W.T
        return U / np.maximum(np.linalg.norm(U, axis=1, keepdims=True), 1e-12)

    def finetune(self, pairs: Sequence[Mapping[str, str]],
                 params: Mapping) -> "HashedProjectionEncoder":
        """New encoder with a tuned copy of the projection.

        Hyperparameters come from ``params`` (lr, epochs, seed); anything
        omitted falls back to small defaults. The update order is drawn
        from a generator seeded by (model seed, request seed), so a given
        (base, pairs, params) request reproduces the same child weights.
        """
        lr = float(params.get("lr", 0.05))
        epochs = int(params.get("epochs", 5))
        rng = np.random.default_rng([self.seed, int(params.get("seed", 0))])
        feats = [(self._features(p["text1"]), self._features(p["text2"]),
                  p["label"]) for p in pairs]
        W = self.W.copy()
        for _ in range(epochs):
            for i in rng.permutation(len(feats)):
                f1, f2, label = feats[i]
                delta = f1 - f2
                d = W @ delta
                if label == _PULL_LABEL:
                    step = -2.0 * lr  # descend ||W(f1-f2)||^2
                else:
                    margin = _PUSH_MARGIN[label]
                    if float(d @ d) >= margin * margin:
                        continue
                    step = 2.0 * lr  # ascend it while inside the margin
                W += step * np.outer(d, delta)
        return HashedProjectionEncoder(self.role, self.dim, self.seed, weights=W)


class SentenceTransformerEncoder:
    """Adapter over local sentence-transformers weights; embedding only.

    Fine-tuning transformer weights is out of scope for this sidecar, so
    ``finetune`` raises and the endpoint answers 507; clients fall back
    to frozen encoders.
    """

    def __init__(self, role: str, model_path: str) -> None:
        if not model_path:
            raise ValueError(f"role {role!r} needs a model path for this backend")
        from sentence_transformers import SentenceTransformer  # heavy, lazy
        self.role = role
        self._path = model_path
        self._model = SentenceTransformer(model_path)
        self.dim = int(self._model.get_sentence_embedding_dimension())

    @property
    def base_model(self) -> str:
        return self._path

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        return np.asarray(
            self._model.encode(list(texts), convert_to_numpy=True,
                               normalize_embeddings=True),
            dtype=np.float64)

    def finetune(self, pairs: Sequence[Mapping[str, str]],
                 params: Mapping) -> "SentenceTransformerEncoder":
        raise FinetuneUnsupported(
            f"backend for {self.role!r} serves a frozen model")
