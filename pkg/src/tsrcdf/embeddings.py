"""Sentence embedding providers and a persistent binary vector cache.

Providers share one small interface (model_id, dim, embed). The hash
provider is a deterministic stand-in that needs no network or model
weights; the remote provider speaks the encoder sidecar's HTTP protocol.
All vectors are 64-bit floats internally regardless of provider output.
"""

from __future__ import annotations

import hashlib
import re
import struct
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import httpx
import numpy as np

from .errors import (
    CorruptFile,
    DimMismatch,
    FinetuneRejected,
    HeaderMismatch,
    ProviderUnavailable,
)

_MAGIC = b"TSRV"
_VERSION = 1
_U64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class EmbeddingVector:
    """One sentence vector tagged with the model that produced it."""

    model_id: str
    dim: int
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        if vals.shape != (self.dim,):
            raise DimMismatch(f"vector length {vals.shape} does not match dim {self.dim}")
        if not np.all(np.isfinite(vals)):
            raise DimMismatch(f"non-finite values in vector from {self.model_id!r}")


@dataclass(frozen=True)
class PairEmbeddings:
    """Both sentences of a pair under both encoder roles (A and B)."""

    r1_a: EmbeddingVector
    r2_a: EmbeddingVector
    r1_b: EmbeddingVector
    r2_b: EmbeddingVector

    def __post_init__(self) -> None:
        if self.r1_a.dim != self.r2_a.dim or self.r1_a.model_id != self.r2_a.model_id:
            raise DimMismatch("role A vectors disagree on dim or model")
        if self.r1_b.dim != self.r2_b.dim or self.r1_b.model_id != self.r2_b.model_id:
            raise DimMismatch("role B vectors disagree on dim or model")


class EmbeddingProvider(ABC):
    """Anything that turns texts into fixed-dim vectors, deterministically."""

    model_id: str

    @property
    @abstractmethod
    def dim(self) -> int: ...

    @abstractmethod
    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]: ...


_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

# splitmix64 increments and mixers
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _splitmix_unit(base: int, dim: int) -> np.ndarray:
    """dim pseudo-uniform values in [-1, 1) from a 64-bit stream seed."""
    idx = np.arange(dim, dtype=np.uint64)
    z = (np.uint64(base) + idx * np.uint64(_GAMMA)) & np.uint64(_U64)
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)) & np.uint64(_U64)
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)) & np.uint64(_U64)
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-52 - 1.0


def hash_encode(text: str, dim: int, seed: int) -> EmbeddingVector:
    """Deterministic pseudo-embedding of a sentence.

    Each lowercase alphanumeric token is keyed-hashed to a 64-bit stream
    seed; per-dimension values come from that stream and are summed over
    tokens (a bag, so order-insensitive), then L2-normalized. Zero tokens
    map to the unit vector along dimension 0.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    tokens = _TOKEN_RE.findall(text.lower())
    acc = np.zeros(dim, dtype=np.float64)
    key = struct.pack("<Q", seed & _U64)
    for tok in tokens:
        h = hashlib.blake2b(tok.encode("utf-8"), key=key, digest_size=8).digest()
        acc += _splitmix_unit(int.from_bytes(h, "little"), dim)
    norm = float(np.linalg.norm(acc))
    if norm == 0.0:
        acc = np.zeros(dim, dtype=np.float64)
        acc[0] = 1.0
    else:
        acc /= norm
    return EmbeddingVector(model_id=f"hash-{dim}-{seed}", dim=dim, values=acc)


class HashProvider(EmbeddingProvider):
    """Offline test encoder built on hash_encode."""

    def __init__(self, dim: int, seed: int) -> None:
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self._dim = dim
        self.seed = seed
        self.model_id = f"hash-{dim}-{seed}"

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        return [hash_encode(t, self._dim, self.seed) for t in texts]


class RemoteProvider(EmbeddingProvider):
    """Client for the encoder sidecar's /embed, /finetune and /health."""

    def __init__(self, base_url: str, model_id: str, dim: int | None = None,
                 batch_size: int = 64, timeout: float = 60.0,
                 client: httpx.Client | None = None) -> None:
        self.base_url = base_url.rstrip("/")
        self.model_id = model_id
        self._dim = dim
        self.batch_size = max(1, batch_size)
        self._client = client or httpx.Client(timeout=timeout)

    def _post(self, endpoint: str, payload: dict) -> httpx.Response:
        try:
            return self._client.post(f"{self.base_url}{endpoint}", json=payload)
        except httpx.HTTPError as exc:
            raise ProviderUnavailable(f"POST {endpoint} failed: {exc}") from None

    @property
    def dim(self) -> int:
        if self._dim is None:
            info = self.health()
            for m in info.get("models", []):
                if self.model_id in (m.get("role"), m.get("checkpoint_id")):
                    self._dim = int(m["dim"])
                    break
            else:
                raise ProviderUnavailable(
                    f"model {self.model_id!r} not advertised by {self.base_url}/health")
        return self._dim

    def health(self) -> dict:
        try:
            resp = self._client.get(f"{self.base_url}/health")
        except httpx.HTTPError as exc:
            raise ProviderUnavailable(f"GET /health failed: {exc}") from None
        if resp.status_code != 200:
            raise ProviderUnavailable(f"GET /health returned {resp.status_code}")
        return resp.json()

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        out: list[EmbeddingVector] = []
        for start in range(0, len(texts), self.batch_size):
            batch = list(texts[start:start + self.batch_size])
            resp = self._post("/embed", {"model": self.model_id, "texts": batch})
            if resp.status_code != 200:
                raise ProviderUnavailable(
                    f"/embed returned {resp.status_code}: {resp.text[:200]}")
            body = resp.json()
            dim = int(body["dim"])
            if self._dim is None:
                self._dim = dim
            elif dim != self._dim:
                raise DimMismatch(f"provider returned dim {dim}, expected {self._dim}")
            vectors = body["vectors"]
            if len(vectors) != len(batch):
                raise ProviderUnavailable(
                    f"/embed returned {len(vectors)} vectors for {len(batch)} texts")
            out.extend(EmbeddingVector(model_id=self.model_id, dim=dim,
                                       values=np.asarray(v, dtype=np.float64))
                       for v in vectors)
        return out

    def finetune(self, base: str, pairs: Sequence[dict], params: dict | None = None) -> str:
        """Request a fine-tuned child checkpoint; returns its id.

        507 from the service means it cannot take the job; callers catch
        FinetuneRejected to fall back to frozen encoders.
        """
        resp = self._post("/finetune", {"base": base, "pairs": list(pairs),
                                        "params": params or {}})
        if resp.status_code == 507:
            raise FinetuneRejected(f"service declined fine-tune of {base!r}")
        if resp.status_code != 200:
            raise ProviderUnavailable(
                f"/finetune returned {resp.status_code}: {resp.text[:200]}")
        return str(resp.json()["checkpoint_id"])

    def with_model(self, model_id: str) -> "RemoteProvider":
        """Same connection, different checkpoint id (dim re-discovered)."""
        return RemoteProvider(self.base_url, model_id, dim=None,
                              batch_size=self.batch_size, client=self._client)


def text_key(text: str) -> int:
    """64-bit content key for cache records."""
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(),
                          "little")


class VectorStore:
    """Append-only on-disk map from text hashes to f64 vectors.

    One file per (model_id, dim); the header pins both. Writes are
    serialized by a lock, reads hit the in-memory index.
    """

    def __init__(self, path: str | Path, model_id: str, dim: int) -> None:
        self.path = Path(path)
        self.model_id = model_id
        self.dim = dim
        self._lock = threading.Lock()
        self._index: dict[int, np.ndarray] = {}
        self._record_size = 8 + 8 * dim
        if self.path.exists() and self.path.stat().st_size > 0:
            self._load()
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("wb") as fh:
                fh.write(self._header_bytes())

    def _header_bytes(self) -> bytes:
        mid = self.model_id.encode("utf-8")
        return _MAGIC + struct.pack("<HIH", _VERSION, self.dim, len(mid)) + mid

    def _load(self) -> None:
        data = self.path.read_bytes()
        if len(data) < 12 or data[:4] != _MAGIC:
            raise CorruptFile(f"{self.path}: bad magic")
        version, dim, mid_len = struct.unpack_from("<HIH", data, 4)
        if version != _VERSION:
            raise CorruptFile(f"{self.path}: unsupported format version {version}")
        header_len = 12 + mid_len
        if len(data) < header_len:
            raise CorruptFile(f"{self.path}: truncated header")
        model_id = data[12:header_len].decode("utf-8")
        if model_id != self.model_id or dim != self.dim:
            raise HeaderMismatch(
                f"{self.path}: file is for ({model_id!r}, dim={dim}), "
                f"requested ({self.model_id!r}, dim={self.dim})")
        body = data[header_len:]
        if len(body) % self._record_size != 0:
            raise CorruptFile(f"{self.path}: {len(body)} payload bytes is not a "
                              f"multiple of record size {self._record_size}")
        for off in range(0, len(body), self._record_size):
            key = struct.unpack_from("<Q", body, off)[0]
            vec = np.frombuffer(body, dtype="<f8", count=self.dim, offset=off + 8).copy()
            self._index[key] = vec

    def __len__(self) -> int:
        return len(self._index)

    def get(self, text: str) -> np.ndarray | None:
        return self._index.get(text_key(text))

    def put(self, text: str, values: np.ndarray) -> None:
        vec = np.ascontiguousarray(values, dtype="<f8")
        if vec.shape != (self.dim,):
            raise DimMismatch(f"vector shape {vec.shape} does not match store dim {self.dim}")
        key = text_key(text)
        with self._lock:
            if key in self._index:
                return
            with self.path.open("ab") as fh:
                fh.write(struct.pack("<Q", key))
                fh.write(vec.tobytes())
            self._index[key] = vec.copy()


def open_store(path: str | Path, model_id: str, dim: int) -> VectorStore:
    return VectorStore(path, model_id, dim)


def read_store_header(path: str | Path) -> tuple[str, int]:
    """(model_id, dim) from an existing store file, without loading records."""
    path = Path(path)
    if not path.exists():
        raise CorruptFile(f"no such vector store: {path}")
    with path.open("rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != _MAGIC:
            raise CorruptFile(f"{path}: bad magic")
        version, dim, mid_len = struct.unpack("<HIH", head[4:])
        if version != _VERSION:
            raise CorruptFile(f"{path}: unsupported format version {version}")
        mid = fh.read(mid_len)
        if len(mid) < mid_len:
            raise CorruptFile(f"{path}: truncated header")
    return mid.decode("utf-8"), int(dim)


class FileProvider(EmbeddingProvider):
    """Serves vectors from an existing store only; misses are errors."""

    def __init__(self, store: VectorStore) -> None:
        self.store = store
        self.model_id = store.model_id

    @classmethod
    def open(cls, path: str | Path) -> "FileProvider":
        model_id, dim = read_store_header(path)
        return cls(VectorStore(path, model_id, dim))

    @property
    def dim(self) -> int:
        return self.store.dim

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        out = []
        for t in texts:
            vec = self.store.get(t)
            if vec is None:
                raise ProviderUnavailable(
                    f"store {self.store.path} has no vector for a requested "
                    f"sentence (first 40 chars: {t[:40]!r})")
            out.append(EmbeddingVector(model_id=self.model_id, dim=self.dim,
                                       values=vec))
        return out


def resolve_embeddings(provider: EmbeddingProvider, cache: VectorStore | None,
                       texts: Sequence[str]) -> list[EmbeddingVector]:
    """Embed texts through the cache; misses are fetched once, in order.

    Output order matches input order. With no cache this is just
    provider.embed. Duplicate texts are fetched at most once.
    """
    if not texts:
        return []
    if cache is None:
        return provider.embed(texts)
    if cache.dim != provider.dim:
        raise DimMismatch(f"cache dim {cache.dim} != provider dim {provider.dim}")
    missing = list(dict.fromkeys(t for t in texts if cache.get(t) is None))
    if missing:
        for text, vec in zip(missing, provider.embed(missing)):
            cache.put(text, vec.values)
    out: list[EmbeddingVector] = []
    for t in texts:
        vec = cache.get(t)
        if vec is None:
            raise CorruptFile(f"cache lost key for text of length {len(t)}")
        out.append(EmbeddingVector(model_id=provider.model_id, dim=provider.dim, values=vec))
    return out
