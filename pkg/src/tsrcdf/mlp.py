"""Two-hidden-layer feed-forward classifier in plain numpy.

Architecture: d_in -> 1500 ReLU -> dropout(0.2) -> 1000 ReLU ->
dropout(0.3) -> C-way softmax. Dropout is inverted (kept units scaled
by 1/(1-p) at train time) so the eval path applies no scaling. The
backward pass is hand-written; losses hand it gradients with respect to
the logits, so no softmax Jacobian appears here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import CacheMismatch, DimMismatch, NonFiniteActivation
from .loss import LossConfig

SCHEMA_VERSION = 1
_TENSOR_ORDER = ("W1", "b1", "W2", "b2", "W3", "b3")


@dataclass
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    @property
    def d_in(self) -> int:
        return self.W1.shape[1]

    @property
    def h1(self) -> int:
        return self.W1.shape[0]

    @property
    def h2(self) -> int:
        return self.W2.shape[0]

    @property
    def C(self) -> int:
        return self.W3.shape[0]

    def check(self) -> None:
        if self.W2.shape != (self.h2, self.h1) or self.W3.shape != (self.C, self.h2):
            raise DimMismatch("inconsistent layer shapes")
        for name in _TENSOR_ORDER:
            t = getattr(self, name)
            if not np.all(np.isfinite(t)):
                raise NonFiniteActivation(f"non-finite entries in {name}")

    def shapes(self) -> tuple:
        return tuple(getattr(self, n).shape for n in _TENSOR_ORDER)

    def copy(self) -> "MlpParams":
        return MlpParams(*(getattr(self, n).copy() for n in _TENSOR_ORDER))


@dataclass
class MlpGrads:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray


@dataclass(frozen=True)
class DropoutSpec:
    p1: float = 0.2
    p2: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.p1 < 1.0 and 0.0 <= self.p2 < 1.0):
            raise ValueError("dropout rates must lie in [0, 1)")


@dataclass
class ForwardCache:
    x: np.ndarray
    z1: np.ndarray
    a1: np.ndarray  # post-ReLU, post-dropout
    z2: np.ndarray
    a2: np.ndarray
    mask1: np.ndarray
    mask2: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    param_shapes: tuple


def init_params(d_in: int, h1: int = 1500, h2: int = 1000, C: int = 3,
                seed: int = 0) -> MlpParams:
    """Seeded uniform(+-sqrt(6/fan_in)) weights, zero biases."""
    if min(d_in, h1, h2, C) < 1:
        raise ValueError("all dimensions must be >= 1")
    rng = np.random.default_rng(seed)

    def layer(fan_out: int, fan_in: int) -> np.ndarray:
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=(fan_out, fan_in))

    return MlpParams(
        W1=layer(h1, d_in), b1=np.zeros(h1),
        W2=layer(h2, h1), b2=np.zeros(h2),
        W3=layer(C, h2), b3=np.zeros(C),
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _as_matrix(batch, d_in: int) -> np.ndarray:
    if isinstance(batch, np.ndarray):
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 2:
            raise DimMismatch(f"expected a [B, d_in] matrix, got shape {x.shape}")
    else:
        x = np.stack([np.asarray(f.values, dtype=np.float64) for f in batch])
    if x.shape[0] < 1:
        raise DimMismatch("batch must be non-empty")
    if x.shape[1] != d_in:
        raise DimMismatch(f"feature length {x.shape[1]} != d_in {d_in}")
    return x


def forward(params: MlpParams, batch, dropout: DropoutSpec | None = None,
            rng: np.random.Generator | None = None) -> tuple[np.ndarray, ForwardCache]:
    """Probabilities and a cache for backward.

    dropout=None runs eval mode (deterministic, no masks). Passing a
    DropoutSpec runs train mode; an explicit rng overrides its seed so a
    trainer can own the stream.
    """
    x = _as_matrix(batch, params.d_in)
    B = x.shape[0]
    z1 = x @ params.W1.T + params.b1
    a1 = np.maximum(z1, 0.0)
    if dropout is not None and dropout.p1 > 0.0:
        if rng is None:
            rng = np.random.default_rng(dropout.seed)
        mask1 = (rng.random((B, params.h1)) >= dropout.p1) / (1.0 - dropout.p1)
    else:
        if dropout is not None and rng is None:
            rng = np.random.default_rng(dropout.seed)
        mask1 = np.ones((B, params.h1))
    a1 = a1 * mask1

    z2 = a1 @ params.W2.T + params.b2
    a2 = np.maximum(z2, 0.0)
    if dropout is not None and dropout.p2 > 0.0:
        mask2 = (rng.random((B, params.h2)) >= dropout.p2) / (1.0 - dropout.p2)
    else:
        mask2 = np.ones((B, params.h2))
    a2 = a2 * mask2

    logits = a2 @ params.W3.T + params.b3
    if not np.all(np.isfinite(logits)):
        raise NonFiniteActivation("non-finite logits in forward pass")
    probs = softmax(logits)
    cache = ForwardCache(x=x, z1=z1, a1=a1, z2=z2, a2=a2, mask1=mask1,
                         mask2=mask2, logits=logits, probs=probs,
                         param_shapes=params.shapes())
    return probs, cache


def backward(cache: ForwardCache, params: MlpParams,
             grad_logits: np.ndarray) -> MlpGrads:
    """Backpropagate a logits gradient to all six parameter tensors."""
    if cache.param_shapes != params.shapes():
        raise CacheMismatch("cache was produced by a differently shaped network")
    if grad_logits.shape != cache.logits.shape:
        raise CacheMismatch(f"grad_logits shape {grad_logits.shape} != "
                            f"logits shape {cache.logits.shape}")
    dW3 = grad_logits.T @ cache.a2
    db3 = grad_logits.sum(axis=0)
    da2 = (grad_logits @ params.W3) * cache.mask2
    dz2 = da2 * (cache.z2 > 0.0)
    dW2 = dz2.T @ cache.a1
    db2 = dz2.sum(axis=0)
    da1 = (dz2 @ params.W2) * cache.mask1
    dz1 = da1 * (cache.z1 > 0.0)
    dW1 = dz1.T @ cache.x
    db1 = dz1.sum(axis=0)
    return MlpGrads(W1=dW1, b1=db1, W2=dW2, b2=db2, W3=dW3, b3=db3)


@dataclass(frozen=True)
class OptConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class OptState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(params: MlpParams, grads: MlpGrads, state: OptState,
                   cfg: OptConfig) -> tuple[MlpParams, OptState]:
    """One Adam update, in place on the parameter arrays."""
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for name in _TENSOR_ORDER:
        g = getattr(grads, name)
        p = getattr(params, name)
        if g.shape != p.shape:
            raise DimMismatch(f"gradient shape {g.shape} != param shape {p.shape} "
                              f"for {name}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return params, state


def predict(params: MlpParams, batch) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode probabilities and argmax class codes."""
    probs, _ = forward(params, batch)
    return probs, probs.argmax(axis=1)


def save_checkpoint(path: str | Path, params: MlpParams,
                    loss_config: LossConfig | None = None,
                    metadata: dict | None = None) -> None:
    """Canonical JSON header line, then raw little-endian f64 tensors."""
    params.check()
    header = {
        "schema_version": SCHEMA_VERSION,
        "d_in": params.d_in,
        "h1": params.h1,
        "h2": params.h2,
        "C": params.C,
        "loss_config": loss_config.to_dict() if loss_config else None,
        "metadata": metadata or {},
    }
    with Path(path).open("wb") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for name in _TENSOR_ORDER:
            fh.write(np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[MlpParams, LossConfig | None, dict]:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise DimMismatch(f"{path}: missing checkpoint header")
    header = json.loads(data[:nl].decode("utf-8"))
    if header.get("schema_version") != SCHEMA_VERSION:
        raise DimMismatch(f"{path}: unsupported schema {header.get('schema_version')}")
    d_in, h1, h2, C = (int(header[k]) for k in ("d_in", "h1", "h2", "C"))
    shapes = [(h1, d_in), (h1,), (h2, h1), (h2,), (C, h2), (C,)]
    expected = sum(int(np.prod(s)) for s in shapes) * 8
    body = data[nl + 1:]
    if len(body) != expected:
        raise DimMismatch(f"{path}: payload is {len(body)} bytes, expected {expected}")
    tensors = []
    off = 0
    for shape in shapes:
        n = int(np.prod(shape))
        tensors.append(np.frombuffer(body, dtype="<f8", count=n,
                                     offset=off).reshape(shape).copy())
        off += n * 8
    params = MlpParams(*tensors)
    params.check()
    lc = header.get("loss_config")
    loss_config = LossConfig.from_dict(lc) if lc else None
    return params, loss_config, header.get("metadata", {})
