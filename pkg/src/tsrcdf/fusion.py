"""Classifier input features from pair embeddings.

The six-element fusion concatenates, per encoder role, both sentence
vectors and their element-wise difference: all of role A's blocks, then
all of role B's. The three-element variant is the single-encoder
baseline used for ablation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embeddings import EmbeddingVector, PairEmbeddings
from .errors import DimMismatch


@dataclass(frozen=True)
class SixElement:
    dim_a: int
    dim_b: int

    @property
    def length(self) -> int:
        return 3 * self.dim_a + 3 * self.dim_b


@dataclass(frozen=True)
class ThreeElement:
    dim: int

    @property
    def length(self) -> int:
        return 3 * self.dim


@dataclass(frozen=True)
class FusedFeature:
    values: np.ndarray
    layout: SixElement | ThreeElement

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        if vals.shape != (self.layout.length,):
            raise DimMismatch(f"feature length {vals.shape} does not match "
                              f"layout length {self.layout.length}")
        if not np.all(np.isfinite(vals)):
            raise DimMismatch("non-finite values in fused feature")


def _maybe_normalize(v: np.ndarray, normalize: bool) -> np.ndarray:
    if not normalize:
        return v
    norm = float(np.linalg.norm(v))
    return v if norm == 0.0 else v / norm


def fuse_three(r1: EmbeddingVector, r2: EmbeddingVector,
               normalize: bool = False) -> FusedFeature:
    """[r1, r2, r1 - r2] for a single encoder role."""
    if r1.dim != r2.dim:
        raise DimMismatch(f"cannot fuse dims {r1.dim} and {r2.dim}")
    if r1.model_id != r2.model_id:
        raise DimMismatch(f"cannot fuse vectors from different encoders "
                          f"({r1.model_id!r} vs {r2.model_id!r})")
    a = _maybe_normalize(r1.values, normalize)
    b = _maybe_normalize(r2.values, normalize)
    values = np.concatenate([a, b, a - b])
    return FusedFeature(values=values, layout=ThreeElement(dim=r1.dim))


def fuse_six(pe: PairEmbeddings, normalize: bool = False) -> FusedFeature:
    """[r1_a, r2_a, r1_a - r2_a, r1_b, r2_b, r1_b - r2_b]."""
    a1 = _maybe_normalize(pe.r1_a.values, normalize)
    a2 = _maybe_normalize(pe.r2_a.values, normalize)
    b1 = _maybe_normalize(pe.r1_b.values, normalize)
    b2 = _maybe_normalize(pe.r2_b.values, normalize)
    values = np.concatenate([a1, a2, a1 - a2, b1, b2, b1 - b2])
    return FusedFeature(values=values,
                        layout=SixElement(dim_a=pe.r1_a.dim, dim_b=pe.r1_b.dim))


def feature_matrix(features: Sequence[FusedFeature]) -> np.ndarray:
    """Stack fused features into an (N, D) f64 matrix; layouts must agree."""
    if not features:
        raise DimMismatch("cannot build a matrix from zero features")
    layout = features[0].layout
    for f in features[1:]:
        if f.layout != layout:
            raise DimMismatch(f"mixed layouts: {layout} vs {f.layout}")
    return np.stack([f.values for f in features]).astype(np.float64)
