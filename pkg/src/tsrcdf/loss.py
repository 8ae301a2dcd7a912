"""Training losses with analytic gradients with respect to logits.

The composite loss is a weighted sum of three parts: a class-weighted
focal term with a dynamically scheduled focusing exponent, a confidence
penalty (negative entropy of each predicted row), and a KL divergence
pulling the batch-average prediction toward a target label distribution.
A plain categorical cross-entropy is kept as the comparison baseline.

Every op takes row-stochastic probabilities (softmax outputs) and returns
the gradient with respect to the logits that produced them, so the
classifier's backward pass never needs the softmax Jacobian explicitly.
Focal and confidence terms are batch means; the domain term is computed
once per batch. Probabilities are clamped at 1e-12 before any log.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import AllCountsZero, InvalidDistribution, ShapeMismatch

EPS = 1e-12


def _check_batch(probs: np.ndarray, targets: np.ndarray | None = None) -> None:
    if probs.ndim != 2:
        raise ShapeMismatch(f"expected a [B, C] matrix, got shape {probs.shape}")
    if targets is not None and targets.shape != probs.shape:
        raise ShapeMismatch(f"targets shape {targets.shape} != probs shape {probs.shape}")


def _clamped_log(p: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(p, EPS))


@dataclass(frozen=True)
class LossConfig:
    """Weights and schedule constants for the composite loss."""

    class_weights: np.ndarray
    target_q: np.ndarray
    gamma_base: float = 2.0
    eta: float = 1.0
    alpha: float = 1.0
    beta: float = 0.1
    lambda_: float = 0.1

    def __post_init__(self) -> None:
        w = np.asarray(self.class_weights, dtype=np.float64)
        q = np.asarray(self.target_q, dtype=np.float64)
        object.__setattr__(self, "class_weights", w)
        object.__setattr__(self, "target_q", q)
        if np.any(w <= 0):
            raise InvalidDistribution("class weights must be positive")
        if np.any(q <= 0) or abs(float(q.sum()) - 1.0) > 1e-9:
            raise InvalidDistribution("target_q must be strictly positive and sum to 1")
        if self.gamma_base < 0 or self.alpha < 0 or self.beta < 0 or self.lambda_ < 0:
            raise ValueError("gamma_base, alpha, beta, lambda must be >= 0")

    def to_dict(self) -> dict:
        return {
            "class_weights": self.class_weights.tolist(),
            "target_q": self.target_q.tolist(),
            "gamma_base": self.gamma_base,
            "eta": self.eta,
            "alpha": self.alpha,
            "beta": self.beta,
            "lambda": self.lambda_,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LossConfig":
        return cls(class_weights=np.asarray(d["class_weights"], dtype=np.float64),
                   target_q=np.asarray(d["target_q"], dtype=np.float64),
                   gamma_base=float(d["gamma_base"]), eta=float(d["eta"]),
                   alpha=float(d["alpha"]), beta=float(d["beta"]),
                   lambda_=float(d["lambda"]))


@dataclass(frozen=True)
class BatchStats:
    """Column mean of a batch probability matrix."""

    p_avg: np.ndarray

    @classmethod
    def from_probs(cls, probs: np.ndarray) -> "BatchStats":
        _check_batch(probs)
        return cls(p_avg=probs.mean(axis=0))


def update_gamma(gamma_base: float, eta: float, accuracy_val: float) -> float:
    """Focusing exponent for the next epoch, clamped to be non-negative."""
    if not 0.0 <= accuracy_val <= 1.0:
        raise ValueError(f"accuracy must lie in [0, 1], got {accuracy_val}")
    return max(0.0, gamma_base + eta * accuracy_val)


def focal_loss(probs: np.ndarray, targets: np.ndarray, w: np.ndarray,
               gamma: float) -> tuple[float, np.ndarray]:
    """Class-weighted focal loss, batch mean, with grad wrt logits.

    Per example with true class t: -w_t (1 - p_t)^gamma ln p_t.
    """
    _check_batch(probs, targets)
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    w = np.asarray(w, dtype=np.float64)
    B, C = probs.shape
    if w.shape != (C,):
        raise ShapeMismatch(f"w shape {w.shape} != ({C},)")
    t = targets.argmax(axis=1)
    p_t = probs[np.arange(B), t]
    log_pt = _clamped_log(p_t)
    one_minus = 1.0 - p_t
    w_t = w[t]
    value = float(np.mean(-w_t * one_minus**gamma * log_pt))

    # dL/dp_t, with the gamma term vanishing in the limit p_t -> 1
    g_t = -one_minus**gamma / np.maximum(p_t, EPS)
    if gamma > 0:
        safe = one_minus > 0
        bent = np.zeros(B)
        bent[safe] = gamma * one_minus[safe] ** (gamma - 1.0) * log_pt[safe]
        g_t += bent
    g_t *= w_t
    # chain through softmax: dp_t/dz = p_t (e_t - p)
    grad = (g_t * p_t)[:, None] * (targets - probs) / B
    return value, grad


def confidence_penalty(probs: np.ndarray) -> tuple[float, np.ndarray]:
    """Negative entropy of each row, batch mean; in [-ln C, 0]."""
    _check_batch(probs)
    B, _ = probs.shape
    log_p = _clamped_log(probs)
    per_row = (probs * log_p).sum(axis=1)
    value = float(per_row.mean())
    grad = probs * (log_p - per_row[:, None]) / B
    return value, grad


def domain_kl(q: np.ndarray, p_avg: np.ndarray) -> float:
    """KL(q || p_avg), both strict distributions. Asymmetric, >= 0."""
    q = np.asarray(q, dtype=np.float64)
    p_avg = np.asarray(p_avg, dtype=np.float64)
    if q.shape != p_avg.shape or q.ndim != 1:
        raise InvalidDistribution(f"shape mismatch: {q.shape} vs {p_avg.shape}")
    for name, v in (("q", q), ("p_avg", p_avg)):
        if np.any(v <= 0) or abs(float(v.sum()) - 1.0) > 1e-9:
            raise InvalidDistribution(f"{name} must be strictly positive and sum to 1")
    return float(np.sum(q * (np.log(q) - np.log(p_avg))))


def domain_penalty(q: np.ndarray, probs: np.ndarray) -> tuple[float, np.ndarray]:
    """KL(q || batch-average prediction) with grad wrt logits.

    The batch average appears inside the log, so each example's gradient
    couples to the whole batch through the column means.
    """
    _check_batch(probs)
    B, C = probs.shape
    q = np.asarray(q, dtype=np.float64)
    p_avg = probs.mean(axis=0)
    value = domain_kl(q, p_avg)
    r = q / np.maximum(p_avg, EPS)
    c = probs @ r
    grad = probs * (c[:, None] - r[None, :]) / B
    return value, grad


def cross_entropy_baseline(probs: np.ndarray,
                           targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Plain categorical cross-entropy, batch mean, grad wrt logits."""
    _check_batch(probs, targets)
    B, _ = probs.shape
    value = float(-np.sum(targets * _clamped_log(probs)) / B)
    grad = (probs - targets) / B
    return value, grad


def afc_loss(probs: np.ndarray, targets: np.ndarray, cfg: LossConfig,
             gamma: float) -> tuple[float, np.ndarray, dict[str, float]]:
    """alpha*focal + beta*confidence + lambda*domain, value and grad."""
    f_val, f_grad = focal_loss(probs, targets, cfg.class_weights, gamma)
    c_val, c_grad = confidence_penalty(probs)
    d_val, d_grad = domain_penalty(cfg.target_q, probs)
    value = cfg.alpha * f_val + cfg.beta * c_val + cfg.lambda_ * d_val
    grad = cfg.alpha * f_grad + cfg.beta * c_grad + cfg.lambda_ * d_grad
    return value, grad, {"focal": f_val, "conf": c_val, "domain": d_val}


def class_weights(counts: Mapping | Sequence[int], C: int | None = None,
                  scheme: str = "inverse_frequency") -> np.ndarray:
    """Per-class loss weights from label counts.

    inverse_frequency: w_i = N / (C * count_i); a class with zero count
    receives the largest weight computed among present classes.
    """
    if isinstance(counts, Mapping):
        by_code = {int(getattr(k, "code", k)): int(v) for k, v in counts.items()}
        if C is None:
            C = max(by_code) + 1
        vec = np.array([by_code.get(i, 0) for i in range(C)], dtype=np.float64)
    else:
        vec = np.asarray(list(counts), dtype=np.float64)
        C = len(vec)
    if np.any(vec < 0):
        raise ValueError("counts must be non-negative")
    if scheme == "uniform":
        return np.ones(C, dtype=np.float64)
    if scheme != "inverse_frequency":
        raise ValueError(f"unknown weighting scheme {scheme!r}")
    total = float(vec.sum())
    if total == 0:
        raise AllCountsZero("all label counts are zero")
    out = np.empty(C, dtype=np.float64)
    present = vec > 0
    out[present] = total / (C * vec[present])
    if np.any(~present):
        out[~present] = out[present].max()
    return out
