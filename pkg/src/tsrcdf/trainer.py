"""Training loop, evaluation, and the k-fold driver.

The loop is deterministic per config seed: weight init, epoch shuffles,
dropout masks, and the validation split each draw from their own derived
stream. The focusing exponent is recomputed once per epoch from the
previous epoch's validation accuracy. The returned checkpoint is the one
with the best validation macro-F1, not the last.

Seed derivation: init = cfg.seed; shuffle = rng([cfg.seed, 1]);
dropout = rng([cfg.seed, 2]); validation split = rng([cfg.seed, 3]).
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Dataset, FoldPlan, Label, make_folds
from .embeddings import EmbeddingProvider, PairEmbeddings, VectorStore, resolve_embeddings
from .errors import DimMismatch, InsufficientData, NonFiniteLoss
from .fusion import FusedFeature, fuse_six, fuse_three
from .loss import LossConfig, afc_loss, class_weights, cross_entropy_baseline, update_gamma
from .metrics import MetricsReport, UndefinedMetricWarning, confusion, report
from .mlp import (
    DropoutSpec,
    MlpParams,
    OptConfig,
    OptState,
    backward,
    forward,
    init_params,
    optimizer_step,
    predict,
)


@dataclass(frozen=True)
class TrainConfig:
    loss: LossConfig
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    opt: OptConfig = OptConfig()
    dropout: DropoutSpec = DropoutSpec()
    early_stop_patience: int = 5  # 0 disables early stopping
    val_fraction: float = 0.1
    loss_kind: str = "afc"  # "afc" or "ce"
    h1: int = 1500
    h2: int = 1000

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0.0 < self.val_fraction < 0.5:
            raise ValueError("val_fraction must lie in (0, 0.5)")
        if self.loss_kind not in ("afc", "ce"):
            raise ValueError(f"unknown loss_kind {self.loss_kind!r}")


@dataclass
class TrainState:
    epoch: int
    gamma: float
    best_val_metric: float
    history: list[dict]


def class_space(labels: Sequence, classes: Sequence | None = None) -> list:
    """Distinct classes ordered by code, or the explicit list as given."""
    if classes is not None:
        return list(classes)
    seen = {}
    for lab in labels:
        seen[lab] = None
    return sorted(seen, key=lambda l: int(getattr(l, "code", l)))


def encode_labels(labels: Sequence, classes: Sequence) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    try:
        return np.array([index[lab] for lab in labels], dtype=np.int64)
    except KeyError as exc:
        raise DimMismatch(f"label {exc.args[0]} not in class space {classes}") from None


def one_hot(codes: np.ndarray, C: int) -> np.ndarray:
    out = np.zeros((len(codes), C), dtype=np.float64)
    out[np.arange(len(codes)), codes] = 1.0
    return out


def empirical_loss_config(labels: Sequence, classes: Sequence,
                          scheme: str = "inverse_frequency",
                          gamma_base: float = 2.0, eta: float = 1.0,
                          alpha: float = 1.0, beta: float = 0.1,
                          lambda_: float = 0.1) -> LossConfig:
    """Loss config with weights and target distribution from label counts.

    The target distribution is the empirical one with a 1e-6 additive
    floor so every class stays strictly positive.
    """
    counts = np.array([sum(1 for l in labels if l == c) for c in classes],
                      dtype=np.float64)
    w = class_weights(counts, scheme=scheme)
    q = (counts + 1e-6) / (counts.sum() + len(classes) * 1e-6)
    return LossConfig(class_weights=w, target_q=q, gamma_base=gamma_base,
                      eta=eta, alpha=alpha, beta=beta, lambda_=lambda_)


def _stratified_val_split(y: np.ndarray, fraction: float,
                          rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """(train indices, val indices); at least one val sample overall."""
    val: list[int] = []
    train: list[int] = []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(len(idx))]
        n_val = int(round(fraction * len(idx)))
        if n_val == 0 and len(idx) >= 2:
            n_val = 1
        val.extend(idx[:n_val])
        train.extend(idx[n_val:])
    if not val:
        val.append(train.pop())
    return np.array(sorted(train)), np.array(sorted(val))


def _macro_f1(golds: np.ndarray, preds: np.ndarray, C: int) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UndefinedMetricWarning)
        return report(confusion(golds, preds, C)).macro["f1"]


def train(features, labels: Sequence, cfg: TrainConfig,
          classes: Sequence | None = None) -> tuple[MlpParams, TrainState]:
    """Fit the classifier; returns the best-validation checkpoint and history."""
    X = np.asarray(features, dtype=np.float64) if isinstance(features, np.ndarray) \
        else np.stack([np.asarray(f.values, dtype=np.float64) for f in features])
    classes = class_space(labels, classes)
    C = len(classes)
    if C < 2:
        raise InsufficientData(f"need at least 2 classes, got {C}")
    y = encode_labels(labels, classes)
    if len(X) != len(y):
        raise DimMismatch(f"{len(X)} features vs {len(y)} labels")
    if len(X) < 2 * cfg.batch_size:
        raise InsufficientData(
            f"{len(X)} samples < 2 * batch_size ({2 * cfg.batch_size})")
    if cfg.loss.class_weights.shape != (C,):
        raise DimMismatch(f"loss config is for {cfg.loss.class_weights.shape[0]} "
                          f"classes, data has {C}")

    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    dropout_rng = np.random.default_rng([cfg.seed, 2])
    split_rng = np.random.default_rng([cfg.seed, 3])
    train_idx, val_idx = _stratified_val_split(y, cfg.val_fraction, split_rng)
    T = one_hot(y, C)

    params = init_params(X.shape[1], cfg.h1, cfg.h2, C, seed=cfg.seed)
    opt_state = OptState()
    gamma = cfg.loss.gamma_base
    best_metric = -1.0
    best_params = params.copy()
    stale = 0
    history: list[dict] = []

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(train_idx))
        sums = {"loss": 0.0, "focal": 0.0, "conf": 0.0, "domain": 0.0}
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = train_idx[order[start:start + cfg.batch_size]]
            probs, cache = forward(params, X[idx], dropout=cfg.dropout,
                                   rng=dropout_rng)
            if cfg.loss_kind == "afc":
                value, grad, comps = afc_loss(probs, T[idx], cfg.loss, gamma)
            else:
                value, grad = cross_entropy_baseline(probs, T[idx])
                comps = {"focal": 0.0, "conf": 0.0, "domain": 0.0}
            if not np.isfinite(value):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, "
                                    f"batch {n_batches}")
            grads = backward(cache, params, grad)
            params, opt_state = optimizer_step(params, grads, opt_state, cfg.opt)
            sums["loss"] += value
            for k in ("focal", "conf", "domain"):
                sums[k] += comps[k]
            n_batches += 1

        val_probs, _ = forward(params, X[val_idx])
        val_preds = val_probs.argmax(axis=1)
        val_acc = float(np.mean(val_preds == y[val_idx]))
        val_f1 = _macro_f1(y[val_idx], val_preds, C)
        history.append({
            "epoch": epoch,
            "train_loss": sums["loss"] / n_batches,
            "focal": sums["focal"] / n_batches,
            "conf": sums["conf"] / n_batches,
            "domain": sums["domain"] / n_batches,
            "val_acc": val_acc,
            "val_macro_f1": val_f1,
            "gamma": gamma,
        })
        if val_f1 > best_metric:
            best_metric = val_f1
            best_params = params.copy()
            stale = 0
        else:
            stale += 1
        if cfg.early_stop_patience > 0 and stale >= cfg.early_stop_patience:
            break
        gamma = update_gamma(cfg.loss.gamma_base, cfg.loss.eta, val_acc)

    state = TrainState(epoch=len(history), gamma=gamma,
                       best_val_metric=best_metric, history=history)
    return best_params, state


def evaluate(params: MlpParams, features, labels: Sequence,
             classes: Sequence | None = None) -> MetricsReport:
    """Argmax predictions scored against gold labels."""
    classes = class_space(labels, classes)
    if len(classes) != params.C:
        raise DimMismatch(f"checkpoint has {params.C} classes, "
                          f"class space has {len(classes)}")
    X = np.asarray(features, dtype=np.float64) if isinstance(features, np.ndarray) \
        else np.stack([np.asarray(f.values, dtype=np.float64) for f in features])
    y = encode_labels(labels, classes)
    _, preds = predict(params, X)
    cm = confusion(y, preds, C=len(classes),
                   class_names=[str(c) for c in classes])
    return report(cm)


@dataclass
class EncoderBundle:
    """The two encoder roles plus optional caches and the fusion choice."""

    provider_a: EmbeddingProvider
    provider_b: EmbeddingProvider
    cache_a: VectorStore | None = None
    cache_b: VectorStore | None = None
    fusion: str = "six"  # "six" or "three" (role A only)
    normalize: bool = False

    def __post_init__(self) -> None:
        if self.fusion not in ("six", "three"):
            raise ValueError(f"unknown fusion mode {self.fusion!r}")


def embed_pairs(pairs: Sequence, bundle: EncoderBundle) -> list[PairEmbeddings]:
    """Resolve both roles over all sentences of the given pairs, in order."""
    texts1 = [p.text1 for p in pairs]
    texts2 = [p.text2 for p in pairs]
    all_texts = texts1 + texts2
    vecs_a = resolve_embeddings(bundle.provider_a, bundle.cache_a, all_texts)
    vecs_b = resolve_embeddings(bundle.provider_b, bundle.cache_b, all_texts)
    n = len(pairs)
    return [PairEmbeddings(r1_a=vecs_a[i], r2_a=vecs_a[n + i],
                           r1_b=vecs_b[i], r2_b=vecs_b[n + i])
            for i in range(n)]


def fused_matrix(pairs: Sequence, bundle: EncoderBundle) -> np.ndarray:
    """Embed and fuse a pair list into an (N, D) feature matrix."""
    pes = embed_pairs(pairs, bundle)
    if bundle.fusion == "six":
        feats = [fuse_six(pe, normalize=bundle.normalize) for pe in pes]
    else:
        feats = [fuse_three(pe.r1_a, pe.r2_a, normalize=bundle.normalize)
                 for pe in pes]
    return np.stack([f.values for f in feats])


def aggregate_reports(reports: Sequence[MetricsReport]) -> dict:
    """Unweighted mean and population std of the headline metrics."""
    keys = {
        "macro_precision": lambda r: r.macro["precision"],
        "macro_recall": lambda r: r.macro["recall"],
        "macro_f1": lambda r: r.macro["f1"],
        "weighted_precision": lambda r: r.weighted["precision"],
        "weighted_recall": lambda r: r.weighted["recall"],
        "weighted_f1": lambda r: r.weighted["f1"],
        "accuracy": lambda r: r.accuracy,
    }
    out = {}
    for name, get in keys.items():
        vals = np.array([get(r) for r in reports], dtype=np.float64)
        out[name] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out


@dataclass
class CrossvalResult:
    per_fold: list[MetricsReport]
    aggregate: dict
    plan: FoldPlan

    def to_dict(self) -> dict:
        return {
            "per_fold": [r.to_dict() for r in self.per_fold],
            "aggregate": self.aggregate,
            "fold_plan": self.plan.to_dict(),
        }


def crossval(dataset: Dataset, bundle: EncoderBundle, n_folds: int,
             cfg: TrainConfig, stratified: bool = True) -> CrossvalResult:
    """k-fold cross-validation: train on k-1 folds, test on the held-out one.

    Fold k's training run uses seed cfg.seed + k so folds are independent
    but the whole procedure stays deterministic.
    """
    plan = make_folds(dataset, n_folds, stratified=stratified, seed=cfg.seed)
    classes = dataset.labels_present()
    X = fused_matrix(dataset.pairs, bundle)
    labels = [p.label for p in dataset.pairs]
    reports: list[MetricsReport] = []
    for k in range(n_folds):
        train_idx, test_idx = plan.split(k)
        fold_cfg = dataclasses.replace(cfg, seed=cfg.seed + k)
        params, _ = train(X[train_idx], [labels[i] for i in train_idx],
                          fold_cfg, classes=classes)
        reports.append(evaluate(params, X[test_idx],
                                [labels[i] for i in test_idx], classes=classes))
    return CrossvalResult(per_fold=reports, aggregate=aggregate_reports(reports),
                          plan=plan)


def write_run_log(path: str | Path, state: TrainState) -> None:
    """One JSON record per epoch."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in state.history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
