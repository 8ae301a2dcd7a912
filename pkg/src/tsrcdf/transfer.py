"""Cross-domain transfer: n-fold rotation of a target set over a fixed source.

Each iteration holds out one target fold as the test set and trains on
all source pairs plus the remaining target folds (the domain-adaptive
training set). Encoders are either frozen or fine-tuned per fold through
the remote encoder service; fine-tuning is pure checkpoint-id
bookkeeping here, the service owns the weights. With frozen encoders the
whole procedure is a deterministic function of the plan and caches.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import Dataset, FoldPlan, RequirementPair, make_folds
from .errors import FinetuneRejected
from .metrics import MetricsReport
from .mlp import save_checkpoint
from .trainer import (
    EncoderBundle,
    TrainConfig,
    aggregate_reports,
    class_space,
    evaluate,
    fused_matrix,
    train,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TransferPlan:
    source: Dataset
    target: Dataset
    n_folds: int
    cfg: TrainConfig
    encoder_mode: str = "frozen"  # "frozen" or "finetune"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_folds < 2:
            raise ValueError(f"n_folds must be >= 2, got {self.n_folds}")
        if self.encoder_mode not in ("frozen", "finetune"):
            raise ValueError(f"unknown encoder_mode {self.encoder_mode!r}")
        if len(self.source):
            src = set(self.source.label_counts)
            tgt = set(self.target.label_counts)
            if not tgt <= src:
                logger.warning("target has labels absent from source: %s",
                               sorted(str(l) for l in tgt - src))


@dataclass
class TransferResult:
    per_fold: list[dict]  # {fold_index, train_set_size, report}
    aggregate: dict
    plan_meta: dict

    def reports(self) -> list[MetricsReport]:
        return [f["report"] for f in self.per_fold]

    def to_dict(self) -> dict:
        return {
            "per_fold": [
                {"fold_index": f["fold_index"],
                 "train_set_size": f["train_set_size"],
                 "report": f["report"].to_dict()}
                for f in self.per_fold
            ],
            "aggregate": self.aggregate,
            "plan": self.plan_meta,
        }


def build_adaptive_train_set(source: Dataset, target: Dataset,
                             plan: FoldPlan, test_fold: int) -> Dataset:
    """All source pairs plus every target pair outside the test fold.

    Source block first, then the target block, each in original order;
    ids are namespaced so the two domains can share raw ids.
    """
    if not 0 <= test_fold < plan.n_folds:
        raise ValueError(f"test_fold {test_fold} outside [0, {plan.n_folds})")
    pairs = [RequirementPair(id=f"s/{p.id}", text1=p.text1, text2=p.text2,
                             label=p.label)
             for p in source.pairs]
    pairs.extend(
        RequirementPair(id=f"t/{p.id}", text1=p.text1, text2=p.text2,
                        label=p.label)
        for p, fold in zip(target.pairs, plan.assignments) if fold != test_fold)
    return Dataset(name=f"{source.name}+{target.name}[-{test_fold}]",
                   pairs=tuple(pairs))


def run_transfer(plan: TransferPlan, bundle: EncoderBundle,
                 out_dir: str | Path | None = None) -> TransferResult:
    """Execute the full n-fold transfer protocol.

    Per fold: build the adaptive train set, optionally fine-tune both
    encoder roles on it (falling back to frozen if the service declines),
    embed, fuse, train a fresh classifier with seed plan.seed + fold, and
    evaluate on the held-out target fold. Checkpoints and per-fold
    reports are persisted when out_dir is given.
    """
    fold_plan = make_folds(plan.target, plan.n_folds, stratified=True,
                           seed=plan.seed)
    classes = class_space([p.label for d in (plan.source, plan.target)
                           for p in d.pairs])
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    per_fold: list[dict] = []
    for k in range(plan.n_folds):
        train_set = build_adaptive_train_set(plan.source, plan.target,
                                             fold_plan, k)
        test_idx = fold_plan.fold_indices(k)
        test_pairs = [plan.target.pairs[i] for i in test_idx]

        train_target_ids = {p.id for p in train_set.pairs if p.id.startswith("t/")}
        leaked = [p.id for p in test_pairs if f"t/{p.id}" in train_target_ids]
        assert not leaked, f"fold {k}: test pairs leaked into training: {leaked}"

        fold_bundle = bundle
        if plan.encoder_mode == "finetune":
            fold_bundle = _finetuned_bundle(bundle, train_set, plan.seed + k, k)

        X_train = fused_matrix(train_set.pairs, fold_bundle)
        X_test = fused_matrix(test_pairs, fold_bundle)
        fold_cfg = dataclasses.replace(plan.cfg, seed=plan.seed + k)
        params, _ = train(X_train, [p.label for p in train_set.pairs],
                          fold_cfg, classes=classes)
        rep = evaluate(params, X_test, [p.label for p in test_pairs],
                       classes=classes)
        if out_dir is not None:
            save_checkpoint(out_dir / f"fold-{k}.ckpt", params,
                            loss_config=plan.cfg.loss,
                            metadata={"classes": [str(c) for c in classes],
                                      "fold_index": k,
                                      "train_set_size": len(train_set)})
            (out_dir / f"fold-{k}-report.json").write_text(
                json.dumps(rep.to_dict(), sort_keys=True, indent=2) + "\n",
                encoding="utf-8")
        per_fold.append({"fold_index": k, "train_set_size": len(train_set),
                         "report": rep})

    result = TransferResult(
        per_fold=per_fold,
        aggregate=aggregate_reports([f["report"] for f in per_fold]),
        plan_meta={"source": plan.source.name, "target": plan.target.name,
                   "source_size": len(plan.source),
                   "target_size": len(plan.target),
                   "n_folds": plan.n_folds, "encoder_mode": plan.encoder_mode,
                   "seed": plan.seed,
                   "fold_plan": fold_plan.to_dict()},
    )
    if out_dir is not None:
        (out_dir / "transfer-report.json").write_text(
            json.dumps(result.to_dict(), sort_keys=True, indent=2) + "\n",
            encoding="utf-8")
    return result


def _finetuned_bundle(bundle: EncoderBundle, train_set: Dataset, seed: int,
                      fold: int) -> EncoderBundle:
    """Fine-tune both roles on the adaptive set; frozen fallback on refusal.

    Tuned checkpoints bypass the on-disk caches, which are keyed to the
    base model ids.
    """
    payload = [{"text1": p.text1, "text2": p.text2, "label": str(p.label)}
               for p in train_set.pairs if p.label is not None]
    tuned = {}
    for role, provider in (("a", bundle.provider_a), ("b", bundle.provider_b)):
        try:
            ckpt = provider.finetune(base=provider.model_id, pairs=payload,
                                     params={"seed": seed})
            tuned[role] = provider.with_model(ckpt)
        except FinetuneRejected as exc:
            logger.warning("fold %d: encoder service declined fine-tune of "
                           "role %s (%s); using frozen encoder", fold, role, exc)
            tuned[role] = provider
    return dataclasses.replace(bundle, provider_a=tuned["a"],
                               provider_b=tuned["b"],
                               cache_a=None, cache_b=None)


def target_only_baseline(target: Dataset, n_folds: int, cfg: TrainConfig,
                         bundle: EncoderBundle, seed: int = 0,
                         out_dir: str | Path | None = None) -> TransferResult:
    """Control arm: the identical protocol with an empty source set."""
    plan = TransferPlan(source=Dataset(name="empty", pairs=()), target=target,
                        n_folds=n_folds, cfg=cfg, encoder_mode="frozen",
                        seed=seed)
    return run_transfer(plan, bundle, out_dir=out_dir)
