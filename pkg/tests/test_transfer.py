"""Cross-domain transfer protocol: adaptive train sets, leak safety, fallbacks."""

from __future__ import annotations

import json
import logging

import numpy as np
import pytest

from tsrcdf.corpus import Dataset, Label, RequirementPair, make_folds
from tsrcdf.embeddings import HashProvider
from tsrcdf.errors import FinetuneRejected
from tsrcdf.loss import LossConfig
from tsrcdf.mlp import DropoutSpec, load_checkpoint
from tsrcdf.synth import synthetic_corpus
from tsrcdf.trainer import EncoderBundle, TrainConfig
from tsrcdf.transfer import (
    TransferPlan,
    build_adaptive_train_set,
    run_transfer,
    target_only_baseline,
)


def _cfg(**kw):
    loss = LossConfig(class_weights=np.ones(3), target_q=np.full(3, 1 / 3))
    base = dict(loss=loss, epochs=6, batch_size=16, seed=0,
                dropout=DropoutSpec(p1=0.1, p2=0.1), h1=32, h2=16)
    base.update(kw)
    return TrainConfig(**base)


def _bundle(**kw):
    return EncoderBundle(provider_a=HashProvider(16, seed=101),
                         provider_b=HashProvider(16, seed=202), **kw)


def _tiny_sets():
    source = synthetic_corpus(240, seed=50, name="src")
    target = synthetic_corpus(60, seed=60, name="tgt")
    return source, target


class TestAdaptiveTrainSet:
    def test_sizes_are_exact(self):
        source, target = _tiny_sets()
        plan = make_folds(target, 3, stratified=True, seed=0)
        for k in range(3):
            merged = build_adaptive_train_set(source, target, plan, k)
            held_out = len(plan.fold_indices(k))
            assert len(merged.pairs) == len(source.pairs) + len(target.pairs) - held_out

    def test_block_order_and_namespacing(self):
        source, target = _tiny_sets()
        plan = make_folds(target, 3, stratified=True, seed=0)
        merged = build_adaptive_train_set(source, target, plan, 0)
        n_src = len(source.pairs)
        assert all(p.id.startswith("s/") for p in merged.pairs[:n_src])
        assert all(p.id.startswith("t/") for p in merged.pairs[n_src:])
        # original order preserved inside each block
        assert [p.id[2:] for p in merged.pairs[:n_src]] == [p.id for p in source.pairs]
        kept = [p.id for p, f in zip(target.pairs, plan.assignments) if f != 0]
        assert [p.id[2:] for p in merged.pairs[n_src:]] == kept

    def test_no_test_pair_in_train(self):
        source, target = _tiny_sets()
        plan = make_folds(target, 3, stratified=True, seed=0)
        for k in range(3):
            merged = build_adaptive_train_set(source, target, plan, k)
            train_t = {p.id for p in merged.pairs if p.id.startswith("t/")}
            for i in plan.fold_indices(k):
                assert f"t/{target.pairs[i].id}" not in train_t

    def test_test_folds_cover_target(self):
        _, target = _tiny_sets()
        plan = make_folds(target, 3, stratified=True, seed=0)
        covered = sorted(i for k in range(3) for i in plan.fold_indices(k))
        assert covered == list(range(len(target.pairs)))

    def test_empty_source(self):
        _, target = _tiny_sets()
        plan = make_folds(target, 3, stratified=True, seed=0)
        merged = build_adaptive_train_set(Dataset(name="empty", pairs=()),
                                          target, plan, 1)
        assert all(p.id.startswith("t/") for p in merged.pairs)

    def test_bad_fold_index(self):
        source, target = _tiny_sets()
        plan = make_folds(target, 3, stratified=True, seed=0)
        with pytest.raises(ValueError):
            build_adaptive_train_set(source, target, plan, 3)


class TestPlanValidation:
    def test_n_folds_lower_bound(self):
        source, target = _tiny_sets()
        with pytest.raises(ValueError):
            TransferPlan(source=source, target=target, n_folds=1, cfg=_cfg())

    def test_unknown_encoder_mode(self):
        source, target = _tiny_sets()
        with pytest.raises(ValueError):
            TransferPlan(source=source, target=target, n_folds=3, cfg=_cfg(),
                         encoder_mode="thawed")

    def test_warns_on_unseen_target_labels(self, caplog):
        source = Dataset(name="s", pairs=(
            RequirementPair(id="0", text1="a", text2="b", label=Label.CONFLICT),
            RequirementPair(id="1", text1="c", text2="d", label=Label.DUPLICATE),
        ))
        target = Dataset(name="t", pairs=tuple(
            RequirementPair(id=str(i), text1=f"x{i}", text2=f"y{i}",
                            label=Label.NEUTRAL)
            for i in range(4)))
        with caplog.at_level(logging.WARNING, logger="tsrcdf.transfer"):
            TransferPlan(source=source, target=target, n_folds=2, cfg=_cfg())
        assert any("absent from source" in r.message for r in caplog.records)


class TestRunTransfer:
    @pytest.fixture(scope="class")
    def result(self):
        source, target = _tiny_sets()
        plan = TransferPlan(source=source, target=target, n_folds=3,
                            cfg=_cfg(), seed=5)
        return plan, run_transfer(plan, _bundle())

    def test_fold_count_and_sizes(self, result):
        plan, res = result
        assert len(res.per_fold) == 3
        for fold in res.per_fold:
            assert fold["train_set_size"] == 240 + 60 - 20

    def test_plan_meta(self, result):
        _, res = result
        meta = res.plan_meta
        assert meta["source"] == "src" and meta["target"] == "tgt"
        assert meta["source_size"] == 240 and meta["target_size"] == 60
        assert meta["encoder_mode"] == "frozen"
        assert meta["fold_plan"]["n_folds"] == 3

    def test_deterministic(self, result):
        plan, res = result
        again = run_transfer(plan, _bundle())
        assert json.dumps(again.to_dict(), sort_keys=True) == json.dumps(
            res.to_dict(), sort_keys=True)

    def test_artifacts_persisted(self, tmp_path):
        source, target = _tiny_sets()
        plan = TransferPlan(source=source, target=target, n_folds=2,
                            cfg=_cfg(epochs=3), seed=5)
        res = run_transfer(plan, _bundle(), out_dir=tmp_path / "out")
        out = tmp_path / "out"
        for k in range(2):
            params, _, meta = load_checkpoint(out / f"fold-{k}.ckpt")
            assert meta["fold_index"] == k
            assert meta["train_set_size"] == res.per_fold[k]["train_set_size"]
            fold_report = json.loads((out / f"fold-{k}-report.json").read_text())
            assert fold_report == res.per_fold[k]["report"].to_dict()
        summary = json.loads((out / "transfer-report.json").read_text())
        assert summary == res.to_dict()


class TestBaselineArm:
    def test_matches_transfer_with_empty_source(self):
        _, target = _tiny_sets()
        cfg = _cfg(batch_size=8, epochs=4)
        base = target_only_baseline(target, 3, cfg, _bundle(), seed=9)
        plan = TransferPlan(source=Dataset(name="empty", pairs=()), target=target,
                            n_folds=3, cfg=cfg, seed=9)
        direct = run_transfer(plan, _bundle())
        assert base.to_dict() == direct.to_dict()
        for fold in base.per_fold:
            assert fold["train_set_size"] == 40


class _TunableProvider(HashProvider):
    """Pretends to be the remote service: fine-tuning swaps the hash seed."""

    def __init__(self, dim, seed, reject=False):
        super().__init__(dim, seed)
        self.reject = reject
        self.finetune_calls = []

    def finetune(self, base, pairs, params=None):
        self.finetune_calls.append({"base": base, "n_pairs": len(pairs),
                                    "params": params})
        if self.reject:
            raise FinetuneRejected("no capacity")
        return f"{base}-ft-0001"

    def with_model(self, model_id):
        child = _TunableProvider(self.dim, seed=self.seed + 1000)
        child.model_id = model_id
        return child


class TestFinetuneMode:
    def _run(self, reject):
        source, target = _tiny_sets()
        prov_a = _TunableProvider(16, seed=101, reject=reject)
        prov_b = _TunableProvider(16, seed=202, reject=reject)
        bundle = EncoderBundle(provider_a=prov_a, provider_b=prov_b)
        plan = TransferPlan(source=source, target=target, n_folds=2,
                            cfg=_cfg(epochs=3), encoder_mode="finetune", seed=7)
        return prov_a, prov_b, run_transfer(plan, bundle)

    def test_both_roles_tuned_per_fold(self):
        prov_a, prov_b, res = self._run(reject=False)
        assert len(prov_a.finetune_calls) == 2
        assert len(prov_b.finetune_calls) == 2
        # payload excludes the held-out fold: source plus remaining target
        for call in prov_a.finetune_calls:
            assert call["base"] == prov_a.model_id
            assert call["n_pairs"] == 240 + 30
        # per-fold seeds derive from the plan seed
        assert [c["params"]["seed"] for c in prov_a.finetune_calls] == [7, 8]
        assert len(res.per_fold) == 2

    def test_tuned_encoders_change_the_features(self):
        _, _, tuned = self._run(reject=False)
        source, target = _tiny_sets()
        frozen_plan = TransferPlan(source=source, target=target, n_folds=2,
                                   cfg=_cfg(epochs=3), seed=7)
        frozen = run_transfer(frozen_plan, _bundle())
        assert tuned.to_dict()["per_fold"] != frozen.to_dict()["per_fold"]

    def test_rejection_falls_back_to_frozen(self, caplog):
        with caplog.at_level(logging.WARNING, logger="tsrcdf.transfer"):
            prov_a, _, res = self._run(reject=True)
        assert len(prov_a.finetune_calls) == 2  # attempted every fold
        assert any("frozen" in r.message for r in caplog.records)
        source, target = _tiny_sets()
        frozen_plan = TransferPlan(source=source, target=target, n_folds=2,
                                   cfg=_cfg(epochs=3), seed=7)
        frozen = run_transfer(frozen_plan, _bundle())
        # fallback must reproduce the frozen-encoder numbers exactly
        assert res.to_dict()["per_fold"] == frozen.to_dict()["per_fold"]
