"""End-to-end command-line behavior: exit codes, artifacts, determinism."""

from __future__ import annotations

import json

import pytest

from tsrcdf.cli import main
from tsrcdf.corpus import load_dataset, write_jsonl
from tsrcdf.embeddings import read_store_header
from tsrcdf.mlp import load_checkpoint
from tsrcdf.synth import synthetic_corpus

FAST = ["--dim", "16", "--h1", "32", "--h2", "16",
        "--batch-size", "16", "--epochs", "3", "--patience", "0"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-data")
    write_jsonl(synthetic_corpus(160, seed=31, name="main"), root / "main.jsonl")
    write_jsonl(synthetic_corpus(240, seed=32, name="src"), root / "src.jsonl")
    write_jsonl(synthetic_corpus(60, seed=33, name="tgt"), root / "tgt.jsonl")
    return root


def _last_json(capsys):
    out = capsys.readouterr().out.strip().splitlines()
    return json.loads(out[-1])


def _stderr_json(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1, err
    return json.loads(err[0])


class TestTopLevel:
    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "encode" in capsys.readouterr().out

    def test_unknown_option(self, capsys):
        assert main(["train", "--no-such-flag"]) == 1
        assert _stderr_json(capsys)["error"] == "UsageError"

    def test_missing_required_option(self, capsys):
        assert main(["encode"]) == 1
        msg = _stderr_json(capsys)
        assert msg["error"] == "UsageError"
        assert "dataset" in msg["message"]


class TestEncode:
    def test_writes_store(self, data_dir, tmp_path, capsys):
        out = tmp_path / "role-a.vec"
        rc = main(["encode", "--dataset", str(data_dir / "main.jsonl"),
                   "--role", "a", "--dim", "16", "--seed", "5",
                   "--out", str(out)])
        assert rc == 0
        echo = _last_json(capsys)
        # role A derives its hash seed as seed + 101
        assert read_store_header(out) == ("hash-16-106", 16)
        ds = load_dataset(data_dir / "main.jsonl")
        distinct = len(set([p.text1 for p in ds.pairs] + [p.text2 for p in ds.pairs]))
        assert echo["sentences"] == distinct
        assert echo["records"] == distinct

    def test_rerun_is_idempotent(self, data_dir, tmp_path, capsys):
        out = tmp_path / "role-b.vec"
        args = ["encode", "--dataset", str(data_dir / "main.jsonl"),
                "--role", "b", "--dim", "16", "--out", str(out)]
        assert main(args) == 0
        first = out.read_bytes()
        assert main(args) == 0
        assert out.read_bytes() == first

    def test_missing_dataset_exit_two(self, tmp_path, capsys):
        rc = main(["encode", "--dataset", str(tmp_path / "nope.jsonl"),
                   "--out", str(tmp_path / "x.vec")])
        assert rc == 2
        assert "nope.jsonl" in _stderr_json(capsys)["message"]


class TestFolds:
    def test_plan_file(self, data_dir, tmp_path, capsys):
        out = tmp_path / "plan.json"
        rc = main(["folds", "--dataset", str(data_dir / "main.jsonl"),
                   "--folds", "4", "--seed", "3", "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert doc["command"] == "folds"
        assert doc["fold_plan"]["n_folds"] == 4
        assert len(doc["fold_plan"]["assignments"]) == 160
        assert set(doc["label_counts"]) == {"Conflict", "Duplicate", "Neutral"}

    def test_deterministic(self, data_dir, tmp_path, capsys):
        # the written doc embeds its own output path, so compare the plans
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        base = ["folds", "--dataset", str(data_dir / "main.jsonl"),
                "--folds", "5", "--seed", "9"]
        assert main(base + ["--out", str(a)]) == 0
        assert main(base + ["--out", str(b)]) == 0
        doc_a, doc_b = json.loads(a.read_text()), json.loads(b.read_text())
        assert doc_a["fold_plan"] == doc_b["fold_plan"]
        assert doc_a["label_counts"] == doc_b["label_counts"]


class TestTrainFit:
    def test_checkpoint_and_log(self, data_dir, tmp_path, capsys):
        ckpt = tmp_path / "model.ckpt"
        log = tmp_path / "run.log"
        rc = main(["train", "--dataset", str(data_dir / "main.jsonl"),
                   "--out", str(ckpt), "--log", str(log), "--seed", "7"] + FAST)
        assert rc == 0
        echo = _last_json(capsys)
        assert echo["epochs_run"] == 3
        params, loss_cfg, meta = load_checkpoint(ckpt)
        assert params.d_in == 6 * 16
        assert (params.h1, params.h2, params.C) == (32, 16, 3)
        assert meta["classes"] == ["Conflict", "Duplicate", "Neutral"]
        assert meta["encoders"]["a"] == {"provider": "hash", "dim": 16, "seed": 108}
        assert meta["encoders"]["b"]["seed"] == 209
        assert meta["config"]["seed"] == 7
        assert loss_cfg is not None
        records = [json.loads(l) for l in log.read_text().splitlines()]
        assert len(records) == 3
        assert records[0]["gamma"] == 2.0

    def test_three_fusion_narrows_input(self, data_dir, tmp_path, capsys):
        ckpt = tmp_path / "three.ckpt"
        rc = main(["train", "--dataset", str(data_dir / "main.jsonl"),
                   "--out", str(ckpt), "--fusion", "three"] + FAST)
        assert rc == 0
        params, _, meta = load_checkpoint(ckpt)
        assert params.d_in == 3 * 16
        assert meta["fusion"] == "three"

    def test_unlabeled_dataset_rejected(self, tmp_path, capsys):
        data = tmp_path / "unlabeled.jsonl"
        data.write_text(json.dumps({"sentence1": "a", "sentence2": "b"}) + "\n")
        rc = main(["train", "--dataset", str(data),
                   "--out", str(tmp_path / "x.ckpt")] + FAST)
        assert rc == 2
        assert "unlabeled" in _stderr_json(capsys)["message"]

    def test_config_file_and_flag_precedence(self, data_dir, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochs": 2, "h1": 32, "h2": 16,
                                   "dim": 16, "batch_size": 16, "patience": 0}))
        base = ["train", "--dataset", str(data_dir / "main.jsonl"),
                "--config", str(cfg)]
        assert main(base + ["--out", str(tmp_path / "a.ckpt")]) == 0
        assert _last_json(capsys)["epochs_run"] == 2  # config value applies
        assert main(base + ["--epochs", "3", "--out", str(tmp_path / "b.ckpt")]) == 0
        assert _last_json(capsys)["epochs_run"] == 3  # flag beats config

    def test_cached_vectors_reusable_offline(self, data_dir, tmp_path, capsys):
        cache = tmp_path / "cache"
        args = ["train", "--dataset", str(data_dir / "main.jsonl"),
                "--cache", str(cache)] + FAST
        assert main(args + ["--out", str(tmp_path / "warm.ckpt")]) == 0
        warm = _last_json(capsys)
        assert (cache / "role-a.vec").exists() and (cache / "role-b.vec").exists()
        # second run reads vectors from the stores, no hash provider involved
        rc = main(["train", "--dataset", str(data_dir / "main.jsonl"),
                   "--provider", "file", "--cache", str(cache),
                   "--out", str(tmp_path / "offline.ckpt")] + FAST)
        assert rc == 0
        offline = _last_json(capsys)
        assert offline["best_val_macro_f1"] == warm["best_val_macro_f1"]

    def test_file_provider_needs_cache(self, data_dir, tmp_path, capsys):
        rc = main(["train", "--dataset", str(data_dir / "main.jsonl"),
                   "--provider", "file", "--out", str(tmp_path / "x.ckpt")] + FAST)
        assert rc == 1
        assert _stderr_json(capsys)["error"] == "UsageError"

    def test_remote_provider_needs_url(self, data_dir, tmp_path, capsys):
        rc = main(["train", "--dataset", str(data_dir / "main.jsonl"),
                   "--provider", "remote", "--out", str(tmp_path / "x.ckpt")] + FAST)
        assert rc == 1
        assert "encoder-url" in _stderr_json(capsys)["message"]

    def test_unreachable_encoder_exit_three(self, data_dir, tmp_path, capsys,
                                            monkeypatch):
        monkeypatch.setenv("TSRCDF_ENCODER_URL", "http://127.0.0.1:9")
        rc = main(["train", "--dataset", str(data_dir / "main.jsonl"),
                   "--provider", "remote", "--out", str(tmp_path / "x.ckpt")] + FAST)
        assert rc == 3
        assert _stderr_json(capsys)["error"] == "ProviderUnavailable"


class TestTrainCrossval:
    def test_report_and_byte_identity(self, data_dir, tmp_path, capsys):
        base = ["train", "--dataset", str(data_dir / "main.jsonl"),
                "--folds", "4", "--seed", "13"] + FAST
        r1, r2 = tmp_path / "r1.json", tmp_path / "r2.json"
        assert main(base + ["--out", str(r1)]) == 0
        echo = _last_json(capsys)
        assert main(base + ["--out", str(r2)]) == 0
        assert r1.read_bytes() == r2.read_bytes()
        doc = json.loads(r1.read_text())
        assert doc["command"] == "train" and doc["mode"] == "crossval"
        assert len(doc["result"]["per_fold"]) == 4
        assert doc["config"]["seed"] == 13
        assert echo["macro_f1_mean"] == doc["result"]["aggregate"]["macro_f1"]["mean"]


class TestEval:
    def test_round_trip_against_train_set(self, data_dir, tmp_path, capsys):
        ckpt = tmp_path / "model.ckpt"
        assert main(["train", "--dataset", str(data_dir / "main.jsonl"),
                     "--out", str(ckpt), "--epochs", "8", "--dim", "16",
                     "--h1", "32", "--h2", "16", "--batch-size", "16",
                     "--patience", "0"]) == 0
        capsys.readouterr()
        report_path = tmp_path / "eval.json"
        rc = main(["eval", "--dataset", str(data_dir / "main.jsonl"),
                   "--checkpoint", str(ckpt), "--out", str(report_path)])
        assert rc == 0
        table = capsys.readouterr().out
        assert "macro avg" in table and "accuracy" in table
        doc = json.loads(report_path.read_text())
        assert doc["command"] == "eval"
        assert doc["report"]["accuracy"] > 0.5  # sanity: far above chance

    def test_missing_checkpoint(self, data_dir, tmp_path, capsys):
        rc = main(["eval", "--dataset", str(data_dir / "main.jsonl"),
                   "--checkpoint", str(tmp_path / "none.ckpt")])
        assert rc == 2
        assert "checkpoint" in _stderr_json(capsys)["message"]


class TestTransfer:
    def test_plan_file_run(self, data_dir, tmp_path, capsys):
        plan = tmp_path / "plan.json"
        plan.write_text(json.dumps({
            "source": [str(data_dir / "src.jsonl")],
            "target": str(data_dir / "tgt.jsonl"),
            "n_folds": 2,
            "encoder_mode": "frozen",
            "seed": 3,
            "train_config": {"epochs": 2, "batch_size": 16, "h1": 32,
                             "h2": 16, "dim": 16, "patience": 0},
        }))
        out = tmp_path / "transfer.json"
        rc = main(["transfer", "--plan", str(plan), "--out", str(out),
                   "--out-dir", str(tmp_path / "artifacts")])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert doc["command"] == "transfer"
        assert doc["config"]["n_folds"] == 2
        assert doc["config"]["encoder_mode"] == "frozen"
        sizes = [f["train_set_size"] for f in doc["result"]["per_fold"]]
        assert sizes == [240 + 60 - 30, 240 + 60 - 30]
        assert (tmp_path / "artifacts" / "fold-0.ckpt").exists()
        assert (tmp_path / "artifacts" / "transfer-report.json").exists()

    def test_flags_override_plan(self, data_dir, tmp_path, capsys):
        plan = tmp_path / "plan.json"
        plan.write_text(json.dumps({
            "source": [str(data_dir / "src.jsonl")],
            "target": str(data_dir / "tgt.jsonl"),
            "n_folds": 3,
            "train_config": {"epochs": 2, "batch_size": 16, "h1": 32,
                             "h2": 16, "dim": 16, "patience": 0},
        }))
        out = tmp_path / "t.json"
        rc = main(["transfer", "--plan", str(plan), "--folds", "2",
                   "--out", str(out)])
        assert rc == 0
        assert json.loads(out.read_text())["config"]["n_folds"] == 2

    def test_flags_only_run_deterministic(self, data_dir, tmp_path, capsys):
        base = ["transfer", "--source", str(data_dir / "src.jsonl"),
                "--target", str(data_dir / "tgt.jsonl"), "--folds", "2",
                "--seed", "4"] + FAST
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(base + ["--out", str(a)]) == 0
        assert main(base + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_target_required(self, data_dir, tmp_path, capsys):
        rc = main(["transfer", "--source", str(data_dir / "src.jsonl"),
                   "--out", str(tmp_path / "t.json")])
        assert rc == 1
        assert "target" in _stderr_json(capsys)["message"]


class TestReportCommand:
    def test_pretty_prints_crossval(self, data_dir, tmp_path, capsys):
        out = tmp_path / "cv.json"
        assert main(["train", "--dataset", str(data_dir / "main.jsonl"),
                     "--folds", "3", "--out", str(out)] + FAST) == 0
        capsys.readouterr()
        assert main(["report", str(out)]) == 0
        text = capsys.readouterr().out
        assert "fold 0" in text
        assert "aggregate over folds" in text
        assert "macro_f1" in text

    def test_pretty_prints_eval_report(self, data_dir, tmp_path, capsys):
        ckpt = tmp_path / "m.ckpt"
        assert main(["train", "--dataset", str(data_dir / "main.jsonl"),
                     "--out", str(ckpt)] + FAST) == 0
        rep = tmp_path / "e.json"
        assert main(["eval", "--dataset", str(data_dir / "main.jsonl"),
                     "--checkpoint", str(ckpt), "--out", str(rep)]) == 0
        capsys.readouterr()
        assert main(["report", str(rep)]) == 0
        assert "weighted avg" in capsys.readouterr().out

    def test_missing_file(self, tmp_path, capsys):
        assert main(["report", str(tmp_path / "none.json")]) == 2
