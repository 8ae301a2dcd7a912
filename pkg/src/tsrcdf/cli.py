"""Command-line front end: encode, train, eval, transfer, folds, report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 provider/service
error. Errors are emitted as one JSON line on stderr. All output files
are written atomically (temp file, then rename). A single --seed
(default 42) drives every random stream: role A encoder uses seed+101,
role B seed+202, fold k of any k-fold run trains with seed+k.

Flags override values from an optional --config JSON file, whose keys
are the flag names with underscores (e.g. {"batch_size": 32}).
"""

from __future__ import annotations

import json
import os
import shutil
import sys
from pathlib import Path

import click
from click.core import ParameterSource

from .corpus import (
    Dataset,
    concat_datasets,
    load_dataset,
    make_folds,
    normalize_label,
)
from .embeddings import (
    FileProvider,
    HashProvider,
    RemoteProvider,
    VectorStore,
    resolve_embeddings,
)
from .errors import DataError, MalformedRecord, ProviderError, TsrcdfError
from .metrics import MetricsReport, format_report
from .mlp import DropoutSpec, OptConfig, load_checkpoint, save_checkpoint
from .trainer import (
    EncoderBundle,
    TrainConfig,
    crossval,
    empirical_loss_config,
    evaluate,
    fused_matrix,
    train,
    write_run_log,
)
from .transfer import TransferPlan, run_transfer

DEFAULT_SEED = 42
ROLE_SEED_OFFSET = {"a": 101, "b": 202}
ROLE_MODEL_ID = {"a": "sbert", "b": "simcse"}


def _atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise MalformedRecord(f"no such config file: {p}")
    cfg = json.loads(p.read_text(encoding="utf-8"))
    if not isinstance(cfg, dict):
        raise MalformedRecord(f"{p}: config must be a JSON object")
    return cfg


def _pick(ctx: click.Context, config: dict, name: str):
    """Flag if given on the command line, else config value, else default."""
    if ctx.get_parameter_source(name) == ParameterSource.COMMANDLINE:
        return ctx.params[name]
    if name in config:
        return config[name]
    return ctx.params[name]


def _require_labels(ds: Dataset) -> None:
    n = sum(1 for p in ds.pairs if p.label is None)
    if n:
        raise MalformedRecord(f"dataset {ds.name!r} has {n} unlabeled pairs; "
                              f"this command needs gold labels")


def _build_role(role: str, kind: str, dim: int, seed: int, url: str | None,
                cache_dir: str | None):
    """(provider, cache, metadata) for one encoder role."""
    if kind == "hash":
        provider = HashProvider(dim, seed + ROLE_SEED_OFFSET[role])
        meta = {"provider": "hash", "dim": dim,
                "seed": seed + ROLE_SEED_OFFSET[role]}
    elif kind == "remote":
        if not url:
            raise click.UsageError(
                "remote provider needs --encoder-url or TSRCDF_ENCODER_URL")
        provider = RemoteProvider(url, ROLE_MODEL_ID[role])
        meta = {"provider": "remote", "model": ROLE_MODEL_ID[role], "url": url}
    elif kind == "file":
        if not cache_dir:
            raise click.UsageError("file provider needs --cache DIR holding "
                                   "role-a.vec / role-b.vec")
        provider = FileProvider.open(Path(cache_dir) / f"role-{role}.vec")
        meta = {"provider": "file", "path": str(Path(cache_dir) / f"role-{role}.vec"),
                "model": provider.model_id, "dim": provider.dim}
        return provider, None, meta
    else:
        raise click.UsageError(f"unknown provider {kind!r}")
    cache = None
    if cache_dir:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        cache = VectorStore(Path(cache_dir) / f"role-{role}.vec",
                            provider.model_id, provider.dim)
    return provider, cache, meta


def _build_bundle(kind: str, dim_a: int, dim_b: int, seed: int,
                  url: str | None, cache_dir: str | None, fusion: str,
                  normalize: bool) -> tuple[EncoderBundle, dict]:
    pa, ca, meta_a = _build_role("a", kind, dim_a, seed, url, cache_dir)
    pb, cb, meta_b = _build_role("b", kind, dim_b, seed, url, cache_dir)
    bundle = EncoderBundle(provider_a=pa, provider_b=pb, cache_a=ca,
                           cache_b=cb, fusion=fusion, normalize=normalize)
    return bundle, {"a": meta_a, "b": meta_b}


def _bundle_from_meta(meta: dict, fusion: str, normalize: bool,
                      url_override: str | None) -> EncoderBundle:
    """Rebuild the feature pipeline recorded in a checkpoint."""
    providers = {}
    for role in ("a", "b"):
        m = meta[role]
        kind = m["provider"]
        if kind == "hash":
            providers[role] = HashProvider(int(m["dim"]), int(m["seed"]))
        elif kind == "remote":
            providers[role] = RemoteProvider(url_override or m["url"], m["model"])
        else:
            providers[role] = FileProvider.open(m["path"])
    return EncoderBundle(provider_a=providers["a"], provider_b=providers["b"],
                         fusion=fusion, normalize=normalize)


_TRAIN_PARAM_NAMES = (
    "provider", "dim", "dim_a", "dim_b", "encoder_url", "cache", "fusion",
    "normalize", "loss", "alpha", "beta", "lambda_", "gamma_base", "eta",
    "weights", "epochs", "batch_size", "patience", "val_fraction", "lr",
    "h1", "h2", "seed",
)


def _encoder_options(f):
    opts = [
        click.option("--provider", type=click.Choice(["hash", "file", "remote"]),
                     default="hash", help="embedding source"),
        click.option("--dim", type=int, default=64,
                     help="hash provider dimensionality (both roles)"),
        click.option("--dim-a", type=int, default=None),
        click.option("--dim-b", type=int, default=None),
        click.option("--encoder-url", envvar="TSRCDF_ENCODER_URL", default=None,
                     help="encoder service base URL (env TSRCDF_ENCODER_URL)"),
        click.option("--cache", default=None,
                     help="directory for role-a.vec / role-b.vec vector stores"),
        click.option("--fusion", type=click.Choice(["six", "three"]),
                     default="six"),
        click.option("--normalize", is_flag=True, default=False,
                     help="L2-normalize encoder outputs before fusion"),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _train_options(f):
    opts = [
        click.option("--loss", type=click.Choice(["afc", "ce"]), default="afc"),
        click.option("--alpha", type=float, default=1.0),
        click.option("--beta", type=float, default=0.1),
        click.option("--lambda", "lambda_", type=float, default=0.1),
        click.option("--gamma-base", type=float, default=2.0),
        click.option("--eta", type=float, default=1.0),
        click.option("--weights", type=click.Choice(["inverse_frequency", "uniform"]),
                     default="inverse_frequency"),
        click.option("--epochs", type=int, default=50),
        click.option("--batch-size", type=int, default=64),
        click.option("--patience", type=int, default=5),
        click.option("--val-fraction", type=float, default=0.1),
        click.option("--lr", type=float, default=1e-3),
        click.option("--h1", type=int, default=1500),
        click.option("--h2", type=int, default=1000),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _effective(ctx: click.Context, config: dict, names) -> dict:
    return {name: _pick(ctx, config, name) for name in names}


def _train_config(eff: dict, labels, classes) -> TrainConfig:
    loss_cfg = empirical_loss_config(
        labels, classes, scheme=eff["weights"], gamma_base=eff["gamma_base"],
        eta=eff["eta"], alpha=eff["alpha"], beta=eff["beta"],
        lambda_=eff["lambda_"])
    return TrainConfig(loss=loss_cfg, epochs=eff["epochs"],
                       batch_size=eff["batch_size"], seed=eff["seed"],
                       opt=OptConfig(lr=eff["lr"]), dropout=DropoutSpec(),
                       early_stop_patience=eff["patience"],
                       val_fraction=eff["val_fraction"],
                       loss_kind=eff["loss"], h1=eff["h1"], h2=eff["h2"])


@click.group()
def cli() -> None:
    """Requirement-pair conflict/duplicate classification pipeline."""


@cli.command()
@click.option("--dataset", required=True)
@click.option("--provider", type=click.Choice(["hash", "remote"]), default="hash")
@click.option("--role", type=click.Choice(["a", "b"]), default="a")
@click.option("--dim", type=int, default=64)
@click.option("--encoder-url", envvar="TSRCDF_ENCODER_URL", default=None)
@click.option("--seed", type=int, default=DEFAULT_SEED)
@click.option("--out", required=True)
@click.option("--config", "config_path", default=None)
@click.pass_context
def encode(ctx, dataset, provider, role, dim, encoder_url, seed, out,
           config_path) -> None:
    """Fill a vector store with embeddings for every distinct sentence."""
    config = _load_config(config_path)
    eff = _effective(ctx, config, ("dataset", "provider", "role", "dim",
                                   "encoder_url", "seed", "out"))
    ds = load_dataset(eff["dataset"])
    texts = list(dict.fromkeys([p.text1 for p in ds.pairs]
                               + [p.text2 for p in ds.pairs]))
    prov, _, _ = _build_role(eff["role"], eff["provider"], eff["dim"],
                             eff["seed"], eff["encoder_url"], None)
    out_path = Path(eff["out"])
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = out_path.with_name(out_path.name + f".tmp{os.getpid()}")
    if out_path.exists():
        shutil.copy2(out_path, tmp)
    store = VectorStore(tmp, prov.model_id, prov.dim)
    resolve_embeddings(prov, store, texts)
    os.replace(tmp, out_path)
    click.echo(json.dumps({"sentences": len(texts), "records": len(store),
                           "model": prov.model_id, "dim": prov.dim,
                           "out": str(out_path)}, sort_keys=True))


@cli.command()
@click.option("--dataset", required=True)
@click.option("--folds", type=int, default=5)
@click.option("--stratified/--no-stratified", default=True)
@click.option("--seed", type=int, default=DEFAULT_SEED)
@click.option("--out", required=True)
@click.option("--config", "config_path", default=None)
@click.pass_context
def folds(ctx, dataset, folds, stratified, seed, out, config_path) -> None:
    """Write a cross-validation fold plan for a dataset."""
    config = _load_config(config_path)
    eff = _effective(ctx, config, ("dataset", "folds", "stratified", "seed", "out"))
    ds = load_dataset(eff["dataset"])
    plan = make_folds(ds, eff["folds"], stratified=eff["stratified"],
                      seed=eff["seed"])
    doc = {"command": "folds", "config": {**eff, "dataset": str(eff["dataset"])},
           "fold_plan": plan.to_dict(),
           "label_counts": {str(k): v for k, v in ds.label_counts.items()}}
    _atomic_write(eff["out"], _dump(doc))
    click.echo(json.dumps({"out": str(eff["out"]), "n_folds": eff["folds"],
                           "size": len(ds)}, sort_keys=True))


@cli.command(name="train")
@click.option("--dataset", required=True)
@_encoder_options
@_train_options
@click.option("--seed", type=int, default=DEFAULT_SEED)
@click.option("--folds", type=int, default=None,
              help="run k-fold cross-validation instead of a single fit")
@click.option("--out", required=True,
              help="checkpoint path (single fit) or report JSON path (--folds)")
@click.option("--log", "log_path", default=None, help="run log JSONL path")
@click.option("--config", "config_path", default=None)
@click.pass_context
def train_cmd(ctx, dataset, folds, out, log_path, config_path, **_) -> None:
    """Train the classifier, either on the full set or as k-fold CV."""
    config = _load_config(config_path)
    eff = _effective(ctx, config, _TRAIN_PARAM_NAMES + ("dataset", "folds",
                                                        "out", "log_path"))
    eff["dim_a"] = eff["dim_a"] or eff["dim"]
    eff["dim_b"] = eff["dim_b"] or eff["dim"]
    ds = load_dataset(eff["dataset"])
    _require_labels(ds)
    bundle, enc_meta = _build_bundle(
        eff["provider"], eff["dim_a"], eff["dim_b"], eff["seed"],
        eff["encoder_url"], eff["cache"], eff["fusion"], eff["normalize"])
    classes = ds.labels_present()
    labels = [p.label for p in ds.pairs]
    cfg = _train_config(eff, labels, classes)
    config_echo = {k: eff[k] for k in _TRAIN_PARAM_NAMES}
    config_echo.update({"dataset": str(eff["dataset"]), "folds": eff["folds"]})

    if eff["folds"]:
        result = crossval(ds, bundle, eff["folds"], cfg)
        doc = {"command": "train", "mode": "crossval", "config": config_echo,
               "result": result.to_dict()}
        _atomic_write(eff["out"], _dump(doc))
        click.echo(json.dumps(
            {"out": str(eff["out"]),
             "macro_f1_mean": result.aggregate["macro_f1"]["mean"],
             "macro_f1_std": result.aggregate["macro_f1"]["std"]},
            sort_keys=True))
        return

    X = fused_matrix(ds.pairs, bundle)
    params, state = train(X, labels, cfg, classes=classes)
    out_path = Path(eff["out"])
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = out_path.with_name(out_path.name + f".tmp{os.getpid()}")
    save_checkpoint(tmp, params, loss_config=cfg.loss,
                    metadata={"classes": [str(c) for c in classes],
                              "fusion": eff["fusion"],
                              "normalize": eff["normalize"],
                              "encoders": enc_meta,
                              "config": config_echo})
    os.replace(tmp, out_path)
    if eff["log_path"]:
        write_run_log(eff["log_path"], state)
    click.echo(json.dumps({"out": str(out_path),
                           "epochs_run": state.epoch,
                           "best_val_macro_f1": state.best_val_metric},
                          sort_keys=True))


@cli.command(name="eval")
@click.option("--dataset", required=True)
@click.option("--checkpoint", required=True)
@click.option("--encoder-url", envvar="TSRCDF_ENCODER_URL", default=None,
              help="override the URL recorded in the checkpoint")
@click.option("--out", default=None, help="report JSON path")
@click.pass_context
def eval_cmd(ctx, dataset, checkpoint, encoder_url, out) -> None:
    """Score a saved checkpoint against a labeled dataset."""
    ds = load_dataset(dataset)
    _require_labels(ds)
    ckpt = Path(checkpoint)
    if not ckpt.exists():
        raise MalformedRecord(f"no such checkpoint: {ckpt}")
    params, _, meta = load_checkpoint(ckpt)
    if "encoders" not in meta or "classes" not in meta:
        raise MalformedRecord(f"{ckpt}: checkpoint lacks pipeline metadata")
    bundle = _bundle_from_meta(meta["encoders"], meta.get("fusion", "six"),
                               meta.get("normalize", False), encoder_url)
    classes = [normalize_label(name) for name in meta["classes"]]
    X = fused_matrix(ds.pairs, bundle)
    rep = evaluate(params, X, [p.label for p in ds.pairs], classes=classes)
    if out:
        _atomic_write(out, _dump({"command": "eval",
                                  "config": {"dataset": str(dataset),
                                             "checkpoint": str(ckpt)},
                                  "report": rep.to_dict()}))
    click.echo(format_report(rep))


@cli.command(name="transfer")
@click.option("--plan", "plan_path", default=None,
              help="JSON plan: {source: [paths], target, n_folds, "
                   "encoder_mode, train_config, seed}")
@click.option("--source", multiple=True, help="source dataset path (repeatable)")
@click.option("--target", default=None)
@click.option("--folds", type=int, default=3)
@click.option("--frozen/--finetune", "frozen", default=True)
@_encoder_options
@_train_options
@click.option("--seed", type=int, default=DEFAULT_SEED)
@click.option("--out", required=True)
@click.option("--out-dir", default=None,
              help="directory for per-fold checkpoints and reports")
@click.option("--config", "config_path", default=None)
@click.pass_context
def transfer_cmd(ctx, plan_path, source, target, folds, frozen, out, out_dir,
                 config_path, **_) -> None:
    """Run the n-fold cross-domain transfer protocol."""
    plan_doc = _load_config(plan_path) if plan_path else {}
    config = _load_config(config_path)
    config.update(plan_doc.get("train_config", {}))
    eff = _effective(ctx, config, _TRAIN_PARAM_NAMES)
    eff["dim_a"] = eff["dim_a"] or eff["dim"]
    eff["dim_b"] = eff["dim_b"] or eff["dim"]

    source_paths = list(source) if source else list(plan_doc.get("source", []))
    target_path = target or plan_doc.get("target")
    if not target_path:
        raise click.UsageError("transfer needs --target or a plan with one")
    if ctx.get_parameter_source("folds") == ParameterSource.COMMANDLINE \
            or "n_folds" not in plan_doc:
        n_folds = folds
    else:
        n_folds = int(plan_doc["n_folds"])
    if ctx.get_parameter_source("frozen") == ParameterSource.COMMANDLINE:
        encoder_mode = "frozen" if frozen else "finetune"
    else:
        encoder_mode = plan_doc.get("encoder_mode", "frozen")
    seed = eff["seed"] if "seed" not in plan_doc or \
        ctx.get_parameter_source("seed") == ParameterSource.COMMANDLINE \
        else int(plan_doc["seed"])
    eff["seed"] = seed

    sources = [load_dataset(p) for p in source_paths]
    for s in sources:
        _require_labels(s)
    src = concat_datasets(sources, name="source") if sources \
        else Dataset(name="empty", pairs=())
    tgt = load_dataset(target_path)
    _require_labels(tgt)

    bundle, _ = _build_bundle(
        eff["provider"], eff["dim_a"], eff["dim_b"], seed,
        eff["encoder_url"], eff["cache"], eff["fusion"], eff["normalize"])
    pool_labels = [p.label for d in (src, tgt) for p in d.pairs]
    classes = sorted(set(pool_labels), key=lambda l: l.code)
    cfg = _train_config(eff, pool_labels, classes)
    plan = TransferPlan(source=src, target=tgt, n_folds=n_folds, cfg=cfg,
                        encoder_mode=encoder_mode, seed=seed)
    result = run_transfer(plan, bundle, out_dir=out_dir)
    config_echo = {k: eff[k] for k in _TRAIN_PARAM_NAMES}
    config_echo.update({"source": [str(p) for p in source_paths],
                        "target": str(target_path), "n_folds": n_folds,
                        "encoder_mode": encoder_mode})
    doc = {"command": "transfer", "config": config_echo,
           "result": result.to_dict()}
    _atomic_write(out, _dump(doc))
    click.echo(json.dumps(
        {"out": str(out),
         "macro_f1_mean": result.aggregate["macro_f1"]["mean"],
         "macro_f1_std": result.aggregate["macro_f1"]["std"]},
        sort_keys=True))


@cli.command(name="report")
@click.argument("report_file")
def report_cmd(report_file) -> None:
    """Pretty-print a JSON report produced by train/eval/transfer."""
    path = Path(report_file)
    if not path.exists():
        raise MalformedRecord(f"no such report: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if "report" in doc:
        click.echo(format_report(MetricsReport.from_dict(doc["report"])))
        return
    result = doc.get("result", doc)
    for i, entry in enumerate(result.get("per_fold", [])):
        rep = entry["report"] if "report" in entry else entry
        idx = entry.get("fold_index", i)
        click.echo(f"fold {idx}" + (f"  (train size {entry['train_set_size']})"
                                    if "train_set_size" in entry else ""))
        click.echo(format_report(MetricsReport.from_dict(rep)))
        click.echo("")
    agg = result.get("aggregate")
    if agg:
        click.echo("aggregate over folds (mean +- std):")
        for key in sorted(agg):
            m, s = agg[key]["mean"], agg[key]["std"]
            click.echo(f"  {key:18s} {100 * m:5.1f} +- {100 * s:4.1f}")


def _error_line(exc: BaseException, name: str | None = None) -> None:
    msg = " ".join(str(exc).split())
    sys.stderr.write(json.dumps({"error": name or type(exc).__name__,
                                 "message": msg}) + "\n")


def main(argv: list[str] | None = None) -> int:
    try:
        rv = cli.main(args=argv, standalone_mode=False)
        return rv if isinstance(rv, int) else 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        _error_line(exc, "UsageError")
        return 1
    except click.Abort:
        _error_line(RuntimeError("aborted"), "Aborted")
        return 1
    except ProviderError as exc:
        _error_line(exc)
        return 3
    except DataError as exc:
        _error_line(exc)
        return 2
    except TsrcdfError as exc:
        _error_line(exc)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        _error_line(exc)
        return 2
    except ValueError as exc:
        _error_line(exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
