"""Requirement-pair datasets: loading, normalization, subsampling, fold plans.

Datasets are ordered collections of labeled sentence pairs. Labels follow the
renamed NLI convention (entailment -> Duplicate, contradiction -> Conflict);
binary corpora simply use the {Conflict, Neutral} subset. All operations are
pure and deterministic given their seed.
"""

from __future__ import annotations

import csv
import json
import random
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Mapping, Sequence

from .errors import (
    DuplicateId,
    EmptyText,
    MalformedRecord,
    NTooLarge,
    TooFewSamples,
    UnknownLabel,
)


class SparseClassWarning(UserWarning):
    """A label has fewer members than there are folds."""


class Label(Enum):
    """The three pair relations, with stable integer codes."""

    CONFLICT = 0
    DUPLICATE = 1
    NEUTRAL = 2

    @property
    def code(self) -> int:
        return self.value

    def __str__(self) -> str:
        return self.name.capitalize()


_LABEL_ALIASES: dict[str, Label] = {
    "conflict": Label.CONFLICT,
    "contradiction": Label.CONFLICT,
    "duplicate": Label.DUPLICATE,
    "entailment": Label.DUPLICATE,
    "neutral": Label.NEUTRAL,
}


def normalize_label(raw: str) -> Label:
    """Map a raw label string (NLI or renamed, any case) to a Label."""
    key = raw.strip().lower()
    if key not in _LABEL_ALIASES:
        raise UnknownLabel(f"unknown label {raw!r}")
    return _LABEL_ALIASES[key]


@dataclass(frozen=True)
class RequirementPair:
    """Two requirement sentences and an optional gold label."""

    id: str
    text1: str
    text2: str
    label: Label | None = None


@dataclass(frozen=True)
class Dataset:
    """An ordered, id-unique collection of requirement pairs."""

    name: str
    pairs: tuple[RequirementPair, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for p in self.pairs:
            if p.id in seen:
                raise DuplicateId(f"duplicate pair id {p.id!r} in dataset {self.name!r}")
            seen.add(p.id)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[RequirementPair]:
        return iter(self.pairs)

    @property
    def label_counts(self) -> dict[Label, int]:
        counts = {lab: 0 for lab in Label}
        for p in self.pairs:
            if p.label is not None:
                counts[p.label] += 1
        return {lab: n for lab, n in counts.items() if n}

    def labels_present(self) -> list[Label]:
        """Distinct labels, ordered by code."""
        return sorted(self.label_counts, key=lambda l: l.code)


@dataclass(frozen=True)
class FoldPlan:
    """A cross-validation partition: one fold index per pair."""

    n_folds: int
    seed: int
    assignments: tuple[int, ...]

    def fold_indices(self, fold: int) -> list[int]:
        return [i for i, a in enumerate(self.assignments) if a == fold]

    def split(self, fold: int) -> tuple[list[int], list[int]]:
        """(train indices, test indices) for one held-out fold."""
        train = [i for i, a in enumerate(self.assignments) if a != fold]
        test = [i for i, a in enumerate(self.assignments) if a == fold]
        return train, test

    def to_dict(self) -> dict:
        return {"n_folds": self.n_folds, "seed": self.seed, "assignments": list(self.assignments)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FoldPlan":
        return cls(n_folds=int(d["n_folds"]), seed=int(d["seed"]),
                   assignments=tuple(int(a) for a in d["assignments"]))


def _build_pair(index: int, rid: str | None, text1: str, text2: str,
                raw_label: str | None, where: str) -> RequirementPair:
    t1, t2 = text1.strip(), text2.strip()
    if not t1 or not t2:
        raise EmptyText(f"{where}: empty sentence after trimming")
    label = normalize_label(raw_label) if raw_label not in (None, "") else None
    return RequirementPair(id=rid if rid else str(index), text1=t1, text2=t2, label=label)


def _load_jsonl(path: Path) -> list[RequirementPair]:
    pairs: list[RequirementPair] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"{where}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise MalformedRecord(f"{where}: record is not an object")
            for key in ("sentence1", "sentence2"):
                if not isinstance(rec.get(key), str):
                    raise MalformedRecord(f"{where}: missing or non-string {key!r}")
            raw_label = rec.get("gold_label")
            if raw_label is not None and not isinstance(raw_label, str):
                raise MalformedRecord(f"{where}: non-string gold_label")
            rid = rec.get("id")
            rid = str(rid) if rid is not None else None
            pairs.append(_build_pair(len(pairs), rid, rec["sentence1"], rec["sentence2"],
                                     raw_label, where))
    return pairs


def _load_csv(path: Path) -> list[RequirementPair]:
    pairs: list[RequirementPair] = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise MalformedRecord(f"{path}:1: missing header row")
        cols = [c.strip() for c in reader.fieldnames]
        for required in ("sentence1", "sentence2"):
            if required not in cols:
                raise MalformedRecord(f"{path}:1: header lacks column {required!r}")
        for rec in reader:
            where = f"{path}:{reader.line_num}"
            text1, text2 = rec.get("sentence1"), rec.get("sentence2")
            if text1 is None or text2 is None:
                raise MalformedRecord(f"{where}: short row")
            rid = rec.get("id") or None
            pairs.append(_build_pair(len(pairs), rid, text1, text2,
                                     rec.get("gold_label") or None, where))
    return pairs


def load_dataset(path: str | Path, format: str | None = None, name: str | None = None) -> Dataset:
    """Load a JSONL or CSV pair file into a Dataset.

    ``format`` is inferred from the suffix when omitted. Labels are
    normalized, texts trimmed, and missing ids synthesized sequentially.
    """
    path = Path(path)
    if not path.exists():
        raise MalformedRecord(f"no such dataset file: {path}")
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "jsonl")
    if fmt == "jsonl":
        pairs = _load_jsonl(path)
    elif fmt == "csv":
        pairs = _load_csv(path)
    else:
        raise ValueError(f"unsupported format {fmt!r}")
    return Dataset(name=name or path.stem, pairs=tuple(pairs))


def write_jsonl(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset back to JSONL (round-trips through load_dataset)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for p in dataset.pairs:
            rec: dict = {"id": p.id, "sentence1": p.text1, "sentence2": p.text2}
            if p.label is not None:
                rec["gold_label"] = str(p.label)
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def subsample(d: Dataset, n: int, seed: int) -> Dataset:
    """Uniform sample of ``n`` pairs without replacement, deterministic per seed."""
    if n < 1:
        raise ValueError(f"sample size must be >= 1, got {n}")
    if n > len(d):
        raise NTooLarge(f"cannot sample {n} of {len(d)} pairs")
    rng = random.Random(seed)
    picked = rng.sample(range(len(d.pairs)), n)
    return Dataset(name=f"{d.name}({n})", pairs=tuple(d.pairs[i] for i in picked))


def concat_datasets(datasets: Sequence[Dataset], name: str | None = None) -> Dataset:
    """Concatenate datasets in order, namespacing ids by source ordinal."""
    if not datasets:
        raise ValueError("need at least one dataset")
    if len(datasets) == 1:
        return datasets[0]
    pairs = [
        RequirementPair(id=f"{i}:{p.id}", text1=p.text1, text2=p.text2, label=p.label)
        for i, d in enumerate(datasets)
        for p in d.pairs
    ]
    return Dataset(name=name or "+".join(d.name for d in datasets), pairs=tuple(pairs))


def make_folds(d: Dataset, n_folds: int, stratified: bool, seed: int) -> FoldPlan:
    """Partition a dataset into folds; optionally stratified by label.

    Assignment is round-robin over a seeded shuffle with a single counter
    running across label groups, so fold sizes differ by at most one both
    overall and within every label.
    """
    if n_folds < 2:
        raise ValueError(f"n_folds must be >= 2, got {n_folds}")
    if len(d) < n_folds:
        raise TooFewSamples(f"{len(d)} pairs cannot fill {n_folds} folds")
    rng = random.Random(seed)
    assignments = [0] * len(d)
    if stratified:
        groups: dict[object, list[int]] = {}
        for i, p in enumerate(d.pairs):
            groups.setdefault(p.label, []).append(i)
        ordered = sorted(groups.items(),
                         key=lambda kv: kv[0].code if kv[0] is not None else len(Label))
        counter = 0
        for label, idxs in ordered:
            if len(idxs) < n_folds:
                warnings.warn(
                    f"label {label} has only {len(idxs)} pairs for {n_folds} folds",
                    SparseClassWarning, stacklevel=2)
            idxs = idxs[:]
            rng.shuffle(idxs)
            for i in idxs:
                assignments[i] = counter % n_folds
                counter += 1
    else:
        order = list(range(len(d)))
        rng.shuffle(order)
        for pos, i in enumerate(order):
            assignments[i] = pos % n_folds
    return FoldPlan(n_folds=n_folds, seed=seed, assignments=tuple(assignments))
