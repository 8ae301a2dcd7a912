"""Checkpoint registry: role roots plus copy-on-write fine-tuned children."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Mapping, Sequence


class UnknownCheckpoint(KeyError):
    """No checkpoint registered under the requested id."""


@dataclass(frozen=True)
class CheckpointInfo:
    checkpoint_id: str
    model_role: str
    base_model: str
    created_from: str | None = None


class Registry:
    """All checkpoints the service can address.

    Role roots are registered once and keep their role name as their id;
    every fine-tune creates a fresh child id, so existing checkpoints are
    never replaced and lineage (via created_from) stays acyclic. /embed
    lookups are read-only; fine-tunes are serialized per base checkpoint
    while id allocation sits behind a single mutex.
    """

    def __init__(self) -> None:
        self._entries: dict[str, tuple[CheckpointInfo, object]] = {}
        self._roots: list[str] = []
        self._counters: dict[str, int] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._mutex = threading.Lock()

    def add_root(self, role: str, encoder) -> None:
        if role in self._entries:
            raise ValueError(f"role {role!r} already registered")
        info = CheckpointInfo(checkpoint_id=role, model_role=role,
                              base_model=encoder.base_model)
        self._entries[role] = (info, encoder)
        self._roots.append(role)
        self._counters[role] = 0

    def get(self, model_id: str) -> tuple[CheckpointInfo, object]:
        try:
            return self._entries[model_id]
        except KeyError:
            raise UnknownCheckpoint(model_id) from None

    def advertised(self) -> list[dict]:
        """One entry per role root, in registration order."""
        return [{"role": role,
                 "checkpoint_id": self._entries[role][0].checkpoint_id,
                 "dim": self._entries[role][1].dim}
                for role in self._roots]

    def _lock_for(self, model_id: str) -> threading.Lock:
        with self._mutex:
            return self._locks.setdefault(model_id, threading.Lock())

    def finetune(self, base_id: str, pairs: Sequence[Mapping[str, str]],
                 params: Mapping) -> str:
        """Create and register a child of ``base_id``; returns the new id."""
        with self._lock_for(base_id):
            info, encoder = self.get(base_id)
            child = encoder.finetune(pairs, params)
            with self._mutex:
                self._counters[info.model_role] += 1
                child_id = f"{info.model_role}-ft-{self._counters[info.model_role]:04d}"
                self._entries[child_id] = (
                    CheckpointInfo(checkpoint_id=child_id,
                                   model_role=info.model_role,
                                   base_model=info.base_model,
                                   created_from=info.checkpoint_id),
                    child,
                )
            return child_id
