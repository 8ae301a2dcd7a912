"""Requirement-pair conflict/duplicate detection pipeline.

Dual sentence encoders, six-element feature fusion, a two-hidden-layer
softmax classifier trained with a hybrid focal/confidence/domain loss,
and an n-fold cross-domain transfer protocol.
"""

from .corpus import Dataset, FoldPlan, Label, RequirementPair, load_dataset, make_folds
from .embeddings import (
    EmbeddingVector,
    HashProvider,
    PairEmbeddings,
    RemoteProvider,
    VectorStore,
    hash_encode,
    resolve_embeddings,
)
from .fusion import FusedFeature, fuse_six, fuse_three
from .loss import LossConfig, afc_loss, class_weights, update_gamma
from .metrics import ConfusionMatrix, MetricsReport, confusion, report
from .mlp import MlpParams, init_params, load_checkpoint, save_checkpoint
from .trainer import EncoderBundle, TrainConfig, crossval, evaluate, train
from .transfer import TransferPlan, run_transfer, target_only_baseline

__version__ = "0.1.0"

__all__ = [
    "Dataset", "FoldPlan", "Label", "RequirementPair", "load_dataset",
    "make_folds", "EmbeddingVector", "HashProvider", "PairEmbeddings",
    "RemoteProvider", "VectorStore", "hash_encode", "resolve_embeddings",
    "FusedFeature", "fuse_six", "fuse_three", "LossConfig", "afc_loss",
    "class_weights", "update_gamma", "ConfusionMatrix", "MetricsReport",
    "confusion", "report", "MlpParams", "init_params", "load_checkpoint",
    "save_checkpoint", "EncoderBundle", "TrainConfig", "crossval",
    "evaluate", "train", "TransferPlan", "run_transfer",
    "target_only_baseline", "__version__",
]
