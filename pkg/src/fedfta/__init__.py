"""Federated transfer learning with golden-section fine-tuned aggregation."""

__version__ = "0.1.0"

from .aggregate import (
    AggregationResult,
    GssConfig,
    LocalUpdate,
    fedavg_aggregate,
    fta_aggregate,
    gss_minimize,
)
from .core import ParamVector, SeededRng, Stream, pv_allclose, pv_axpy, pv_weighted_mean
from .data import Dataset, PartitionPlan, generate_blobs, load_csv, save_csv, stratified_split
from .federation import ClientNode, FederationState, RoundConfig, run_round, run_training
from .metrics import ConfusionMatrix, MetricReport, binary_metrics, confusion_from_predictions, multiclass_metrics
from .model import ClassifierHead, FrozenBase, LabeledBatch, base_features, head_forward, local_update, loss_and_grad

__all__ = [
    "AggregationResult",
    "ClassifierHead",
    "ClientNode",
    "ConfusionMatrix",
    "Dataset",
    "FederationState",
    "FrozenBase",
    "GssConfig",
    "LabeledBatch",
    "LocalUpdate",
    "MetricReport",
    "ParamVector",
    "PartitionPlan",
    "RoundConfig",
    "SeededRng",
    "Stream",
    "base_features",
    "binary_metrics",
    "confusion_from_predictions",
    "fedavg_aggregate",
    "fta_aggregate",
    "generate_blobs",
    "gss_minimize",
    "head_forward",
    "load_csv",
    "local_update",
    "loss_and_grad",
    "multiclass_metrics",
    "pv_allclose",
    "pv_axpy",
    "pv_weighted_mean",
    "run_round",
    "run_training",
    "save_csv",
    "stratified_split",
]
