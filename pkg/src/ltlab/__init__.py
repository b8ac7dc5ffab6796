"""Desk-scale laboratory for long-tailed classification.

Synthetic long-tailed benchmarks, the group softmax loss family with
"Others" bookkeeping, classifier weight-norm rebalancing, metric-learning
losses with nearest-center inference, and a deterministic experiment
runner.
"""

from .binning import (
    GroupPartition,
    partition_clustered,
    partition_fixed,
    partition_random,
    select_others,
)
from .classifier import ClassifierHead, forward, new_head, tau_normalize, weight_norms
from .data import (
    ClassCensus,
    Dataset,
    GeneratorConfig,
    census,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .errors import ConfigError, DatasetFormatError, NumericalError
from .losses import (
    ClassWeightTable,
    LossOutput,
    bags_loss,
    class_weights,
    focal_term,
    softmax_ce,
)
from .metric import (
    CenterBank,
    center_loss,
    combined_loss,
    ece_loss,
    lmcl_loss,
    update_centers,
)
from .inference import predict_bags, predict_knn, predict_softmax
from .training import TrainConfig, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "CenterBank",
    "ClassCensus",
    "ClassWeightTable",
    "ClassifierHead",
    "ConfigError",
    "Dataset",
    "DatasetFormatError",
    "GeneratorConfig",
    "GroupPartition",
    "LossOutput",
    "NumericalError",
    "TrainConfig",
    "TrainResult",
    "bags_loss",
    "census",
    "center_loss",
    "class_weights",
    "combined_loss",
    "ece_loss",
    "focal_term",
    "forward",
    "generate_synthetic",
    "lmcl_loss",
    "load_dataset",
    "new_head",
    "partition_clustered",
    "partition_fixed",
    "partition_random",
    "predict_bags",
    "predict_knn",
    "predict_softmax",
    "save_dataset",
    "select_others",
    "softmax_ce",
    "tau_normalize",
    "train",
    "update_centers",
    "weight_norms",
]
