"""Training and aggregation for a small softmax classifier."""
from .data import Dataset, Scheme, apportion, make_synthetic_dataset, partition
from .metrics import (
    MetricsReport,
    centralized_baseline,
    confusion_matrix,
    evaluate,
    metrics_from_predictions,
)
from .model import (
    EmptyAggregation,
    Method,
    TrainConfig,
    aggregate_mean,
    cross_entropy,
    local_train,
    logits,
    loss_and_grad,
    predict,
    prox_gradient,
    prox_penalty,
)
from .weights import (
    DecodeError,
    ShapeError,
    WeightVector,
    decode_weights,
    encode_weights,
    header_len,
    init_weights,
    layer_sizes,
    n_params,
)

__all__ = [
    "Dataset", "Scheme", "apportion", "make_synthetic_dataset", "partition",
    "MetricsReport", "centralized_baseline", "confusion_matrix", "evaluate",
    "metrics_from_predictions", "EmptyAggregation", "Method", "TrainConfig",
    "aggregate_mean", "cross_entropy", "local_train", "logits", "loss_and_grad",
    "predict", "prox_gradient", "prox_penalty", "DecodeError", "ShapeError",
    "WeightVector", "decode_weights", "encode_weights", "header_len",
    "init_weights", "layer_sizes", "n_params",
]
