"""Query-based chart/camera fusion model and its training stack."""

from .autodiff import (
    Tensor,
    bilinear_sample,
    check_gradient,
    concat,
    embedding_lookup,
    masked_softmax,
    maximum,
    minimum,
)
from .loss import fusion_loss, giou_pairs
from .model import (
    CheckpointError,
    ConfigMismatch,
    FusionModel,
    FusionPrediction,
    GroundTruth,
    ModelConfig,
    QueryBatch,
    bucket_indices,
    load_checkpoint,
    make_ground_truth,
    make_query_batch,
    model_from_checkpoint,
    read_checkpoint_header,
    save_checkpoint,
)
from .train import (
    AdamW,
    TrainConfig,
    TrainSample,
    TrainingDiverged,
    collate,
    evaluate_model,
    infer,
    make_optimizer,
    train,
)

__all__ = [
    "Tensor",
    "bilinear_sample",
    "check_gradient",
    "concat",
    "embedding_lookup",
    "masked_softmax",
    "maximum",
    "minimum",
    "fusion_loss",
    "giou_pairs",
    "CheckpointError",
    "ConfigMismatch",
    "FusionModel",
    "FusionPrediction",
    "GroundTruth",
    "ModelConfig",
    "QueryBatch",
    "bucket_indices",
    "load_checkpoint",
    "make_ground_truth",
    "make_query_batch",
    "model_from_checkpoint",
    "read_checkpoint_header",
    "save_checkpoint",
    "AdamW",
    "TrainConfig",
    "TrainSample",
    "TrainingDiverged",
    "collate",
    "evaluate_model",
    "infer",
    "make_optimizer",
    "train",
]
