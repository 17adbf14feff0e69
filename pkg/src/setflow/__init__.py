"""Permutation-equivariant normalizing flow over sets of entities with a shared global latent."""

from .checkpoint import Checkpoint, CheckpointError
from .config import RunConfig, config_diff, read_config_file, write_config_file
from .flows import AffineCoupling, BatchNormBijection, RealNvpBlock, numerical_jacobian_logdet
from .model import (
    DeepSet,
    EntitySet,
    EvalSummary,
    LogLikBreakdown,
    ModelConfig,
    NumericError,
    SetCouplingStack,
    SetFlowModel,
    interpolate,
    model_loglik,
    model_sample,
    reported_per_entity_ll,
    sample_sets,
)
from .training import LogRow, TrainConfig, TrainState, train, train_step

__all__ = [
    "AffineCoupling", "BatchNormBijection", "Checkpoint", "CheckpointError", "DeepSet", "EntitySet",
    "EvalSummary", "LogLikBreakdown", "LogRow", "ModelConfig", "NumericError", "RealNvpBlock",
    "RunConfig", "SetCouplingStack", "SetFlowModel", "TrainConfig", "TrainState", "config_diff",
    "interpolate", "model_loglik", "model_sample", "numerical_jacobian_logdet", "read_config_file",
    "reported_per_entity_ll", "sample_sets", "train", "train_step", "write_config_file",
]
