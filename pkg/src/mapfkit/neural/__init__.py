"""Dual-head transformer: shared encoder, action head, observation head."""

from .config import (
    BadMagic,
    ModelConfig,
    ModelParams,
    ShapeMismatch,
    VersionMismatch,
    init_params,
    load_params,
    save_params,
)
from .sre import SreSimilarityReport, polar, polar_batch, sre_encode, sre_similarity_report
from .network import NonFiniteActivation, forward, forward_batch
from .losses import (
    ZeroWeightSum,
    fast_loss,
    fast_loss_from_logits,
    position_weights,
    slow_loss,
    slow_loss_from_logits,
    token_loss,
    total_loss,
    loss_and_grad,
)
from .train import Batches, DatasetEmpty, DivergenceDetected, train
from .gradcheck import grad_check

__all__ = [
    "BadMagic",
    "Batches",
    "DatasetEmpty",
    "DivergenceDetected",
    "ModelConfig",
    "ModelParams",
    "NonFiniteActivation",
    "ShapeMismatch",
    "SreSimilarityReport",
    "VersionMismatch",
    "ZeroWeightSum",
    "fast_loss",
    "fast_loss_from_logits",
    "forward",
    "forward_batch",
    "grad_check",
    "init_params",
    "load_params",
    "loss_and_grad",
    "polar",
    "polar_batch",
    "position_weights",
    "save_params",
    "slow_loss",
    "slow_loss_from_logits",
    "sre_encode",
    "sre_similarity_report",
    "token_loss",
    "total_loss",
    "train",
]
