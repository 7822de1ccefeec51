"""Cascaded semi-parametric face alignment with greedy neural forests.

A cascade of regression stages refines landmark positions from a mean-
shape initialization: parametric stages update a compact shape-model
parameter vector, explicit stages move landmarks directly. Each stage is
a jointly trained tanh projection layer plus a differentiable decision
forest, frozen to hard (greedy) routing for fast inference.
"""

from . import cascade, crop, dimred, features, harness, model_io, neural_forest, shape_model
from .cascade import (
    CascadeModel,
    CascadeStage,
    TrainConfig,
    TrainExample,
    align,
    align_trace,
    train_cascade,
)
from .model_io import load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "CascadeModel",
    "CascadeStage",
    "TrainConfig",
    "TrainExample",
    "align",
    "align_trace",
    "cascade",
    "crop",
    "dimred",
    "features",
    "harness",
    "load_model",
    "model_io",
    "neural_forest",
    "save_model",
    "shape_model",
    "train_cascade",
]
