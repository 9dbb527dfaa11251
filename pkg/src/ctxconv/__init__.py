"""Transformation-invariant network with visual context-aware convolution filters."""
from .autograd import Var
from .filters import GeneratorParams, dynamic_conv, generate_filters
from .network import ModelParams, evaluate, init_params, model_forward, predict, train_step
from .optim import AdamState, adam_step
from .tensor import Rng, Tensor
from .transforms import TransformSet, apply_transform

__all__ = [
    "AdamState", "GeneratorParams", "ModelParams", "Rng", "Tensor", "TransformSet", "Var",
    "adam_step", "apply_transform", "dynamic_conv", "evaluate", "generate_filters", "init_params",
    "model_forward", "predict", "train_step",
]
__version__ = "0.1.0"
