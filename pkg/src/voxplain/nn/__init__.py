"""A small numpy 3D-CNN engine: graphs, forward/backward passes, training."""

from .builders import (
    ARCHITECTURES,
    PROFILES,
    build,
    build_resnet3d,
    build_resnet3d_gap,
    build_resnet3d_shallow_gap,
    build_vgg3d,
)
from .engine import (
    ActivationCache,
    GradCache,
    ParamStore,
    backward,
    backward_score_to_layer,
    check_params,
    cross_entropy,
    cross_entropy_grad,
    forward,
    init_params,
    param_shapes,
)
from .graph import CLASSES, LayerSpec, ModelGraph, class_index
from .optim import adam_step, nesterov_lookahead, nesterov_step
from .train import TrainConfig, balanced_batches, default_config, predict_proba, resnet_config, train, vgg_config

__all__ = [
    "ARCHITECTURES",
    "PROFILES",
    "CLASSES",
    "ActivationCache",
    "GradCache",
    "LayerSpec",
    "ModelGraph",
    "ParamStore",
    "TrainConfig",
    "adam_step",
    "backward",
    "backward_score_to_layer",
    "balanced_batches",
    "build",
    "build_resnet3d",
    "build_resnet3d_gap",
    "build_resnet3d_shallow_gap",
    "build_vgg3d",
    "check_params",
    "class_index",
    "cross_entropy",
    "cross_entropy_grad",
    "default_config",
    "forward",
    "init_params",
    "nesterov_lookahead",
    "nesterov_step",
    "param_shapes",
    "predict_proba",
    "resnet_config",
    "train",
    "vgg_config",
]
