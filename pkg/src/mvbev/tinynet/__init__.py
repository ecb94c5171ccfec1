from .checkpoint import load_params, save_params
from .losses import gaussian_soft_target, mse_loss, perspective_loss, perspective_targets
from .model import (
    FEATURE_SCALE,
    ForwardCache,
    NetConfig,
    ParameterSet,
    backward,
    copy_params,
    feature_shape,
    forward,
    init_params,
)
from .optim import clip_grad_norm, one_cycle_lr, sgd_step

__all__ = [
    "FEATURE_SCALE", "ForwardCache", "NetConfig", "ParameterSet", "backward", "clip_grad_norm", "copy_params",
    "feature_shape", "forward", "gaussian_soft_target", "init_params", "load_params", "mse_loss",
    "one_cycle_lr", "perspective_loss", "perspective_targets", "save_params", "sgd_step",
]
