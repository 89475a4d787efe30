"""Conditional coupling flows with condition-normalized (SNAC) layers."""

from .condnet import FlowArch, init_params
from .diffcore import ParamSet, Tensor, finite_diff_check, gradient
from .estimator import ConditionalFlow
from .flowcore import FlowStack, flow_forward, flow_inverse, sdn, sn
from .synthdata import DatasetSpec, make_dataset, true_loglik
from .trainer import Checkpoint, TrainConfig, train

__all__ = [
    "Checkpoint", "ConditionalFlow", "DatasetSpec", "FlowArch", "FlowStack", "ParamSet",
    "Tensor", "TrainConfig", "finite_diff_check", "flow_forward", "flow_inverse",
    "gradient", "init_params", "make_dataset", "sdn", "sn", "train", "true_loglik",
]
__version__ = "0.1.0"
