from .layers import (conv2d_backward, conv2d_forward, dropout, dropout_backward, fc_backward,
                     fc_forward, maxpool_backward, maxpool_forward, relu, relu_backward, sigmoid)
from .loss import LossReport, cross_entropy_loss, l2_penalty, sigmoid_cross_entropy_grad
from .optim import StaleGradientError, adam_step
from .params import LayerParams, conv_params, fc_params, xavier_init

__all__ = [
    "LayerParams", "LossReport", "StaleGradientError",
    "adam_step", "conv2d_backward", "conv2d_forward", "conv_params", "cross_entropy_loss",
    "dropout", "dropout_backward", "fc_backward", "fc_forward", "fc_params", "l2_penalty",
    "maxpool_backward", "maxpool_forward", "relu", "relu_backward", "sigmoid",
    "sigmoid_cross_entropy_grad", "xavier_init",
]
