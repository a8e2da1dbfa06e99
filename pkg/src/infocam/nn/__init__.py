from .functional import (cross_entropy_loss, log_sum_exp, pc_cross_entropy_loss,
                         pc_softmax, sigmoid_heads_loss, softmax)
from .layers import Conv2d, Dense, Flatten, GlobalAvgPool, MaxPool2d, ReLU
from .network import (Network, backward, build_network, forward,
                      load_checkpoint, parse_arch, save_checkpoint)
from .optim import SGD, Adam, make_optimizer

__all__ = [
    "Adam", "Conv2d", "Dense", "Flatten", "GlobalAvgPool", "MaxPool2d",
    "Network", "ReLU", "SGD", "backward", "build_network",
    "cross_entropy_loss", "forward", "load_checkpoint", "log_sum_exp",
    "make_optimizer", "parse_arch", "pc_cross_entropy_loss", "pc_softmax",
    "save_checkpoint", "sigmoid_heads_loss", "softmax",
]
