from . import autograd
from .autograd import Tensor, backward, no_grad
from .cells import LSTMCell, chain_propagate, child_sum_propagate, lstm_step, tree_lstm_step
from .params import ModelParameters, read_checkpoint, save_checkpoint, sgd_step

__all__ = [
    "autograd", "Tensor", "backward", "no_grad",
    "LSTMCell", "chain_propagate", "child_sum_propagate", "lstm_step", "tree_lstm_step",
    "ModelParameters", "read_checkpoint", "save_checkpoint", "sgd_step",
]
