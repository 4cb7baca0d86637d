from .mlp import (MlpNetwork, MlpCache, mlp_forward, mlp_backward,
                  mlp_input_jacobian, mlp_batch_forward, mlp_batch_backward,
                  relu, relu_grad, glorot_uniform)
from .lstm import LstmLayer, LstmCache, lstm_forward, lstm_batch_forward, lstm_backward, sigmoid
from .optim import AdamState, adam_step, sgd_minibatch_step
from .gradcheck import finite_diff_jacobian, rel_error

__all__ = [
    "MlpNetwork", "MlpCache", "mlp_forward", "mlp_backward",
    "mlp_input_jacobian", "mlp_batch_forward", "mlp_batch_backward",
    "relu", "relu_grad", "glorot_uniform",
    "LstmLayer", "LstmCache", "lstm_forward", "lstm_batch_forward", "lstm_backward", "sigmoid",
    "AdamState", "adam_step", "sgd_minibatch_step",
    "finite_diff_jacobian", "rel_error",
]
