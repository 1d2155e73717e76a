"""Small numpy neural toolkit; every layer carries an explicit backward pass."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .crf import CRF, INVALID, logsumexp
from .gradcheck import GradCheckReport, NonDeterministicForward, finite_diff_check, relative_error
from .layers import BiLSTM, LSTM, Linear, length_mask, reverse_padded, sigmoid, softplus
from .optim import Nadam, NadamConfig, NonFiniteGradient, clip_gradients
from .params import Param, ParamSet
from .stochastic import GaussianNoise, dropout_apply, dropout_backward, dropout_mask

__all__ = [
    "BiLSTM", "CRF", "CheckpointError", "GaussianNoise", "GradCheckReport", "INVALID", "LSTM",
    "Linear", "Nadam", "NadamConfig", "NonDeterministicForward", "NonFiniteGradient", "Param",
    "ParamSet", "clip_gradients", "dropout_apply", "dropout_backward", "dropout_mask",
    "finite_diff_check", "length_mask", "load_checkpoint", "logsumexp", "relative_error",
    "reverse_padded", "save_checkpoint", "sigmoid", "softplus",
]
