from .checkpoint import CheckpointError, load_container, save_container
from .gradcheck import finite_diff_check
from .nn import MLP, Attention, cross_attention, grouped_cross_attention, mlp_forward, mlp_sizes
from .optim import Adam, adam_step
from .params import ParameterStore
from .tensor import Tensor, TapeError, backward

__all__ = [
    "Adam", "Attention", "CheckpointError", "MLP", "ParameterStore", "TapeError", "Tensor",
    "adam_step", "backward", "cross_attention", "finite_diff_check", "grouped_cross_attention",
    "load_container", "mlp_forward", "mlp_sizes", "save_container",
]
