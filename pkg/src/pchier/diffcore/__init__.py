"""Dense-tensor numeric core: autodiff, shared MLPs, Adam, checkpoints."""

from .gradcheck import GradCheckReport, finite_difference_check
from .nn import create_mlp_params, max_pool_neighbors, mlp_param_shapes, shared_mlp_forward
from .optim import Adam
from .params import ParamStore, load_checkpoint, save_checkpoint
from .tensor import (
    Tensor,
    add,
    affine,
    backward,
    concat,
    expand_neighbors,
    gather_rows,
    grad_enabled,
    mean,
    mul,
    no_grad,
    reduce_max,
    relu,
    reshape,
    sub,
    tensor_sum,
)

__all__ = [
    "Adam",
    "GradCheckReport",
    "ParamStore",
    "Tensor",
    "add",
    "affine",
    "backward",
    "concat",
    "create_mlp_params",
    "expand_neighbors",
    "finite_difference_check",
    "gather_rows",
    "grad_enabled",
    "load_checkpoint",
    "max_pool_neighbors",
    "mean",
    "mlp_param_shapes",
    "mul",
    "no_grad",
    "reduce_max",
    "relu",
    "reshape",
    "save_checkpoint",
    "shared_mlp_forward",
    "sub",
    "tensor_sum",
]
