from .tensor import (
    Tensor,
    absolute,
    add,
    add_bias,
    add_const,
    concat,
    dot_const,
    finite_checks,
    grad_enabled,
    linear,
    make_op,
    matmul,
    mean_all,
    mean_per_sample,
    mul,
    neg,
    no_grad,
    param,
    reshape,
    scale,
    silu,
    square,
    sub,
    sum_all,
    zeros,
)
from .functional import (
    add_channel_vec,
    channel_affine,
    conv2d,
    embed_timestep,
    global_mean_pool,
    group_norm,
    upsample_nearest2x,
)

__all__ = [
    "Tensor",
    "absolute",
    "add",
    "add_bias",
    "add_channel_vec",
    "add_const",
    "channel_affine",
    "concat",
    "conv2d",
    "dot_const",
    "embed_timestep",
    "finite_checks",
    "global_mean_pool",
    "grad_enabled",
    "group_norm",
    "linear",
    "make_op",
    "matmul",
    "mean_all",
    "mean_per_sample",
    "mul",
    "neg",
    "no_grad",
    "param",
    "reshape",
    "scale",
    "silu",
    "square",
    "sub",
    "sum_all",
    "upsample_nearest2x",
    "zeros",
]
