from .gradcheck import GradCheckReport, grad_check
from .optim import AdamState, adam_step
from .serialize import dumps_tensors, load_tensors, loads_tensors, save_tensors
from .tensor import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    bce_with_logits,
    concat,
    div,
    dropout_mask,
    embedding_lookup,
    exp,
    gelu,
    grad_enabled,
    index,
    layer_norm,
    linear,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    no_grad,
    parameter,
    relu,
    reshape,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    sub,
    sum_,
    tanh,
    transpose,
)
