from .tensor import (
    ConfigurationError,
    DimensionError,
    NumericError,
    Tensor,
    as_tensor,
    checked,
    concat,
    flip,
    get_dtype,
    make_node,
    matmul,
    no_grad,
    precision,
    set_precision,
    split,
    stack,
)
from .ops import (
    activation,
    depthwise_conv1d,
    dropout,
    gelu,
    layer_norm,
    linear,
    mean_pool,
    multihead_attention,
    selective_scan,
    selective_ssm_scan,
    sigmoid,
    silu,
    softmax,
    softplus,
)
from .rng import RngStream
from .gradcheck import GradCheckReport, grad_check
