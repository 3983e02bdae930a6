from .optim import adam_step, lr_at
from .parameters import (
    ParameterStore,
    init_parameters,
    load_checkpoint,
    max_relative_error,
    numerical_gradient,
    save_checkpoint,
)
from .tensor import Tape, Tensor, backward, constant
