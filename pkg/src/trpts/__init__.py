"""Task-relevant parameter and token selection on a desk-scale vision transformer.

The library couples a per-parameter importance signal (the squared-gradient
diagonal of the Fisher information) with layer-wise trainable-connection
budgets, and a token refinement step that keeps the tokens the [CLS] query
attends to while merging the rest. Everything runs on a small numpy-backed
transformer with its own reverse-mode autodiff, so every quantity in the
pipeline can be checked against an independent oracle.
"""

from .errors import (
    ConfigurationError,
    InputError,
    NumericError,
    ShapeError,
    UsageError,
)
from .autodiff import (
    Tensor,
    backward,
    no_grad,
    parameter,
    set_default_dtype,
    tensor,
    using_dtype,
    zero_grads,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "InputError",
    "NumericError",
    "ShapeError",
    "UsageError",
    "Tensor",
    "backward",
    "no_grad",
    "parameter",
    "set_default_dtype",
    "tensor",
    "using_dtype",
    "zero_grads",
    "__version__",
]
