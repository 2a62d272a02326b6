# src/core/__init__.py

from .errors import (
    CheckpointError,
    ConfigError,
    DivergenceError,
    GraphError,
    NonFiniteError,
    ShapeError,
)
from .tensor import (
    Function,
    GradTape,
    Tensor,
    backward,
    default_dtype,
    forward_rng,
    get_default_dtype,
    no_grad,
)
from .module import (
    BatchNorm2d,
    Conv2d,
    ConvBNAct,
    Dropout,
    DropPath,
    LayerNorm,
    Linear,
    Module,
    ModuleList,
    Parameter,
)
from .profiler import OpCounter, count_ops, op_scope
from . import functional

__all__ = [
    'Tensor',
    'Function',
    'GradTape',
    'backward',
    'no_grad',
    'default_dtype',
    'get_default_dtype',
    'forward_rng',
    'Module',
    'ModuleList',
    'Parameter',
    'Linear',
    'Conv2d',
    'ConvBNAct',
    'LayerNorm',
    'BatchNorm2d',
    'Dropout',
    'DropPath',
    'OpCounter',
    'count_ops',
    'op_scope',
    'functional',
    'ShapeError',
    'NonFiniteError',
    'GraphError',
    'ConfigError',
    'CheckpointError',
    'DivergenceError',
]
