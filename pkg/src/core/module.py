"""
Parameter containers and the basic layers every model is assembled from
"""

import logging
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import functional as F
from .errors import ShapeError
from .tensor import Tensor, get_default_dtype

logger = logging.getLogger(__name__)

INIT_STD = 0.02


def trunc_normal(rng: np.random.Generator, shape: Tuple[int, ...], std: float = INIT_STD) -> np.ndarray:
    """Normal(0, std) samples redrawn until they fall inside +-2 std"""
    values = rng.normal(0.0, std, size=shape)
    outside = np.abs(values) > 2 * std
    while outside.any():
        values[outside] = rng.normal(0.0, std, size=int(outside.sum()))
        outside = np.abs(values) > 2 * std
    return values.astype(get_default_dtype())


def fan_out_normal(rng: np.random.Generator, shape: Tuple[int, ...], groups: int = 1) -> np.ndarray:
    """He-style init for conv kernels [kh, kw, C_in/groups, C_out]"""
    kh, kw, _, cout = shape
    fan_out = kh * kw * cout // groups
    return rng.normal(0.0, np.sqrt(2.0 / fan_out), size=shape).astype(get_default_dtype())


class Parameter(Tensor):
    """A learnable leaf tensor"""

    def __init__(self, data: np.ndarray):
        super().__init__(np.asarray(data, dtype=get_default_dtype()), requires_grad=True)

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape}, dtype={self.dtype})"


class Module:
    """
    Base class for layers and models

    Parameters, sub-modules and buffers assigned as attributes are registered
    in assignment order, which fixes the order of `named_parameters()` and of
    the checkpoint entries.
    """

    def __init__(self):
        object.__setattr__(self, "_parameters", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        elif name in self._buffers:
            self._buffers[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        """Non-learnable state saved with the model (e.g. batch-norm statistics)"""
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def forward(self, *args, **kwargs):
        raise NotImplementedError(f"{type(self).__name__} does not implement forward")

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    # -- enumeration ---------------------------------------------------------
    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._modules.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for mod_name, mod in self.named_modules(prefix):
            for name, param in mod._parameters.items():
                yield (f"{mod_name}.{name}" if mod_name else name), param

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for mod_name, mod in self.named_modules(prefix):
            for name, buf in mod._buffers.items():
                yield (f"{mod_name}.{name}" if mod_name else name), buf

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    # -- state ---------------------------------------------------------------
    def train(self, mode: bool = True) -> "Module":
        for _, mod in self.named_modules():
            object.__setattr__(mod, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters then buffers, each in registration order"""
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, p in self.named_parameters():
            state[name] = p.data
        for name, buf in self.named_buffers():
            state[name] = buf
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = [k for k in own if k not in state]
        unexpected = [k for k in state if k not in own]
        if missing or unexpected:
            raise KeyError(f"State mismatch: missing {missing[:5]}, unexpected {unexpected[:5]}")
        params = dict(self.named_parameters())
        for name, value in state.items():
            value = np.asarray(value)
            if value.shape != own[name].shape:
                raise ShapeError(f"'{name}': stored shape {value.shape} vs model shape {own[name].shape}")
            if name in params:
                params[name].data = value.astype(params[name].dtype).copy()
            else:
                np.copyto(own[name], value)
        logger.debug("Loaded %d tensors into %s", len(state), type(self).__name__)


class ModuleList(Module):
    """Ordered list of sub-modules registered as '0', '1', ..."""

    def __init__(self, modules=()):
        super().__init__()
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._modules)), module)

    def __getitem__(self, idx: int) -> Module:
        return list(self._modules.values())[idx]

    def __len__(self) -> int:
        return len(self._modules)

    def __iter__(self) -> Iterator[Module]:
        return iter(self._modules.values())


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------
class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True, tag: Optional[str] = None):
        super().__init__()
        self.in_features, self.out_features, self.tag = in_features, out_features, tag
        self.weight = Parameter(trunc_normal(rng, (in_features, out_features)))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias, tag=self.tag)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0,
                 groups: int = 1, bias: bool = True, zero_init: bool = False):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise ShapeError(
                f"Conv2d: channels {in_channels}->{out_channels} not divisible by groups {groups}"
            )
        self.stride, self.padding, self.groups = stride, padding, groups
        shape = (kernel_size, kernel_size, in_channels // groups, out_channels)
        init = np.zeros(shape) if zero_init else fan_out_normal(rng, shape, groups)
        self.weight = Parameter(init)
        self.bias = Parameter(np.zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride,
                        padding=self.padding, groups=self.groups)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.weight, self.bias, self.eps)


class BatchNorm2d(Module):
    """Single-process batch norm over [B, H, W, C]"""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.eps, self.momentum = eps, momentum
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels, dtype=get_default_dtype()))
        self.register_buffer("running_var", np.ones(channels, dtype=get_default_dtype()))

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(x, self.weight, self.bias, self.running_mean, self.running_var,
                            training=self.training, momentum=self.momentum, eps=self.eps)


class Dropout(Module):
    def __init__(self, p: float = 0.0):
        super().__init__()
        self.p = p

    def forward(self, x: Tensor) -> Tensor:
        return F.dropout(x, self.p, self.training)


class DropPath(Module):
    """Stochastic depth on a residual branch"""

    def __init__(self, p: float = 0.0):
        super().__init__()
        self.p = p

    def forward(self, x: Tensor) -> Tensor:
        return F.drop_path(x, self.p, self.training)


class ConvBNAct(Module):
    """conv -> batch norm -> optional activation ('relu' | 'gelu' | None)"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, act: Optional[str] = "relu"):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, kernel_size, rng, stride=stride,
                           padding=kernel_size // 2, bias=False)
        self.bn = BatchNorm2d(out_channels)
        self.act = act

    def forward(self, x: Tensor) -> Tensor:
        x = self.bn(self.conv(x))
        if self.act == "relu":
            return F.relu(x)
        if self.act == "gelu":
            return F.gelu(x)
        return x
