"""
Tensor and reverse-mode autodiff

A Tensor wraps a row-major numpy buffer. Ops are `Function` subclasses: the
forward runs on raw arrays, and when any input requires grad the output keeps
a reference to the Function node. Every node gets a sequence number at
creation, so execution order is a valid topological order of the graph and
`GradTape` can replay backward by sorting reachable nodes on it.
"""

import itertools
import logging
import threading
from contextlib import contextmanager
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import GraphError, NonFiniteError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]

SUPPORTED_DTYPES = (np.float32, np.float64)


class _GradMode(threading.local):
    def __init__(self):
        self.enabled = True
        self.dtype = np.float32
        self.rng: Optional[np.random.Generator] = None


_mode = _GradMode()
_sequence = itertools.count()


def is_grad_enabled() -> bool:
    return _mode.enabled


@contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording them for backward"""
    previous = _mode.enabled
    _mode.enabled = False
    try:
        yield
    finally:
        _mode.enabled = previous


def get_default_dtype():
    return _mode.dtype


@contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Switch the dtype used for new tensors (float64 for gradient checks)"""
    dtype = np.dtype(dtype).type
    if dtype not in SUPPORTED_DTYPES:
        raise TypeError(f"Unsupported dtype {dtype}; expected float32 or float64")
    previous = _mode.dtype
    _mode.dtype = dtype
    try:
        yield
    finally:
        _mode.dtype = previous


@contextmanager
def forward_rng(rng: np.random.Generator) -> Iterator[np.random.Generator]:
    """Install the generator that stochastic layers draw their masks from"""
    previous = _mode.rng
    _mode.rng = rng
    try:
        yield rng
    finally:
        _mode.rng = previous


def current_rng() -> np.random.Generator:
    if _mode.rng is None:
        raise RuntimeError("Stochastic layer used in training mode without forward_rng()")
    return _mode.rng


def _check_finite(arr: np.ndarray, op_name: str) -> None:
    if not np.all(np.isfinite(arr)):
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise NonFiniteError(f"{op_name} produced {bad} non-finite value(s) in output of shape {arr.shape}")


class Function:
    """
    Base class for differentiable operations

    Subclasses implement `forward` on numpy arrays and `backward`, which maps
    the output gradient to one gradient per input (None where not needed).
    Values needed by backward are kept on `self` and dropped by `release`.
    """

    def __init__(self, *inputs: "Tensor"):
        self.inputs = inputs
        self.seq = next(_sequence)
        self.released = False

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__} has no backward")

    def release(self) -> None:
        for key in list(vars(self)):
            if key not in ("inputs", "seq", "released"):
                delattr(self, key)
        self.released = True

    @classmethod
    def apply(cls, *inputs: "Tensor", **kwargs: Any) -> "Tensor":
        fn = cls(*inputs)
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        _check_finite(out, cls.__name__)
        requires_grad = _mode.enabled and any(t.requires_grad for t in inputs)
        result = Tensor(out, requires_grad=requires_grad)
        if requires_grad:
            result._ctx = fn
        else:
            fn.release()
        return result


class Tensor:
    """
    Dense n-dimensional array with an optional autodiff node

    numpy float buffers keep their dtype when it is float32/float64; Python
    scalars, lists and other dtypes are converted to the current default dtype.
    """

    __array_priority__ = 1000

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        from_numpy = isinstance(data, np.ndarray)
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not from_numpy or arr.dtype.type not in SUPPORTED_DTYPES:
            arr = arr.astype(_mode.dtype)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._ctx: Optional[Function] = None

    # -- properties ---------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar (implemented in functional) --------------------------
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.add(F.neg(self), other)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import functional as F
        return F.neg(self)

    def __matmul__(self, other):
        from . import functional as F
        return F.matmul(self, other)

    def __getitem__(self, index):
        from . import functional as F
        return F.getitem(self, index)

    def reshape(self, *shape):
        from . import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def permute(self, *axes):
        from . import functional as F
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return F.permute(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        from . import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> None:
        backward(self)


class GradTape:
    """
    Execution-ordered record of the ops reachable from a root tensor

    Only nodes whose inputs require grad are recorded, so a graph built from
    leaves that need no gradient yields an empty tape.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.ops: List[Function] = self._collect(root)

    @staticmethod
    def _collect(root: Tensor) -> List[Function]:
        seen: Dict[int, Function] = {}
        stack = [root._ctx] if root._ctx is not None else []
        while stack:
            fn = stack.pop()
            if id(fn) in seen:
                continue
            if fn.released:
                raise GraphError(
                    "Graph has already been released by a previous backward(); run the forward pass again"
                )
            seen[id(fn)] = fn
            for inp in fn.inputs:
                if inp._ctx is not None and id(inp._ctx) not in seen:
                    stack.append(inp._ctx)
        return sorted(seen.values(), key=lambda f: f.seq)

    def __len__(self) -> int:
        return len(self.ops)

    def backward(self, seed: np.ndarray) -> List[Function]:
        """Propagate `seed` from the root; returns ops in the order visited"""
        grads: Dict[int, np.ndarray] = {id(self.root): seed}
        visited: List[Function] = []
        # node -> the tensor it produced
        holders: Dict[int, Tensor] = {}
        for fn in self.ops:
            for inp in fn.inputs:
                if inp._ctx is not None:
                    holders[id(inp._ctx)] = inp
        if self.root._ctx is not None:
            holders[id(self.root._ctx)] = self.root

        for fn in reversed(self.ops):
            out = holders[id(fn)]
            g = grads.pop(id(out), None)
            visited.append(fn)
            if g is None:
                fn.release()
                continue
            in_grads = fn.backward(g)
            for inp, ig in zip(fn.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                if ig.shape != inp.shape:
                    raise GraphError(
                        f"{type(fn).__name__} backward returned gradient of shape {ig.shape} "
                        f"for input of shape {inp.shape}"
                    )
                if inp._ctx is None:
                    ig = ig.astype(inp.data.dtype, copy=False)
                    inp.grad = ig.copy() if inp.grad is None else inp.grad + ig
                else:
                    key = id(inp)
                    grads[key] = ig if key not in grads else grads[key] + ig
            fn.release()
        return visited


def backward(loss: Tensor) -> None:
    """
    Populate `.grad` on every requires_grad leaf reachable from `loss`

    The graph is released afterwards; calling backward again on the same loss
    raises GraphError. A loss computed only from leaves that need no gradient
    produces no gradients.
    """
    if loss.data.ndim != 0:
        raise GraphError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        logger.debug("backward() on a tensor that does not require grad; nothing to do")
        return
    if loss._ctx is None:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        return
    tape = GradTape(loss)
    tape.backward(np.ones_like(loss.data))


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)
