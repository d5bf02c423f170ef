"""Dense float64 tensors with tape-based reverse-mode differentiation

Operations take an optional ``tape``. When a tape is given and any input
requires a gradient, the operation appends a record holding its inputs and a
vector-Jacobian closure over the activations it saved. ``backward`` walks the
records in reverse and accumulates into every reachable ``Parameter.grad``.

Spatial operations accept C x H x W tensors or N x C x H x W mini-batches.
Convolutions are cross-correlations.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, softmax

from .errors import InvalidInputError, InvalidShapeError, NumericalFailureError

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]
Grads = Tuple[Optional[np.ndarray], ...]


class Tensor:
    """A dense row-major float64 array that may take part in a tape"""

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise InvalidShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A trainable value with a gradient slot of the same shape"""

    def __init__(self, data: ArrayLike, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64, copy=True), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape})"


@dataclass
class OpRecord:
    """One recorded operation: kind, inputs, output and its backward rule"""

    kind: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Grads]


class Tape:
    """Ordered record of operations; inputs always precede their consumers"""

    def __init__(self):
        self.records: List[OpRecord] = []

    def record(self, kind: str, inputs: Tuple[Tensor, ...], output: Tensor, vjp: Callable[[np.ndarray], Grads]):
        self.records.append(OpRecord(kind, inputs, output, vjp))

    def kinds(self) -> List[str]:
        return [r.kind for r in self.records]

    def __len__(self) -> int:
        return len(self.records)


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    """Wrap constants; tensors pass through unchanged"""
    return value if isinstance(value, Tensor) else Tensor(value)


def _emit(tape: Optional[Tape], kind: str, inputs: Tuple[Tensor, ...], data: np.ndarray,
          vjp: Callable[[np.ndarray], Grads]) -> Tensor:
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    if tape is not None and out.requires_grad:
        tape.record(kind, inputs, out, vjp)
    return out


def check_finite(tensor: Tensor, what: str = "tensor"):
    """Raise NumericalFailureError if any entry is NaN or infinite"""
    if not np.all(np.isfinite(tensor.data)):
        raise NumericalFailureError(f"Non-finite values in {what}")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _to_batch(x: np.ndarray, what: str) -> Tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise InvalidShapeError(f"{what} expects C x H x W or N x C x H x W input, got shape {x.shape}")


# --- elementwise and reductions -------------------------------------------

def add(a, b, tape: Optional[Tape] = None) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit(tape, "add", (a, b), a.data + b.data, vjp)


def sub(a, b, tape: Optional[Tape] = None) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit(tape, "sub", (a, b), a.data - b.data, vjp)


def mul(a, b, tape: Optional[Tape] = None) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit(tape, "mul", (a, b), a.data * b.data, vjp)


def div(a, b, tape: Optional[Tape] = None) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def vjp(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _emit(tape, "div", (a, b), out, vjp)


def square(a, tape: Optional[Tape] = None) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return (2.0 * a.data * g,)

    return _emit(tape, "square", (a,), a.data * a.data, vjp)


def log(a, tape: Optional[Tape] = None) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return (g / a.data,)

    return _emit(tape, "log", (a,), np.log(a.data), vjp)


def clamp_min(a, floor: float, tape: Optional[Tape] = None) -> Tensor:
    """max(a, floor); the gradient is zero where the floor is active"""
    a = as_tensor(a)
    passed = a.data > floor

    def vjp(g):
        return (g * passed,)

    return _emit(tape, "clamp_min", (a,), np.where(passed, a.data, floor), vjp)


def reduce_sum(a, axis: Optional[Union[int, Tuple[int, ...]]] = None, tape: Optional[Tape] = None) -> Tensor:
    a = as_tensor(a)
    axes = None if axis is None else tuple(int(ax) % a.ndim for ax in np.atleast_1d(axis))

    def vjp(g):
        if axes is not None:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit(tape, "sum", (a,), np.asarray(a.data.sum(axis=axes)), vjp)


def mean(a, tape: Optional[Tape] = None) -> Tensor:
    a = as_tensor(a)
    return div(reduce_sum(a, tape=tape), float(a.size), tape=tape)


def relu(a, tape: Optional[Tape] = None) -> Tensor:
    a = as_tensor(a)
    active = a.data > 0

    def vjp(g):
        return (g * active,)

    return _emit(tape, "relu", (a,), np.where(active, a.data, 0.0), vjp)


def sigmoid(a, tape: Optional[Tape] = None) -> Tensor:
    a = as_tensor(a)
    s = expit(a.data)

    def vjp(g):
        return (g * s * (1.0 - s),)

    return _emit(tape, "sigmoid", (a,), s, vjp)


def softmax_channel(a, tape: Optional[Tape] = None) -> Tensor:
    """Softmax across the class axis (third from last) at every pixel"""
    a = as_tensor(a)
    if a.ndim not in (3, 4):
        raise InvalidShapeError(f"softmax_channel expects L x H x W or N x L x H x W, got {a.shape}")
    s = softmax(a.data, axis=-3)

    def vjp(g):
        return (s * (g - np.sum(g * s, axis=-3, keepdims=True)),)

    return _emit(tape, "softmax_channel", (a,), s, vjp)


def concat_channels(tensors: Sequence[Tensor], tape: Optional[Tape] = None) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    spatial = {t.shape[:-3] + t.shape[-2:] for t in tensors}
    if len(spatial) != 1:
        raise InvalidShapeError(f"Cannot concatenate shapes {[t.shape for t in tensors]}")
    bounds = np.cumsum([t.shape[-3] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=-3))

    return _emit(tape, "concat", tensors, np.concatenate([t.data for t in tensors], axis=-3), vjp)


# --- spatial operations ---------------------------------------------------

def conv2d(x, weights, bias, tape: Optional[Tape] = None) -> Tensor:
    """3x3 cross-correlation, zero padding 1, stride 1, plus per-channel bias"""
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    xb, squeeze = _to_batch(x.data, "conv2d")
    w = weights.data
    if w.ndim != 4 or w.shape[2:] != (3, 3) or w.shape[1] != xb.shape[1]:
        raise InvalidShapeError(f"conv2d weights {w.shape} do not fit input {x.shape}")
    if bias.shape != (w.shape[0],):
        raise InvalidShapeError(f"conv2d bias {bias.shape} does not match {w.shape[0]} output channels")

    windows = sliding_window_view(np.pad(xb, ((0, 0), (0, 0), (1, 1), (1, 1))), (3, 3), axis=(2, 3))
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = out + bias.data[:, None, None]

    def vjp(g):
        gb = g[None] if squeeze else g
        g_windows = sliding_window_view(np.pad(gb, ((0, 0), (0, 0), (1, 1), (1, 1))), (3, 3), axis=(2, 3))
        dx = np.tensordot(g_windows, w[:, :, ::-1, ::-1], axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
        dw = np.tensordot(gb, windows, axes=([0, 2, 3], [0, 2, 3]))
        db = gb.sum(axis=(0, 2, 3))
        return (dx[0] if squeeze else dx), dw, db

    return _emit(tape, "conv2d", (x, weights, bias), out[0] if squeeze else out, vjp)


def conv1x1(x, weights, bias, tape: Optional[Tape] = None) -> Tensor:
    """Pointwise convolution with C_out x C_in x 1 x 1 weights"""
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    xb, squeeze = _to_batch(x.data, "conv1x1")
    w = weights.data
    if w.ndim != 4 or w.shape[2:] != (1, 1) or w.shape[1] != xb.shape[1]:
        raise InvalidShapeError(f"conv1x1 weights {w.shape} do not fit input {x.shape}")
    if bias.shape != (w.shape[0],):
        raise InvalidShapeError(f"conv1x1 bias {bias.shape} does not match {w.shape[0]} output channels")
    w2 = w[:, :, 0, 0]

    out = np.tensordot(xb, w2, axes=([1], [1])).transpose(0, 3, 1, 2) + bias.data[:, None, None]

    def vjp(g):
        gb = g[None] if squeeze else g
        dx = np.tensordot(gb, w2, axes=([1], [0])).transpose(0, 3, 1, 2)
        dw = np.tensordot(gb, xb, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
        db = gb.sum(axis=(0, 2, 3))
        return (dx[0] if squeeze else dx), dw, db

    return _emit(tape, "conv1x1", (x, weights, bias), out[0] if squeeze else out, vjp)


def max_pool2(x, tape: Optional[Tape] = None) -> Tensor:
    """2x2 non-overlapping max; ties go to the first position in row-major order"""
    x = as_tensor(x)
    xb, squeeze = _to_batch(x.data, "max_pool2")
    n, c, h, w = xb.shape
    if h % 2 or w % 2:
        raise InvalidShapeError(f"max_pool2 needs even extents, got {h} x {w}")

    blocks = xb.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    argmax = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, argmax, axis=-1)[..., 0]

    def vjp(g):
        gb = g[None] if squeeze else g
        routed = np.zeros_like(blocks)
        np.put_along_axis(routed, argmax, gb[..., None], axis=-1)
        dx = routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (dx[0] if squeeze else dx,)

    return _emit(tape, "max_pool2", (x,), out[0] if squeeze else out, vjp)


def up_conv2(x, weights, bias=None, tape: Optional[Tape] = None) -> Tensor:
    """Transposed convolution, kernel 2 stride 2: each pixel paints a 2x2 patch"""
    x = as_tensor(x)
    weights = as_tensor(weights)
    bias = as_tensor(np.zeros(weights.shape[1]) if bias is None else bias)
    xb, squeeze = _to_batch(x.data, "up_conv2")
    w = weights.data
    if w.ndim != 4 or w.shape[2:] != (2, 2) or w.shape[0] != xb.shape[1]:
        raise InvalidShapeError(f"up_conv2 weights {w.shape} do not fit input {x.shape}")
    if bias.shape != (w.shape[1],):
        raise InvalidShapeError(f"up_conv2 bias {bias.shape} does not match {w.shape[1]} output channels")
    n, _, h, wd = xb.shape
    c_out = w.shape[1]

    patches = np.tensordot(xb, w, axes=([1], [0]))  # n, h, w, o, i, j
    out = patches.transpose(0, 3, 1, 4, 2, 5).reshape(n, c_out, 2 * h, 2 * wd) + bias.data[:, None, None]

    def vjp(g):
        gb = (g[None] if squeeze else g).reshape(n, c_out, h, 2, wd, 2)  # n, o, h, i, w, j
        dx = np.tensordot(gb, w, axes=([1, 3, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        dw = np.tensordot(xb, gb, axes=([0, 2, 3], [0, 2, 4]))
        db = gb.sum(axis=(0, 2, 3, 4, 5))
        return (dx[0] if squeeze else dx), dw, db

    return _emit(tape, "up_conv2", (x, weights, bias), out[0] if squeeze else out, vjp)


# --- differentiation ------------------------------------------------------

def backward(tape: Tape, loss: Tensor) -> Dict[str, np.ndarray]:
    """
    Reverse-mode pass from a scalar loss over a tape

    Gradients are added to ``Parameter.grad`` (so repeated passes
    accumulate) and also returned by parameter name.

    Args:
        tape: Tape the loss was recorded on
        loss: Single-element tensor

    Returns:
        Dict mapping parameter names to this pass's gradients
    """
    if loss.size != 1:
        raise InvalidInputError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise InvalidInputError("Loss does not depend on any parameter")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    params: Dict[int, Parameter] = {}
    if isinstance(loss, Parameter):
        params[id(loss)] = loss

    for record in reversed(tape.records):
        g = grads.pop(id(record.output), None)
        if g is None:
            continue
        for tensor, grad in zip(record.inputs, record.vjp(g)):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            grads[key] = grads[key] + grad if key in grads else grad
            if isinstance(tensor, Parameter):
                params[key] = tensor

    result = {}
    for key, param in params.items():
        param.grad += grads[key]
        result[param.name] = grads[key]
    return result


def grad_check(fn: Callable[[Tensor, Optional[Tape]], Tensor], point: Union[Tensor, ArrayLike],
               eps: float = 1e-3) -> float:
    """
    Compare reverse-mode gradients with central differences

    Args:
        fn: Maps (input tensor, tape or None) to a scalar tensor
        point: Where to evaluate the gradient
        eps: Finite-difference step in (0, 1e-2]

    Returns:
        max over coordinates of |analytic - numeric| / max(1, |analytic|)
    """
    if not 0.0 < eps <= 1e-2:
        raise InvalidInputError(f"eps must lie in (0, 1e-2], got {eps}")
    base = np.array(as_tensor(point).data, dtype=np.float64, copy=True)

    x = Parameter(base, name="point")
    tape = Tape()
    value = fn(x, tape)
    check_finite(value, "grad_check objective")
    backward(tape, value)
    analytic = x.grad

    numeric = np.empty_like(base)
    for i in range(base.size):
        shifted = base.copy()
        shifted.flat[i] += eps
        f_plus = fn(Tensor(shifted), None).item()
        shifted.flat[i] -= 2.0 * eps
        f_minus = fn(Tensor(shifted), None).item()
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericalFailureError(f"Objective is not finite near coordinate {i}")
        numeric.flat[i] = (f_plus - f_minus) / (2.0 * eps)

    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))
