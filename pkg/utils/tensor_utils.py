# utils/tensor_utils.py
"""
Dense float64 tensors with a define-by-run reverse-mode gradient tape.

Ops record themselves on the tape that is active on the current thread,
and only when at least one input requires a gradient. Without an active
tape every op is a plain numpy computation.
"""
import threading
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from .validation_utils import ArrayValidator, ValidationError

ArrayLike = Union[np.ndarray, float, int, Sequence]

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """Row-major float64 array that can take part in gradient recording"""

    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float('nan')

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_reduce(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """Named learnable tensor carrying an accumulated gradient"""

    def __init__(self, data: ArrayLike, name: str = '', learnable: bool = True):
        super().__init__(data, requires_grad=learnable)
        self.name = name
        self.learnable = learnable
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter(name={self.name!r}, shape={self.shape}, learnable={self.learnable})"


class Tape:
    """Ordered record of executed ops, used as a context manager"""

    _local = threading.local()

    def __init__(self):
        self.entries: List[Tuple[Tensor, Tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> 'Tape':
        stack = Tape._stack()
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        Tape._stack().pop()
        return False

    def __len__(self):
        return len(self.entries)

    @staticmethod
    def _stack() -> List['Tape']:
        if not hasattr(Tape._local, 'stack'):
            Tape._local.stack = []
        return Tape._local.stack

    @staticmethod
    def active() -> Optional['Tape']:
        """Get the innermost tape active on this thread"""
        stack = Tape._stack()
        return stack[-1] if stack else None

    def record(self, output: Tensor, inputs: Tuple[Tensor, ...], backward_fn: Callable):
        output.requires_grad = True
        output._tape = self
        self.entries.append((output, inputs, backward_fn))


# --- helpers -----------------------------------------------------------------

def as_tensor(value) -> Tensor:
    """Wrap constants as non-recording tensors"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _check_finite(op: str, array: np.ndarray) -> np.ndarray:
    ArrayValidator.validate_finite(array, f"output of op '{op}'")
    return array


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValidationError(f"shape mismatch in op '{op}': {a.shape} vs {b.shape}")


def _emit(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    out = Tensor(_check_finite(op, data))
    tape = Tape.active()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(out, inputs, backward_fn)
    return out


# --- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('add', a, b)
    return _emit('add', a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('sub', a, b)
    return _emit('sub', a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('mul', a, b)
    return _emit('mul', a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('div', a, b)
    with np.errstate(divide='ignore', invalid='ignore'):
        out = a.data / b.data
    return _emit('div', out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit('neg', -a.data, (a,), lambda g: (-g,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = expit(a.data)
    return _emit('sigmoid', s, (a,), lambda g: (g * s * (1.0 - s),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    return _emit('softplus', np.logaddexp(0.0, a.data), (a,), lambda g: (g * expit(a.data),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over='ignore'):
        e = np.exp(a.data)
    return _emit('exp', e, (a,), lambda g: (g * e,))


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide='ignore', invalid='ignore'):
        out = np.log(a.data)
    return _emit('log', out, (a,), lambda g: (g / a.data,))


def clamp(a, lo: Optional[float] = None, hi: Optional[float] = None) -> Tensor:
    """Clip values; the gradient passes only where the input was inside the range"""
    a = as_tensor(a)
    lo_v = -np.inf if lo is None else lo
    hi_v = np.inf if hi is None else hi
    inside = (a.data >= lo_v) & (a.data <= hi_v)
    return _emit('clamp', np.clip(a.data, lo_v, hi_v), (a,), lambda g: (g * inside,))


def gelu(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return _emit('gelu', x * cdf, (a,), lambda g: (g * (cdf + x * pdf),))


def detach(a) -> Tensor:
    """Stop-gradient copy"""
    return Tensor(as_tensor(a).data.copy())


# --- linear algebra ----------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValidationError(f"shape mismatch in op 'matmul': {a.shape} vs {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ValidationError(f"shape mismatch in op 'matmul': {a.shape} vs {b.shape}")

    def backward_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit('matmul', out, (a, b), backward_fn)


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 1, groups: int = 1) -> Tensor:
    """Grouped 2D cross-correlation on (B, C_in, H, W) with zero padding"""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ValidationError(f"shape mismatch in op 'conv2d': {x.shape} vs {weight.shape}")
    batch, c_in, height, width = x.shape
    c_out, c_per_group, kh, kw = weight.shape
    if c_in % groups or c_out % groups or c_in // groups != c_per_group:
        raise ValidationError(f"shape mismatch in op 'conv2d': {x.shape} vs {weight.shape} (groups={groups})")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    h_out, w_out = windows.shape[2], windows.shape[3]
    cols = windows.reshape(batch, groups, c_per_group, h_out, w_out, kh, kw)
    w_g = weight.data.reshape(groups, c_out // groups, c_per_group, kh, kw)
    out = np.einsum('bgchwij,gocij->bgohw', cols, w_g, optimize=True).reshape(batch, c_out, h_out, w_out)

    inputs = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ValidationError(f"shape mismatch in op 'conv2d' bias: {bias.shape} vs ({c_out},)")
        out = out + bias.data.reshape(1, c_out, 1, 1)
        inputs = (x, weight, bias)

    def backward_fn(g):
        g_g = g.reshape(batch, groups, c_out // groups, h_out, w_out)
        gw = np.einsum('bgohw,bgchwij->gocij', g_g, cols, optimize=True).reshape(weight.shape)
        gcols = np.einsum('bgohw,gocij->bgchwij', g_g, w_g, optimize=True).reshape(batch, c_in, h_out, w_out, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += gcols[..., i, j]
        gx = gxp[:, :, padding:padding + height, padding:padding + width]
        grads = (gx, gw)
        if bias is not None:
            grads = grads + (g.sum(axis=(0, 2, 3)),)
        return grads

    return _emit('conv2d', out, inputs, backward_fn)


def depthwise_conv2d(x, weight, bias=None, stride: int = 1, padding: int = 1) -> Tensor:
    """Per-channel convolution; weight has shape (C, 1, k, k)"""
    x = as_tensor(x)
    return conv2d(x, weight, bias=bias, stride=stride, padding=padding, groups=x.shape[1])


# --- reductions --------------------------------------------------------------

def _expand_grad(g: np.ndarray, shape: Tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum_reduce(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    return _emit('sum', np.asarray(out), (a,),
                 lambda g: (np.array(_expand_grad(g, a.shape, axis, keepdims)),))


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.size // max(np.asarray(out).size, 1)
    return _emit('mean', np.asarray(out), (a,),
                 lambda g: (np.array(_expand_grad(g, a.shape, axis, keepdims)) / count,))


def max_reduce(a, axis=None, keepdims: bool = False) -> Tensor:
    """Max over an axis; tied maxima share the gradient equally"""
    a = as_tensor(a)
    out = np.max(a.data, axis=axis, keepdims=keepdims)

    def backward_fn(g):
        peak = _expand_grad(np.asarray(out), a.shape, axis, keepdims)
        hit = (a.data == peak).astype(np.float64)
        ties = np.sum(hit, axis=axis, keepdims=True)
        return (np.array(_expand_grad(g, a.shape, axis, keepdims)) * hit / ties,)

    return _emit('max', np.asarray(out), (a,), backward_fn)


# --- shape ops ---------------------------------------------------------------

def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ValidationError(f"shape mismatch in op 'concat': {[t.shape for t in tensors]}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _emit('concat', out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ValidationError(f"shape mismatch in op 'stack': {[t.shape for t in tensors]}")
    return _emit('stack', out, tensors,
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ValidationError(f"shape mismatch in op 'reshape': {a.shape} -> {shape}")
    return _emit('reshape', out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inverse = None if axes is None else np.argsort(axes)
    return _emit('transpose', out, (a,), lambda g: (np.transpose(g, inverse),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = np.array(a.data[index])

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts)

    def backward_fn(g):
        ga = np.zeros_like(a.data)
        if basic:
            ga[index] += g
        else:
            np.add.at(ga, index, g)
        return (ga,)

    return _emit('getitem', out, (a,), backward_fn)


def l2_normalize(a, axis: int = -1, eps: float = 1e-12) -> Tensor:
    a = as_tensor(a)
    norm = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=True))
    safe = np.maximum(norm, eps)
    y = a.data / safe

    def backward_fn(g):
        proj = np.sum(g * y, axis=axis, keepdims=True)
        return (np.where(norm > eps, (g - y * proj) / safe, g / safe),)

    return _emit('l2_normalize', y, (a,), backward_fn)


# --- spike nonlinearity ------------------------------------------------------

SPIKE_MODES = ('round', 'threshold')


def multispike_levels(u: np.ndarray, levels: int, mode: str = 'round') -> np.ndarray:
    """floor(clamp(u, 0, L) + 0.5); 'threshold' mode counts crossed thresholds, floor(clamp(u, 0, L))"""
    offset = 0.5 if mode == 'round' else 0.0
    return np.floor(np.clip(u, 0.0, levels) + offset)


def atan_surrogate(u: np.ndarray, levels: int, alpha: float, mode: str = 'round') -> np.ndarray:
    """Sum of ATan kernels at the L firing thresholds, zero outside (0, L)"""
    u = np.asarray(u, dtype=np.float64)
    centre = 0.5 if mode == 'round' else 1.0
    total = np.zeros_like(u)
    half = alpha / 2.0
    for k in range(levels):
        z = np.pi * (u - k - centre) * half
        total += half / (1.0 + z * z)
    return total * ((u > 0.0) & (u < levels))


def multispike(v, v_th, levels: int = 4, alpha: float = 2.0, mode: str = 'round') -> Tensor:
    """Integer spike count of v / v_th with the ATan surrogate on the backward pass"""
    v, v_th = as_tensor(v), as_tensor(v_th)
    _broadcast_shape('multispike', v, v_th)
    if mode not in SPIKE_MODES:
        raise ValidationError(f"unknown spike mode '{mode}'")
    if np.any(v_th.data <= 0):
        raise ValidationError("multispike threshold must be positive")
    u = v.data / v_th.data
    out = multispike_levels(u, levels, mode)

    def backward_fn(g):
        sg = atan_surrogate(u, levels, alpha, mode)
        gv = g * sg / v_th.data
        gth = -g * sg * v.data / (v_th.data * v_th.data)
        return _unbroadcast(gv, v.shape), _unbroadcast(gth, v_th.shape)

    return _emit('multispike', out, (v, v_th), backward_fn)


# --- backward ----------------------------------------------------------------

def backward(loss: Tensor, tape: Optional[Tape] = None) -> None:
    """Accumulate d(loss)/d(param) into every learnable Parameter reached by the tape"""
    if loss.size != 1:
        raise ValidationError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = tape or getattr(loss, '_tape', None) or Tape.active()
    if tape is None or not loss.requires_grad:
        return

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for output, inputs, backward_fn in reversed(tape.entries):
        g_out = grads.pop(id(output), None)
        if g_out is None:
            continue
        input_grads = backward_fn(g_out)
        for tensor, g in zip(inputs, input_grads):
            if g is None or not tensor.requires_grad:
                continue
            g = _check_finite('backward', np.asarray(g, dtype=np.float64))
            if isinstance(tensor, Parameter):
                tensor.grad = tensor.grad + g.reshape(tensor.shape)
            else:
                key = id(tensor)
                grads[key] = grads[key] + g if key in grads else g


def zero_grad(params: Iterable[Parameter]) -> None:
    """Reset gradients at the start of an accumulation cycle"""
    for p in params:
        p.zero_grad()


def collect_gradients(params: Iterable[Parameter]) -> Dict[str, np.ndarray]:
    """Snapshot parameter gradients keyed by name"""
    return {p.name: p.grad.copy() for p in params}


def merge_gradients(params: Iterable[Parameter], worker_grads: Sequence[Dict[str, np.ndarray]]) -> None:
    """Sum per-worker gradient snapshots into the shared parameters"""
    params = list(params)
    for p in params:
        p.grad = np.zeros_like(p.data)
        for snapshot in worker_grads:
            if p.name in snapshot:
                p.grad = p.grad + snapshot[p.name]


def finite_difference_check(f: Callable[[Tensor], Tensor], point: ArrayLike, eps: float = 1e-6,
                            seed: int = 0) -> float:
    """Compare tape gradients against central differences.

    Non-scalar outputs are reduced with a fixed positive weighting so every
    output coordinate contributes.
    """
    x0 = np.array(point, dtype=np.float64)
    sample = Tensor(f(Tensor(x0)).data)
    weights = np.random.default_rng(seed).uniform(0.5, 1.5, size=sample.shape)

    def scalar(x: Tensor) -> Tensor:
        return sum_reduce(mul(f(x), weights))

    param = Parameter(x0.copy(), name='point')
    with Tape() as tape:
        loss = scalar(param)
    backward(loss, tape)
    analytic = param.grad

    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    for i in range(x0.size):
        plus, minus = x0.copy().reshape(-1), x0.copy().reshape(-1)
        plus[i] += eps
        minus[i] -= eps
        f_plus = scalar(Tensor(plus.reshape(x0.shape))).item()
        f_minus = scalar(Tensor(minus.reshape(x0.shape))).item()
        flat[i] = (f_plus - f_minus) / (2.0 * eps)

    return float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)))
