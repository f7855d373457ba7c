#!/usr/bin/env python3
"""
Reverse-mode automatic differentiation over dense numpy arrays.

Only the operators the vocoder network and its losses need are provided.
Every op that touches a tensor requiring gradients appends one Record to
the active Graph; backward() walks that graph once in reverse. Inside
no_grad() nothing is recorded.

Channel-wise ops treat the second-to-last axis as channels and the last
axis as time, so [C, L] and [B, C, L] inputs are both accepted.
"""

import contextlib
import logging
import threading
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .dsp import StftConfig, frame_signal, haar_merge, haar_split, stft_window

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]

_state = threading.local()


def _local():
    if not hasattr(_state, "graph"):
        _state.graph = Graph()
        _state.grad_enabled = True
        _state.debug = False
        _state.dtype = np.float64
    return _state


def set_debug(enabled: bool) -> None:
    """Raise FloatingPointError as soon as an op produces NaN or inf."""
    _local().debug = bool(enabled)


def set_default_dtype(dtype) -> None:
    """float64 (default) or float32 for newly created tensors."""
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ValueError(f"Unsupported dtype {dtype}")
    _local().dtype = dtype.type


def default_dtype():
    return _local().dtype


def is_grad_enabled() -> bool:
    return _local().grad_enabled


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Inference mode: ops inside the block record nothing."""
    state = _local()
    previous = state.grad_enabled
    state.grad_enabled = False
    try:
        yield
    finally:
        state.grad_enabled = previous


@contextlib.contextmanager
def new_graph() -> Iterator["Graph"]:
    """Record into a fresh graph for the duration of the block."""
    state = _local()
    previous = state.graph
    state.graph = Graph()
    try:
        yield state.graph
    finally:
        state.graph = previous


def current_graph() -> "Graph":
    return _local().graph


@dataclass
class Record:
    """One op application: inputs, output and the vector-Jacobian product."""

    op: str
    inputs: Tuple["Tensor", ...]
    output: "Tensor"
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Graph:
    """Topologically ordered list of op records (append order)."""

    def __init__(self):
        self.records: List[Record] = []

    def __len__(self) -> int:
        return len(self.records)

    def reset(self) -> None:
        self.records.clear()


class Tensor:
    """Dense array with optional gradient tracking."""

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        self.data = np.asarray(data, dtype=default_dtype())
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._record: Optional[Record] = None

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._record is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

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

    def __neg__(self):
        return scale(self, -1.0)


class Parameter(Tensor):
    """Leaf tensor that always requires gradients."""

    def __init__(self, data: ArrayLike, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _apply(
    op: str,
    data: np.ndarray,
    inputs: Sequence[Tensor],
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
) -> Tensor:
    state = _local()
    out = Tensor(data)
    if state.debug and not np.all(np.isfinite(out.data)):
        raise FloatingPointError(f"Non-finite values produced by {op}")
    if state.grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        record = Record(op, tuple(inputs), out, backward)
        out._record = record
        state.graph.records.append(record)
    return out


def backward(loss: Tensor, graph: Optional[Graph] = None) -> None:
    """
    Populate .grad of every leaf tensor that requires gradients.

    Leaf gradients accumulate across calls until zero_grad(). The replayed
    graph is released afterwards, so the thread-default graph does not grow
    across steps run outside new_graph().

    Raises:
        ValueError: if loss is not a scalar or does not depend on any
            tensor requiring gradients
    """
    if loss.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor requiring gradients")

    seed = np.ones_like(loss.data)
    if loss.is_leaf:
        _accumulate(loss, seed)
        return

    if graph is None:
        graph = current_graph()
    pending = {id(loss): seed}
    for record in reversed(graph.records):
        upstream = pending.pop(id(record.output), None)
        if upstream is None:
            continue
        for tensor, grad in zip(record.inputs, record.backward(upstream)):
            if grad is None or not tensor.requires_grad:
                continue
            if tensor.is_leaf:
                _accumulate(tensor, grad)
            elif id(tensor) in pending:
                pending[id(tensor)] = pending[id(tensor)] + grad
            else:
                pending[id(tensor)] = grad
    graph.reset()


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    grad = np.asarray(grad, dtype=tensor.data.dtype).reshape(tensor.shape)
    if tensor.grad is None:
        tensor.grad = grad.copy()
    else:
        tensor.grad = tensor.grad + grad


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise ops
# ---------------------------------------------------------------------------


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _apply(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _apply(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _apply(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        ),
    )


def scale(x, factor: float) -> Tensor:
    x = as_tensor(x)
    return _apply("scale", x.data * factor, (x,), lambda g: (g * factor,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _apply("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _apply("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def silu(x) -> Tensor:
    """Swish: x * sigmoid(x)."""
    x = as_tensor(x)
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _apply(
        "silu", x.data * s, (x,), lambda g: (g * (s + x.data * s * (1.0 - s)),)
    )


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _apply("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    x = as_tensor(x)
    factor = np.where(x.data > 0, 1.0, slope)
    return _apply("leaky_relu", x.data * factor, (x,), lambda g: (g * factor,))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _apply("square", x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def absolute(x) -> Tensor:
    x = as_tensor(x)
    return _apply("abs", np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    return _apply(
        "sum", np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape),)
    )


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.size
    return _apply(
        "mean",
        np.asarray(x.data.mean()),
        (x,),
        lambda g: (np.broadcast_to(g / n, x.shape),),
    )


def reshape(x, shape: Tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    original = x.shape
    return _apply(
        "reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(original),)
    )


def linear(x, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Dense layer: x [..., in] @ weight[out, in]^T + bias[out]."""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input width {x.shape[-1]} != weight {weight.shape}")
    out = x.data @ weight.data.T
    inputs: Tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        out = out + bias.data
        inputs = inputs + (bias,)

    def vjp(g):
        gx = g @ weight.data
        gw = g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.shape[-1])
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return grads

    return _apply("linear", out, inputs, vjp)


# ---------------------------------------------------------------------------
# Convolution kernels (plain numpy)
# ---------------------------------------------------------------------------


def _span(out_len: int, kernel: int, stride: int, dilation: int) -> int:
    return (out_len - 1) * stride + (kernel - 1) * dilation + 1


def correlate(
    x: np.ndarray, w: np.ndarray, stride: int, dilation: int, pad: int, out_len: int
) -> np.ndarray:
    """
    Dilated, strided cross-correlation with zero padding.

    y[b, o, n] = sum_{c,k} w[o, c, k] * x[b, c, n*stride + k*dilation - pad]

    x is [B, C_in, L_in], w is [C_out, C_in, K]; returns [B, C_out, out_len].
    """
    batch, channels, length = x.shape
    c_out, _, kernel = w.shape
    total = max(_span(out_len, kernel, stride, dilation), pad + length)
    xp = np.zeros((batch, channels, total), dtype=x.dtype)
    xp[:, :, pad : pad + length] = x
    y = np.zeros((batch, c_out, out_len), dtype=x.dtype)
    stop = (out_len - 1) * stride + 1
    for k in range(kernel):
        start = k * dilation
        y += np.matmul(w[:, :, k], xp[:, :, start : start + stop : stride])
    return y


def correlate_transpose(
    g: np.ndarray, w: np.ndarray, stride: int, dilation: int, pad: int, in_len: int
) -> np.ndarray:
    """Adjoint of correlate() with respect to x: [B, C_out, N] -> [B, C_in, in_len]."""
    batch, _, out_len = g.shape
    _, c_in, kernel = w.shape
    total = max(_span(out_len, kernel, stride, dilation), pad + in_len)
    gp = np.zeros((batch, c_in, total), dtype=g.dtype)
    stop = (out_len - 1) * stride + 1
    for k in range(kernel):
        start = k * dilation
        gp[:, :, start : start + stop : stride] += np.matmul(w[:, :, k].T, g)
    return gp[:, :, pad : pad + in_len]


def correlate_weight_grad(
    x: np.ndarray,
    g: np.ndarray,
    kernel: int,
    stride: int,
    dilation: int,
    pad: int,
) -> np.ndarray:
    """Gradient of correlate() with respect to w, shaped [C_out, C_in, K]."""
    batch, channels, length = x.shape
    out_len = g.shape[-1]
    total = max(_span(out_len, kernel, stride, dilation), pad + length)
    xp = np.zeros((batch, channels, total), dtype=x.dtype)
    xp[:, :, pad : pad + length] = x
    stop = (out_len - 1) * stride + 1
    gw = np.empty((g.shape[1], channels, kernel), dtype=x.dtype)
    for k in range(kernel):
        start = k * dilation
        taps = xp[:, :, start : start + stop : stride]
        gw[:, :, k] = np.einsum("bon,bcn->oc", g, taps)
    return gw


def _as_batched(x: Tensor) -> Tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x.data[np.newaxis], True
    if x.ndim == 3:
        return x.data, False
    raise ValueError(f"Expected [C, L] or [B, C, L], got {x.shape}")


def conv1d(
    x,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    dilation: int = 1,
    stride: int = 1,
    padding: Union[str, int] = "same",
) -> Tensor:
    """
    1-D cross-correlation, weight [C_out, C_in, K].

    padding="same" pads (K-1)*dilation/2 zeros on both sides (K odd,
    stride 1) so the output keeps the input length.
    """
    x = as_tensor(x)
    data, squeezed = _as_batched(x)
    c_out, c_in, kernel = weight.shape
    if data.shape[1] != c_in:
        raise ValueError(f"conv1d: input has {data.shape[1]} channels, weight expects {c_in}")
    length = data.shape[-1]
    if padding == "same":
        if kernel % 2 == 0 or stride != 1:
            raise ValueError("same padding needs an odd kernel and stride 1")
        pad = (kernel - 1) * dilation // 2
        out_len = length
    else:
        pad = int(padding)
        out_len = (length + 2 * pad - dilation * (kernel - 1) - 1) // stride + 1
    if out_len < 1:
        raise ValueError(f"conv1d: input length {length} too short for kernel {kernel}")

    y = correlate(data, weight.data, stride, dilation, pad, out_len)
    if bias is not None:
        y = y + bias.data[:, np.newaxis]
    inputs: Tuple[Tensor, ...] = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        gb = g[np.newaxis] if squeezed else g
        gx = correlate_transpose(gb, weight.data, stride, dilation, pad, length)
        gw = correlate_weight_grad(data, gb, kernel, stride, dilation, pad)
        grads = [gx[0] if squeezed else gx, gw]
        if bias is not None:
            grads.append(gb.sum(axis=(0, 2)))
        return grads

    return _apply("conv1d", y[0] if squeezed else y, inputs, vjp)


def conv_transpose1d(
    x,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: Optional[int] = None,
) -> Tensor:
    """
    Transposed convolution, weight [C_in, C_out, K].

    out[o, n*stride + k - padding] += x[c, n] * weight[c, o, k]; the output
    is cropped to input_length * stride. padding defaults to (K - stride) // 2.
    """
    x = as_tensor(x)
    data, squeezed = _as_batched(x)
    c_in, c_out, kernel = weight.shape
    if data.shape[1] != c_in:
        raise ValueError(
            f"conv_transpose1d: input has {data.shape[1]} channels, weight expects {c_in}"
        )
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if kernel < stride:
        raise ValueError(f"kernel {kernel} shorter than stride {stride}")
    pad = (kernel - stride) // 2 if padding is None else int(padding)
    length = data.shape[-1]
    out_len = length * stride

    y = correlate_transpose(data, weight.data, stride, 1, pad, out_len)
    if bias is not None:
        y = y + bias.data[:, np.newaxis]
    inputs: Tuple[Tensor, ...] = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        gb = g[np.newaxis] if squeezed else g
        gx = correlate(gb, weight.data, stride, 1, pad, length)
        gw = correlate_weight_grad(gb, data, kernel, stride, 1, pad)
        grads = [gx[0] if squeezed else gx, gw]
        if bias is not None:
            grads.append(gb.sum(axis=(0, 2)))
        return grads

    return _apply("conv_transpose1d", y[0] if squeezed else y, inputs, vjp)


# ---------------------------------------------------------------------------
# Channel and wavelet ops
# ---------------------------------------------------------------------------


def concat_channels(a, b) -> Tensor:
    """Concatenate along the channel axis (-2)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-1]:
        raise ValueError(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    split = a.shape[-2]
    return _apply(
        "concat_channels",
        np.concatenate([a.data, b.data], axis=-2),
        (a, b),
        lambda g: (g[..., :split, :], g[..., split:, :]),
    )


def _channel_slice(x: Tensor, start: int, stop: int, op: str) -> Tensor:
    def vjp(g):
        full = np.zeros_like(x.data)
        full[..., start:stop, :] = g
        return (full,)

    return _apply(op, x.data[..., start:stop, :].copy(), (x,), vjp)


def split_channels(x, at: int) -> Tuple[Tensor, Tensor]:
    """Split along the channel axis at index `at`."""
    x = as_tensor(x)
    channels = x.shape[-2]
    if not 0 < at < channels:
        raise ValueError(f"split index {at} outside 1..{channels - 1}")
    return (
        _channel_slice(x, 0, at, "split_channels"),
        _channel_slice(x, at, channels, "split_channels"),
    )


def dwt_channelwise(x) -> Tuple[Tensor, Tensor]:
    """Haar DWT of every channel along time; returns (low, high)."""
    x = as_tensor(x)
    if x.shape[-1] % 2:
        raise ValueError(f"dwt_channelwise needs an even length, got {x.shape[-1]}")
    low, high = haar_split(x.data)
    zeros = np.zeros_like(low)
    return (
        _apply("dwt_low", low, (x,), lambda g: (haar_merge(g, zeros),)),
        _apply("dwt_high", high, (x,), lambda g: (haar_merge(zeros, g),)),
    )


def idwt_channelwise(low, high) -> Tensor:
    """Inverse Haar DWT of every channel; backward is the forward DWT."""
    low, high = as_tensor(low), as_tensor(high)
    if low.shape != high.shape:
        raise ValueError(f"idwt_channelwise: sub-band shapes differ {low.shape} vs {high.shape}")
    return _apply("idwt", haar_merge(low.data, high.data), (low, high), haar_split)


# ---------------------------------------------------------------------------
# Spectral op used by the magnitude loss
# ---------------------------------------------------------------------------


def log_stft_magnitude(x, config: StftConfig, floor: float = 1e-7) -> Tensor:
    """
    log(max(|STFT(x)|, floor)) over the last axis, shaped [..., frames, bins].

    Framing matches dsp.stft_magnitude (centre reflect padding, ceil(L/hop)
    frames). Bins clamped at the floor get zero gradient.
    """
    x = as_tensor(x)
    if config.fft_size % 2:
        raise ValueError("log_stft_magnitude needs an even fft_size")
    length = x.shape[-1]
    n_fft, hop = config.fft_size, config.hop_size
    window = stft_window(config)
    spectrum = np.fft.rfft(frame_signal(x.data, config) * window, n=n_fft, axis=-1)
    magnitude = np.abs(spectrum)
    active = magnitude > floor
    out = np.log(np.where(active, magnitude, floor))

    def vjp(g):
        safe = np.where(active, magnitude, 1.0)
        grad_spec = np.where(active, g / (safe * safe), 0.0) * spectrum
        grad_spec[..., 1:-1] *= 0.5
        grad_frames = np.fft.irfft(grad_spec, n=n_fft, axis=-1) * n_fft * window
        pad = n_fft // 2
        padded = np.zeros(x.shape[:-1] + (length + 2 * pad,), dtype=grad_frames.dtype)
        for f in range(grad_frames.shape[-2]):
            padded[..., f * hop : f * hop + n_fft] += grad_frames[..., f, :]
        gx = padded[..., pad : pad + length].copy()
        gx[..., 1 : pad + 1] += padded[..., :pad][..., ::-1]
        gx[..., length - pad - 1 : length - 1] += padded[..., pad + length :][..., ::-1]
        return (gx,)

    return _apply("log_stft_magnitude", out, (x,), vjp)
