"""
differentiable primitives. every primitive checks its output is finite and
records itself on the active tape when an input requires grad
"""

from typing import Optional, Sequence, Tuple, Union
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from dvae import errors as err, const as k
from dvae.autodiff.tensor import Tensor, BackwardFn, current_tape, default_dtype

Operand = Union[Tensor, float, int, np.ndarray]
Axis = Optional[Union[int, Tuple[int, ...]]]


def _make(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """finite check, then wrap and record"""

    if not np.all(np.isfinite(data)):
        raise err.NumericFault(op)

    tape = current_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.wrap(data, requires_grad=needs_grad)

    if needs_grad:
        tape.record(op, inputs, out, backward)

    return out


def const(value: Operand) -> Tensor:
    """wrap a constant"""

    if isinstance(value, Tensor):
        return value
    return Tensor.wrap(np.asarray(value, dtype=default_dtype()))


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """sum grad down to the shape of a broadcast operand"""

    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)

    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)

    return grad


# elementwise


def add(a: Operand, b: Operand) -> Tensor:
    a, b = const(a), const(b)
    return _make(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = const(a), const(b)
    return _make(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = const(a), const(b)
    return _make(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(x: Tensor, factor: float) -> Tensor:
    """multiply by a python scalar"""

    return _make("scale", x.data * factor, (x,), lambda g: (g * factor,))


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _make("exp", out, (x,), lambda g: (g * out,))


def square(x: Tensor) -> Tensor:
    return _make("square", x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def abs(x: Tensor) -> Tensor:  # pylint: disable=redefined-builtin
    """subgradient at 0 is 0"""

    return _make("abs", np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def leaky_relu(x: Tensor, slope: float = k.LEAKY_SLOPE) -> Tensor:
    positive = x.data > 0
    return _make(
        "leaky_relu",
        np.where(positive, x.data, slope * x.data),
        (x,),
        lambda g: (g * np.where(positive, 1.0, slope).astype(x.dtype),),
    )


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def straight_through(x: Tensor, quantized: np.ndarray) -> Tensor:
    """forward the quantized values, pass the gradient to x unchanged"""

    if quantized.shape != x.shape:
        raise err.ContractViolation(f"straight_through shape {quantized.shape} != {x.shape}")

    return _make("straight_through", quantized.astype(x.dtype), (x,), lambda g: (g,))


# reductions and norms


def _expand(grad: np.ndarray, shape: Tuple[int, ...], axis: Axis, keepdims: bool) -> np.ndarray:
    """broadcast a reduced gradient back over the reduced axes"""

    if axis is not None and not keepdims:
        grad = np.expand_dims(grad, axis)

    return np.broadcast_to(grad, shape)


def sum(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:  # pylint: disable=redefined-builtin
    return _make(
        "sum",
        np.asarray(x.data.sum(axis=axis, keepdims=keepdims)),
        (x,),
        lambda g: (_expand(g, x.shape, axis, keepdims),),
    )


def mean(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims))
    count = x.size // max(out.size, 1)
    return _make(
        "mean",
        out,
        (x,),
        lambda g: (_expand(g / count, x.shape, axis, keepdims),),
    )


def l1_norm(x: Tensor, axis: Axis = None) -> Tensor:
    """sum |x|"""

    return _make(
        "l1_norm",
        np.asarray(np.abs(x.data).sum(axis=axis)),
        (x,),
        lambda g: (_expand(g, x.shape, axis, False) * np.sign(x.data),),
    )


def sq_l2_norm(x: Tensor, axis: Axis = None) -> Tensor:
    """sum x^2"""

    return _make(
        "sq_l2_norm",
        np.asarray((x.data * x.data).sum(axis=axis)),
        (x,),
        lambda g: (2.0 * _expand(g, x.shape, axis, False) * x.data,),
    )


# shape


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return _make("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return _make("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """concatenate along an axis, channels by default"""

    if not tensors:
        raise err.ContractViolation("concat of nothing")

    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    return _make(
        "concat",
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, bounds, axis=axis)),
    )


def broadcast_spatial(v: Tensor, height: int, width: int) -> Tensor:
    """N,C -> N,C,H,W constant over space"""

    if v.ndim != 2:
        raise err.ContractViolation(f"broadcast_spatial wants N,C, got {v.shape}")

    n, c = v.shape
    out = np.ascontiguousarray(np.broadcast_to(v.data[:, :, None, None], (n, c, height, width)))
    return _make("broadcast_spatial", out, (v,), lambda g: (g.sum(axis=(2, 3)),))


def spatial_mean(x: Tensor) -> Tensor:
    """N,C,H,W -> N,C"""

    n, c, h, w = x.shape
    return _make(
        "spatial_mean",
        x.data.mean(axis=(2, 3)),
        (x,),
        lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), (n, c, h, w)),),
    )


def channel_mean(x: Tensor) -> Tensor:
    """per-pixel arithmetic mean over channels, N,C,H,W -> N,1,H,W"""

    if x.ndim != 4 or x.shape[1] < 1:
        raise err.ContractViolation(f"channel_mean wants N,C,H,W, got {x.shape}")

    channels = x.shape[1]
    return _make(
        "channel_mean",
        x.data.mean(axis=1, keepdims=True),
        (x,),
        lambda g: (np.broadcast_to(g / channels, x.shape),),
    )


def upsample_nearest2x(x: Tensor) -> Tensor:
    """each value replicated into a 2x2 block"""

    n, c, h, w = x.shape
    return _make(
        "upsample_nearest2x",
        x.data.repeat(2, axis=2).repeat(2, axis=3),
        (x,),
        lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),),
    )


def avg_pool2x(x: Tensor) -> Tensor:
    """2x2 average pooling, stride 2"""

    n, c, h, w = x.shape

    if h % 2 or w % 2:
        raise err.ContractViolation(f"avg_pool2x wants even extents, got {x.shape}")

    return _make(
        "avg_pool2x",
        x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5)),
        (x,),
        lambda g: ((g / 4.0).repeat(2, axis=2).repeat(2, axis=3),),
    )


# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """batched a @ b, b may be a plain matrix shared over the batch"""

    if a.shape[-1] != b.shape[-2]:
        raise err.ContractViolation(f"matmul inner dims {a.shape} @ {b.shape}")

    def backward(g):
        grad_a = g @ np.swapaxes(b.data, -1, -2)
        grad_b = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return _make("matmul", a.data @ b.data, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x[..., in] @ weight[in, out] + bias[out]"""

    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


def embedding(table: Tensor, indices: np.ndarray) -> Tensor:
    """gather rows of table"""

    indices = np.asarray(indices)

    if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
        raise err.ContractViolation("embedding index out of range")

    def backward(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, indices.reshape(-1), g.reshape(-1, table.shape[1]))
        return (grad,)

    return _make("embedding", table.data[indices], (table,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make(
        "softmax",
        out,
        (x,),
        lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),),
    )


def log_softmax_np(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """numerically stable log softmax on raw arrays"""

    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """mean over positions of -log softmax(logits)[target]"""

    targets = np.asarray(targets)
    vocab = logits.shape[-1]

    if targets.shape != logits.shape[:-1]:
        raise err.ContractViolation(f"targets {targets.shape} vs logits {logits.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise err.ContractViolation("target out of vocabulary")

    flat = logits.data.reshape(-1, vocab)
    idx = targets.reshape(-1)
    logp = log_softmax_np(flat)
    count = flat.shape[0]
    loss = -logp[np.arange(count), idx].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[np.arange(count), idx] -= 1.0
        return ((g * grad / count).reshape(logits.shape),)

    return _make("softmax_cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), backward)


# normalisation


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = k.LN_EPS, axis: int = -1) -> Tensor:
    """normalise features along axis to zero mean, unit variance, then affine"""

    if eps <= 0:
        raise err.ContractViolation("layer_norm eps must be positive")

    axis = axis % x.ndim
    features = x.shape[axis]

    if features == 0:
        raise err.ContractViolation("layer_norm over an empty feature axis")
    if gain.shape != (features,) or bias.shape != (features,):
        raise err.ContractViolation(f"layer_norm affine shape {gain.shape} for {features} features")

    bshape = [1] * x.ndim
    bshape[axis] = features
    g_b = gain.data.reshape(bshape)
    centred = x.data - x.data.mean(axis=axis, keepdims=True)
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=axis, keepdims=True) + eps)
    xhat = centred * inv_std
    reduce_axes = tuple(i for i in range(x.ndim) if i != axis)

    def backward(g):
        gxhat = g * g_b
        grad_x = inv_std * (
            gxhat
            - gxhat.mean(axis=axis, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=axis, keepdims=True)
        )
        return (
            grad_x,
            (g * xhat).sum(axis=reduce_axes),
            g.sum(axis=reduce_axes),
        )

    return _make("layer_norm", xhat * g_b + bias.data.reshape(bshape), (x, gain, bias), backward)


# convolution


def _pad_index(extent: int, pad: int, mode: str) -> np.ndarray:
    """source index of every padded position, -1 for zero padding"""

    if mode == "reflect":
        return np.pad(np.arange(extent), pad, mode="reflect")
    return np.pad(np.arange(extent), pad, mode="constant", constant_values=-1)


def _fold(grad: np.ndarray, index: np.ndarray, extent: int, axis: int) -> np.ndarray:
    """sum padded-position gradients back onto their source positions"""

    keep = index >= 0
    shape = list(grad.shape)
    shape[axis] = extent
    out = np.zeros(shape, dtype=grad.dtype)
    selector = [slice(None)] * grad.ndim
    selector[axis] = index[keep]
    source = np.compress(keep, grad, axis=axis)
    np.add.at(out, tuple(selector), source)
    return out


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: str = "reflect",
) -> Tensor:
    """
    2d cross-correlation, N,C,H,W * O,C,kh,kw -> N,O,H',W' with "same" padding
    of kh//2, kw//2 (reflect or zero) and H' = (H + 2*pad - kh) // stride + 1
    """

    if x.ndim != 4 or kernel.ndim != 4:
        raise err.ContractViolation(f"conv2d wants 4d operands, got {x.shape}, {kernel.shape}")

    n, c, h, w = x.shape
    out_c, in_c, kh, kw = kernel.shape

    if in_c != c:
        raise err.ContractViolation(f"conv2d channels: input {c}, kernel {in_c}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise err.ContractViolation("conv2d kernel extents must be odd")
    if stride < 1:
        raise err.ContractViolation("conv2d stride must be >= 1")
    if padding not in ("reflect", "zero"):
        raise err.ContractViolation(f"unknown padding {padding}")

    ph, pw = kh // 2, kw // 2
    idx_h = _pad_index(h, ph, padding)
    idx_w = _pad_index(w, pw, padding)
    mode = "reflect" if padding == "reflect" else "constant"
    padded = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)), mode=mode)
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out_h, out_w = windows.shape[2], windows.shape[3]
    out = np.tensordot(windows, kernel.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    if bias is not None:
        out = out + bias.data[None, :, None, None]

    out = np.ascontiguousarray(out)

    def backward(g):
        grad_kernel = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_windows = np.tensordot(g, kernel.data, axes=([1], [0]))
        grad_padded = np.zeros_like(padded)

        for i in range(kh):
            for j in range(kw):
                grad_padded[
                    :, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride
                ] += grad_windows[:, :, :, :, i, j].transpose(0, 3, 1, 2)

        grad_x = _fold(_fold(grad_padded, idx_h, h, axis=2), idx_w, w, axis=3)
        grads = [grad_x, grad_kernel]

        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))

        return tuple(grads)

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _make("conv2d", out, inputs, backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """inverted dropout as a constant mask multiply"""

    if not training or rate <= 0.0:
        return x

    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return mul(x, Tensor.wrap(mask))


def _rsub(a, b):
    return sub(b, a)


def _mul_any(a, b):
    if isinstance(b, (int, float)):
        return scale(a, float(b))
    return mul(a, b)


Tensor.__add__ = add  # type: ignore
Tensor.__radd__ = add  # type: ignore
Tensor.__sub__ = sub  # type: ignore
Tensor.__rsub__ = _rsub  # type: ignore
Tensor.__mul__ = _mul_any  # type: ignore
Tensor.__rmul__ = _mul_any  # type: ignore
Tensor.__neg__ = neg  # type: ignore
Tensor.__matmul__ = matmul  # type: ignore
