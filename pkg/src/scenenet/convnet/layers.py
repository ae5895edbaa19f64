"""Layer primitives with hand-written backward passes.

Activations use channels-last layout internally, ``[batch, time, freq,
channels]``, so that im2col for a 3x3 kernel is one strided view plus
a single contiguous copy. Weights keep the conventional ``[filters, channels, 3, 3]`` shape.
Every ``*_forward`` returns ``(output, cache)`` and the matching
``*_backward`` consumes that cache.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import LabelError, ParameterError, ShapeError

PROB_FLOOR = 1e-12


def zero_pad(x: np.ndarray, pad: int = 1) -> np.ndarray:
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))


def zero_pad_backward(dout: np.ndarray, pad: int = 1) -> np.ndarray:
    return dout[:, pad:dout.shape[1] - pad, pad:dout.shape[2] - pad, :]


def _im2col(xp: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Rows of 3x3 patches, ordered (dy, dx, channel) to match the reshaped kernel."""
    n, _, _, c = xp.shape
    patches = sliding_window_view(xp, (3, 3), axis=(1, 2))  # n, out_h, out_w, c, 3, 3
    cols = np.ascontiguousarray(patches.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(n * out_h * out_w, 9 * c)


def conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, padding: int = 1):
    """3x3 stride-1 cross-correlation over all input channels.

    ``padding=1`` keeps the spatial size of ``x``; ``padding=0`` is a valid
    convolution that shrinks each spatial dimension by two.
    """
    if weights.ndim != 4 or weights.shape[2:] != (3, 3):
        raise ShapeError(f"conv weights must be [F, C, 3, 3], got {weights.shape}")
    n, h, w, c = x.shape
    f = weights.shape[0]
    if weights.shape[1] != c:
        raise ShapeError(f"conv expects {weights.shape[1]} input channels, got {c}")
    xp = zero_pad(x, padding) if padding else x
    out_h, out_w = xp.shape[1] - 2, xp.shape[2] - 2
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"input {h}x{w} is too small for a 3x3 kernel")
    cols = _im2col(xp, out_h, out_w)
    wmat = weights.transpose(2, 3, 1, 0).reshape(9 * c, f)
    out = cols @ wmat
    out += bias
    return out.reshape(n, out_h, out_w, f), (cols, x.shape, padding)


def conv2d_backward(dout: np.ndarray, cache, weights: np.ndarray, need_dx: bool = True):
    """Return ``(dx, dweights, dbias)`` for :func:`conv2d_forward`; ``dx`` is None if not needed."""
    cols, x_shape, padding = cache
    n, h, w, c = x_shape
    f = weights.shape[0]
    if dout.shape[0] != n or dout.shape[3] != f or dout.shape[0] * dout.shape[1] * dout.shape[2] != cols.shape[0]:
        raise ShapeError(f"upstream gradient {dout.shape} does not match the forward pass")
    d2 = dout.reshape(-1, f)
    dw = (cols.T @ d2).reshape(3, 3, c, f).transpose(3, 2, 0, 1)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, np.ascontiguousarray(dw), db
    # the input gradient is a full correlation of dout with the flipped,
    # channel-transposed kernel; padding dout by (2 - padding) yields exactly x's extent
    pad = 2 - padding
    dp = np.pad(dout, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else dout
    flipped = weights[:, :, ::-1, ::-1].transpose(2, 3, 0, 1).reshape(9 * f, c)
    dx_ = (_im2col(dp, h, w) @ flipped).reshape(n, h, w, c)
    return dx_, np.ascontiguousarray(dw), db


def leaky_relu(z, alpha: float) -> np.ndarray:
    """``z`` where ``z >= 0``, ``alpha * z`` elsewhere; ``alpha = 0`` is plain ReLU."""
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    z = np.asarray(z, dtype=np.result_type(z, np.float32))
    return np.where(z >= 0, z, z * z.dtype.type(alpha))


def leaky_relu_forward(z: np.ndarray, alpha: float):
    """Returns the activation and its slope (1 or alpha per element) for the backward pass."""
    slope = (z >= 0).astype(z.dtype)
    # max(mask, alpha) gives exactly 1 or alpha, so z * slope is bit-equal to the two-branch form
    np.maximum(slope, z.dtype.type(alpha), out=slope)
    return z * slope, slope


def leaky_relu_backward(dout: np.ndarray, slope: np.ndarray, alpha: float | None = None) -> np.ndarray:
    return dout * slope


def max_pool3x3_forward(x: np.ndarray):
    """Non-overlapping 3x3 max pooling; trailing rows/columns that do not fill a window are dropped."""
    n, h, w, c = x.shape
    ph, pw = h // 3, w // 3
    if ph == 0 or pw == 0:
        raise ShapeError(f"input {h}x{w} is smaller than the 3x3 pooling window")
    blocks = x[:, :ph * 3, :pw * 3, :].reshape(n, ph, 3, pw, 3, c)
    flat = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, ph, pw, c, 9)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def max_pool3x3_backward(dout: np.ndarray, cache) -> np.ndarray:
    """Route each gradient to the first maximal element of its window (row-major scan)."""
    idx, (n, h, w, c) = cache
    ph, pw = idx.shape[1], idx.shape[2]
    flat = np.zeros((n, ph, pw, c, 9), dtype=dout.dtype)
    np.put_along_axis(flat, idx[..., None], dout[..., None], axis=-1)
    blocks = flat.reshape(n, ph, pw, c, 3, 3).transpose(0, 1, 4, 2, 5, 3).reshape(n, ph * 3, pw * 3, c)
    dx = np.zeros((n, h, w, c), dtype=dout.dtype)
    dx[:, :ph * 3, :pw * 3, :] = blocks
    return dx


def global_avg_pool_forward(x: np.ndarray):
    return x.mean(axis=(1, 2), dtype=np.float64).astype(x.dtype), x.shape


def global_avg_pool_backward(dout: np.ndarray, x_shape) -> np.ndarray:
    n, h, w, c = x_shape
    scale = dout.dtype.type(1.0 / (h * w))
    return np.broadcast_to((dout * scale)[:, None, None, :], x_shape).copy()


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray):
    """Fully connected layer, ``weights`` shaped ``[out_units, in_units]``."""
    if x.shape[1] != weights.shape[1]:
        raise ShapeError(f"dense layer expects {weights.shape[1]} inputs, got {x.shape[1]}")
    return x @ weights.T + bias, x


def dense_backward(dout: np.ndarray, x: np.ndarray, weights: np.ndarray):
    return dout @ weights, dout.T @ x, dout.sum(axis=0)


def dropout_forward(x: np.ndarray, rate: float, train: bool, rng: np.random.Generator | None = None):
    """Inverted dropout; identity (and no mask) outside training or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    if rng is None:
        raise ParameterError("training-mode dropout needs a random generator")
    mask = (rng.random(x.shape, dtype=np.float32) >= rate).astype(x.dtype)
    mask *= x.dtype.type(1.0 / (1.0 - rate))
    return x * mask, mask


def dropout_backward(dout: np.ndarray, mask) -> np.ndarray:
    return dout if mask is None else dout * mask


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = np.asarray(logits)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_labels(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelError(f"labels must lie in 0..{n_classes - 1}")
    return labels.astype(np.int64)


def cross_entropy(probs: np.ndarray, labels) -> float:
    """Mean of ``-ln p[label]`` with ``p`` floored at ``1e-12``; accepts one row or a batch."""
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    y = np.atleast_1d(_check_labels(labels, p.shape[1]))
    picked = p[np.arange(p.shape[0]), y]
    return float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))


def softmax_cross_entropy_backward(probs: np.ndarray, labels) -> np.ndarray:
    """Gradient of the batch-mean loss w.r.t. the logits, ``(p - onehot) / batch``."""
    y = _check_labels(labels, probs.shape[1])
    grad = probs.copy()
    grad[np.arange(probs.shape[0]), y] -= 1
    grad /= probs.shape[0]
    return grad
