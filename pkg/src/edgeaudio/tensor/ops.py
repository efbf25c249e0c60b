"""Float reference kernels (numpy, float64 compute).

Spatial layout is channels-last.  Every kernel accepts arbitrary leading batch
dimensions: ``conv2d`` takes ``(..., H, W, C)``, ``dense`` works on the last
axis, and so on.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NumericalError, ShapeError

BN_EPSILON = 1e-3
LN_EPSILON = 1e-5


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


def same_padding(size: int, k: int, s: int) -> tuple[int, int]:
    """(before, after) padding giving ``ceil(size / s)`` outputs; the extra pixel goes after."""
    out = -(-size // s)
    total = max((out - 1) * s + k - size, 0)
    return total // 2, total - total // 2


def conv_output_size(size: int, k: int, s: int, padding: str) -> int:
    padding = padding.upper()
    if padding == "SAME":
        return -(-size // s)
    if padding == "VALID":
        if size < k:
            raise ShapeError(f"window {k} does not fit extent {size}")
        return (size - k) // s + 1
    raise ShapeError(f"unknown padding {padding!r}")


def _pad_spatial(x: np.ndarray, kh: int, kw: int, sh: int, sw: int, padding: str) -> np.ndarray:
    if padding.upper() != "SAME":
        return x
    ph = same_padding(x.shape[-3], kh, sh)
    pw = same_padding(x.shape[-2], kw, sw)
    if ph == (0, 0) and pw == (0, 0):
        return x
    pad = [(0, 0)] * (x.ndim - 3) + [ph, pw, (0, 0)]
    return np.pad(x, pad)


def _as_float(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def conv2d(x, kernel, bias=None, stride=(1, 1), padding: str = "SAME") -> np.ndarray:
    """2-D cross-correlation. ``kernel`` is ``[kh, kw, Cin, Cout]``."""
    x = _as_float(x)
    kernel = _as_float(kernel)
    kh, kw, cin, cout = kernel.shape
    if x.shape[-1] != cin:
        raise ShapeError(f"conv2d expects {cin} input channels, got {x.shape[-1]}")
    sh, sw = _pair(stride)
    oh = conv_output_size(x.shape[-3], kh, sh, padding)
    ow = conv_output_size(x.shape[-2], kw, sw, padding)
    if kh == kw == 1 and sh == sw == 1:
        out = x @ kernel[0, 0]
    else:
        xp = _pad_spatial(x, kh, kw, sh, sw, padding)
        # (..., H', W', Cin, kh, kw)
        win = sliding_window_view(xp, (kh, kw), axis=(-3, -2))[..., ::sh, ::sw, :, :, :]
        win = win[..., :oh, :ow, :, :, :]
        out = np.tensordot(win, kernel.transpose(2, 0, 1, 3), axes=([-3, -2, -1], [0, 1, 2]))
    if bias is not None:
        out = out + _as_float(bias)
    return out


def depthwise_conv2d(x, kernel, bias=None, stride=(1, 1), padding: str = "SAME") -> np.ndarray:
    """Per-channel 2-D cross-correlation. ``kernel`` is ``[kh, kw, C]``."""
    x = _as_float(x)
    kernel = _as_float(kernel)
    kh, kw, c = kernel.shape
    if x.shape[-1] != c:
        raise ShapeError(f"depthwise_conv2d expects {c} channels, got {x.shape[-1]}")
    sh, sw = _pair(stride)
    oh = conv_output_size(x.shape[-3], kh, sh, padding)
    ow = conv_output_size(x.shape[-2], kw, sw, padding)
    xp = _pad_spatial(x, kh, kw, sh, sw, padding)
    out = np.zeros(x.shape[:-3] + (oh, ow, c))
    for i in range(kh):
        for j in range(kw):
            patch = xp[..., i:i + sh * (oh - 1) + 1:sh, j:j + sw * (ow - 1) + 1:sw, :]
            out += patch * kernel[i, j]
    if bias is not None:
        out = out + _as_float(bias)
    return out


def dense(x, kernel, bias=None) -> np.ndarray:
    """``x @ kernel + bias`` over the last axis. ``kernel`` is ``[n, m]``."""
    x = _as_float(x)
    kernel = _as_float(kernel)
    if kernel.ndim != 2 or x.shape[-1] != kernel.shape[0]:
        raise ShapeError(f"dense: input width {x.shape[-1]} vs kernel {kernel.shape}")
    out = x @ kernel
    if bias is not None:
        out = out + _as_float(bias)
    return out


def relu6(x) -> np.ndarray:
    return np.clip(_as_float(x), 0.0, 6.0)


def sigmoid(x) -> np.ndarray:
    x = _as_float(x)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def pool2d(x, kind: str = "MAX", window=(2, 2), stride=None, padding: str = "VALID") -> np.ndarray:
    x = _as_float(x)
    kh, kw = _pair(window)
    sh, sw = _pair(stride if stride is not None else window)
    oh = conv_output_size(x.shape[-3], kh, sh, padding)
    ow = conv_output_size(x.shape[-2], kw, sw, padding)
    kind = kind.upper()
    if padding.upper() == "SAME":
        fill = -np.inf if kind == "MAX" else np.nan
        ph = same_padding(x.shape[-3], kh, sh)
        pw = same_padding(x.shape[-2], kw, sw)
        x = np.pad(x, [(0, 0)] * (x.ndim - 3) + [ph, pw, (0, 0)], constant_values=fill)
    win = sliding_window_view(x, (kh, kw), axis=(-3, -2))[..., ::sh, ::sw, :, :, :]
    win = win[..., :oh, :ow, :, :, :]
    if kind == "MAX":
        return win.max(axis=(-2, -1))
    if kind == "AVG":
        return np.nanmean(win, axis=(-2, -1)) if padding.upper() == "SAME" else win.mean(axis=(-2, -1))
    raise ValueError(f"unknown pool kind {kind!r}")


def global_avg_pool(x, axes=(-3, -2), keepdims: bool = False) -> np.ndarray:
    return _as_float(x).mean(axis=tuple(axes), keepdims=keepdims)


def softmax(x, axis: int = -1) -> np.ndarray:
    x = _as_float(x)
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def layer_norm(x, gamma=None, beta=None, eps: float = LN_EPSILON) -> np.ndarray:
    x = _as_float(x)
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    y = (x - mean) / np.sqrt(var + eps)
    if gamma is not None:
        y = y * _as_float(gamma)
    if beta is not None:
        y = y + _as_float(beta)
    return y


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    if d % 2:
        raise ShapeError(f"positional encoding width must be even, got {d}")
    pos = np.arange(n, dtype=np.float64)[:, None]
    rate = 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.empty((n, d))
    pe[:, 0::2] = np.sin(pos / rate)
    pe[:, 1::2] = np.cos(pos / rate)
    return pe


def add_positions(x) -> np.ndarray:
    x = _as_float(x)
    return x + sinusoidal_positions(x.shape[-2], x.shape[-1])


def attention_scores(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    return softmax(q @ np.swapaxes(k, -1, -2) / math.sqrt(q.shape[-1]), axis=-1)


def single_head_attention(x, wq, bq, wk, bk, wv, bv, wo, bo) -> np.ndarray:
    """Unmasked scaled dot-product self-attention with one head. ``x`` is ``(..., n, d)``."""
    x = _as_float(x)
    d = x.shape[-1]
    for name, w in (("wq", wq), ("wk", wk), ("wv", wv), ("wo", wo)):
        if np.shape(w) != (d, d):
            raise ShapeError(f"attention {name} must be {(d, d)}, got {np.shape(w)}")
    q = dense(x, wq, bq)
    k = dense(x, wk, bk)
    v = dense(x, wv, bv)
    ctx = attention_scores(q, k) @ v
    return dense(ctx, wo, bo)


def batchnorm(x, gamma, beta, mean, var, eps: float = BN_EPSILON) -> np.ndarray:
    x = _as_float(x)
    return (x - _as_float(mean)) / np.sqrt(_as_float(var) + eps) * _as_float(gamma) + _as_float(beta)


def fold_batchnorm(kernel, bias, gamma, beta, mean, var, eps: float = BN_EPSILON):
    """Fold inference-mode batch norm into the preceding conv/dense.

    The output-channel axis is the last kernel axis.  Returns float64
    ``(kernel, bias)``.
    """
    var = _as_float(var)
    if (var <= 0).any():
        raise NumericalError("batch-norm variance must be positive")
    kernel = _as_float(kernel)
    bias = np.zeros(kernel.shape[-1]) if bias is None else _as_float(bias)
    scale = _as_float(gamma) / np.sqrt(var + eps)
    return kernel * scale, (bias - _as_float(mean)) * scale + _as_float(beta)


def se_block(x, squeeze_kernel, squeeze_bias, excite_kernel, excite_bias, reduction_ratio=None):
    """Squeeze-and-excitation: ``x * sigmoid(W2 relu6(W1 mean_hw(x)))`` per channel."""
    x = _as_float(x)
    c = x.shape[-1]
    if reduction_ratio is not None and c % reduction_ratio:
        raise ShapeError(f"{c} channels not divisible by reduction ratio {reduction_ratio}")
    hidden = np.shape(squeeze_kernel)[-1]
    if np.shape(squeeze_kernel) != (c, hidden) or np.shape(excite_kernel) != (hidden, c):
        raise ShapeError("squeeze/excite kernels do not match the channel count")
    if reduction_ratio is not None and hidden != c // reduction_ratio:
        raise ShapeError(f"hidden width {hidden} != {c} / {reduction_ratio}")
    pooled = global_avg_pool(x, keepdims=True)
    gate = sigmoid(dense(relu6(dense(pooled, squeeze_kernel, squeeze_bias)), excite_kernel, excite_bias))
    return x * gate


def squared_difference(a, b) -> np.ndarray:
    d = _as_float(a) - _as_float(b)
    return d * d


def sub_spectral_norm(x, gamma, beta, mean, var, groups: int, eps: float = BN_EPSILON) -> np.ndarray:
    """Batch norm with separate statistics per frequency sub-band (axis -3)."""
    x = _as_float(x)
    h, c = x.shape[-3], x.shape[-1]
    if h % groups:
        raise ShapeError(f"frequency extent {h} not divisible into {groups} sub-bands")
    band = np.repeat(np.arange(groups), h // groups)
    g = _as_float(gamma)[band][:, None, :]
    b = _as_float(beta)[band][:, None, :]
    m = _as_float(mean)[band][:, None, :]
    v = _as_float(var)[band][:, None, :]
    return (x - m) / np.sqrt(v + eps) * g + b
