"""Differentiable layer primitives with hand-written forward and backward passes.

All activations live in numpy arrays laid out as (batch, channels, height,
width). Every backward function consumes the cache produced by its forward
counterpart and returns exact analytic gradients; there is no automatic
differentiation anywhere in this package.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateInputError, ShapeError, UsageError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
NORM_EPS = 1e-12


@dataclass
class LayerParams:
    """Learnable parameters of one block: convolution plus optional batch norm.

    Running statistics start unset; they are populated by the first train-mode
    batch-norm forward and required for eval mode.
    """

    weights: Optional[np.ndarray] = None       # (out_c, in_c, k, k)
    biases: Optional[np.ndarray] = None        # (out_c,)
    bn_gain: Optional[np.ndarray] = None       # (channels,)
    bn_bias: Optional[np.ndarray] = None       # (channels,)
    bn_running_mean: Optional[np.ndarray] = None
    bn_running_var: Optional[np.ndarray] = None


def _require_4d(x: np.ndarray, name: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-d (batch, channels, h, w), got shape {x.shape}")


def _windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Strided sliding-window view of shape (b, c, oh, ow, k, k)."""
    b, c, h, w = x.shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    sb, sc, sh, sw = x.strides
    return np.lib.stride_tricks.as_strided(
        x,
        shape=(b, c, oh, ow, k, k),
        strides=(sb, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


# ---------------------------------------------------------------------------
# Convolution (valid, no padding)
# ---------------------------------------------------------------------------

def conv_out_extent(in_extent: int, k: int, stride: int) -> int:
    return (in_extent - k) // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(b, oh*ow, c*k*k) matrix of flattened receptive fields."""
    b, c, h, w = x.shape
    oh = conv_out_extent(h, k, stride)
    ow = conv_out_extent(w, k, stride)
    win = _windows(x, k, stride)                      # (b, c, oh, ow, k, k)
    cols = win.transpose(0, 2, 3, 1, 4, 5)            # (b, oh, ow, c, k, k)
    return np.ascontiguousarray(cols).reshape(b, oh * ow, c * k * k)


def _col2im(cols: np.ndarray, x_shape: tuple, k: int, stride: int) -> np.ndarray:
    """Scatter-add inverse of _im2col."""
    b, c, h, w = x_shape
    oh = conv_out_extent(h, k, stride)
    ow = conv_out_extent(w, k, stride)
    cols = cols.reshape(b, oh, ow, c, k, k)
    gx = np.zeros(x_shape, dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            gx[:, :, i:i + oh * stride:stride, j:j + ow * stride:stride] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return gx


def conv_forward(x: np.ndarray, params: LayerParams, stride: int):
    """Valid (unpadded) strided convolution.

    Returns (output, cache). Output spatial extent is
    floor((in - k) / stride) + 1 per axis.
    """
    _require_4d(x, "conv input")
    w = params.weights
    if w is None or w.ndim != 4:
        raise ShapeError("conv weights must be 4-d (out_c, in_c, k, k)")
    out_c, in_c, k, k2 = w.shape
    if k != k2:
        raise ShapeError(f"conv kernels must be square, got {k}x{k2}")
    b, c, h, win_w = x.shape
    if c != in_c:
        raise ShapeError(f"conv input has {c} channels but kernel expects {in_c}")
    if h < k or win_w < k:
        raise ShapeError(f"conv input spatial extent {h}x{win_w} smaller than kernel {k}")
    oh = conv_out_extent(h, k, stride)
    ow = conv_out_extent(win_w, k, stride)
    cols = _im2col(x, k, stride)                       # (b, oh*ow, c*k*k)
    wmat = w.reshape(out_c, -1)
    out = cols @ wmat.T                                # (b, oh*ow, out_c)
    if params.biases is not None:
        out = out + params.biases
    out = out.transpose(0, 2, 1).reshape(b, out_c, oh, ow)
    cache = (cols, x.shape, w.shape, stride)
    return out, cache


def conv_backward(grad_out: np.ndarray, weights: np.ndarray, cache):
    """Gradients of conv_forward w.r.t. input, weights and biases."""
    cols, x_shape, w_shape, stride = cache
    out_c, in_c, k, _ = w_shape
    if grad_out.shape[1] != out_c:
        raise ShapeError(f"grad_out has {grad_out.shape[1]} channels, expected {out_c}")
    b, _, oh, ow = grad_out.shape
    g2 = grad_out.reshape(b, out_c, oh * ow).transpose(0, 2, 1)
    g2_flat = np.ascontiguousarray(g2).reshape(-1, out_c)
    grad_w = (g2_flat.T @ cols.reshape(-1, cols.shape[-1])).reshape(w_shape)
    grad_b = g2.sum(axis=(0, 1))
    grad_cols = g2 @ weights.reshape(out_c, -1)
    grad_x = _col2im(grad_cols, x_shape, k, stride)
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# Max pooling
# ---------------------------------------------------------------------------

def maxpool_forward(x: np.ndarray, pool: int, stride: int):
    """Max pooling; ties break to the first (row-major) position in the window.

    Returns (output, argmax) where argmax holds the within-window flat index of
    each winner, used for deterministic backward routing.
    """
    _require_4d(x, "maxpool input")
    b, c, h, w = x.shape
    if h < pool or w < pool:
        raise ShapeError(f"pool size {pool} larger than input {h}x{w}")
    win = _windows(x, pool, stride)                    # (b, c, oh, ow, p, p)
    oh, ow = win.shape[2], win.shape[3]
    flat = win.reshape(b, c, oh, ow, pool * pool)
    argmax = flat.argmax(axis=-1)                      # first max wins
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    return out, argmax


def maxpool_backward(argmax: np.ndarray, grad_out: np.ndarray,
                     input_shape: tuple, pool: int, stride: int) -> np.ndarray:
    """Route gradients to argmax positions; overlapping windows accumulate."""
    b, c, h, w = input_shape
    if grad_out.shape != argmax.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != pooled shape {argmax.shape}")
    _, _, oh, ow = argmax.shape
    rows = (np.arange(oh) * stride)[None, None, :, None] + argmax // pool
    cols = (np.arange(ow) * stride)[None, None, None, :] + argmax % pool
    if rows.max() >= h or cols.max() >= w:
        raise UsageError("argmax index out of bounds for the given input shape")
    gx = np.zeros(input_shape, dtype=grad_out.dtype)
    bi = np.arange(b)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    np.add.at(gx, (np.broadcast_to(bi, argmax.shape),
                   np.broadcast_to(ci, argmax.shape), rows, cols), grad_out)
    return gx


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------

def batchnorm_forward(x: np.ndarray, params: LayerParams, mode: str,
                      momentum: float = BN_MOMENTUM):
    """Per-channel batch normalization over (batch, height, width).

    Train mode normalizes with batch statistics (eps 1e-5) and returns updated
    running statistics via an exponential moving average; eval mode uses the
    stored running statistics. Returns (output, cache, running_mean, running_var).
    """
    _require_4d(x, "batchnorm input")
    gain = params.bn_gain.reshape(1, -1, 1, 1)
    bias = params.bn_bias.reshape(1, -1, 1, 1)
    if x.shape[1] != params.bn_gain.shape[0]:
        raise ShapeError(f"batchnorm expects {params.bn_gain.shape[0]} channels, got {x.shape[1]}")
    if mode == "train":
        if x.shape[0] < 2 and x.shape[2] * x.shape[3] < 2:
            raise UsageError("train-mode batch norm needs more than one value per channel")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var.reshape(1, -1, 1, 1) + BN_EPS)
        x_hat = (x - mean.reshape(1, -1, 1, 1)) * inv_std
        out = gain * x_hat + bias
        if params.bn_running_mean is None:
            run_mean, run_var = mean.copy(), var.copy()
        else:
            run_mean = (1 - momentum) * params.bn_running_mean + momentum * mean
            run_var = (1 - momentum) * params.bn_running_var + momentum * var
        cache = (x_hat, inv_std, params.bn_gain)
        return out, cache, run_mean, run_var
    if mode == "eval":
        if params.bn_running_mean is None or params.bn_running_var is None:
            raise UsageError("eval-mode batch norm called before running statistics exist")
        inv_std = 1.0 / np.sqrt(params.bn_running_var.reshape(1, -1, 1, 1) + BN_EPS)
        x_hat = (x - params.bn_running_mean.reshape(1, -1, 1, 1)) * inv_std
        out = gain * x_hat + bias
        return out, None, params.bn_running_mean, params.bn_running_var
    raise UsageError(f"unknown batchnorm mode {mode!r}")


def batchnorm_backward(grad_out: np.ndarray, cache):
    """Train-mode batch-norm gradients w.r.t. input, gain and bias."""
    if cache is None:
        raise UsageError("batchnorm_backward requires a train-mode forward cache")
    x_hat, inv_std, gain = cache
    if grad_out.shape != x_hat.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != input shape {x_hat.shape}")
    n = grad_out.shape[0] * grad_out.shape[2] * grad_out.shape[3]
    grad_gain = (grad_out * x_hat).sum(axis=(0, 2, 3))
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    g_hat = grad_out * gain.reshape(1, -1, 1, 1)
    sum_g = g_hat.sum(axis=(0, 2, 3), keepdims=True)
    sum_gx = (g_hat * x_hat).sum(axis=(0, 2, 3), keepdims=True)
    grad_x = inv_std / n * (n * g_hat - sum_g - x_hat * sum_gx)
    return grad_x, grad_gain, grad_bias


# ---------------------------------------------------------------------------
# ReLU
# ---------------------------------------------------------------------------

def relu(x: np.ndarray):
    out = np.maximum(x, 0.0)
    return out, x > 0


def relu_backward(grad_out: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return grad_out * mask


# ---------------------------------------------------------------------------
# Per-sample L2 normalization
# ---------------------------------------------------------------------------

def l2_normalize(x: np.ndarray):
    """Normalize each row of a (batch, dim) matrix to unit Euclidean norm."""
    if x.ndim != 2:
        raise ShapeError(f"l2_normalize expects (batch, dim), got shape {x.shape}")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms <= NORM_EPS):
        raise DegenerateInputError("near-zero vector cannot be normalized")
    out = x / norms
    return out, (out, norms)


def l2_normalize_backward(grad_out: np.ndarray, cache) -> np.ndarray:
    """Exact Jacobian-vector product of x -> x / ||x||."""
    y, norms = cache
    inner = (grad_out * y).sum(axis=1, keepdims=True)
    return (grad_out - y * inner) / norms
