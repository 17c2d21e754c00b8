"""Differentiable tensor operators with explicit forward and backward passes.

Each operator is a pure function ``op(x, ...) -> (out, cache)`` paired with
``op_backward(dout, cache) -> grads``. Caches hold exactly the forward values
the backward needs and are meant to be consumed once. Arrays are float32 in
training; float64 inputs are preserved so gradients can be checked against
central finite differences (see :mod:`patchcontrast.gradcheck`).

Summation order is fixed by the row-major numpy implementations below, which
keeps outputs bit-identical across runs on the same machine.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, StatsError

BN_EPS = 1e-5
L2_EPS = 1e-12


def _im2col(x_padded: np.ndarray, kernel: int, stride: int, h_out: int, w_out: int) -> np.ndarray:
    """Gather kernel windows into rows of shape (N*h_out*w_out, C*kernel*kernel)."""
    n, c, _, _ = x_padded.shape
    s0, s1, s2, s3 = x_padded.strides
    windows = np.lib.stride_tricks.as_strided(
        x_padded,
        shape=(n, c, h_out, w_out, kernel, kernel),
        strides=(s0, s1, s2 * stride, s3 * stride, s2, s3),
        writeable=False,
    )
    # (N, h_out, w_out, C, kh, kw) rows, contiguous copy for BLAS
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(n * h_out * w_out, c * kernel * kernel)


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1, padding: int = 0):
    """Cross-correlate NCHW input with OIKK weights.

    Output spatial extent is floor((H + 2*padding - K) / stride) + 1.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4D input and weights, got {x.shape} and {w.shape}")
    n, c, h, wid = x.shape
    o, i, kh, kw = w.shape
    if kh != kw:
        raise ShapeError(f"conv2d expects square kernels, got {kh}x{kw}")
    if c != i:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, weights expect {i}")
    if b.shape != (o,):
        raise ShapeError(f"conv2d bias shape expected ({o},), got {b.shape}")
    if h + 2 * padding < kh or wid + 2 * padding < kw:
        raise ShapeError(
            f"conv2d spatial extent {h}x{wid} with padding {padding} smaller than kernel {kh}"
        )
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (wid + 2 * padding - kw) // stride + 1
    if padding > 0:
        x_padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        x_padded = x
    cols = _im2col(x_padded, kh, stride, h_out, w_out)
    out = cols @ w.reshape(o, -1).T + b
    out = out.reshape(n, h_out, w_out, o).transpose(0, 3, 1, 2)
    cache = (cols, x.shape, w, stride, padding, h_out, w_out)
    return np.ascontiguousarray(out), cache


def conv2d_backward(dout: np.ndarray, cache):
    cols, x_shape, w, stride, padding, h_out, w_out = cache
    n, c, h, wid = x_shape
    o, _, kh, kw = w.shape
    dout_mat = dout.transpose(0, 2, 3, 1).reshape(-1, o)
    db = dout_mat.sum(axis=0)
    dw = (dout_mat.T @ cols).reshape(w.shape)
    dcols = dout_mat @ w.reshape(o, -1)
    dcols = dcols.reshape(n, h_out, w_out, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    dx_padded = np.zeros((n, c, h + 2 * padding, wid + 2 * padding), dtype=dout.dtype)
    for ki in range(kh):
        for kj in range(kw):
            dx_padded[:, :, ki : ki + stride * h_out : stride, kj : kj + stride * w_out : stride] += dcols[
                :, :, ki, kj, :, :
            ]
    if padding > 0:
        dx = dx_padded[:, :, padding : padding + h, padding : padding + wid]
    else:
        dx = dx_padded
    return np.ascontiguousarray(dx), dw, db


def maxpool2d(x: np.ndarray):
    """2x2 max pooling with stride 2 and floor semantics (odd rows/cols dropped)."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool2d needs spatial extent >= 2, got {h}x{w}")
    h_out, w_out = h // 2, w // 2
    cropped = x[:, :, : 2 * h_out, : 2 * w_out]
    windows = cropped.reshape(n, c, h_out, 2, w_out, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = windows.reshape(n, c, h_out, w_out, 4)
    argmax = flat.argmax(axis=-1)  # first max in row-major window order on ties
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    cache = (x.shape, argmax)
    return np.ascontiguousarray(out), cache


def maxpool2d_backward(dout: np.ndarray, cache):
    x_shape, argmax = cache
    n, c, h, w = x_shape
    h_out, w_out = h // 2, w // 2
    dflat = np.zeros((n, c, h_out, w_out, 4), dtype=dout.dtype)
    np.put_along_axis(dflat, argmax[..., None], dout[..., None], axis=-1)
    dcropped = dflat.reshape(n, c, h_out, w_out, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, :, : 2 * h_out, : 2 * w_out] = dcropped.reshape(n, c, 2 * h_out, 2 * w_out)
    return dx


def batchnorm2d(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = BN_EPS,
    batch_stats: tuple[np.ndarray, np.ndarray] | None = None,
    update_running: bool = True,
):
    """Per-channel batch normalization over (N, H, W) with affine scale/shift.

    Training mode normalizes by biased batch statistics and, when
    ``update_running`` is set, folds them into the running estimates in place:
    running <- (1 - momentum) * running + momentum * batch. ``batch_stats``
    lets a caller inject externally pooled statistics (synchronized-BN mode).
    Eval mode normalizes by the running estimates.
    """
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d expects NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm2d affine shape expected ({c},), got {gamma.shape}/{beta.shape}")
    if training:
        count = n * h * w
        if count < 2:
            raise StatsError(f"batchnorm2d training mode needs >= 2 elements per channel, got {count}")
        if batch_stats is None:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))  # biased
        else:
            mean, var = batch_stats
        if update_running:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * x_hat + beta[None, :, None, None]
    cache = (x_hat, gamma, inv_std, training, (mean, var))
    return out, cache


def batchnorm2d_backward(dout: np.ndarray, cache, shared_sums: tuple[np.ndarray, np.ndarray, int] | None = None):
    """Backward for batchnorm2d.

    ``shared_sums = (sum(dout), sum(dout * x_hat), count)`` lets synchronized-BN
    callers pool the two reduction terms across shards; by default they are
    computed from this call's tensors alone.
    """
    x_hat, gamma, inv_std, training, _ = cache
    n, c, h, w = dout.shape
    dgamma = (dout * x_hat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    if not training:
        dx = dout * (gamma * inv_std)[None, :, None, None]
        return dx, dgamma, dbeta
    if shared_sums is None:
        sum_dout, sum_dout_xhat, count = dbeta, dgamma, n * h * w
    else:
        sum_dout, sum_dout_xhat, count = shared_sums
    dx_hat = dout * gamma[None, :, None, None]
    mean_dout = (sum_dout * gamma) / count
    mean_dout_xhat = (sum_dout_xhat * gamma) / count
    dx = (dx_hat - mean_dout[None, :, None, None] - x_hat * mean_dout_xhat[None, :, None, None]) * inv_std[
        None, :, None, None
    ]
    return dx, dgamma, dbeta


def bn_backward_sums(dout: np.ndarray, cache) -> tuple[np.ndarray, np.ndarray, int]:
    """Per-shard reduction terms for synchronized-BN backward pooling."""
    x_hat, _, _, _, _ = cache
    n, _, h, w = dout.shape
    sum_dout = dout.sum(axis=(0, 2, 3))
    sum_dout_xhat = (dout * x_hat).sum(axis=(0, 2, 3))
    return sum_dout, sum_dout_xhat, n * h * w


def relu(x: np.ndarray):
    out = np.maximum(x, 0)
    return out, (x > 0)


def relu_backward(dout: np.ndarray, cache):
    return dout * cache


def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Affine map: (N, I) @ (I, O) + (O,)."""
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"dense expects 2D input and weights, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense inner extents differ: input {x.shape} vs weights {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"dense bias shape expected ({w.shape[1]},), got {b.shape}")
    out = x @ w + b
    return out, (x, w)


def dense_backward(dout: np.ndarray, cache):
    x, w = cache
    dx = dout @ w.T
    dw = x.T @ dout
    db = dout.sum(axis=0)
    return dx, dw, db


def global_avg_pool(x: np.ndarray):
    """Spatial mean per channel: NCHW -> (N, C)."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    out = x.mean(axis=(2, 3))
    return out, (x.shape,)


def global_avg_pool_backward(dout: np.ndarray, cache):
    (x_shape,) = cache
    n, c, h, w = x_shape
    return np.broadcast_to(dout[:, :, None, None] / (h * w), x_shape).astype(dout.dtype).copy()


def l2_normalize(x: np.ndarray, eps: float = L2_EPS):
    """Divide each row by max(||row||_2, eps)."""
    if x.ndim != 2:
        raise ShapeError(f"l2_normalize expects 2D input, got shape {x.shape}")
    norms = np.sqrt((x * x).sum(axis=1))
    denom = np.maximum(norms, eps)
    out = x / denom[:, None]
    return out, (out, norms, denom, eps)


def l2_normalize_backward(dout: np.ndarray, cache):
    z, norms, denom, eps = cache
    # rows above eps: dx = (dout - z * <dout, z>) / ||x||; clamped rows: dx = dout / eps
    proj = (dout * z).sum(axis=1, keepdims=True)
    dx = (dout - z * proj) / denom[:, None]
    clamped = norms < eps
    if np.any(clamped):
        dx[clamped] = dout[clamped] / eps
    return dx
