"""Neural-network operations on NCHW tensors."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import ContractError, DataError, DimensionError
from .tensor import Tensor, amax, as_tensor, tmean


def _out_size(n: int, k: int, stride: int, padding: int, dilation: int) -> int:
    span = dilation * (k - 1) + 1
    if n + 2 * padding < span:
        raise DimensionError(f"kernel span {span} does not fit input {n} with padding {padding}")
    return (n + 2 * padding - span) // stride + 1


def _pad2d(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    """Zero padding of the last two axes (faster than np.pad for this case)."""
    if not ph and not pw:
        return np.ascontiguousarray(x)
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * ph, w + 2 * pw))
    out[:, :, ph:ph + h, pw:pw + w] = x
    return out


def _windows(xp: np.ndarray, kh: int, kw: int, ho: int, wo: int,
             stride: int, dilation: int) -> np.ndarray:
    """Strided view of shape (N, C, kh, kw, ho, wo) over a padded input."""
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    return as_strided(xp, shape=(n, c, kh, kw, ho, wo),
                      strides=(sn, sc, sh * dilation, sw * dilation, sh * stride, sw * stride),
                      writeable=False)


def _tap_correlate(xp: np.ndarray, w: np.ndarray, ho: int, wo: int,
                   dilation: int) -> np.ndarray:
    """Stride-1 correlation as one matmul per kernel tap.

    With the rows of each padded channel laid end to end, the input seen by
    tap (i, j) is the flat buffer shifted by i*Wp + j, a strided view rather
    than an im2col copy. Outputs are computed on a grid Wp wide; the columns
    past ``wo`` straddle two rows and are dropped.
    """
    n, c, hp, wp = xp.shape
    k, _, kh, kw = w.shape
    span = (ho - 1) * wp + wo
    flat = xp.reshape(n, c, hp * wp)
    taps = w.transpose(2, 3, 0, 1).copy()
    out = np.zeros((n, k, ho * wp))
    acc = out[:, :, :span]
    for i in range(kh):
        for j in range(kw):
            off = dilation * (i * wp + j)
            acc += np.matmul(taps[i, j], flat[:, :, off:off + span])
    return out.reshape(n, k, ho, wp)[:, :, :, :wo]


def _tap_weight_grad(xp: np.ndarray, g: np.ndarray, kh: int, kw: int,
                     dilation: int) -> np.ndarray:
    n, c, hp, wp = xp.shape
    k, ho, wo = g.shape[1:]
    span = (ho - 1) * wp + wo
    gw = np.zeros((n, ho, wp, k))
    gw[:, :, :wo] = g.transpose(0, 2, 3, 1)
    gt = gw.reshape(n, ho * wp, k)[:, :span]
    flat = xp.reshape(n, c, hp * wp)
    dw = np.empty((kh, kw, c, k))
    for i in range(kh):
        for j in range(kw):
            off = dilation * (i * wp + j)
            dw[i, j] = np.matmul(flat[:, :, off:off + span], gt).sum(axis=0)
    return dw.transpose(3, 2, 0, 1)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, dilation: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding.

    Stride 1 uses per-tap matmuls on shifted views; strided convolutions use
    im2col + matmul.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError("conv2d expects input [N,C,H,W] and weight [K,C,kh,kw]")
    n, c, h, w = x.shape
    k, c2, kh, kw = weight.shape
    if c != c2:
        raise DimensionError(f"input has {c} channels, weight expects {c2}")
    if bias is not None and bias.shape != (k,):
        raise DimensionError(f"bias shape {bias.shape} != ({k},)")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ContractError("stride/dilation must be positive, padding non-negative")
    ho = _out_size(h, kh, stride, padding, dilation)
    wo = _out_size(w, kw, stride, padding, dilation)

    xp = _pad2d(x.data, padding, padding)
    padded_shape = xp.shape
    wmat = weight.data.reshape(k, -1)
    if stride == 1:
        cols = None
        out = np.ascontiguousarray(_tap_correlate(xp, weight.data, ho, wo, dilation))
    else:
        cols = _windows(xp, kh, kw, ho, wo, stride, dilation).reshape(n, c * kh * kw, ho * wo)
        out = np.matmul(wmat, cols).reshape(n, k, ho, wo)
    if bias is not None:
        out += bias.data[:, None, None]

    def backward(g):
        db = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        dw = dx = None
        if stride == 1:
            if weight.requires_grad:
                dw = _tap_weight_grad(xp, g, kh, kw, dilation)
            if x.requires_grad:
                # full correlation of g with the flipped kernel
                gp = _pad2d(g, dilation * (kh - 1), dilation * (kw - 1))
                wflip = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
                dx = _tap_correlate(gp, wflip, *padded_shape[2:], dilation)
        else:
            gm = g.reshape(n, k, ho * wo)
            if weight.requires_grad:
                dw = np.zeros((k, cols.shape[1]))
                for b in range(n):
                    dw += gm[b] @ cols[b].T
                dw = dw.reshape(weight.shape)
            if x.requires_grad:
                dcols = np.matmul(wmat.T, gm).reshape(n, c, kh, kw, ho, wo)
                dx = np.zeros(padded_shape)
                for i in range(kh):
                    r0 = i * dilation
                    for j in range(kw):
                        c0 = j * dilation
                        dx[:, :, r0:r0 + stride * (ho - 1) + 1:stride,
                           c0:c0 + stride * (wo - 1) + 1:stride] += dcols[:, :, i, j]
        if dx is not None and padding:
            dx = dx[:, :, padding:padding + h, padding:padding + w]
        return dx, dw, db

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward, "conv2d")


def max_pool2d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    stride = stride or kernel
    n, c, h, w = x.shape
    ho = _out_size(h, kernel, stride, 0, 1)
    wo = _out_size(w, kernel, stride, 0, 1)
    xd = np.ascontiguousarray(x.data)
    win = _windows(xd, kernel, kernel, ho, wo, stride, 1)
    flat = win.reshape(n, c, kernel * kernel, ho, wo)
    # argmax returns the first row-major maximum inside the window
    arg = np.argmax(flat, axis=2)
    out = np.take_along_axis(flat, arg[:, :, None], axis=2)[:, :, 0]

    def backward(g):
        dx = np.zeros_like(xd)
        ki, kj = np.divmod(arg, kernel)
        rows = ki + (np.arange(ho) * stride)[:, None]
        cols = kj + (np.arange(wo) * stride)[None, :]
        nn, cc = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
        np.add.at(dx, (nn[:, :, None, None], cc[:, :, None, None], rows, cols), g)
        return (dx,)

    return Tensor._from_op(out, (x,), backward, "max_pool2d")


def global_avg_pool(x: Tensor) -> Tensor:
    return tmean(x, axis=(2, 3), keepdims=True)


def global_max_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    return amax(x.reshape(n, c, h * w), axis=2, keepdims=True).reshape(n, c, 1, 1)


def channel_mean(x: Tensor) -> Tensor:
    return tmean(x, axis=1, keepdims=True)


def channel_max(x: Tensor) -> Tensor:
    return amax(x, axis=1, keepdims=True)


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Half-pixel bilinear interpolation weights (n_out x n_in), edge-clamped."""
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    n, c, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return x
    rh = resize_matrix(h, out_h)
    rw = resize_matrix(w, out_w)
    out = rh @ x.data @ rw.T

    def backward(g):
        return (rh.T @ g @ rw,)

    return Tensor._from_op(out, (x,), backward, "bilinear_resize")


def spatial_linear(x: Tensor, matrix, out_hw: tuple[int, int]) -> Tensor:
    """Apply a fixed (out_h*out_w, H*W) sparse/dense map to every channel."""
    n, c, h, w = x.shape
    if matrix.shape[1] != h * w:
        raise DimensionError(f"sampling matrix expects {matrix.shape[1]} pixels, got {h * w}")
    flat = x.data.reshape(n * c, h * w)
    out = np.asarray((matrix @ flat.T).T).reshape(n, c, *out_hw)
    mt = matrix.T.tocsr() if hasattr(matrix, "tocsr") else matrix.T

    def backward(g):
        gf = g.reshape(n * c, -1)
        return (np.asarray((mt @ gf.T).T).reshape(n, c, h, w),)

    return Tensor._from_op(out, (x,), backward, "spatial_linear")


def log_softmax(x: Tensor, axis: int = 1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def backward(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (x,), backward, "log_softmax")


def softmax(x: Tensor, axis: int = 1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (x,), backward, "softmax")


def cross_entropy(logits: Tensor, target: np.ndarray, axis: int = 1) -> Tensor:
    """Mean negative log-likelihood of integer ``target`` under softmax(logits)."""
    target = np.asarray(target)
    num_classes = logits.shape[axis]
    expected = logits.shape[:axis] + logits.shape[axis + 1:]
    if target.shape != expected:
        raise DimensionError(f"target shape {target.shape} != {expected}")
    if target.size and (target.min() < 0 or target.max() >= num_classes
                        or not np.issubdtype(target.dtype, np.integer)):
        raise DataError(f"target labels must be integers in [0, {num_classes})")
    z = logits.data - logits.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    logp = z - lse
    idx = np.expand_dims(target, axis)
    picked = np.take_along_axis(logp, idx, axis=axis)
    count = target.size
    loss = -picked.sum() / count

    def backward(g):
        d = np.exp(logp)
        np.put_along_axis(d, idx, np.take_along_axis(d, idx, axis=axis) - 1.0, axis=axis)
        return (d * (float(g) / count),)

    return Tensor._from_op(np.array(loss), (as_tensor(logits),), backward, "cross_entropy")
