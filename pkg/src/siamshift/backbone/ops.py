"""Differentiable operations.

Image ops accept a single ``[C, H, W]`` sample or a batch ``[N, C, H, W]``;
vector ops accept ``[n]`` or ``[N, n]``. A leading batch axis is carried
through unchanged.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError, DomainError
from .tensor import DTYPE, Parameter, Tensor, as_tensor, make_result

BCE_EPS = 1e-7
_SIG_LO = np.finfo(DTYPE).tiny
_SIG_HI = DTYPE(1.0) - np.finfo(DTYPE).epsneg


def _batched(x: Tensor, core_ndim: int, op: str) -> tuple[np.ndarray, bool]:
    if x.ndim == core_ndim:
        return x.data[None], False
    if x.ndim == core_ndim + 1:
        return x.data, True
    raise DimensionError(f"{op}: expected {core_ndim} or {core_ndim + 1} axes, got shape {x.shape}")


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, as in every CNN framework."""
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    xb, batched = _batched(x, 3, "conv2d")
    if stride < 1 or padding < 0:
        raise DomainError(f"conv2d: stride must be >= 1 and padding >= 0, got {stride}, {padding}")
    if kernel.ndim != 4:
        raise DimensionError(f"conv2d: kernel must have 4 axes, got shape {kernel.shape}")
    n, c_in, h, w = xb.shape
    c_out, kc, kh, kw = kernel.shape
    if kc != c_in:
        raise DimensionError(f"conv2d: channel axis mismatch, input has {c_in}, kernel expects {kc}")
    if bias.shape != (c_out,):
        raise DimensionError(f"conv2d: bias axis 0 must be {c_out}, got shape {bias.shape}")
    if kh > h + 2 * padding:
        raise DimensionError(f"conv2d: height axis too small ({h} + 2*{padding}) for kernel height {kh}")
    if kw > w + 2 * padding:
        raise DimensionError(f"conv2d: width axis too small ({w} + 2*{padding}) for kernel width {kw}")

    xp = np.pad(xb, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xb
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    # windows: [N, C, Ho, Wo, kh, kw]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c_in * kh * kw)
    kmat = kernel.data.reshape(c_out, -1)
    out = cols @ kmat.T + bias.data
    out = out.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)
    if not batched:
        out = out[0]

    def vjp(g):
        gb = g.reshape(n, c_out, ho, wo).transpose(0, 2, 3, 1).reshape(-1, c_out)
        gk = (gb.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        gbias = gb.sum(axis=0) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gb @ kmat).reshape(n, ho, wo, c_in, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            gx = gxp[:, :, padding:padding + h, padding:padding + w]
            if not batched:
                gx = gx[0]
        return gx, gk, gbias

    return make_result(out, "conv2d", (x, kernel, bias), vjp)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties go to the first element in row-major order."""
    x = as_tensor(x)
    xb, batched = _batched(x, 3, "maxpool2")
    n, c, h, w = xb.shape
    if h % 2:
        raise DimensionError(f"maxpool2: height axis must be even, got {h}")
    if w % 2:
        raise DimensionError(f"maxpool2: width axis must be even, got {w}")
    win = xb.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    if not batched:
        out = out[0]

    def vjp(g):
        g = g.reshape(n, c, h // 2, w // 2)
        gwin = np.zeros(win.shape, dtype=DTYPE)
        np.put_along_axis(gwin, arg[..., None], g[..., None], axis=-1)
        gx = gwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx if batched else gx[0],)

    return make_result(out, "maxpool2", (x,), vjp)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0), "relu", (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, clipped so the result stays strictly inside (0, 1)."""
    x = as_tensor(x)
    z = x.data
    e = np.exp(-np.abs(z))
    s = np.where(z >= 0, 1 / (1 + e), e / (1 + e)).astype(DTYPE)
    s = np.clip(s, _SIG_LO, _SIG_HI)
    return make_result(s, "sigmoid", (x,), lambda g: (g * s * (1 - s),))


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    xb, batched = _batched(x, 1, "fully_connected")
    if weight.ndim != 2:
        raise DimensionError(f"fully_connected: weight must have 2 axes, got shape {weight.shape}")
    m, n_in = weight.shape
    if xb.shape[1] != n_in:
        raise DimensionError(f"fully_connected: input axis has {xb.shape[1]} features, weight expects {n_in}")
    if bias.shape != (m,):
        raise DimensionError(f"fully_connected: bias axis 0 must be {m}, got shape {bias.shape}")
    out = xb @ weight.data.T + bias.data
    if not batched:
        out = out[0]

    def vjp(g):
        gb = g.reshape(-1, m)
        gx = gb @ weight.data if x.requires_grad else None
        if gx is not None and not batched:
            gx = gx[0]
        gw = gb.T @ xb if weight.requires_grad else None
        return gx, gw, (gb.sum(axis=0) if bias.requires_grad else None)

    return make_result(out, "fully_connected", (x, weight, bias), vjp)


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Join along the last axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != b.ndim or a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"concat: leading axes differ, {a.shape} vs {b.shape}")
    k = a.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)
    return make_result(out, "concat", (a, b), lambda g: (g[..., :k], g[..., k:]))


def subtract(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"subtract: shapes differ, {a.shape} vs {b.shape}")
    return make_result(a.data - b.data, "subtract", (a, b), lambda g: (g, -g))


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes differ, {a.shape} vs {b.shape}")
    return make_result(a.data + b.data, "add", (a, b), lambda g: (g, g))


def scale(x: Tensor, factor: float) -> Tensor:
    x = as_tensor(x)
    return make_result(x.data * DTYPE(factor), "scale", (x,), lambda g: (g * DTYPE(factor),))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from exc
    return make_result(out, "reshape", (x,), lambda g: (g.reshape(x.shape),))


def flatten(x: Tensor, batched: bool = True) -> Tensor:
    """Collapse all axes after the batch axis (or all axes when unbatched)."""
    x = as_tensor(x)
    return reshape(x, (x.shape[0], -1) if batched else (-1,))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    return make_result(x.data.sum(dtype=np.float64), "sum", (x,), lambda g: (np.broadcast_to(g, x.shape),))


def mean(x: Tensor) -> Tensor:
    x = as_tensor(x)
    n = x.size
    return make_result(
        x.data.mean(dtype=np.float64), "mean", (x,), lambda g: (np.broadcast_to(g / DTYPE(n), x.shape),)
    )


def bce_loss(pred: Tensor, target) -> Tensor:
    """Binary cross-entropy, averaged over all elements.

    ``pred`` is clamped to ``[BCE_EPS, 1 - BCE_EPS]`` before the logarithm.
    The clamp is treated as identity in the backward pass so saturated
    wrong predictions still receive a gradient.
    """
    pred = as_tensor(pred)
    t = np.asarray(target, dtype=DTYPE)
    if t.shape != pred.shape:
        if t.size == pred.size:
            t = t.reshape(pred.shape)
        else:
            raise DimensionError(f"bce_loss: target shape {t.shape} does not match prediction {pred.shape}")
    if not np.all((t == 0) | (t == 1)):
        raise DomainError("bce_loss: targets must be 0 or 1")
    p = np.clip(pred.data.astype(np.float64), BCE_EPS, 1 - BCE_EPS)
    losses = -(t * np.log(p) + (1 - t) * np.log1p(-p))
    n = max(pred.size, 1)

    def vjp(g):
        dp = (p - t) / (p * (1 - p)) / n
        return ((g * dp).astype(DTYPE),)

    return make_result(losses.mean(), "bce_loss", (pred,), vjp)


def l2_penalty(params: Iterable[Parameter], lam: float) -> Tensor:
    """``lam`` times the sum of squares of every weight; biases are skipped."""
    if lam < 0:
        raise DomainError(f"l2_penalty: lambda must be non-negative, got {lam}")
    weights = [p for p in params if getattr(p, "role", "weight") == "weight"]
    total = np.float64(0.0)
    for p in weights:
        total += np.sum(p.data.astype(np.float64) ** 2)
    factor = DTYPE(2 * lam)
    return make_result(lam * total, "l2_penalty", tuple(weights), lambda g: tuple(g * factor * p.data for p in weights))
