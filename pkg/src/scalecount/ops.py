"""Neural network operations on 4-D tensors.

Convolution is stride-1 with zero padding chosen so spatial size is
preserved; dilation and channel groups follow the usual definitions (group j
of the outputs reads only group j of the inputs).  ``sum_pool`` reduces
resolution while conserving total mass, which is what keeps density-map
counts intact when aligning ground truth to the network's output stride.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, record

__all__ = [
    "ConvSpec",
    "conv2d",
    "max_pool2x2",
    "concat_channels",
    "slice_channels",
    "convex_mix",
    "sum_pool",
    "sum_pool_grid",
    "bilinear_resize",
    "resize_points",
]


@dataclass(frozen=True)
class ConvSpec:
    """Shape contract of one convolution layer.

    The effective receptive field of a single layer is
    ``(kernel_size - 1) * dilation + 1`` per side.
    """

    in_channels: int
    out_channels: int
    kernel_size: int = 3
    dilation: int = 1
    groups: int = 1

    def __post_init__(self) -> None:
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")
        if self.groups < 1:
            raise ValueError(f"groups must be >= 1, got {self.groups}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError(
                f"channels ({self.in_channels} -> {self.out_channels}) must divide "
                f"into {self.groups} groups"
            )

    @property
    def padding(self) -> int:
        return (self.kernel_size - 1) * self.dilation // 2

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (
            self.out_channels,
            self.in_channels // self.groups,
            self.kernel_size,
            self.kernel_size,
        )

    @property
    def bias_shape(self) -> tuple[int, int, int, int]:
        return (1, self.out_channels, 1, 1)


def _im2col(xp: np.ndarray, k: int, d: int, h: int, w: int) -> np.ndarray:
    n, c = xp.shape[:2]
    col = np.empty((n, c, k, k, h, w), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            col[:, :, i, j] = xp[:, :, i * d : i * d + h, j * d : j * d + w]
    return col


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, spec: ConvSpec) -> Tensor:
    """Stride-1, zero-padded, optionally dilated and grouped convolution."""
    n, cin, h, w = x.shape
    if cin != spec.in_channels:
        raise ShapeError(f"conv2d: input has {cin} channels, spec expects {spec.in_channels}")
    if weight.shape != spec.weight_shape:
        raise ShapeError(f"conv2d: weight shape {weight.shape} != {spec.weight_shape}")
    if bias.shape != spec.bias_shape:
        raise ShapeError(f"conv2d: bias shape {bias.shape} != {spec.bias_shape}")

    g = spec.groups
    cg = cin // g
    cout = spec.out_channels
    og = cout // g
    k = spec.kernel_size
    d = spec.dilation
    p = spec.padding
    hw = h * w

    wg = weight.values.reshape(g, og, cg * k * k)
    if k == 1:
        colg = x.values.reshape(n, g, cg, hw)
    else:
        xp = np.pad(x.values, ((0, 0), (0, 0), (p, p), (p, p)))
        colg = _im2col(xp, k, d, h, w).reshape(n, g, cg * k * k, hw)
    out = np.matmul(wg[None], colg).reshape(n, cout, h, w) + bias.values

    def backward(gout: np.ndarray):
        g4 = gout.reshape(n, g, og, hw)
        gw = np.matmul(g4, colg.transpose(0, 1, 3, 2)).sum(axis=0)
        gcol = np.matmul(wg.transpose(0, 2, 1)[None], g4)
        if k == 1:
            gx = gcol.reshape(n, cin, h, w)
        else:
            gc6 = gcol.reshape(n, cin, k, k, h, w)
            gxp = np.zeros((n, cin, h + 2 * p, w + 2 * p), dtype=np.float64)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i * d : i * d + h, j * d : j * d + w] += gc6[:, :, i, j]
            gx = gxp[:, :, p : p + h, p : p + w].copy()
        gb = gout.sum(axis=(0, 2, 3)).reshape(1, cout, 1, 1)
        return gx, gw.reshape(spec.weight_shape), gb

    return record("conv2d", (x, weight, bias), out, backward)


def max_pool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties route to the first maximum."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2x2 needs even spatial dims, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    windows = (
        x.values.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    )
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(gout: np.ndarray):
        gwin = np.zeros((n, c, h2, w2, 4), dtype=np.float64)
        np.put_along_axis(gwin, idx[..., None], gout[..., None], axis=-1)
        gx = (
            gwin.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        )
        return (gx,)

    return record("max_pool2x2", (x,), out, backward)


def concat_channels(parts: list[Tensor]) -> Tensor:
    """Concatenate along the channel axis; order preserved."""
    parts = tuple(parts)  # callers may mutate their list after the fact
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    n, _, h, w = parts[0].shape
    for t in parts[1:]:
        tn, _, th, tw = t.shape
        if (tn, th, tw) != (n, h, w):
            raise ShapeError(
                f"concat_channels: batch/spatial mismatch {t.shape} vs {parts[0].shape}"
            )
    widths = [t.shape[1] for t in parts]
    edges = np.cumsum([0] + widths)
    out = np.concatenate([t.values for t in parts], axis=1)

    def backward(gout: np.ndarray):
        return tuple(gout[:, edges[i] : edges[i + 1]] for i in range(len(parts)))

    return record("concat", parts, out, backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    """Take the channel band [start, stop); adjoint of concatenation."""
    n, c, h, w = x.shape
    if not (0 <= start < stop <= c):
        raise ShapeError(f"slice_channels: band [{start}, {stop}) out of range for {c} channels")

    def backward(gout: np.ndarray):
        gx = np.zeros((n, c, h, w), dtype=np.float64)
        gx[:, start:stop] = gout
        return (gx,)

    return record("slice", (x,), x.values[:, start:stop].copy(), backward)


def convex_mix(a: Tensor, b: Tensor, alpha: float) -> Tensor:
    """alpha * a + (1 - alpha) * b with alpha held constant in [0, 1]."""
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"convex_mix: alpha must be in [0, 1], got {alpha}")
    if a.shape != b.shape:
        raise ShapeError(f"convex_mix: shape mismatch {a.shape} vs {b.shape}")
    out = alpha * a.values + (1.0 - alpha) * b.values
    return record("convex_mix", (a, b), out, lambda g: (g * alpha, g * (1.0 - alpha)))


def sum_pool(x: Tensor, factor: int) -> Tensor:
    """Reduce each factor x factor block to its sum; total mass is preserved."""
    if factor < 1:
        raise ValueError(f"sum_pool: factor must be >= 1, got {factor}")
    n, c, h, w = x.shape
    if h % factor or w % factor:
        raise ShapeError(f"sum_pool: {h}x{w} not divisible by factor {factor}")
    h2, w2 = h // factor, w // factor
    out = x.values.reshape(n, c, h2, factor, w2, factor).sum(axis=(3, 5))

    def backward(gout: np.ndarray):
        return (np.repeat(np.repeat(gout, factor, axis=2), factor, axis=3),)

    return record("sum_pool", (x,), out, backward)


def sum_pool_grid(grid: np.ndarray, factor: int) -> np.ndarray:
    """sum_pool for plain arrays whose last two axes are spatial."""
    if factor < 1:
        raise ValueError(f"sum_pool_grid: factor must be >= 1, got {factor}")
    *lead, h, w = grid.shape
    if h % factor or w % factor:
        raise ShapeError(f"sum_pool_grid: {h}x{w} not divisible by factor {factor}")
    return grid.reshape(*lead, h // factor, factor, w // factor, factor).sum(axis=(-3, -1))


def bilinear_resize(image: np.ndarray, scale: float) -> np.ndarray:
    """Resize a 2-D grid by a linear scale in (0, 1]; output dims are
    round(scale * input dims) and must stay >= 8 per side."""
    if image.ndim != 2:
        raise ShapeError(f"bilinear_resize expects a 2-D grid, got shape {image.shape}")
    if not 0.0 < scale <= 1.0:
        raise ValueError(f"scale must be in (0, 1], got {scale}")
    h, w = image.shape
    oh = int(np.floor(h * scale + 0.5))
    ow = int(np.floor(w * scale + 0.5))
    if oh < 8 or ow < 8:
        raise ValueError(f"resize to {oh}x{ow} is below the 8-pixel minimum")
    if (oh, ow) == (h, w):
        return image.astype(np.float64, copy=True)

    def axis_weights(out_n: int, in_n: int):
        # Pixel centers: output center (i + 0.5) maps to input coordinates.
        src = (np.arange(out_n) + 0.5) * (in_n / out_n) - 0.5
        src = np.clip(src, 0.0, in_n - 1.0)
        i0 = np.floor(src).astype(np.int64)
        i0 = np.minimum(i0, in_n - 1)
        i1 = np.minimum(i0 + 1, in_n - 1)
        frac = src - i0
        return i0, i1, frac

    y0, y1, fy = axis_weights(oh, h)
    x0, x1, fx = axis_weights(ow, w)
    img = image.astype(np.float64, copy=False)
    top = img[np.ix_(y0, x0)] * (1.0 - fx) + img[np.ix_(y0, x1)] * fx
    bottom = img[np.ix_(y1, x0)] * (1.0 - fx) + img[np.ix_(y1, x1)] * fx
    return top * (1.0 - fy)[:, None] + bottom * fy[:, None]


def resize_points(points: np.ndarray, old_size: tuple[int, int], new_size: tuple[int, int]) -> np.ndarray:
    """Rescale (x, y) annotation points by the same factors as their image."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return pts.reshape(0, 2)
    ow, oh = old_size
    nw, nh = new_size
    out = pts.copy()
    out[:, 0] = np.clip(pts[:, 0] * (nw / ow), 0.0, np.nextafter(float(nw), 0.0))
    out[:, 1] = np.clip(pts[:, 1] * (nh / oh), 0.0, np.nextafter(float(nh), 0.0))
    return out
