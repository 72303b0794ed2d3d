"""Structured tensor operations: convolution, pooling, resampling, norms.

All operations take and return rank-4 tensors laid out (batch, channel,
height, width) unless noted. Each registers a single tape node with a
hand-written adjoint; the test suite verifies every adjoint against central
finite differences.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, _record


def _require_rank(x: Tensor, rank: int, name: str):
    if x.data.ndim != rank:
        raise ShapeError(f"{name} expects a rank-{rank} tensor, got shape {x.shape}")


# ---------------------------------------------------------------------------
# convolution


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """2D cross-correlation with zero padding.

    w is (out_ch, in_ch // groups, kH, kW) with odd kH, kW. Output extents are
    floor((H + 2*pad - kH) / stride) + 1 and likewise for W.
    """
    _require_rank(x, 4, "conv2d input")
    _require_rank(w, 4, "conv2d weight")
    B, Cin, H, W = x.data.shape
    Cout, Cg, kH, kW = w.data.shape
    if kH % 2 == 0 or kW % 2 == 0:
        raise ShapeError(f"conv2d kernel extents must be odd, got {kH}x{kW}")
    if Cin % groups != 0 or Cout % groups != 0:
        raise ShapeError(f"channels ({Cin} in, {Cout} out) not divisible by groups={groups}")
    if Cg != Cin // groups:
        raise ShapeError(
            f"weight expects {Cg} channels per group but input provides "
            f"{Cin // groups} ({Cin} channels / {groups} groups)"
        )
    Ho = (H + 2 * padding - kH) // stride + 1
    Wo = (W + 2 * padding - kW) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise ShapeError(f"conv2d output would be empty for input {H}x{W}, kernel {kH}x{kW}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    if bias is not None and bias.data.shape != (Cout,):
        raise ShapeError(f"bias shape {bias.shape} does not match {Cout} output channels")

    depthwise = groups == Cin and Cg == 1
    if depthwise:
        # Accumulate over kernel offsets; each term is a strided full-plane product.
        wd = w.data.reshape(groups, Cout // groups, kH, kW)
        out = np.zeros((B, Cout, Ho, Wo))
        og = out.reshape(B, groups, Cout // groups, Ho, Wo)
        for i in range(kH):
            for j in range(kW):
                window = xp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride]
                og += wd[None, :, :, i, j, None, None] * window[:, :, None]
    elif groups == 1:
        patches = _window_view(xp, kH, kW, stride)
        cols = np.ascontiguousarray(patches).reshape(B, Cin * kH * kW, Ho * Wo)
        w2d = w.data.reshape(Cout, Cin * kH * kW)
        out = np.matmul(w2d, cols).reshape(B, Cout, Ho, Wo)
    else:
        patches = _window_view(xp, kH, kW, stride)
        pg = patches.reshape(B, groups, Cg, kH, kW, Ho, Wo)
        wg = w.data.reshape(groups, Cout // groups, Cg * kH * kW)
        out = np.empty((B, groups, Cout // groups, Ho * Wo))
        for gidx in range(groups):
            cols_g = pg[:, gidx].reshape(B, Cg * kH * kW, Ho * Wo)
            out[:, gidx] = np.matmul(wg[gidx], cols_g)
        out = out.reshape(B, Cout, Ho, Wo)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def bwd(g):
        db = None if bias is None else g.sum(axis=(0, 2, 3))
        dxp = np.zeros_like(xp)
        if depthwise:
            wd = w.data.reshape(groups, Cout // groups, kH, kW)
            gg = g.reshape(B, groups, Cout // groups, Ho, Wo)
            dw = np.empty((groups, Cout // groups, kH, kW))
            for i in range(kH):
                for j in range(kW):
                    window = xp[:, :, i:i + stride * Ho:stride,
                                j:j + stride * Wo:stride]
                    dw[:, :, i, j] = (gg * window[:, :, None]).sum(axis=(0, 3, 4))
                    dxp[:, :, i:i + stride * Ho:stride,
                        j:j + stride * Wo:stride] += (
                        wd[None, :, :, i, j, None, None] * gg).sum(axis=2)
            dw = dw.reshape(Cout, Cg, kH, kW)
        elif groups == 1:
            g2d = g.reshape(B, Cout, Ho * Wo)
            w2d = w.data.reshape(Cout, Cin * kH * kW)
            dw = np.matmul(g2d, cols.transpose(0, 2, 1)).sum(axis=0)
            dw = dw.reshape(Cout, Cin, kH, kW)
            dcols = np.matmul(w2d.T, g2d).reshape(B, Cin, kH, kW, Ho, Wo)
            for i in range(kH):
                for j in range(kW):
                    dxp[:, :, i:i + stride * Ho:stride,
                        j:j + stride * Wo:stride] += dcols[:, :, i, j]
        else:
            gg = g.reshape(B, groups, Cout // groups, Ho * Wo)
            wg = w.data.reshape(groups, Cout // groups, Cg * kH * kW)
            dw = np.empty((groups, Cout // groups, Cg * kH * kW))
            for gidx in range(groups):
                cols_g = pg[:, gidx].reshape(B, Cg * kH * kW, Ho * Wo)
                dw[gidx] = np.matmul(gg[:, gidx], cols_g.transpose(0, 2, 1)).sum(axis=0)
                dcols = np.matmul(wg[gidx].T, gg[:, gidx])
                dcols = dcols.reshape(B, Cg, kH, kW, Ho, Wo)
                lo, hi = gidx * Cg, (gidx + 1) * Cg
                for i in range(kH):
                    for j in range(kW):
                        dxp[:, lo:hi, i:i + stride * Ho:stride,
                            j:j + stride * Wo:stride] += dcols[:, :, i, j]
            dw = dw.reshape(Cout, Cg, kH, kW)
        dx = dxp[:, :, padding:padding + H, padding:padding + W] if padding else dxp
        return (dx, dw, db) if bias is not None else (dx, dw)

    parents = (x, w) if bias is None else (x, w, bias)
    return _record(out, parents, bwd)


def _window_view(xp: np.ndarray, kH: int, kW: int, stride: int) -> np.ndarray:
    B, C, Hp, Wp = xp.shape
    Ho = (Hp - kH) // stride + 1
    Wo = (Wp - kW) // stride + 1
    sb, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(B, C, kH, kW, Ho, Wo),
        strides=(sb, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )


# ---------------------------------------------------------------------------
# resampling


def avg_pool2d(x: Tensor, kernel: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping block mean; extents must divide by the kernel."""
    _require_rank(x, 4, "avg_pool2d input")
    if kernel != stride:
        raise ShapeError("avg_pool2d supports kernel == stride only")
    B, C, H, W = x.data.shape
    if H % kernel or W % kernel:
        raise ShapeError(f"avg_pool2d needs extents divisible by {kernel}, got {H}x{W}")
    Ho, Wo = H // kernel, W // kernel
    out = x.data.reshape(B, C, Ho, kernel, Wo, kernel).mean(axis=(3, 5))
    inv = 1.0 / (kernel * kernel)

    def bwd(g):
        gx = np.repeat(np.repeat(g, kernel, axis=2), kernel, axis=3)
        return (gx * inv,)

    return _record(out, (x,), bwd)


def _upsample_axis_indices(n_in: int, factor: int):
    """Source index pair and lerp fraction per output position, half-pixel centers."""
    coords = (np.arange(n_in * factor) + 0.5) / factor - 0.5
    lo = np.floor(coords).astype(np.int64)
    frac = coords - lo
    lo_c = np.clip(lo, 0, n_in - 1)
    hi_c = np.clip(lo + 1, 0, n_in - 1)
    return lo_c, hi_c, frac


def bilinear_upsample2d(x: Tensor, factor: int = 2) -> Tensor:
    """Bilinear upsampling with half-pixel alignment (align_corners false).

    Computed as nested lerps a + f*(b - a), so constant inputs reproduce the
    constant bitwise.
    """
    _require_rank(x, 4, "bilinear_upsample2d input")
    if not isinstance(factor, int) or factor < 1:
        raise ShapeError(f"upsample factor must be a positive integer, got {factor}")
    if factor == 1:
        return _record(x.data.copy(), (x,), lambda g: (g,))
    B, C, H, W = x.data.shape
    rlo, rhi, rf = _upsample_axis_indices(H, factor)
    clo, chi, cf = _upsample_axis_indices(W, factor)
    rf_col = rf[:, None]

    rows_lo = x.data[:, :, rlo, :]
    rows_hi = x.data[:, :, rhi, :]
    rows = rows_lo + rf_col * (rows_hi - rows_lo)     # (B, C, H*f, W)
    cols_lo = rows[:, :, :, clo]
    cols_hi = rows[:, :, :, chi]
    out = cols_lo + cf * (cols_hi - cols_lo)          # (B, C, H*f, W*f)

    def bwd(g):
        drows = np.zeros_like(rows)
        np.add.at(drows, (slice(None), slice(None), slice(None), clo), g * (1.0 - cf))
        np.add.at(drows, (slice(None), slice(None), slice(None), chi), g * cf)
        dx = np.zeros_like(x.data)
        np.add.at(dx, (slice(None), slice(None), rlo, slice(None)), drows * (1.0 - rf_col))
        np.add.at(dx, (slice(None), slice(None), rhi, slice(None)), drows * rf_col)
        return (dx,)

    return _record(out, (x,), bwd)


def nearest_upsample2d(x: Tensor, factor: int = 2) -> Tensor:
    _require_rank(x, 4, "nearest_upsample2d input")
    B, C, H, W = x.data.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def bwd(g):
        return (g.reshape(B, C, H, factor, W, factor).sum(axis=(3, 5)),)

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# normalization


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the channel axis per spatial position, then affine."""
    _require_rank(x, 4, "layer_norm input")
    if eps <= 0:
        raise ShapeError("layer_norm eps must be positive")
    C = x.data.shape[1]
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise ShapeError(f"affine parameters must have shape ({C},)")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def bwd(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * gamma.data[None, :, None, None]
        # Standard layer-norm adjoint, reduced over the channel axis.
        dx = inv / C * (
            C * dxhat
            - dxhat.sum(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return _record(out, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# linear maps


def seq_linear(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-token linear map on (batch, channel, length) sequences.

    w is (in_ch, out_ch); the map is applied to the channel vector at every
    sequence position.
    """
    _require_rank(x, 3, "seq_linear input")
    if w.data.ndim != 2 or w.data.shape[0] != x.data.shape[1]:
        raise ShapeError(
            f"weight {w.shape} incompatible with {x.data.shape[1]} input channels"
        )
    out = np.matmul(w.data.T, x.data)
    if bias is not None:
        if bias.data.shape != (w.data.shape[1],):
            raise ShapeError(f"bias shape {bias.shape} does not match output width")
        out = out + bias.data[None, :, None]

    def bwd(g):
        dx = np.matmul(w.data, g)
        dw = np.matmul(x.data, g.transpose(0, 2, 1)).sum(axis=0)
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2))

    parents = (x, w) if bias is None else (x, w, bias)
    return _record(out, parents, bwd)


def plane_transform(x: Tensor, left: np.ndarray, right: np.ndarray) -> Tensor:
    """y[b, c] = left @ x[b, c] @ right.T with constant matrices (e.g. DCT bases)."""
    _require_rank(x, 4, "plane_transform input")
    H, W = x.data.shape[2:]
    if left.shape[1] != H or right.shape[1] != W:
        raise ShapeError(
            f"transform matrices {left.shape}/{right.shape} do not fit plane {H}x{W}"
        )
    out = np.matmul(np.matmul(left, x.data), right.T)

    def bwd(g):
        # adjoint: left.T @ g @ right
        return (np.matmul(np.matmul(left.T, g), right),)

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# structure


def concat_channels(parts: list[Tensor]) -> Tensor:
    for p in parts:
        _require_rank(p, 4, "concat_channels input")
    base = parts[0].data.shape
    for p in parts[1:]:
        if p.data.shape[0] != base[0] or p.data.shape[2:] != base[2:]:
            raise ShapeError("concat_channels needs matching batch and spatial extents")
    sizes = [p.data.shape[1] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=1)
    edges = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(parts)))

    return _record(out, tuple(parts), bwd)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    _require_rank(x, 4, "slice_channels input")
    C = x.data.shape[1]
    if not 0 <= start < stop <= C:
        raise ShapeError(f"channel slice [{start}:{stop}] invalid for {C} channels")
    out = x.data[:, start:stop].copy()

    def bwd(g):
        dx = np.zeros_like(x.data)
        dx[:, start:stop] = g
        return (dx,)

    return _record(out, (x,), bwd)


def pad2d(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero padding of the spatial extents."""
    _require_rank(x, 4, "pad2d input")
    out = np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right)))
    H, W = x.data.shape[2:]

    def bwd(g):
        return (g[:, :, top:top + H, left:left + W],)

    return _record(out, (x,), bwd)


def crop2d(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    _require_rank(x, 4, "crop2d input")
    B, C, H, W = x.data.shape
    if top + height > H or left + width > W:
        raise ShapeError(f"crop {height}x{width}@({top},{left}) exceeds extents {H}x{W}")
    out = x.data[:, :, top:top + height, left:left + width].copy()

    def bwd(g):
        dx = np.zeros_like(x.data)
        dx[:, :, top:top + height, left:left + width] = g
        return (dx,)

    return _record(out, (x,), bwd)


def scalar_scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply by a learnable scalar (shape () or (1,))."""
    if s.data.size != 1:
        raise ShapeError(f"scale must be a single value, got shape {s.shape}")
    out = x.data * s.data.reshape(())

    def bwd(g):
        return (g * s.data.reshape(()),
                np.asarray((g * x.data).sum()).reshape(s.data.shape))

    return _record(out, (x, s), bwd)


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    _require_rank(x, 4, "add_channel_bias input")
    if b.data.shape != (x.data.shape[1],):
        raise ShapeError(f"bias shape {b.shape} does not match channels {x.data.shape[1]}")
    out = x.data + b.data[None, :, None, None]

    def bwd(g):
        return g, g.sum(axis=(0, 2, 3))

    return _record(out, (x, b), bwd)
