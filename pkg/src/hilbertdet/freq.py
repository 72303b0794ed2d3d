"""Frequency-band separation and spectral attention.

The band split is pooling-based: the low band is the 2x2 block mean at half
resolution, the high band is the residual against its bilinear upsampling, so
high + upsample(low) reconstructs the input exactly. Each band is filtered in
the DCT domain by a learnable elementwise plane (initialized to ones, i.e. an
identity filter).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .nnops import avg_pool2d, bilinear_upsample2d, plane_transform
from .tensor import ShapeError, Tensor


@lru_cache(maxsize=32)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis: M[k, i] = s_k cos(pi (2i + 1) k / 2n)."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    m[0] *= np.sqrt(1.0 / n)
    m[1:] *= np.sqrt(2.0 / n)
    m.setflags(write=False)  # cached and shared; callers must copy to modify
    return m


def dct2(x: Tensor) -> Tensor:
    """Orthonormal 2D DCT of each (batch, channel) plane."""
    H, W = x.data.shape[2:]
    return plane_transform(x, dct_matrix(H), dct_matrix(W))


def idct2(x: Tensor) -> Tensor:
    """Inverse of dct2 (DCT-III with orthonormal scaling)."""
    H, W = x.data.shape[2:]
    return plane_transform(x, dct_matrix(H).T, dct_matrix(W).T)


@dataclass
class FreqBands:
    """Low band at half resolution plus the full-resolution residual."""

    low: Tensor
    high: Tensor


def split_frequency_bands(x: Tensor) -> FreqBands:
    """Pooling-based band split; requires even spatial extents.

    low = 2x2 block means, high = x - upsample(low). Constant inputs have an
    identically zero high band, and zero-blockmean perturbations never touch
    the low band.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"band split expects a rank-4 tensor, got {x.shape}")
    H, W = x.data.shape[2:]
    if H % 2 or W % 2:
        raise ShapeError(f"band split needs even extents, got {H}x{W}")
    low = avg_pool2d(x, 2, 2)
    high = x - bilinear_upsample2d(low, 2)
    return FreqBands(low=low, high=high)


@dataclass
class FreqFilter:
    """Learnable elementwise multipliers over DCT coefficients, one per band.

    Planes are shared across channels; all-ones planes make the filter an
    identity map on each band.
    """

    low_plane: Tensor    # (H/2, W/2)
    high_plane: Tensor   # (H, W)

    @classmethod
    def create(cls, H: int, W: int) -> "FreqFilter":
        if H % 2 or W % 2:
            raise ShapeError(f"filter needs even extents, got {H}x{W}")
        return cls(
            low_plane=Tensor(np.ones((H // 2, W // 2)), requires_grad=True),
            high_plane=Tensor(np.ones((H, W)), requires_grad=True),
        )

    def named(self) -> dict[str, Tensor]:
        return {"low_plane": self.low_plane, "high_plane": self.high_plane}


def freq_attention(bands: FreqBands, filters: FreqFilter) -> tuple[Tensor, Tensor]:
    """Filter each band in the DCT domain: idct2(plane * dct2(band)).

    The low band is filtered at its native half resolution and then
    bilinearly upsampled, so both returned tensors share the input's spatial
    extents. Returns (filtered_high, filtered_low_upsampled).
    """
    for plane, band, name in ((filters.high_plane, bands.high, "high"),
                              (filters.low_plane, bands.low, "low")):
        if plane.data.shape != band.data.shape[2:]:
            raise ShapeError(
                f"{name}-band filter plane {plane.data.shape} does not match "
                f"band extents {band.data.shape[2:]}"
            )
    q_high = idct2(filters.high_plane * dct2(bands.high))
    q_low = idct2(filters.low_plane * dct2(bands.low))
    return q_high, bilinear_upsample2d(q_low, 2)
