"""The hybrid spatial-frequency attention block.

Two parallel enrichments of the incoming feature map: a multi-kernel
depthwise-convolution branch for spatial detail, and sigmoid-gated
DCT-filtered frequency bands. Original features, spatial features, and the
two gated bands concatenate into a 1x1 fusion convolution followed by GELU.
"""

from __future__ import annotations

import numpy as np

from .freq import FreqFilter, freq_attention, split_frequency_bands
from .module import Module
from .nnops import concat_channels, conv2d
from .tensor import ShapeError, Tensor

SPATIAL_KERNELS = (3, 5)


def _conv_init(rng: np.random.Generator, out_c: int, in_c: int, k: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(in_c * k * k)
    return rng.uniform(-bound, bound, size=(out_c, in_c, k, k))


class SpatialFrequencyBlock(Module):
    """Fuses spatial multi-kernel features with filtered frequency bands.

    Output shape equals input shape. Branch toggles replace the disabled
    branch with zero planes of the same shape, so the fusion convolution
    keeps its fan-in (5x the block width) across every ablation.
    """

    def __init__(self, channels: int, height: int, width: int,
                 rng: np.random.Generator,
                 use_spatial: bool = True, use_freq: bool = True):
        if height % 2 or width % 2:
            raise ShapeError(
                f"block resolution must have even extents, got {height}x{width}"
            )
        self.channels = channels
        self.height = height
        self.width = width
        self.use_spatial = use_spatial
        self.use_freq = use_freq
        for k in SPATIAL_KERNELS:
            setattr(self, f"dw{k}_w",
                    Tensor(_conv_init(rng, channels, 1, k), requires_grad=True))
            setattr(self, f"gamma{k}", Tensor(np.ones(()), requires_grad=True))
        self.freq_filter = FreqFilter.create(height, width)
        # concat of input, one spatial map per kernel, and the two gated bands
        fan_in = channels * (3 + len(SPATIAL_KERNELS))
        self.fuse_w = Tensor(_conv_init(rng, channels, fan_in, 1), requires_grad=True)
        self.fuse_b = Tensor(np.zeros(channels), requires_grad=True)

    def extra_parameter_groups(self):
        return (("freq", self.freq_filter.named()),)

    def spatial_branch(self, x: Tensor) -> Tensor:
        """Concat over kernel sizes of scale * depthwise_conv(x, k); channels double."""
        parts = []
        for k in SPATIAL_KERNELS:
            w = getattr(self, f"dw{k}_w")
            gamma = getattr(self, f"gamma{k}")
            parts.append(gamma * conv2d(x, w, stride=1, padding=k // 2,
                                        groups=self.channels))
        return concat_channels(parts)

    def __call__(self, x: Tensor) -> Tensor:
        B, C, H, W = x.data.shape
        if C != self.channels or (H, W) != (self.height, self.width):
            raise ShapeError(
                f"block built for {self.channels}x{self.height}x{self.width}, "
                f"got {C}x{H}x{W}"
            )
        if self.use_spatial:
            spatial = self.spatial_branch(x)
        else:
            spatial = Tensor(np.zeros((B, 2 * C, H, W)))
        if self.use_freq:
            q_high, q_low = freq_attention(split_frequency_bands(x), self.freq_filter)
            gated_high, gated_low = q_high.sigmoid(), q_low.sigmoid()
        else:
            gated_high = Tensor(np.zeros((B, C, H, W)))
            gated_low = Tensor(np.zeros((B, C, H, W)))
        stack = concat_channels([x, spatial, gated_high, gated_low])
        return conv2d(stack, self.fuse_w, self.fuse_b).gelu()
