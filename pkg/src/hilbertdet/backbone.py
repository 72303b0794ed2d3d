"""Four-stage backbone: stem, hybrid blocks, and gated state-space blocks.

Each stage halves the spatial extents (the stem quarters them) and widens the
channels. A stage optionally opens with a spatial-frequency block and then
stacks gated state-space blocks whose token mixer is the multi-directional
scan over the stage grid.
"""

from __future__ import annotations

import numpy as np

from .blocks import SpatialFrequencyBlock, _conv_init
from .hilbert import HILBERT_VARIANTS, build_scan_order
from .module import Module
from .nnops import conv2d, crop2d, layer_norm, pad2d, scalar_scale
from .ssm import SSMParams, selective_scan, ss2d
from .tensor import ShapeError, Tensor


def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


class StateSpaceBlock(Module):
    """Pre-norm gated block around the multi-directional selective scan.

    norm -> expand (ratio 2) -> depthwise 3x3 -> SiLU -> 2D scan mixing ->
    norm -> gate with SiLU(side branch) -> project -> scaled residual.
    Inputs whose grid is not a power-of-two square are zero-padded for the
    Hilbert variants and cropped back afterwards.
    """

    EXPAND = 2

    def __init__(self, channels: int, height: int, width: int, scan_variant: str,
                 state_dim: int, rng: np.random.Generator):
        self.channels = channels
        self.height = height
        self.width = width
        inner = self.EXPAND * channels
        if scan_variant in HILBERT_VARIANTS and (
                height != width or height & (height - 1)):
            side = _next_pow2(max(height, width))
            self.pad_to = side
            self.scan = build_scan_order(scan_variant, side, side)
        else:
            self.pad_to = None
            self.scan = build_scan_order(scan_variant, height, width)

        self.norm1_g = Tensor(np.ones(channels), requires_grad=True)
        self.norm1_b = Tensor(np.zeros(channels), requires_grad=True)
        self.expand_w = Tensor(_conv_init(rng, inner, channels, 1), requires_grad=True)
        self.expand_b = Tensor(np.zeros(inner), requires_grad=True)
        self.dw_w = Tensor(_conv_init(rng, inner, 1, 3), requires_grad=True)
        self.dw_b = Tensor(np.zeros(inner), requires_grad=True)
        self.ssm = [SSMParams.create(inner, state_dim, rng)
                    for _ in range(self.scan.n_paths)]
        self.norm2_g = Tensor(np.ones(inner), requires_grad=True)
        self.norm2_b = Tensor(np.zeros(inner), requires_grad=True)
        self.gate_w = Tensor(_conv_init(rng, inner, channels, 1), requires_grad=True)
        self.gate_b = Tensor(np.zeros(inner), requires_grad=True)
        self.proj_w = Tensor(_conv_init(rng, channels, inner, 1), requires_grad=True)
        self.proj_b = Tensor(np.zeros(channels), requires_grad=True)
        self.res_scale = Tensor(np.ones(()), requires_grad=True)
        self.scan_fn = selective_scan

    def extra_parameter_groups(self):
        return tuple((f"ssm{i}", p.named()) for i, p in enumerate(self.ssm))

    def __call__(self, x: Tensor) -> Tensor:
        B, C, H, W = x.data.shape
        if C != self.channels or (H, W) != (self.height, self.width):
            raise ShapeError(
                f"block built for {self.channels}x{self.height}x{self.width}, "
                f"got {C}x{H}x{W}"
            )
        n = layer_norm(x, self.norm1_g, self.norm1_b)
        a = conv2d(n, self.expand_w, self.expand_b)
        a = conv2d(a, self.dw_w, self.dw_b, padding=1,
                   groups=self.EXPAND * C).silu()
        if self.pad_to is not None:
            a = pad2d(a, 0, self.pad_to - H, 0, self.pad_to - W)
        a = ss2d(a, self.scan, self.ssm, scan_fn=self.scan_fn)
        if self.pad_to is not None:
            a = crop2d(a, 0, 0, H, W)
        a = layer_norm(a, self.norm2_g, self.norm2_b)
        gate = conv2d(n, self.gate_w, self.gate_b).silu()
        out = conv2d(a * gate, self.proj_w, self.proj_b)
        return x + scalar_scale(out, self.res_scale)


class Stage(Module):
    """Optional hybrid block followed by a stack of state-space blocks."""

    def __init__(self, channels: int, depth: int, height: int, width: int,
                 scan_variant: str, state_dim: int, rng: np.random.Generator,
                 use_hybrid: bool, use_freq: bool, use_spatial: bool):
        self.depth = depth
        if use_hybrid:
            self.hybrid = SpatialFrequencyBlock(
                channels, height, width, rng,
                use_spatial=use_spatial, use_freq=use_freq)
        else:
            self.hybrid = None
        for j in range(depth):
            self.register(f"block{j}", StateSpaceBlock(
                channels, height, width, scan_variant, state_dim, rng))

    def __call__(self, x: Tensor) -> Tensor:
        if self.hybrid is not None:
            x = self.hybrid(x)
        for j in range(self.depth):
            x = getattr(self, f"block{j}")(x)
        return x


class Backbone(Module):
    """Stem plus four stages; returns the four stage feature maps."""

    def __init__(self, cfg, rng: np.random.Generator):
        if cfg.image_size % (2 ** 6) != 0:
            raise ShapeError(
                f"image size {cfg.image_size} must be divisible by 64 so every "
                "pyramid level has integral extents"
            )
        widths = list(cfg.widths)
        if any(b < a for a, b in zip(widths, widths[1:])):
            raise ShapeError(f"stage widths must be non-decreasing, got {widths}")
        self.in_channels = cfg.in_channels
        self.widths = widths
        self.stem_w = Tensor(_conv_init(rng, widths[0], cfg.in_channels, 5),
                             requires_grad=True)
        self.stem_b = Tensor(np.zeros(widths[0]), requires_grad=True)
        side = cfg.image_size // 4
        for i in range(4):
            if i > 0:
                self.register(f"down{i}", _Downsample(widths[i - 1], widths[i], rng))
                side //= 2
            self.register(f"stage{i}", Stage(
                widths[i], cfg.depths[i], side, side, cfg.scan_variant,
                cfg.state_dim, rng,
                use_hybrid=cfg.use_hybrid, use_freq=cfg.use_freq_info,
                use_spatial=cfg.use_spatial))

    def __call__(self, image: Tensor) -> list[Tensor]:
        if image.data.ndim != 4 or image.data.shape[1] != self.in_channels:
            raise ShapeError(
                f"backbone expects (B, {self.in_channels}, H, W), got {image.shape}"
            )
        x = conv2d(image, self.stem_w, self.stem_b, stride=4, padding=2)
        feats = []
        for i in range(4):
            if i > 0:
                x = getattr(self, f"down{i}")(x)
            x = getattr(self, f"stage{i}")(x)
            feats.append(x)
        return feats


class _Downsample(Module):
    def __init__(self, in_c: int, out_c: int, rng: np.random.Generator):
        self.w = Tensor(_conv_init(rng, out_c, in_c, 3), requires_grad=True)
        self.b = Tensor(np.zeros(out_c), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, stride=2, padding=1)
