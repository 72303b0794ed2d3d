"""Effective receptive fields: input-gradient magnitude of a central unit.

The map is |d(center activation)/d(input pixel)| where the center activation
is the channel mean of the final stage feature at its central position,
normalized so the largest entry is exactly 1. Different scan variants produce
visibly different maps even before training.
"""

from __future__ import annotations

import numpy as np

from .detect import Detector
from .nnops import crop2d
from .tensor import Tensor


def erf_map(forward, image: np.ndarray) -> np.ndarray:
    """Gradient saliency grid for a (1, C, H, W) input array, scaled to [0, 1].

    forward maps a rank-4 Tensor to a rank-4 Tensor; pass a Detector's
    backbone-final closure or any callable (the identity map yields a single
    unit spike at the center pixel).
    """
    x = Tensor(np.asarray(image, dtype=np.float64), requires_grad=True)
    out = forward(x)
    Hc, Wc = out.data.shape[2] // 2, out.data.shape[3] // 2
    center = crop2d(out, Hc, Wc, 1, 1).mean()
    center.backward()
    grid = np.abs(x.grad[0]).sum(axis=0)
    peak = grid.max()
    return grid / peak if peak > 0 else grid


def backbone_final(model: Detector):
    """Forward closure returning the last backbone stage feature map."""
    return lambda x: model.backbone(x)[-1]


def erf_for_variant(variant: str, model_cfg, seed: int,
                    image: np.ndarray | None = None) -> np.ndarray:
    """Build an untrained model with the given scan variant and map its ERF."""
    from dataclasses import replace

    cfg = replace(model_cfg, scan_variant=variant)
    model = Detector(cfg, np.random.default_rng([abs(seed), 1]))
    if image is None:
        rng = np.random.default_rng([abs(seed), 7])
        image = rng.normal(0.0, 1.0,
                           size=(1, cfg.in_channels, cfg.image_size, cfg.image_size))
    return erf_map(backbone_final(model), image)


def write_pgm(path: str, grid: np.ndarray) -> None:
    """Portable graymap (P2 ASCII) of a [0, 1] grid."""
    levels = np.clip(np.round(grid * 255), 0, 255).astype(int)
    with open(path, "w") as f:
        f.write(f"P2\n{levels.shape[1]} {levels.shape[0]}\n255\n")
        for row in levels:
            f.write(" ".join(str(v) for v in row) + "\n")


def write_csv(path: str, grid: np.ndarray) -> None:
    np.savetxt(path, grid, delimiter=",", fmt="%.8f")
