"""Synthetic detection scenes: textured backgrounds with boxed anomalies.

Each scene is a single-channel float image holding a smooth noise background
plus one to three inserted anomalies: low-frequency Gaussian blobs and
high-frequency speckle patches whose 2x2 block means vanish (so the pooled
low band literally cannot see them). Every ground-truth box is the exact
bounding rectangle of its anomaly patch. Scenes are reproducible from
(seed, index) alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detect import BBox, box_iou

BLOB, SPECKLE = "blob", "speckle"


@dataclass
class Scene:
    image: np.ndarray          # (1, H, W)
    boxes: list[BBox]
    kinds: list[str]
    seed: int
    index: int
    supports: list = None      # per box: (top, left, bool patch of nonzero cells)


def _bilinear_resize(plane: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    def axis_idx(n_in, n_out):
        coords = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        lo = np.clip(np.floor(coords).astype(int), 0, n_in - 1)
        hi = np.clip(lo + 1, 0, n_in - 1)
        return lo, hi, coords - np.floor(coords)

    rlo, rhi, rf = axis_idx(plane.shape[0], out_h)
    clo, chi, cf = axis_idx(plane.shape[1], out_w)
    rows = plane[rlo, :] + rf[:, None] * (plane[rhi, :] - plane[rlo, :])
    return rows[:, clo] + cf * (rows[:, chi] - rows[:, clo])


def _blob_patch(h: int, w: int, amp: float) -> np.ndarray:
    ys = np.arange(h) - (h - 1) / 2.0
    xs = np.arange(w) - (w - 1) / 2.0
    sy, sx = h / 4.0, w / 4.0
    return amp * np.exp(-0.5 * ((ys[:, None] / sy) ** 2 + (xs[None, :] / sx) ** 2))


def _speckle_patch(h: int, w: int, amp: float, rng: np.random.Generator) -> np.ndarray:
    # 1-pixel checkerboard scaled by a per-2x2-block magnitude: block means stay
    # exactly zero, so the anomaly lives purely in the high band.
    checker = ((np.add.outer(np.arange(h), np.arange(w)) % 2) * 2.0 - 1.0)
    mag = rng.uniform(0.6, 1.0, size=((h + 1) // 2, (w + 1) // 2))
    mag = np.repeat(np.repeat(mag, 2, axis=0), 2, axis=1)[:h, :w]
    return amp * checker * mag


def make_scene(seed: int, index: int, image_size: int,
               classes_by_type: bool = False) -> Scene:
    """Deterministic scene construction from (seed, index)."""
    rng = np.random.default_rng([abs(int(seed)), int(index)])
    H = W = image_size
    coarse = rng.normal(0.0, 0.12, size=(max(H // 8, 1), max(W // 8, 1)))
    img = _bilinear_resize(coarse, H, W) + rng.normal(0.0, 0.03, size=(H, W))

    n_anom = 0 if rng.random() < 0.08 else int(rng.integers(1, 4))
    boxes: list[BBox] = []
    kinds: list[str] = []
    supports: list = []
    min_side = max(6, image_size // 10)
    max_side = max(min_side + 2, image_size * 3 // 8)
    for _ in range(n_anom):
        for _attempt in range(40):
            h = int(rng.integers(min_side, max_side + 1))
            w = int(rng.integers(min_side, max_side + 1))
            top = int(rng.integers(1, H - h - 1))
            left = int(rng.integers(1, W - w - 1))
            cand = BBox(float(left), float(top), float(left + w), float(top + h))
            if all(box_iou(cand, b) < 0.02 for b in boxes):
                break
        else:
            continue
        kind = BLOB if rng.random() < 0.5 else SPECKLE
        amp = float(rng.uniform(0.55, 1.0))
        patch = (_blob_patch(h, w, amp) if kind == BLOB
                 else _speckle_patch(h, w, amp, rng))
        img[top:top + h, left:left + w] += patch
        cand.class_id = (1 if kind == BLOB else 2) if classes_by_type else 1
        boxes.append(cand)
        kinds.append(kind)
        supports.append((top, left, patch != 0.0))
    return Scene(image=img[None, :, :], boxes=boxes, kinds=kinds,
                 seed=seed, index=index, supports=supports)


def validate_scene(scene: Scene, image_size: int) -> None:
    """Reject degenerate or out-of-bounds ground truth."""
    for b in scene.boxes:
        if b.area <= 0:
            raise ValueError(f"zero-area box in scene {scene.index}")
        if not (0 <= b.x1 < b.x2 <= image_size and 0 <= b.y1 < b.y2 <= image_size):
            raise ValueError(
                f"box ({b.x1}, {b.y1}, {b.x2}, {b.y2}) escapes the "
                f"{image_size}px image in scene {scene.index}"
            )


def gen_dataset(seed: int, n: int, image_size: int,
                classes_by_type: bool = False) -> dict[str, list[Scene]]:
    """Deterministic train/test/val splits at 70/20/10 of n scenes."""
    if n < 10:
        raise ValueError(f"need at least 10 scenes to fill all splits, got {n}")
    if image_size % 64 != 0:
        raise ValueError(
            f"image_size must be divisible by 64 (pyramid strides), got {image_size}"
        )
    scenes = []
    for i in range(n):
        s = make_scene(seed, i, image_size, classes_by_type)
        validate_scene(s, image_size)
        scenes.append(s)
    n_train = int(n * 0.7)
    n_test = int(n * 0.2)
    return {
        "train": scenes[:n_train],
        "test": scenes[n_train:n_train + n_test],
        "val": scenes[n_train + n_test:],
    }


def hflip_scene(scene: Scene, image_size: int) -> Scene:
    """Horizontal mirror of image and boxes (training augmentation)."""
    flipped = scene.image[:, :, ::-1].copy()
    boxes = [BBox(image_size - b.x2, b.y1, image_size - b.x1, b.y2,
                  class_id=b.class_id, score=b.score) for b in scene.boxes]
    return Scene(image=flipped, boxes=boxes, kinds=list(scene.kinds),
                 seed=scene.seed, index=scene.index)
