"""Hilbert space-filling curves, scan-order variants, and locality metrics.

A scan order is a set of traversal paths over an H x W grid; each path is a
permutation of flat row-major cell indices. Hilbert variants require square
power-of-two grids (callers pad, see the state-space block); raster variants
accept any extents.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor, _record

HILBERT_VARIANTS = (
    "hilbert-unidir",
    "hilbert-bidir",
    "hilbert-fourdir1",
    "hilbert-fourdir2",
    "hilbert-fourdir3",
)
RASTER_VARIANTS = ("raster-bidir", "cascade-fourdir")
ALL_VARIANTS = HILBERT_VARIANTS + RASTER_VARIANTS


def hilbert_d2xy(order: int, d: int) -> tuple[int, int]:
    """Map a curve rank to (row, col) on the 2^order square grid.

    Base orientation: order 1 visits (0,0), (0,1), (1,1), (1,0).
    """
    n = 1 << order
    if not 0 <= d < n * n:
        raise ValueError(f"rank {d} outside [0, {n * n}) for order {order}")
    x = y = 0
    t = d
    s = 1
    while s < n:
        rx = 1 & (t // 2)
        ry = 1 & (t ^ rx)
        if ry == 0:
            if rx == 1:
                x = s - 1 - x
                y = s - 1 - y
            x, y = y, x
        x += s * rx
        y += s * ry
        t //= 4
        s *= 2
    return x, y


def hilbert_xy2d(order: int, x: int, y: int) -> int:
    """Inverse of hilbert_d2xy."""
    n = 1 << order
    if not (0 <= x < n and 0 <= y < n):
        raise ValueError(f"cell ({x}, {y}) outside the {n}x{n} grid")
    d = 0
    s = n // 2
    while s > 0:
        rx = 1 if (x & s) > 0 else 0
        ry = 1 if (y & s) > 0 else 0
        d += s * s * ((3 * rx) ^ ry)
        if ry == 0:
            if rx == 1:
                x = s - 1 - x
                y = s - 1 - y
            x, y = y, x
        s //= 2
    return d


def _hilbert_path(side: int) -> np.ndarray:
    """Flat row-major indices in Hilbert traversal order for a side x side grid."""
    order = side.bit_length() - 1
    path = np.empty(side * side, dtype=np.int64)
    for d in range(side * side):
        r, c = hilbert_d2xy(order, d)
        path[d] = r * side + c
    return path


def _flip_cols(path: np.ndarray, H: int, W: int) -> np.ndarray:
    r, c = np.divmod(path, W)
    return r * W + (W - 1 - c)


def _flip_rows(path: np.ndarray, H: int, W: int) -> np.ndarray:
    r, c = np.divmod(path, W)
    return (H - 1 - r) * W + c


def _transpose(path: np.ndarray, H: int, W: int) -> np.ndarray:
    # Only meaningful on square grids; visits (c, r) when the base visits (r, c).
    r, c = np.divmod(path, W)
    return c * H + r


@dataclass
class ScanOrder:
    """A named set of traversal paths with precomputed inverses."""

    variant: str
    height: int
    width: int
    paths: list[np.ndarray]
    inverses: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.inverses:
            self.inverses = [np.argsort(p) for p in self.paths]

    @property
    def n_paths(self) -> int:
        return len(self.paths)


def build_scan_order(variant: str, H: int, W: int) -> ScanOrder:
    """Construct the traversal paths for one scan variant."""
    if variant not in ALL_VARIANTS:
        raise ValueError(f"unknown scan variant {variant!r}; known: {ALL_VARIANTS}")
    if variant in HILBERT_VARIANTS:
        if H != W or H & (H - 1) or H < 1:
            raise ShapeError(
                f"{variant} needs a square power-of-two grid, got {H}x{W}; "
                "pad the feature map to the next power of two before scanning"
            )
        fwd = _hilbert_path(H)
        rev = fwd[::-1].copy()
        if variant == "hilbert-unidir":
            paths = [fwd]
        elif variant == "hilbert-bidir":
            paths = [fwd, rev]
        elif variant == "hilbert-fourdir1":
            yflip = _flip_cols(fwd, H, W)
            paths = [fwd, rev, yflip, yflip[::-1].copy()]
        elif variant == "hilbert-fourdir2":
            trans = _transpose(fwd, H, W)
            paths = [fwd, rev, trans, trans[::-1].copy()]
        else:  # hilbert-fourdir3: one direction per grid symmetry
            paths = [fwd, _flip_rows(fwd, H, W), _flip_cols(fwd, H, W),
                     _transpose(fwd, H, W)]
    else:
        row_major = np.arange(H * W, dtype=np.int64)
        col_major = _transpose(row_major, H, W) if H == W else (
            np.arange(H * W, dtype=np.int64).reshape(H, W).T.reshape(-1))
        if variant == "raster-bidir":
            paths = [row_major, row_major[::-1].copy()]
        else:  # cascade-fourdir
            paths = [row_major, row_major[::-1].copy(),
                     col_major, col_major[::-1].copy()]
    return ScanOrder(variant=variant, height=H, width=W, paths=paths)


# ---------------------------------------------------------------------------
# applying scans to tensors


def apply_scan(x: Tensor, path: np.ndarray) -> Tensor:
    """Serialize (B, C, H, W) into (B, C, H*W) along a traversal path."""
    if x.data.ndim != 4:
        raise ShapeError(f"apply_scan expects a rank-4 tensor, got {x.shape}")
    B, C, H, W = x.data.shape
    if len(path) != H * W:
        raise ShapeError(f"path length {len(path)} does not cover a {H}x{W} grid")
    flat = x.data.reshape(B, C, H * W)
    out = flat[:, :, path]

    def bwd(g):
        dflat = np.empty_like(flat)
        dflat[:, :, path] = g
        return (dflat.reshape(B, C, H, W),)

    return _record(out, (x,), bwd)


def inverse_scan(seq: Tensor, path: np.ndarray, H: int, W: int) -> Tensor:
    """Place a (B, C, L) sequence back onto the grid; exact inverse of apply_scan."""
    if seq.data.ndim != 3:
        raise ShapeError(f"inverse_scan expects a rank-3 tensor, got {seq.shape}")
    B, C, L = seq.data.shape
    if len(path) != L or L != H * W:
        raise ShapeError(f"sequence length {L}, path {len(path)}, grid {H}x{W} disagree")
    flat = np.empty_like(seq.data)
    flat[:, :, path] = seq.data
    out = flat.reshape(B, C, H, W)

    def bwd(g):
        return (g.reshape(B, C, L)[:, :, path],)

    return _record(out, (seq,), bwd)


# ---------------------------------------------------------------------------
# locality metric


@dataclass
class LocalityReport:
    variant: str
    path_index: int
    height: int
    width: int
    mean_rank_gap: float


def locality_score(path: np.ndarray, H: int, W: int) -> float:
    """Mean rank gap over all 4-adjacent grid cell pairs.

    The gap between ranks r and s is measured on the scan ring,
    min(|r - s|, L - |r - s|), so the score is invariant to where the
    traversal starts. For row-major rasters both measures coincide (gaps are
    1 horizontally and W vertically, never above L/2).
    """
    if len(path) != H * W:
        raise ShapeError(f"path length {len(path)} does not cover a {H}x{W} grid")
    L = H * W
    rank = np.argsort(path).reshape(H, W)
    gaps = []
    if W > 1:
        gaps.append(np.abs(rank[:, 1:] - rank[:, :-1]).reshape(-1))
    if H > 1:
        gaps.append(np.abs(rank[1:, :] - rank[:-1, :]).reshape(-1))
    if not gaps:
        return 0.0
    g = np.concatenate(gaps)
    return float(np.minimum(g, L - g).mean())


def locality_report(variant: str, H: int, W: int) -> list[LocalityReport]:
    order = build_scan_order(variant, H, W)
    return [
        LocalityReport(variant, i, H, W, locality_score(p, H, W))
        for i, p in enumerate(order.paths)
    ]


def locality_csv(H: int, W: int, variants=ALL_VARIANTS) -> str:
    """One CSV row per (variant, path): variant, path_index, H, W, mean_rank_gap."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["variant", "path_index", "H", "W", "mean_rank_gap"])
    for v in variants:
        if v in HILBERT_VARIANTS and (H != W or H & (H - 1)):
            continue
        for rep in locality_report(v, H, W):
            writer.writerow([rep.variant, rep.path_index, rep.height, rep.width,
                             repr(rep.mean_rank_gap)])
    return buf.getvalue()
