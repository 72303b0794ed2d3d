"""Aggregated property suite: one machine-readable report over every layer.

Each case records (suite, case, status, measured, tolerance). The runner
returns the full report; any failed case should surface as a nonzero process
exit in the CLI. A deliberate corruption hook exists so the harness itself
can be tested: corrupt="dct-normalization" perturbs the DCT basis used by the
Parseval case, which must then fail.
"""

from __future__ import annotations

import numpy as np

from . import freq, hilbert, ssm
from .blocks import SpatialFrequencyBlock
from .backbone import StateSpaceBlock
from .data import gen_dataset
from .detect import (BBox, centerness_target, evaluate_detections, focal_loss,
                     iou_loss, nms)
from .gradcheck import finite_difference_check
from .nnops import avg_pool2d, bilinear_upsample2d, conv2d, plane_transform
from .tensor import Tensor, no_grad


def _case(report, suite, case, measured, tolerance, ok=None):
    if ok is None:
        ok = bool(measured <= tolerance)
    report.append({
        "suite": suite,
        "case": case,
        "status": "pass" if ok else "fail",
        "measured": float(measured),
        "tolerance": float(tolerance),
    })


def _tensor_suite(report):
    rng = np.random.default_rng(11)
    x = Tensor(rng.normal(size=(1, 2, 4, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2, 3, 3)) * 0.3, requires_grad=True)

    def f():
        return conv2d(x, w, padding=1).silu().sum()

    err = finite_difference_check(f, {"x": x, "w": w})
    _case(report, "tensor-autodiff", "conv-silu gradient vs finite differences",
          err, 1e-4)

    a, b = rng.normal(size=(1, 2, 4, 4)), rng.normal(size=(1, 2, 4, 4))
    with no_grad():
        lin = conv2d(Tensor(2.0 * a + 3.0 * b), w).data
        sep = 2.0 * conv2d(Tensor(a), w).data + 3.0 * conv2d(Tensor(b), w).data
    _case(report, "tensor-autodiff", "conv2d exact linearity",
          np.abs(lin - sep).max(), 1e-10)

    const = Tensor(np.full((1, 1, 4, 4), 0.37))
    with no_grad():
        back = bilinear_upsample2d(avg_pool2d(const), 2).data
    _case(report, "tensor-autodiff", "pool then upsample preserves constants",
          np.abs(back - 0.37).max(), 0.0)


def _hilbert_suite(report):
    ok = True
    for variant in hilbert.ALL_VARIANTS:
        order = hilbert.build_scan_order(variant, 8, 8)
        for p in order.paths:
            ok &= np.array_equal(np.sort(p), np.arange(64))
    _case(report, "hilbert-scan", "all variant paths are bijections",
          0.0 if ok else 1.0, 0.0, ok=ok)

    adjacent = True
    for n in range(1, 7):
        side = 1 << n
        cells = [hilbert.hilbert_d2xy(n, d) for d in range(side * side)]
        for (r0, c0), (r1, c1) in zip(cells, cells[1:]):
            adjacent &= abs(r0 - r1) + abs(c0 - c1) == 1
    _case(report, "hilbert-scan", "unit Manhattan steps up to order 6",
          0.0 if adjacent else 1.0, 0.0, ok=adjacent)

    raster = hilbert.locality_score(np.arange(16), 4, 4)
    _case(report, "hilbert-scan", "raster 4x4 locality anchor 2.5",
          abs(raster - 2.5), 0.0)
    dominance = True
    for n in range(2, 7):
        side = 1 << n
        h = hilbert.locality_score(
            hilbert.build_scan_order("hilbert-unidir", side, side).paths[0],
            side, side)
        r = hilbert.locality_score(np.arange(side * side), side, side)
        dominance &= h < r
    _case(report, "hilbert-scan", "hilbert rank gap below raster, n in 2..6",
          0.0 if dominance else 1.0, 0.0, ok=dominance)


def _ssm_suite(report):
    abar, bbar = ssm.discretize_zoh(1.0, -1.0, 1.0)
    err = max(abs(abar - np.exp(-1.0)), abs(bbar - (1.0 - np.exp(-1.0))))
    _case(report, "ssm-core", "scalar ZOH closed form", err, 1e-9)

    rng = np.random.default_rng(5)
    worst = 0.0
    stable = True
    for _ in range(50):
        n = int(rng.integers(1, 9))
        L = int(rng.integers(2, 65))
        a = -rng.uniform(0.05, 3.0, size=n)
        delta = float(rng.uniform(0.05, 1.5))
        abar, bbar = ssm.discretize_zoh(delta, a, rng.normal(size=n))
        stable &= bool(np.all((abar > 0) & (abar < 1)))
        c = rng.normal(size=n)
        u = rng.normal(size=L)
        y1 = ssm.ssm_recurrence(abar, bbar, c, u)
        y2 = ssm.apply_kernel(ssm.ssm_conv_kernel(abar, bbar, c, L), u)
        worst = max(worst, float(np.abs(y1 - y2).max()))
    _case(report, "ssm-core", "recurrence matches convolution kernel", worst, 1e-6)
    _case(report, "ssm-core", "discretized spectrum inside the unit interval",
          0.0 if stable else 1.0, 0.0, ok=stable)

    params = ssm.SSMParams.create(3, 4, np.random.default_rng(9))
    x = rng.normal(size=(1, 3, 10))
    with no_grad():
        base = ssm.selective_scan(Tensor(x), params).data
        bumped = x.copy()
        bumped[:, :, 6] += 1.0
        after = ssm.selective_scan(Tensor(bumped), params).data
    causal = np.abs(after[:, :, :6] - base[:, :, :6]).max()
    _case(report, "ssm-core", "causality under a late-token perturbation",
          causal, 0.0)


def _freq_suite(report, corrupt=None):
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(1, 1, 8, 8)))
    m = freq.dct_matrix(8).copy()
    if corrupt == "dct-normalization":
        m = m * 1.01
    with no_grad():
        coeffs = plane_transform(x, m, m)
        back = plane_transform(coeffs, m.T, m.T)
        rt = np.abs(back.data - x.data).max()
        energy_in = float((x.data ** 2).sum())
        energy_out = float((coeffs.data ** 2).sum())
    _case(report, "freq-sep", "DCT round trip", rt, 1e-6)
    _case(report, "freq-sep", "Parseval energy conservation",
          abs(energy_in - energy_out) / energy_in, 1e-6)

    y = Tensor(rng.normal(size=(2, 3, 8, 8)))
    with no_grad():
        bands = freq.split_frequency_bands(y)
        recon = bands.high + bilinear_upsample2d(bands.low, 2)
    _case(report, "freq-sep", "band reconstruction identity",
          np.abs(recon.data - y.data).max(), 1e-6)

    filt = freq.FreqFilter.create(8, 8)
    with no_grad():
        qh, ql = freq.freq_attention(bands, filt)
        up_low = bilinear_upsample2d(bands.low, 2)
    ident = max(np.abs(qh.data - bands.high.data).max(),
                np.abs(ql.data - up_low.data).max())
    _case(report, "freq-sep", "all-ones filter is the identity", ident, 1e-6)


def _hybrid_suite(report):
    rng = np.random.default_rng(21)
    block = SpatialFrequencyBlock(2, 4, 4, rng)
    x = Tensor(rng.normal(size=(2, 2, 4, 4)))
    with no_grad():
        out = block(x)
    _case(report, "hybrid-block", "shape contract",
          0.0 if out.data.shape == x.data.shape else 1.0, 0.0,
          ok=out.data.shape == x.data.shape)
    with no_grad():
        qh, ql = freq.freq_attention(freq.split_frequency_bands(x),
                                     block.freq_filter)
        gh, gl = qh.sigmoid().data, ql.sigmoid().data
    bounded = bool((gh > 0).all() and (gh < 1).all() and (gl > 0).all()
                   and (gl < 1).all())
    _case(report, "hybrid-block", "sigmoid gate strictly inside (0, 1)",
          0.0 if bounded else 1.0, 0.0, ok=bounded)


def _state_space_suite(report):
    rng = np.random.default_rng(17)
    block = StateSpaceBlock(2, 4, 4, "hilbert-bidir", 2, rng)
    block.proj_w.data[...] = 0.0
    block.proj_b.data[...] = 0.0
    x = Tensor(rng.normal(size=(1, 2, 4, 4)))
    with no_grad():
        out = block(x)
    _case(report, "state-space-block", "zeroed projection leaves the pure residual",
          np.abs(out.data - x.data).max(), 0.0)

    block2 = StateSpaceBlock(2, 4, 4, "hilbert-bidir", 2,
                             np.random.default_rng(17))
    with no_grad():
        a = block2(x).data
        b = block2(x).data
    _case(report, "state-space-block", "bitwise deterministic forward",
          np.abs(a - b).max(), 0.0)


def _detect_suite(report):
    # Boxes (0,0,2,2) vs (1,1,3,3) seen from the shared interior point (1.5, 1.5).
    pred = np.zeros((1, 4, 1, 1))
    tgt = np.zeros((1, 4, 1, 1))
    pred[0, :, 0, 0] = [1.5, 1.5, 0.5, 0.5]
    tgt[0, :, 0, 0] = [0.5, 0.5, 1.5, 1.5]
    with no_grad():
        li = iou_loss(Tensor(pred), tgt, np.ones((1, 1, 1, 1))).item()
    _case(report, "detect-fcos", "IoU loss ln 7 unit case",
          abs(li - np.log(7.0)), 1e-6)

    with no_grad():
        fl = focal_loss(Tensor(np.full((1, 1, 1, 1), 0.5)),
                        np.ones((1, 1, 1, 1))).item()
    _case(report, "detect-fcos", "focal loss 0.0433 unit case",
          abs(fl - (-0.25 * 0.25 * np.log(0.5))), 1e-6)

    _case(report, "detect-fcos", "centerness 0.5774 unit case",
          abs(centerness_target(1, 2, 3, 2) - np.sqrt(1.0 / 3.0)), 1e-6)

    gt = [[BBox(10, 10, 30, 30)]]
    hits = [[BBox(10, 10, 30, 22, score=0.9), BBox(18, 10, 38, 30, score=0.8)]]
    table5 = evaluate_detections(hits, gt, thresholds=(0.5,))
    table7 = evaluate_detections(hits, gt, thresholds=(0.7,))
    ok = table5["AP50"] == 1.0 and table7["AP70"] == 0.0
    _case(report, "detect-fcos", "hand-built PR curve at two thresholds",
          0.0 if ok else 1.0, 0.0, ok=ok)

    boxes = [BBox(0, 0, 10, 10, score=0.9), BBox(1, 1, 11, 11, score=0.8),
             BBox(40, 40, 50, 50, score=0.7)]
    once = nms(boxes, 0.5)
    twice = nms(once, 0.5)
    _case(report, "detect-fcos", "NMS idempotence",
          0.0 if once == twice else 1.0, 0.0, ok=once == twice)


def _harness_suite(report):
    a = gen_dataset(123, 12, 64)
    b = gen_dataset(123, 12, 64)
    same = all(np.array_equal(x.image, y.image)
               for x, y in zip(a["train"], b["train"]))
    _case(report, "harness-cli", "dataset bitwise reproducibility",
          0.0 if same else 1.0, 0.0, ok=same)
    sizes = (len(a["train"]), len(a["test"]), len(a["val"]))
    ok = sizes == (8, 2, 2)
    _case(report, "harness-cli", "split sizes follow 70/20/10",
          0.0 if ok else 1.0, 0.0, ok=ok)


def run_invariants(corrupt: str | None = None) -> list[dict]:
    """Execute every suite; returns the case report list."""
    report: list[dict] = []
    _tensor_suite(report)
    _hilbert_suite(report)
    _ssm_suite(report)
    _freq_suite(report, corrupt=corrupt)
    _hybrid_suite(report)
    _state_space_suite(report)
    _detect_suite(report)
    _harness_suite(report)
    return report
