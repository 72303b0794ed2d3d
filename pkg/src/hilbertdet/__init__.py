"""Hilbert-scan state-space detector with spectral attention.

A small, CPU-friendly detection stack built on a taped-autodiff tensor core:
Hilbert-curve scan orders feed selective state-space mixing, a hybrid
spatial/frequency block sharpens high-frequency content, and an anchor-free
multi-level head does the detecting. Everything is verified by independent
oracles (finite differences, closed forms, brute-force enumerations).
"""

from .config import ModelConfig, OptimConfig, RunConfig, load_config
from .detect import BBox, Detector, evaluate_detections
from .hilbert import ScanOrder, build_scan_order, locality_score
from .ssm import SSMParams, discretize_zoh, selective_scan, ss2d
from .tensor import NumericError, ShapeError, Tensor, no_grad
from .train import Adam, train

__all__ = [
    "Adam", "BBox", "Detector", "ModelConfig", "NumericError", "OptimConfig",
    "RunConfig", "SSMParams", "ScanOrder", "ShapeError", "Tensor",
    "build_scan_order", "discretize_zoh", "evaluate_detections",
    "load_config", "locality_score", "no_grad", "selective_scan", "ss2d",
    "train",
]
__version__ = "0.1.0"
