"""Training and evaluation loops plus the Adam optimizer.

One run: build the dataset and model from a validated config, optimize the
detection loss with cosine-decayed Adam (decoupled weight decay), checkpoint
each epoch, and finish with a full AP/AR evaluation on the test split. The
metrics JSON written here is the single schema shared by train, eval and
ablate outputs.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict

import numpy as np

from .config import RunConfig
from .data import gen_dataset, hflip_scene
from .detect import (Detector, assign_targets, decode_detections,
                     evaluate_detections, total_loss)
from .module import save_checkpoint
from .tensor import NumericError, Tensor, no_grad

METRICS_SCHEMA = "hilbertdet-metrics-v1"


class Adam:
    """Adam with decoupled weight decay and optional global-norm clipping."""

    def __init__(self, params: dict, lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 clip_norm: float = 0.0):
        self.params = dict(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, lr_scale: float = 1.0):
        self.t += 1
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        if self.clip_norm > 0 and grads:
            total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if total > self.clip_norm:
                scale = self.clip_norm / (total + 1e-12)
                grads = {k: g * scale for k, g in grads.items()}
        lr_t = self.lr * lr_scale
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= lr_t * update

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def cosine_scale(step: int, total_steps: int, floor: float) -> float:
    if total_steps <= 1:
        return 1.0
    progress = min(step / (total_steps - 1), 1.0)
    return floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


def _batched(indices: np.ndarray, batch_size: int):
    for i in range(0, len(indices), batch_size):
        yield indices[i:i + batch_size]


def _stack_images(scenes) -> Tensor:
    return Tensor(np.stack([s.image for s in scenes], axis=0))


def predict_scenes(model: Detector, scenes, cfg: RunConfig,
                   batch_size: int = 8) -> list:
    """Decode per-image box lists for a scene list (no gradients)."""
    preds = []
    with no_grad():
        for i in range(0, len(scenes), batch_size):
            chunk = scenes[i:i + batch_size]
            outputs = model(_stack_images(chunk))
            preds.extend(decode_detections(
                outputs, model.geometry,
                score_thresh=cfg.score_thresh, nms_iou=cfg.nms_iou))
    return preds


def evaluate_model(model: Detector, scenes, cfg: RunConfig,
                   batch_size: int = 8) -> dict:
    """Decode and score a scene list; returns the AP/AR table."""
    preds = predict_scenes(model, scenes, cfg, batch_size=batch_size)
    return evaluate_detections(preds, [s.boxes for s in scenes])


def metrics_payload(command: str, cfg: RunConfig, metrics: dict,
                    history: list, param_count: int) -> dict:
    return {
        "schema": METRICS_SCHEMA,
        "command": command,
        "seed": cfg.seed,
        "config": asdict(cfg),
        "param_count": param_count,
        "metrics": metrics,
        "history": history,
    }


def train(cfg: RunConfig, log=None) -> dict:
    """Run one training job end to end; returns the metrics payload."""
    cfg.validate()
    out_dir = resolve_output_dir(cfg.output_dir)
    os.makedirs(out_dir, exist_ok=True)
    splits = gen_dataset(cfg.seed, cfg.dataset_size, cfg.model.image_size,
                         classes_by_type=cfg.classes_by_type)
    model = Detector(cfg.model, np.random.default_rng([abs(cfg.seed), 1]))
    opt = Adam(model.named_parameters(), lr=cfg.optimizer.lr,
               weight_decay=cfg.optimizer.weight_decay,
               beta1=cfg.optimizer.beta1, beta2=cfg.optimizer.beta2,
               eps=cfg.optimizer.eps, clip_norm=cfg.optimizer.clip_norm)
    train_scenes = splits["train"]
    steps_per_epoch = math.ceil(len(train_scenes) / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs

    history = []
    step = 0
    t0 = time.time()
    with open(os.path.join(out_dir, "steps.csv"), "w") as step_log:
        step_log.write("step,epoch,total,cls,reg,ctr\n")
        for epoch in range(1, cfg.epochs + 1):
            rng = np.random.default_rng([abs(cfg.seed), 2, epoch])
            order = rng.permutation(len(train_scenes))
            sums = {"total": 0.0, "cls": 0.0, "reg": 0.0, "ctr": 0.0}
            for batch_idx in _batched(order, cfg.batch_size):
                scenes = []
                for i in batch_idx:
                    s = train_scenes[i]
                    if cfg.augment_hflip and rng.random() < 0.5:
                        s = hflip_scene(s, cfg.model.image_size)
                    scenes.append(s)
                images = _stack_images(scenes)
                try:
                    outputs = model(images)
                    targets, n_pos = assign_targets(
                        [s.boxes for s in scenes], model.geometry,
                        cfg.model.num_classes)
                    loss = total_loss(outputs, targets, n_pos,
                                      reg_weight=cfg.model.reg_loss_weight,
                                      ctr_weight=cfg.model.ctr_loss_weight)
                    if not np.isfinite(loss.total.data).all():
                        raise NumericError("non-finite loss")
                except NumericError as exc:
                    dump = os.path.join(out_dir, "nan_dump.npz")
                    np.savez(dump, images=images.data, step=np.asarray(step),
                             epoch=np.asarray(epoch))
                    raise NumericError(
                        f"non-finite values at step {step} ({exc}); offending "
                        f"batch dumped to {dump}"
                    ) from exc
                opt.zero_grad()
                loss.total.backward()
                opt.step(lr_scale=cosine_scale(step, total_steps,
                                               cfg.optimizer.cosine_floor))
                for k in sums:
                    sums[k] += getattr(loss, k).item()
                step_log.write(f"{step},{epoch},{loss.total.item():.6f},"
                               f"{loss.cls.item():.6f},{loss.reg.item():.6f},"
                               f"{loss.ctr.item():.6f}\n")
                step += 1
            epoch_stats = {"epoch": epoch,
                           **{k: v / steps_per_epoch for k, v in sums.items()}}
            history.append(epoch_stats)
            save_checkpoint(os.path.join(out_dir, "checkpoint.npz"), model,
                            meta={"epoch": epoch, "seed": cfg.seed})
            if log:
                log(f"epoch {epoch}/{cfg.epochs} loss {epoch_stats['total']:.4f}")

    metrics = evaluate_model(model, splits["test"], cfg)
    payload = metrics_payload("train", cfg, metrics, history,
                              model.parameter_count())
    with open(os.path.join(out_dir, "metrics.json"), "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, "timing.txt"), "w") as f:
        f.write(f"wall_seconds={time.time() - t0:.1f}\n")
    return payload


def resolve_output_dir(path: str) -> str:
    """Paths resolve under the HILBERTDET_OUTPUT_ROOT environment variable."""
    root = os.environ.get("HILBERTDET_OUTPUT_ROOT", ".")
    return path if os.path.isabs(path) else os.path.join(root, path)
