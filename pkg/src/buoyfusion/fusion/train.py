"""Optimizer, training loop, and frozen-model inference.

Two parameter groups: backbone at 0.1x the transformer rate, matching
the pretraining-style split used for the image stack. One step drop
late in the schedule. Everything is seeded; two runs with the same
seed produce bit-identical first-epoch losses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..assoc import FrameResult, GtPair, PredPair, evaluate
from ..camera import BoundingBox
from .loss import LAMBDA_GIOU, LAMBDA_L1, fusion_loss
from .model import FusionModel, make_ground_truth, make_query_batch


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; the run is unrecoverable."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    lr: float = 1e-4
    backbone_lr_mult: float = 0.1
    weight_decay: float = 1e-4
    lr_drop_fraction: float = 0.65
    lr_drop_factor: float = 0.1
    lambda_l1: float = LAMBDA_L1
    lambda_giou: float = LAMBDA_GIOU
    d_max: float = 1000.0
    iou_thresh: float = 0.5
    v_thresh: float = 0.5
    eval_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr <= 0 or self.lr_drop_factor <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 < self.lr_drop_fraction <= 1.0:
            raise ValueError("lr_drop_fraction must be in (0, 1]")


@dataclass(frozen=True)
class TrainSample:
    """One frame ready for batching.

    scene: [H, W, C] float array in [0, 1].
    queries: tuple of chart queries (BuoyQuery).
    boxes: marker_id -> normalized (cx, cy, w, h) for markers visible
           in the frame; ids absent from the dict train visibility 0.
    """

    scene: np.ndarray
    queries: tuple
    boxes: dict


def collate(samples, d_max: float):
    """Stack samples into (scenes, QueryBatch, GroundTruth)."""
    samples = list(samples)
    scenes = np.stack([np.asarray(s.scene, dtype=float) for s in samples])
    batch = make_query_batch([s.queries for s in samples], d_max)
    gt = make_ground_truth(batch, [s.boxes for s in samples])
    return scenes, batch, gt


class AdamW:
    """Adam with decoupled weight decay, one state slot per parameter."""

    def __init__(self, groups, weight_decay=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        # groups: list of (params, lr) with params a list of (name, Tensor)
        self.groups = [(list(params), float(lr)) for params, lr in groups]
        self.lr_scale = 1.0
        self.wd = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {}
        self._v = {}
        for params, _ in self.groups:
            for name, p in params:
                self._m[name] = np.zeros_like(p.data)
                self._v[name] = np.zeros_like(p.data)

    def zero_grad(self):
        for params, _ in self.groups:
            for _, p in params:
                p.zero_grad()

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for params, lr in self.groups:
            eff = lr * self.lr_scale
            for name, p in params:
                g = p.grad
                m = self._m[name]
                v = self._v[name]
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
                p.data -= eff * update + eff * self.wd * p.data


def make_optimizer(model: FusionModel, config: TrainConfig) -> AdamW:
    backbone = [(n, p) for n, p in model.params() if n.startswith("backbone.")]
    rest = [(n, p) for n, p in model.params() if not n.startswith("backbone.")]
    return AdamW(
        [(rest, config.lr), (backbone, config.lr * config.backbone_lr_mult)],
        weight_decay=config.weight_decay)


def infer(model: FusionModel, scene, queries, d_max: float, v_thresh: float = 0.5):
    """Frozen-model detection for one frame.

    Returns a list of (marker_id, BoundingBox, visibility) for queries
    whose predicted visibility clears v_thresh; box is normalized
    (cx, cy, w, h) with the visibility as its score.
    """
    queries = tuple(queries)
    if not queries:
        return []
    scenes = np.asarray(scene, dtype=float)[None]
    batch = make_query_batch([queries], d_max)
    pred = model.predict(scenes, batch)
    out = []
    for j, q in enumerate(queries):
        vis = float(pred.visibility[0, j])
        if vis >= v_thresh:
            cx, cy, w, h = (float(x) for x in pred.boxes[0, j])
            box = BoundingBox(c_x=cx, c_y=cy, w=w, h=h, score=vis, normalized=True)
            out.append((q.marker_id, box, vis))
    return out


def evaluate_model(model: FusionModel, samples, config: TrainConfig):
    """assoc.evaluate over the model's own per-frame detections."""
    frames = []
    for s in samples:
        preds = [
            PredPair(marker_id=mid, box=box, dist=_query_dist(s, mid))
            for mid, box, _ in infer(model, s.scene, s.queries, config.d_max,
                                     config.v_thresh)
        ]
        gts = []
        for q in s.queries:
            if q.marker_id in s.boxes:
                cx, cy, w, h = s.boxes[q.marker_id]
                gts.append(GtPair(
                    marker_id=q.marker_id,
                    box=BoundingBox(c_x=cx, c_y=cy, w=w, h=h, score=1.0,
                                    normalized=True),
                    dist=q.polar.dist))
        frames.append(FrameResult(preds=tuple(preds), gt=tuple(gts)))
    return evaluate(frames, iou_thresh=config.iou_thresh, d_max=config.d_max)


def _query_dist(sample: TrainSample, marker_id: str):
    for q in sample.queries:
        if q.marker_id == marker_id:
            return q.polar.dist
    return None


def train(model: FusionModel, samples, config: TrainConfig, log_path=None,
          eval_samples=None):
    """Run the full schedule; returns the per-epoch history list.

    Each history entry: epoch, loss, loss parts, and (on eval epochs)
    precision/recall/f1/mean_iou from assoc.evaluate.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("no training samples")
    eval_samples = samples if eval_samples is None else list(eval_samples)
    opt = make_optimizer(model, config)
    rng = np.random.default_rng(config.seed)
    drop_epoch = int(np.floor(config.epochs * config.lr_drop_fraction))
    history = []
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for epoch in range(config.epochs):
            opt.lr_scale = config.lr_drop_factor if epoch >= drop_epoch else 1.0
            order = rng.permutation(len(samples))
            total = 0.0
            parts_acc = {"bce": 0.0, "l1": 0.0, "giou": 0.0}
            n_batches = 0
            for start in range(0, len(order), config.batch_size):
                chunk = [samples[i] for i in order[start:start + config.batch_size]]
                scenes, batch, gt = collate(chunk, config.d_max)
                boxes, vis = model.forward(scenes, batch)
                loss, parts = fusion_loss(boxes, vis, batch, gt,
                                          lambda_l1=config.lambda_l1,
                                          lambda_giou=config.lambda_giou)
                if not np.isfinite(loss.data):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}: {parts}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item()
                for k in parts_acc:
                    parts_acc[k] += parts[k]
                n_batches += 1
            entry = {"epoch": epoch, "loss": total / n_batches,
                     "lr_scale": opt.lr_scale}
            for k, v in parts_acc.items():
                entry[k] = v / n_batches
            if config.eval_every and (epoch + 1) % config.eval_every == 0:
                report = evaluate_model(model, eval_samples, config)
                entry.update(precision=report.precision, recall=report.recall,
                             f1=report.f1, mean_iou=report.mean_iou)
            history.append(entry)
            if log_fh:
                log_fh.write(json.dumps(entry) + "\n")
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()
    return history
