"""Training objective: visibility BCE plus box L1 and GIoU terms.

Visibility is averaged over the real (non-padded) queries in the batch;
box terms are summed over visible queries only, unnormalized, so a
frame with more visible markers contributes proportionally more box
gradient.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, maximum, minimum
from .model import GroundTruth, QueryBatch

LAMBDA_L1 = 5.0
LAMBDA_GIOU = 2.0
PROB_EPS = 1e-7


def giou_pairs(pred: Tensor, gt: np.ndarray) -> Tensor:
    """Generalized IoU for aligned box pairs, (cx, cy, w, h) form.

    pred: Tensor [m, 4] with w, h > 0 (sigmoid outputs); gt: array [m, 4].
    Returns [m] in [-1, 1].
    """
    gt = np.asarray(gt, dtype=float)
    ax0 = pred[:, 0] - pred[:, 2] * 0.5
    ax1 = pred[:, 0] + pred[:, 2] * 0.5
    ay0 = pred[:, 1] - pred[:, 3] * 0.5
    ay1 = pred[:, 1] + pred[:, 3] * 0.5
    bx0 = gt[:, 0] - gt[:, 2] * 0.5
    bx1 = gt[:, 0] + gt[:, 2] * 0.5
    by0 = gt[:, 1] - gt[:, 3] * 0.5
    by1 = gt[:, 1] + gt[:, 3] * 0.5

    iw = maximum(minimum(ax1, bx1) - maximum(ax0, bx0), 0.0)
    ih = maximum(minimum(ay1, by1) - maximum(ay0, by0), 0.0)
    inter = iw * ih
    union = pred[:, 2] * pred[:, 3] + gt[:, 2] * gt[:, 3] - inter
    iou = inter / union
    # smallest enclosing box
    cw = maximum(ax1, bx1) - minimum(ax0, bx0)
    ch = maximum(ay1, by1) - minimum(ay0, by0)
    c_area = cw * ch
    return iou - (c_area - union) / c_area


def fusion_loss(pred_boxes: Tensor, pred_vis: Tensor, batch: QueryBatch,
                gt: GroundTruth, lambda_l1: float = LAMBDA_L1,
                lambda_giou: float = LAMBDA_GIOU):
    """Returns (loss Tensor scalar, parts dict of plain floats).

    Perturbing a predicted box whose target visibility is 0 cannot move
    the loss: only visible rows are gathered into the box terms.
    """
    mask = batch.mask
    vis = np.asarray(gt.visible, dtype=float)
    if vis.shape != mask.shape:
        raise ValueError(f"visible shape {vis.shape} != query mask shape {mask.shape}")
    if np.any((vis != 0.0) & (vis != 1.0)):
        raise ValueError("ground-truth visibility must be 0 or 1")
    if np.any(vis[~mask] != 0.0):
        raise ValueError("padded query slots cannot be visible")
    vismask = (vis == 1.0) & mask
    if np.any(~np.isfinite(gt.boxes[vismask])):
        raise ValueError("ground-truth box missing for a visible query")

    n_valid = int(mask.sum())
    if n_valid == 0:
        raise ValueError("batch has no real queries")
    p = pred_vis.clip(PROB_EPS, 1.0 - PROB_EPS)
    bce_all = -(vis * p.log() + (1.0 - vis) * (1.0 - p).log())
    bce = (bce_all * mask).sum() / float(n_valid)

    n_vis = int(vismask.sum())
    if n_vis > 0:
        pb = pred_boxes[vismask]
        gb = gt.boxes[vismask]
        l1 = (pb - gb).abs().sum()
        giou_sum = (1.0 - giou_pairs(pb, gb)).sum()
        loss = bce + lambda_l1 * l1 + lambda_giou * giou_sum
        parts = {"bce": bce.item(), "l1": l1.item(), "giou": giou_sum.item(),
                 "n_valid": n_valid, "n_visible": n_vis}
    else:
        loss = bce
        parts = {"bce": bce.item(), "l1": 0.0, "giou": 0.0,
                 "n_valid": n_valid, "n_visible": 0}
    parts["total"] = loss.item()
    return loss, parts
