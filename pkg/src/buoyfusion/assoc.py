"""Optimal detection-to-marker assignment and evaluation metrics.

hungarian() solves min-cost one-to-one assignment where +inf entries are
gated out.  Semantics: among assignments that use only finite entries,
maximize cardinality first, then minimize total cost (a bare cost
minimum would always be the empty assignment).  Realized by padding to
an n x n square, n = max(rows, cols): gated entries cost BIG, dummy
rows/columns cost 0.  BIG = sum(finite) + 1 exceeds any finite total,
so minimizing the padded cost minimizes the number of BIG edges used,
which is exactly maximizing finite cardinality.

Ties are broken toward the lowest (row, col) pairs in lexicographic
order: after the O(n^3) potentials solve we take the lexicographically
smallest perfect matching of the zero-reduced-cost subgraph (every
optimal assignment lies in it, and every perfect matching of it attains
the optimal dual value).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import BoundingBox, polar_to_body

DEFAULT_GATE_M = 100.0
DEFAULT_IOU_THRESH = 0.5
DEFAULT_BIN_WIDTH_M = 50.0


@dataclass(frozen=True)
class AssociationResult:
    """Injective assignment: each pred index / marker id used at most once."""

    pairs: tuple  # of (pred_index, marker_id, cost)
    unmatched_preds: tuple
    unmatched_markers: tuple

    @property
    def total_cost(self) -> float:
        return sum(c for _, _, c in self.pairs)


def _solve_square(a):
    """Shortest-augmenting-path assignment on a square all-finite matrix.

    a: list of row lists. Returns col_of_row. Plain lists on purpose:
    matrices here are small and numpy per-op overhead dominates.
    """
    n = len(a)
    inf = math.inf
    u = [0.0] * n
    v = [0.0] * (n + 1)  # index n = virtual start column
    p = [-1] * (n + 1)  # p[j] = row matched to column j
    for i in range(n):
        p[n] = i
        j0 = n
        minv = [inf] * n
        way = [n] * n
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            u0 = u[i0]
            row = a[i0]
            delta = inf
            j1 = -1
            for j in range(n):
                if used[j]:
                    continue
                cur = row[j] - u0 - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:  # strict: keeps lowest j on ties
                    delta = minv[j]
                    j1 = j
            for j in range(n):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            u[p[n]] += delta
            v[n] -= delta
            j0 = j1
            if p[j0] == -1:
                break
        while j0 != n:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = [-1] * n
    for j in range(n):
        col_of_row[p[j]] = j
    return col_of_row, u, v


def _max_matching(adj, n, banned_cols, start_row):
    """Kuhn's algorithm: size of a max matching over rows >= start_row."""
    match_col = {}
    def try_row(i, seen):
        for j in adj[i]:
            if j in banned_cols or j in seen:
                continue
            seen.add(j)
            if j not in match_col or try_row(match_col[j], seen):
                match_col[j] = i
                return True
        return False
    size = 0
    for i in range(start_row, n):
        if try_row(i, set()):
            size += 1
    return size


def _lex_min_perfect_matching(adj, n):
    """Lexicographically smallest perfect matching, rows in order."""
    used_cols = set()
    cols = [-1] * n
    for i in range(n):
        for j in adj[i]:
            if j in used_cols:
                continue
            used_cols.add(j)
            if _max_matching(adj, n, used_cols, i + 1) == n - i - 1:
                cols[i] = j
                break
            used_cols.discard(j)
        if cols[i] == -1:
            return None
    return cols


def hungarian(costs, marker_ids=None) -> AssociationResult:
    """Assign rows (preds) to columns (markers) at minimum total cost.

    costs: array-like, entries >= 0 or +inf (gated). marker_ids labels
    the columns; defaults to stringified column indices.
    """
    a = np.asarray(costs, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    rows, cols = a.shape
    if marker_ids is None:
        marker_ids = [str(j) for j in range(cols)]
    if len(marker_ids) != cols:
        raise ValueError("marker_ids length must equal column count")
    if np.isnan(a).any() or (a[np.isfinite(a)] < 0).any():
        raise ValueError("costs must be >= 0 or +inf")
    if rows == 0 or cols == 0:
        return AssociationResult(
            pairs=(), unmatched_preds=tuple(range(rows)), unmatched_markers=tuple(marker_ids))

    finite = np.isfinite(a)
    big = float(a[finite].sum()) + 1.0
    n = max(rows, cols)
    sq = np.zeros((n, n), dtype=np.float64)  # dummy rows/cols cost 0
    sq[:rows, :cols] = np.where(finite, a, big)
    sq_list = sq.tolist()
    col_of_row, u, v = _solve_square(sq_list)

    # canonical tie-break: lex-min perfect matching over tight edges
    tol = 1e-9 * max(1.0, big)
    adj = []
    for i in range(n):
        row = sq_list[i]
        ui = u[i]
        adj.append([j for j in range(n) if row[j] - ui - v[j] <= tol])
    canon = _lex_min_perfect_matching(adj, n)
    if canon is not None:
        col_of_row = canon

    pairs = []
    for i in range(rows):
        j = col_of_row[i]
        if j < cols and finite[i, j]:
            pairs.append((i, marker_ids[j], float(a[i, j])))
    matched_rows = {i for i, _, _ in pairs}
    matched_ids = {m for _, m, _ in pairs}
    return AssociationResult(
        pairs=tuple(pairs),
        unmatched_preds=tuple(i for i in range(rows) if i not in matched_rows),
        unmatched_markers=tuple(m for m in marker_ids if m not in matched_ids),
    )


def build_cost_matrix(preds, markers, gate: float = DEFAULT_GATE_M) -> np.ndarray:
    """Euclidean body-frame distances, entries beyond the gate set +inf."""
    if gate <= 0.0:
        raise ValueError("gate must be positive")
    out = np.zeros((len(preds), len(markers)), dtype=np.float64)
    marker_xy = [polar_to_body(q.polar.dist, q.polar.bearing) for q in markers]
    for i, p in enumerate(preds):
        for j, m in enumerate(marker_xy):
            d = math.hypot(p.x_b - m.x_b, p.y_b - m.y_b)
            out[i, j] = d if d <= gate else math.inf
    return out


def associate(preds, markers, gate: float = DEFAULT_GATE_M) -> AssociationResult:
    """build_cost_matrix + hungarian with marker ids attached."""
    costs = build_cost_matrix(preds, markers, gate)
    return hungarian(costs, marker_ids=[q.marker_id for q in markers])


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes in the same coordinate space."""
    if a.normalized != b.normalized:
        raise ValueError("boxes must share normalization")
    if (a.c_x, a.c_y, a.w, a.h) == (b.c_x, b.c_y, b.w, b.h):
        return 1.0
    ax0, ay0, ax1, ay1 = a.c_x - a.w / 2, a.c_y - a.h / 2, a.c_x + a.w / 2, a.c_y + a.h / 2
    bx0, by0, bx1, by1 = b.c_x - b.w / 2, b.c_y - b.h / 2, b.c_x + b.w / 2, b.c_y + b.h / 2
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return min(max(inter / union, 0.0), 1.0)


@dataclass(frozen=True)
class PredPair:
    """One predicted association; dist is the claimed marker's chart range."""

    marker_id: str
    box: BoundingBox
    dist: float | None = None


@dataclass(frozen=True)
class GtPair:
    marker_id: str
    box: BoundingBox
    dist: float = 0.0


@dataclass(frozen=True)
class FrameResult:
    preds: tuple
    gt: tuple


@dataclass(frozen=True)
class DistanceBin:
    lo_m: float
    hi_m: float
    f1: float
    support: int


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f1: float
    mean_iou: float
    per_distance_bins: tuple


def evaluate(
    frames,
    iou_thresh: float = DEFAULT_IOU_THRESH,
    bin_width: float = DEFAULT_BIN_WIDTH_M,
    d_max: float = 1000.0,
) -> EvalReport:
    """Score predicted associations against ground truth.

    TP requires both the correct marker id and box IoU >= iou_thresh
    against that marker's ground-truth box; at most one TP per marker
    per frame.  Bins attribute TP/FN by ground-truth distance and FP by
    the prediction's claimed chart distance.
    """
    if not 0.0 <= iou_thresh <= 1.0:
        raise ValueError("iou_thresh must be in [0, 1]")
    n_bins = max(1, math.ceil(d_max / bin_width))
    bin_tp = [0] * n_bins
    bin_fp = [0] * n_bins
    bin_fn = [0] * n_bins
    support = [0] * n_bins
    tp = fp = fn = 0
    iou_sum = 0.0

    def bin_index(dist):
        return min(int(dist // bin_width), n_bins - 1)

    for frame in frames:
        gt_by_id = {}
        for g in frame.gt:
            if g.marker_id in gt_by_id:
                raise ValueError(f"duplicate ground-truth marker {g.marker_id!r} in frame")
            gt_by_id[g.marker_id] = g
            support[bin_index(g.dist)] += 1
        claimed = set()
        for p in frame.preds:
            g = gt_by_id.get(p.marker_id)
            hit = (
                g is not None
                and p.marker_id not in claimed
                and box_iou(p.box, g.box) >= iou_thresh
            )
            if hit:
                tp += 1
                iou_sum += box_iou(p.box, g.box)
                claimed.add(p.marker_id)
                bin_tp[bin_index(g.dist)] += 1
            else:
                fp += 1
                d = p.dist if p.dist is not None else (g.dist if g is not None else None)
                if d is not None:
                    bin_fp[bin_index(d)] += 1
        for mid, g in gt_by_id.items():
            if mid not in claimed:
                fn += 1
                bin_fn[bin_index(g.dist)] += 1

    precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    bins = []
    for k in range(n_bins):
        denom = 2 * bin_tp[k] + bin_fp[k] + bin_fn[k]
        bins.append(DistanceBin(
            lo_m=k * bin_width,
            hi_m=min((k + 1) * bin_width, d_max) if k < n_bins - 1 else d_max,
            f1=2 * bin_tp[k] / denom if denom > 0 else 0.0,
            support=support[k],
        ))
    return EvalReport(
        precision=precision,
        recall=recall,
        f1=f1,
        mean_iou=iou_sum / tp if tp > 0 else 0.0,
        per_distance_bins=tuple(bins),
    )


def report_to_json(report: EvalReport) -> str:
    return json.dumps({
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "mean_iou": report.mean_iou,
        "per_distance_bins": [
            {"lo_m": b.lo_m, "hi_m": b.hi_m, "f1": b.f1, "support": b.support}
            for b in report.per_distance_bins
        ],
    }, indent=2)


def report_from_json(text: str) -> EvalReport:
    d = json.loads(text)
    return EvalReport(
        precision=d["precision"],
        recall=d["recall"],
        f1=d["f1"],
        mean_iou=d["mean_iou"],
        per_distance_bins=tuple(
            DistanceBin(b["lo_m"], b["hi_m"], b["f1"], b["support"])
            for b in d["per_distance_bins"]
        ),
    )


def bins_to_csv(report: EvalReport, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lo_m", "hi_m", "f1", "support"])
        for b in report.per_distance_bins:
            writer.writerow([b.lo_m, b.hi_m, repr(b.f1), b.support])
