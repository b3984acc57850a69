"""Assignment and metric tests.

The assignment oracle enumerates every permutation of the BIG-padded
square matrix (an independent route through the same reduction), so
optimality is checked against exhaustive search, not another solver.
"""

import itertools
import math
import time

import numpy as np
import pytest

from buoyfusion.assoc import (
    AssociationResult,
    EvalReport,
    FrameResult,
    GtPair,
    PredPair,
    associate,
    bins_to_csv,
    box_iou,
    build_cost_matrix,
    evaluate,
    hungarian,
    report_from_json,
    report_to_json,
)
from buoyfusion.camera import BoundingBox
from buoyfusion.chartdb import BuoyQuery
from buoyfusion.geo import BodyFramePoint, PolarOffset

_PERMS = {n: np.array(list(itertools.permutations(range(n))), dtype=np.intp) for n in range(1, 8)}


def brute_force(costs):
    """Exhaustive oracle: min padded total over all n! permutations.

    itertools.permutations yields in lexicographic order and rows are
    padded below the real ones, so the first argmin is also the
    lexicographically smallest assignment.
    """
    a = np.asarray(costs, dtype=np.float64)
    rows, cols = a.shape
    if rows == 0 or cols == 0:
        return (), 0.0
    finite = np.isfinite(a)
    big = float(a[finite].sum()) + 1.0
    n = max(rows, cols)
    sq = np.zeros((n, n))
    sq[:rows, :cols] = np.where(finite, a, big)
    perms = _PERMS[n]
    totals = sq[np.arange(n)[None, :], perms].sum(axis=1)
    best = perms[int(np.argmin(totals))]
    pairs = tuple(
        (i, int(best[i])) for i in range(rows) if best[i] < cols and finite[i, best[i]]
    )
    return pairs, float(sum(a[i, j] for i, j in pairs))


def pairs_of(result: AssociationResult):
    return tuple((i, int(m)) for i, m, _ in result.pairs)


class TestHungarianExamples:
    def test_two_by_two(self):
        res = hungarian([[1.0, 2.0], [2.0, 1.0]])
        assert pairs_of(res) == ((0, 0), (1, 1))
        assert res.total_cost == 2.0

    def test_single(self):
        res = hungarian([[5.0]])
        assert pairs_of(res) == ((0, 0),)

    def test_gating_forces_partial(self):
        inf = math.inf
        res = hungarian([[1.0, inf], [inf, inf]])
        assert pairs_of(res) == ((0, 0),)
        assert res.unmatched_preds == (1,)
        assert res.unmatched_markers == ("1",)

    def test_empty(self):
        res = hungarian(np.zeros((0, 3)))
        assert res.pairs == ()
        assert res.unmatched_markers == ("0", "1", "2")

    def test_prefers_cardinality_over_cost(self):
        # matching both rows costs 11, matching only row 0 would cost 1
        inf = math.inf
        res = hungarian([[1.0, inf], [10.0, inf]])
        assert pairs_of(res) == ((0, 0),)
        res = hungarian([[1.0, 5.0], [10.0, inf]])
        assert pairs_of(res) == ((0, 1), (1, 0))

    def test_lexicographic_tie_break(self):
        # all-equal costs: canonical answer is the identity
        res = hungarian(np.ones((3, 3)))
        assert pairs_of(res) == ((0, 0), (1, 1), (2, 2))

    def test_rejects_negative_and_nan(self):
        with pytest.raises(ValueError):
            hungarian([[-1.0]])
        with pytest.raises(ValueError):
            hungarian([[math.nan]])


class TestHungarianOracle:
    def test_10k_random_integer_matrices(self):
        rng = np.random.default_rng(1234)
        t0 = time.monotonic()
        for _ in range(10_000):
            rows = int(rng.integers(1, 8))
            cols = int(rng.integers(1, 8))
            a = rng.integers(0, 100, size=(rows, cols)).astype(np.float64)
            gate = rng.random(size=(rows, cols)) < 0.25
            a[gate] = math.inf
            res = hungarian(a)
            oracle_pairs, oracle_total = brute_force(a)
            assert pairs_of(res) == oracle_pairs
            assert res.total_cost == oracle_total  # integer costs: exact
        assert time.monotonic() - t0 < 30.0

    def test_continuous_matrices(self):
        rng = np.random.default_rng(99)
        for _ in range(1000):
            rows = int(rng.integers(1, 8))
            cols = int(rng.integers(1, 8))
            a = rng.random(size=(rows, cols)) * 500.0
            a[rng.random(size=(rows, cols)) < 0.2] = math.inf
            res = hungarian(a)
            oracle_pairs, oracle_total = brute_force(a)
            assert pairs_of(res) == oracle_pairs
            assert res.total_cost == pytest.approx(oracle_total, abs=1e-9)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            a = rng.random(size=(5, 6)) * 100.0
            a[rng.random(size=(5, 6)) < 0.2] = math.inf
            base = hungarian(a).total_cost
            pr = rng.permutation(5)
            pc = rng.permutation(6)
            shuffled = a[np.ix_(pr, pc)]
            assert hungarian(shuffled).total_cost == pytest.approx(base, abs=1e-9)


class TestBuildCostMatrix:
    def test_exact_match_zero_cost(self):
        preds = [BodyFramePoint(100.0, 0.0)]
        markers = [BuoyQuery("a", PolarOffset(100.0, 0.0))]
        costs = build_cost_matrix(preds, markers, gate=100.0)
        assert costs[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_gated_out(self):
        preds = [BodyFramePoint(100.0, 0.0)]
        markers = [BuoyQuery("a", PolarOffset(100.0, math.pi / 2.0))]
        costs = build_cost_matrix(preds, markers, gate=100.0)
        assert costs[0, 0] == math.inf
        wide = build_cost_matrix(preds, markers, gate=200.0)
        assert wide[0, 0] == pytest.approx(100.0 * math.sqrt(2.0))

    def test_empty_preds(self):
        costs = build_cost_matrix([], [BuoyQuery("a", PolarOffset(10.0, 0.0))])
        assert costs.shape == (0, 1)

    def test_bad_gate(self):
        with pytest.raises(ValueError):
            build_cost_matrix([], [], gate=0.0)

    def test_associate_ids(self):
        preds = [BodyFramePoint(100.0, 0.0), BodyFramePoint(200.0, 5.0)]
        markers = [
            BuoyQuery("far", PolarOffset(201.0, 0.02)),
            BuoyQuery("near", PolarOffset(99.0, 0.0)),
        ]
        res = associate(preds, markers, gate=50.0)
        assert {(i, m) for i, m, _ in res.pairs} == {(0, "near"), (1, "far")}


class TestBoxIou:
    def test_identical(self):
        b = BoundingBox(c_x=0.5, c_y=0.5, w=0.2, h=0.2, normalized=True)
        assert box_iou(b, b) == 1.0

    def test_disjoint(self):
        a = BoundingBox(c_x=0.2, c_y=0.2, w=0.1, h=0.1, normalized=True)
        b = BoundingBox(c_x=0.8, c_y=0.8, w=0.1, h=0.1, normalized=True)
        assert box_iou(a, b) == 0.0

    def test_half_width_shift(self):
        a = BoundingBox(c_x=100.0, c_y=100.0, w=10.0, h=10.0)
        b = BoundingBox(c_x=105.0, c_y=100.0, w=10.0, h=10.0)
        assert box_iou(a, b) == pytest.approx(1.0 / 3.0)

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            cx, cy, w, h = rng.uniform(0.2, 0.8, 4)
            a = BoundingBox(c_x=float(cx), c_y=float(cy), w=float(w) * 0.2 + 0.01,
                            h=float(h) * 0.2 + 0.01, normalized=True)
            cx, cy, w, h = rng.uniform(0.2, 0.8, 4)
            b = BoundingBox(c_x=float(cx), c_y=float(cy), w=float(w) * 0.2 + 0.01,
                            h=float(h) * 0.2 + 0.01, normalized=True)
            iou = box_iou(a, b)
            assert iou == box_iou(b, a)
            assert 0.0 <= iou <= 1.0

    def test_mixed_normalization_rejected(self):
        a = BoundingBox(c_x=0.5, c_y=0.5, w=0.1, h=0.1, normalized=True)
        b = BoundingBox(c_x=100.0, c_y=100.0, w=10.0, h=10.0)
        with pytest.raises(ValueError):
            box_iou(a, b)


def nbox(cx, cy=0.5, w=0.1, h=0.1):
    return BoundingBox(c_x=cx, c_y=cy, w=w, h=h, normalized=True)


class TestEvaluate:
    def test_perfect(self):
        gt = (GtPair("a", nbox(0.3), 120.0), GtPair("b", nbox(0.7), 480.0))
        preds = tuple(PredPair(g.marker_id, g.box, g.dist) for g in gt)
        rep = evaluate([FrameResult(preds=preds, gt=gt)])
        assert rep.precision == rep.recall == rep.f1 == 1.0
        assert rep.mean_iou == 1.0

    def test_two_of_three_plus_one_wrong(self):
        gt = (
            GtPair("a", nbox(0.2), 60.0),
            GtPair("b", nbox(0.5), 60.0),
            GtPair("c", nbox(0.8), 60.0),
        )
        preds = (
            PredPair("a", nbox(0.2), 60.0),
            PredPair("b", nbox(0.5), 60.0),
            PredPair("z", nbox(0.9), 60.0),
        )
        rep = evaluate([FrameResult(preds=preds, gt=gt)])
        assert rep.precision == pytest.approx(2.0 / 3.0)
        assert rep.recall == pytest.approx(2.0 / 3.0)
        assert rep.f1 == pytest.approx(2.0 / 3.0)

    def test_no_predictions(self):
        gt = (GtPair("a", nbox(0.3), 120.0),)
        rep = evaluate([FrameResult(preds=(), gt=gt)])
        assert rep.precision == 0.0 and rep.recall == 0.0 and rep.f1 == 0.0

    def test_low_iou_is_fp_and_fn(self):
        gt = (GtPair("a", nbox(0.3), 120.0),)
        preds = (PredPair("a", nbox(0.6), 120.0),)
        rep = evaluate([FrameResult(preds=preds, gt=gt)])
        assert rep.precision == 0.0 and rep.recall == 0.0

    def test_duplicate_gt_marker_rejected(self):
        gt = (GtPair("a", nbox(0.3), 10.0), GtPair("a", nbox(0.6), 20.0))
        with pytest.raises(ValueError):
            evaluate([FrameResult(preds=(), gt=gt)])

    def test_duplicate_pred_counts_once(self):
        gt = (GtPair("a", nbox(0.3), 120.0),)
        preds = (PredPair("a", nbox(0.3), 120.0), PredPair("a", nbox(0.3), 120.0))
        rep = evaluate([FrameResult(preds=preds, gt=gt)])
        assert rep.recall == 1.0
        assert rep.precision == pytest.approx(0.5)

    def test_distance_bins(self):
        gt = (GtPair("a", nbox(0.3), 20.0), GtPair("b", nbox(0.7), 180.0))
        preds = (PredPair("a", nbox(0.3), 20.0),)
        rep = evaluate([FrameResult(preds=preds, gt=gt)], bin_width=50.0, d_max=200.0)
        assert len(rep.per_distance_bins) == 4
        assert rep.per_distance_bins[0].f1 == 1.0
        assert rep.per_distance_bins[0].support == 1
        assert rep.per_distance_bins[3].f1 == 0.0  # the miss at 180 m
        assert rep.per_distance_bins[3].support == 1

    def test_adding_tp_never_lowers_f1(self):
        gt = [GtPair(f"m{i}", nbox(0.05 + 0.09 * i), 30.0 * i) for i in range(10)]
        preds = [PredPair("m0", nbox(0.05), 0.0), PredPair("zz", nbox(0.95), 10.0)]
        prev = evaluate([FrameResult(preds=tuple(preds), gt=tuple(gt))]).f1
        for i in range(1, 10):
            preds.append(PredPair(f"m{i}", nbox(0.05 + 0.09 * i), 30.0 * i))
            cur = evaluate([FrameResult(preds=tuple(preds), gt=tuple(gt))]).f1
            assert cur >= prev
            prev = cur

    def test_json_round_trip(self):
        gt = (GtPair("a", nbox(0.3), 120.0),)
        rep = evaluate([FrameResult(preds=(PredPair("a", nbox(0.3), 120.0),), gt=gt)])
        assert report_from_json(report_to_json(rep)) == rep

    def test_csv_bins(self, tmp_path):
        rep = EvalReport(1.0, 1.0, 1.0, 1.0, per_distance_bins=())
        gt = (GtPair("a", nbox(0.3), 120.0),)
        rep = evaluate([FrameResult(preds=(), gt=gt)])
        out = tmp_path / "bins.csv"
        bins_to_csv(rep, out)
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "lo_m,hi_m,f1,support"
        assert len(lines) == 1 + len(rep.per_distance_bins)
