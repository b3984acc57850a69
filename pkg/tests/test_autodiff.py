"""Gradient checks for the autodiff core.

Every op's analytic backward is compared against central finite
differences; the FD step is 1e-6 so float64 noise sits near 1e-10,
far below the comparison floor.
"""

import numpy as np
import pytest

from buoyfusion.fusion.autodiff import (
    Tensor,
    bilinear_sample,
    check_gradient,
    concat,
    embedding_lookup,
    masked_softmax,
    maximum,
    minimum,
)

REL_TOL = 5e-5
ABS_FLOOR = 1e-7


def assert_grads_match(build, params):
    """Compare analytic gradients of build() against finite differences."""
    for p in params:
        p.zero_grad()
    loss = build()
    loss.backward()
    for p in params:
        analytic = p.grad.copy()
        for idx in range(p.data.size):
            fd = check_gradient(build, p, idx)
            a = analytic.flat[idx]
            err = abs(a - fd)
            assert err <= max(ABS_FLOOR, REL_TOL * max(abs(a), abs(fd))), (
                f"grad mismatch at flat index {idx}: analytic {a}, fd {fd}")


class TestArithmetic:
    def test_add_mul_chain(self):
        rng = np.random.default_rng(10)
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        w = rng.normal(size=(3, 4))
        assert_grads_match(lambda: ((a + b) * (a * 0.5 + 2.0) * w).sum(), [a, b])

    def test_div_and_pow(self):
        rng = np.random.default_rng(11)
        a = Tensor(rng.uniform(0.5, 2.0, size=(2, 3)), requires_grad=True)
        b = Tensor(rng.uniform(0.5, 2.0, size=(2, 3)), requires_grad=True)
        assert_grads_match(lambda: ((a / b) + (a ** 3) + (1.0 / b)).sum(), [a, b])

    def test_rsub_scalar_left(self):
        a = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        loss = (5.0 - a).sum()
        loss.backward()
        np.testing.assert_allclose(a.grad, [-1.0, -1.0, -1.0])

    def test_broadcasting_unbroadcast(self):
        rng = np.random.default_rng(12)
        a = Tensor(rng.normal(size=(3, 1)), requires_grad=True)
        b = Tensor(rng.normal(size=(1, 4)), requires_grad=True)
        c = Tensor(rng.normal(size=(4,)), requires_grad=True)
        assert_grads_match(lambda: ((a + b) * c).sum(), [a, b, c])

    def test_matmul_batched_broadcast(self):
        rng = np.random.default_rng(13)
        a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        w = rng.normal(size=(2, 3, 5))
        assert_grads_match(lambda: ((a @ b) * w).sum(), [a, b])

    def test_diamond_graph_accumulates(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = Tensor(np.array([5.0]), requires_grad=True)
        loss = (x * y + x).sum()
        loss.backward()
        np.testing.assert_allclose(x.grad, [6.0])
        np.testing.assert_allclose(y.grad, [2.0])

    def test_backward_requires_scalar(self):
        a = Tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(ValueError):
            (a * 2.0).backward()


class TestElementwise:
    def test_exp_log_tanh_sigmoid(self):
        rng = np.random.default_rng(20)
        a = Tensor(rng.uniform(0.2, 1.5, size=(2, 5)), requires_grad=True)
        w = rng.normal(size=(2, 5))
        assert_grads_match(
            lambda: ((a.exp() + a.log() + a.tanh() + a.sigmoid()) * w).sum(), [a])

    def test_sqrt_abs(self):
        rng = np.random.default_rng(21)
        vals = rng.uniform(0.3, 2.0, size=(6,)) * rng.choice([-1.0, 1.0], size=6)
        a = Tensor(vals, requires_grad=True)
        assert_grads_match(lambda: ((a * a).sqrt() + a.abs()).sum(), [a])

    def test_clip_gradient_zero_outside(self):
        a = Tensor(np.array([-2.0, 0.5, 3.0]), requires_grad=True)
        loss = a.clip(0.0, 1.0).sum()
        loss.backward()
        np.testing.assert_allclose(a.grad, [0.0, 1.0, 0.0])

    def test_clip_interior_fd(self):
        rng = np.random.default_rng(22)
        a = Tensor(rng.uniform(0.2, 0.8, size=(4,)), requires_grad=True)
        assert_grads_match(lambda: (a.clip(0.0, 1.0) * 3.0).sum(), [a])


class TestShapeOps:
    def test_reshape_transpose(self):
        rng = np.random.default_rng(30)
        a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        w = rng.normal(size=(4, 6))
        assert_grads_match(
            lambda: (a.transpose(2, 0, 1).reshape(4, 6) * w).sum(), [a])

    def test_getitem_slice_and_int(self):
        rng = np.random.default_rng(31)
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        assert_grads_match(lambda: (a[1:, 2] * 2.0).sum() + a[0, 0] * 3.0, [a])

    def test_getitem_fancy_duplicates_accumulate(self):
        a = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        idx = np.array([0, 0, 2])
        loss = a[idx].sum()
        loss.backward()
        np.testing.assert_allclose(a.grad, [2.0, 0.0, 1.0])

    def test_getitem_boolean_mask(self):
        rng = np.random.default_rng(32)
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        mask = np.array([True, False, True])
        assert_grads_match(lambda: (a[mask] ** 2).sum(), [a])

    def test_sum_axis_keepdims_mean(self):
        rng = np.random.default_rng(33)
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        w = rng.normal(size=(3, 1))
        assert_grads_match(
            lambda: (a.sum(axis=1, keepdims=True) * w).sum() + a.mean() * 2.0, [a])


class TestMinMax:
    def test_maximum_minimum_fd(self):
        rng = np.random.default_rng(40)
        # keep entries well separated so FD never crosses the kink
        a = Tensor(rng.uniform(0.0, 1.0, size=(8,)), requires_grad=True)
        b = Tensor(a.data + rng.choice([-0.3, 0.3], size=8), requires_grad=True)
        assert_grads_match(
            lambda: (maximum(a, b) * 2.0 + minimum(a, b) * 3.0).sum(), [a, b])

    def test_tie_sends_gradient_to_first(self):
        a = Tensor(np.array([1.0]), requires_grad=True)
        b = Tensor(np.array([1.0]), requires_grad=True)
        maximum(a, b).sum().backward()
        np.testing.assert_allclose(a.grad, [1.0])
        np.testing.assert_allclose(b.grad, [0.0])

    def test_scalar_operand(self):
        a = Tensor(np.array([-0.5, 0.5]), requires_grad=True)
        maximum(a, 0.0).sum().backward()
        np.testing.assert_allclose(a.grad, [0.0, 1.0])


class TestConcat:
    def test_concat_last_axis(self):
        rng = np.random.default_rng(50)
        a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        w = rng.normal(size=(2, 5))
        assert_grads_match(lambda: (concat([a, b], axis=-1) * w).sum(), [a, b])

    def test_concat_axis0_values(self):
        a = Tensor(np.ones((1, 2)))
        b = Tensor(np.zeros((2, 2)))
        out = concat([a, b], axis=0)
        np.testing.assert_allclose(out.data, [[1, 1], [0, 0], [0, 0]])


class TestMaskedSoftmax:
    def test_rows_sum_to_one_on_valid(self):
        rng = np.random.default_rng(60)
        logits = Tensor(rng.normal(size=(3, 5)))
        mask = np.ones((3, 5), dtype=bool)
        mask[1, 2:] = False
        p = masked_softmax(logits, mask).data
        np.testing.assert_allclose(p.sum(axis=-1), [1.0, 1.0, 1.0], atol=1e-12)
        assert np.all(p[1, 2:] == 0.0)

    def test_fully_masked_row_is_zero(self):
        logits = Tensor(np.array([[5.0, 1.0], [2.0, 3.0]]))
        mask = np.array([[False, False], [True, True]])
        p = masked_softmax(logits, mask).data
        np.testing.assert_allclose(p[0], [0.0, 0.0])
        np.testing.assert_allclose(p[1].sum(), 1.0)

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(61)
        logits = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        mask = np.array([[True, True, False, True], [True, True, True, True]])
        w = rng.normal(size=(2, 4))
        assert_grads_match(lambda: (masked_softmax(logits, mask) * w).sum(), [logits])

    def test_fully_masked_row_gets_no_gradient(self):
        logits = Tensor(np.array([[1.0, 2.0], [0.5, 0.5]]), requires_grad=True)
        mask = np.array([[False, False], [True, True]])
        (masked_softmax(logits, mask) * 3.0).sum().backward()
        np.testing.assert_allclose(logits.grad[0], [0.0, 0.0])


class TestEmbeddingLookup:
    def test_forward_gather(self):
        table = Tensor(np.arange(12.0).reshape(4, 3))
        out = embedding_lookup(table, np.array([[2, 0]]))
        np.testing.assert_allclose(out.data, [[[6, 7, 8], [0, 1, 2]]])

    def test_duplicate_indices_accumulate(self):
        table = Tensor(np.zeros((3, 2)), requires_grad=True)
        idx = np.array([1, 1, 0])
        embedding_lookup(table, idx).sum().backward()
        np.testing.assert_allclose(table.grad, [[1, 1], [2, 2], [0, 0]])

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(70)
        table = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        idx = np.array([[0, 4], [4, 2]])
        w = rng.normal(size=(2, 2, 3))
        assert_grads_match(lambda: (embedding_lookup(table, idx) * w).sum(), [table])


class TestBilinearSample:
    def test_hand_computed_interior_point(self):
        # 2x2 grid [[1,2],[3,4]], point (x=0.25, y=0.75):
        # 0.75*0.25*1 + 0.25*0.25*2 + 0.75*0.75*3 + 0.25*0.75*4 = 2.75
        grid = Tensor(np.array([[[[1.0], [2.0]], [[3.0], [4.0]]]]))
        pts = Tensor(np.array([[[0.25, 0.75]]]))
        out = bilinear_sample(grid, pts)
        np.testing.assert_allclose(out.data, [[[2.75]]])

    def test_corners_hit_grid_cells(self):
        grid = Tensor(np.arange(6.0).reshape(1, 2, 3, 1))
        pts = Tensor(np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]]))
        out = bilinear_sample(grid, pts).data[0, :, 0]
        np.testing.assert_allclose(out, [0.0, 2.0, 3.0, 5.0])

    def test_outside_fades_to_zero(self):
        grid = Tensor(np.ones((1, 2, 2, 1)))
        pts = Tensor(np.array([[[-3.0, 0.5], [0.5, 4.0]]]))
        out = bilinear_sample(grid, pts).data
        np.testing.assert_allclose(out, 0.0)

    def test_grid_gradient_matches_fd(self):
        rng = np.random.default_rng(80)
        grid = Tensor(rng.normal(size=(2, 3, 4, 2)), requires_grad=True)
        pts = Tensor(rng.uniform(0.1, 0.9, size=(2, 3, 2)))
        w = rng.normal(size=(2, 3, 2))
        assert_grads_match(lambda: (bilinear_sample(grid, pts) * w).sum(), [grid])

    def test_points_gradient_matches_fd(self):
        rng = np.random.default_rng(81)
        grid = Tensor(rng.normal(size=(1, 4, 5, 3)))
        # keep points off the interior cell boundaries where the
        # interpolant has kinks
        base = rng.uniform(0.05, 0.2, size=(1, 4, 2))
        pts = Tensor(base + 0.3, requires_grad=True)
        w = rng.normal(size=(1, 4, 3))
        assert_grads_match(lambda: (bilinear_sample(grid, pts) * w).sum(), [pts])

    def test_hand_computed_point_gradient(self):
        # f(x, y) = (1-x)(1-y)*1 + x(1-y)*2 + (1-x)y*3 + xy*4 on the 2x2
        # grid; partials below are the row/column differences blended by
        # the opposite coordinate
        grid = Tensor(np.array([[[[1.0], [2.0]], [[3.0], [4.0]]]]))
        pts = Tensor(np.array([[[0.25, 0.75]]]), requires_grad=True)
        bilinear_sample(grid, pts).sum().backward()
        x, y = 0.25, 0.75
        dfdx = -(1 - y) * 1 + (1 - y) * 2 - y * 3 + y * 4
        dfdy = -(1 - x) * 1 - x * 2 + (1 - x) * 3 + x * 4
        np.testing.assert_allclose(pts.grad[0, 0], [dfdx, dfdy])


class TestNumpyInterop:
    def test_ndarray_left_operand_defers(self):
        a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        arr = np.array([3.0, 4.0])
        out = arr * a
        assert isinstance(out, Tensor)
        out.sum().backward()
        np.testing.assert_allclose(a.grad, [3.0, 4.0])

    def test_ndarray_minus_tensor(self):
        a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        out = np.array([5.0, 5.0]) - a
        assert isinstance(out, Tensor)
        np.testing.assert_allclose(out.data, [4.0, 3.0])
