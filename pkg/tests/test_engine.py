import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lesionaudit.engine import GradTape, TapeError, Tensor, backward, ops

import gradcases
import oracles


class TestTensor:
    def test_float32_and_read_only(self):
        t = Tensor([[1, 2], [3, 4]])
        assert t.data.dtype == np.float32
        assert t.shape == (2, 2) and t.ndim == 2 and t.size == 4
        with pytest.raises(ValueError):
            t.data[0, 0] = 9

    def test_numpy_returns_a_writable_copy(self):
        t = Tensor(np.arange(3))
        a = t.numpy()
        a[0] = 42
        assert t.data[0] == 0

    def test_source_array_changes_do_not_leak_in(self):
        src = np.ones(3, dtype=np.float32)
        t = Tensor(src)
        src[0] = 5
        assert t.data[0] == 1

    def test_item_requires_single_element(self):
        assert Tensor(3.5).item() == 3.5
        with pytest.raises(ValueError):
            Tensor([1, 2]).item()

    def test_identity_hashing(self):
        a, b = Tensor([1.0]), Tensor([1.0])
        assert len({a: 1, b: 2}) == 2

    def test_operator_sugar(self):
        a, b = Tensor([1.0, 2.0]), Tensor([3.0, 5.0])
        np.testing.assert_array_equal((a + b).data, [4, 7])
        np.testing.assert_array_equal((b - a).data, [2, 3])
        np.testing.assert_array_equal((a * b).data, [3, 10])
        np.testing.assert_array_equal((-a).data, [-1, -2])
        np.testing.assert_array_equal((Tensor([[1.0, 2.0]]) @ Tensor([[1.0], [1.0]])).data, [[3]])


class TestTape:
    def test_square_sum_gradient(self):
        w = Tensor([1.0, -2.0, 3.0])
        with GradTape() as tape:
            tape.watch(w)
            loss = ops.sum(ops.square(w))
        np.testing.assert_allclose(backward(tape, loss)[w], [2, -4, 6])

    def test_untracked_inputs_are_not_recorded(self):
        a, b = Tensor([1.0]), Tensor([2.0])
        with GradTape() as tape:
            ops.mul(a, b)
        assert tape.operations == []

    def test_records_in_order(self):
        w = Tensor([1.0, 2.0])
        with GradTape() as tape:
            tape.watch(w)
            ops.sum(ops.relu(ops.neg(w)))
        assert tape.operations == ["neg", "relu", "sum"]

    def test_tape_is_single_use(self):
        w = Tensor([1.0])
        with GradTape() as tape:
            tape.watch(w)
            loss = ops.sum(w)
        backward(tape, loss)
        assert tape.consumed
        with pytest.raises(TapeError):
            backward(tape, loss)

    def test_non_scalar_output_rejected(self):
        w = Tensor([1.0, 2.0])
        with GradTape() as tape:
            tape.watch(w)
            y = ops.square(w)
        with pytest.raises(TapeError, match="scalar"):
            backward(tape, y)

    def test_output_must_be_on_tape(self):
        w = Tensor([1.0])
        with GradTape() as tape:
            tape.watch(w)
        with pytest.raises(TapeError, match="not on the tape"):
            backward(tape, ops.sum(w))

    def test_unused_tracked_tensor_gets_zero_gradient(self):
        a, b = Tensor([1.0, 2.0]), Tensor([[5.0]])
        with GradTape() as tape:
            tape.watch(a, b)
            loss = ops.sum(a)
        g = backward(tape, loss)
        np.testing.assert_array_equal(g[b], np.zeros((1, 1)))

    def test_reused_tensor_accumulates(self):
        x = Tensor([3.0])
        with GradTape() as tape:
            tape.watch(x)
            loss = ops.sum(ops.add(ops.mul(x, x), x))
        np.testing.assert_allclose(backward(tape, loss)[x], [7.0])

    def test_nested_tapes_record_independently(self):
        x = Tensor([2.0])
        with GradTape() as outer:
            outer.watch(x)
            with GradTape() as inner:
                inner.watch(x)
                y = ops.sum(ops.square(x))
            z = ops.sum(ops.mul(x, 3.0))
        np.testing.assert_allclose(backward(inner, y)[x], [4.0])
        np.testing.assert_allclose(backward(outer, z)[x], [3.0])

    def test_broadcast_gradient_is_reduced(self):
        x, b = Tensor(np.ones((4, 3))), Tensor([1.0, 2.0, 3.0])
        with GradTape() as tape:
            tape.watch(b)
            loss = ops.sum(ops.add(x, b))
        np.testing.assert_allclose(backward(tape, loss)[b], [4, 4, 4])

    def test_log_floor_blocks_gradient(self):
        x = Tensor([0.0, 0.5])
        with GradTape() as tape:
            tape.watch(x)
            loss = ops.sum(ops.log(x, floor=1e-12))
        g = backward(tape, loss)[x]
        assert g[0] == 0.0 and g[1] == pytest.approx(2.0)


class TestGradients:
    @pytest.mark.parametrize("case", gradcases.CASES, ids=gradcases.CASE_NAMES)
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_reference_differences(self, case, seed):
        assert gradcases.check(case, seed) <= 1e-3


class TestConv2d:
    def test_forward_matches_loops(self):
        rng = np.random.default_rng(7)
        x, k, b = rng.normal(size=(2, 7, 5, 3)), rng.normal(size=(3, 3, 3, 4)), rng.normal(size=4)
        got = ops.conv2d(x, k, b).data
        np.testing.assert_allclose(got, oracles.conv2d_same(x, k, b), rtol=1e-5, atol=1e-5)

    def test_single_image_and_even_kernel(self):
        rng = np.random.default_rng(8)
        x, k, b = rng.normal(size=(6, 6, 2)), rng.normal(size=(2, 2, 2, 1)), np.zeros(1)
        got = ops.conv2d(x, k, b).data
        assert got.shape == (6, 6, 1)
        np.testing.assert_allclose(got, oracles.conv2d_same(x[None], k, b)[0], rtol=1e-5, atol=1e-5)

    def test_same_padding_keeps_spatial_size(self):
        y = ops.conv2d(np.zeros((1, 75, 100, 3)), np.zeros((3, 3, 3, 8)), np.zeros(8))
        assert y.shape == (1, 75, 100, 8)

    @pytest.mark.parametrize("kwargs, match", [
        ({"kernels": np.zeros((3, 3, 2, 4))}, "channels"),
        ({"bias": np.zeros(5)}, "bias"),
        ({"stride": 0}, "stride"),
        ({"padding": "full"}, "padding"),
        ({"kernels": np.zeros((3, 3, 3))}, "Kh"),
    ])
    def test_errors(self, kwargs, match):
        args = {"x": np.zeros((1, 5, 5, 3)), "kernels": np.zeros((3, 3, 3, 4)), "bias": np.zeros(4)}
        args.update(kwargs)
        with pytest.raises(ValueError, match=match):
            ops.conv2d(**args)

    def test_valid_padding_too_small(self):
        with pytest.raises(ValueError):
            ops.conv2d(np.zeros((1, 2, 2, 1)), np.zeros((3, 3, 1, 1)), np.zeros(1), padding="valid")


class TestMaxPool:
    def test_floor_semantics(self):
        x = np.arange(5 * 7, dtype=np.float32).reshape(1, 5, 7, 1)
        y = ops.maxpool2d(x).data
        assert y.shape == (1, 2, 3, 1)
        np.testing.assert_array_equal(y[0, :, :, 0], [[8, 10, 12], [22, 24, 26]])

    def test_gradient_routes_to_argmax_only(self):
        x = Tensor(np.array([[1, 4], [3, 2]], dtype=np.float32).reshape(1, 2, 2, 1))
        with GradTape() as tape:
            tape.watch(x)
            loss = ops.sum(ops.maxpool2d(x))
        np.testing.assert_array_equal(backward(tape, loss)[x][0, :, :, 0], [[0, 1], [0, 0]])


class TestBatchNorm:
    def test_train_normalizes_and_updates_moving_stats(self):
        rng = np.random.default_rng(3)
        x = rng.normal(2.0, 3.0, size=(64, 4))
        out = ops.batchnorm(x, np.ones(4), np.zeros(4), np.zeros(4), np.ones(4), mode="train")
        y = out.output.data
        np.testing.assert_allclose(y.mean(axis=0), 0, atol=1e-5)
        np.testing.assert_allclose(y.var(axis=0), x.var(axis=0) / (x.var(axis=0) + 1e-3), rtol=1e-4)
        np.testing.assert_allclose(out.moving_mean.data, 0.01 * x.mean(axis=0), rtol=1e-4)
        np.testing.assert_allclose(out.moving_var.data, 0.99 + 0.01 * x.var(axis=0), rtol=1e-5)

    def test_infer_is_affine_with_moving_stats(self):
        x = np.array([[1.0, 2.0]])
        out = ops.batchnorm(x, [2.0, 1.0], [0.5, 0.0], [1.0, 0.0], [3.999, 0.999], mode="infer")
        np.testing.assert_allclose(out.output.data, [[0.5, 2.0]], rtol=1e-6)
        np.testing.assert_array_equal(out.moving_mean.data, [1.0, 0.0])

    def test_bad_parameter_shape(self):
        with pytest.raises(ValueError, match="gamma"):
            ops.batchnorm(np.zeros((2, 3)), np.ones(2), np.zeros(3), np.zeros(3), np.ones(3))

    def test_non_positive_variance(self):
        with pytest.raises(ValueError):
            ops.batchnorm(np.zeros((2, 1)), [1.0], [0.0], [0.0], [-1.0], mode="infer")


class TestDropout:
    def test_identity_in_infer_mode(self):
        x = Tensor(np.ones((3, 3)))
        assert ops.dropout(x, 0.5, mode="infer") is x

    def test_seeded_mask_is_reproducible(self):
        x = np.ones((20, 20))
        a = ops.dropout(x, 0.3, mode="train", seed=11).data
        b = ops.dropout(x, 0.3, mode="train", seed=11).data
        np.testing.assert_array_equal(a, b)
        assert set(np.unique(a)) <= {0.0, np.float32(1 / 0.7)}

    def test_expectation_preserved(self):
        # Monte Carlo over many seeds: E[dropout(x)] = x
        x = np.linspace(-1, 1, 50)
        mean = np.mean([ops.dropout(x, 0.4, mode="train", seed=s).data for s in range(2000)], axis=0)
        np.testing.assert_allclose(mean, x, atol=0.06)

    def test_rate_bounds(self):
        with pytest.raises(ValueError):
            ops.dropout(np.ones(2), 1.0, mode="train")


finite = st.floats(-50, 50, allow_nan=False, width=32)


class TestSoftmaxProperties:
    @given(arrays(np.float32, (3, 6), elements=finite))
    @settings(max_examples=60, deadline=None)
    def test_rows_sum_to_one(self, x):
        p = ops.softmax(x).data
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, rtol=1e-5)

    @given(arrays(np.float32, (6,), elements=finite), st.floats(-100, 100, width=32))
    @settings(max_examples=60, deadline=None)
    def test_shift_invariant(self, x, c):
        np.testing.assert_allclose(ops.softmax(x).data, ops.softmax(x + np.float32(c)).data, atol=1e-5)

    def test_large_logits_do_not_overflow(self):
        p = ops.softmax(np.array([1000.0, 0.0], dtype=np.float32)).data
        assert np.isfinite(p).all() and p[0] == pytest.approx(1.0)

    @given(arrays(np.float32, (8,), elements=st.floats(-80, 80, width=32)))
    @settings(max_examples=60, deadline=None)
    def test_sigmoid_symmetry(self, x):
        s = ops.sigmoid(x).data
        np.testing.assert_allclose(s + ops.sigmoid(-x).data, 1.0, atol=1e-6)
