import numpy as np
import pytest

from opsum.autodiff import (
    Tape,
    Tensor,
    glorot_init,
    gradcheck,
    load_arrays,
    param,
    save_arrays,
    uniform_init,
)
from opsum.errors import DataError, NumericError, ShapeError

SEEDS = range(20)
TOL64 = 1e-6


def rnd(rng, *shape, positive=False, dtype=np.float64):
    x = rng.standard_normal(shape)
    if positive:
        x = np.abs(x) + 0.1
    return param(x.astype(dtype), "x")


class TestForwardValues:
    def test_tanh_sigmoid_at_zero(self):
        tp = Tape()
        z = param(np.zeros((1, 1)), "z")
        assert tp.tanh(z).item() == 0.0
        assert tp.sigmoid(z).item() == 0.5

    def test_softmax_normalizes(self):
        tp = Tape()
        x = param(np.random.default_rng(0).standard_normal((3, 5)), "x")
        y = tp.softmax(x, axis=-1)
        np.testing.assert_allclose(y.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_matmul_hand(self):
        tp = Tape()
        a = param(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]), "a")
        b = param(np.array([[1.0], [0.0], [-1.0]]), "b")
        y = tp.matmul(a, b)
        assert y.shape == (2, 1)
        np.testing.assert_allclose(y.data, [[-2.0], [-2.0]])

    def test_sigmoid_extreme_inputs_stable(self):
        tp = Tape()
        x = param(np.array([[800.0, -800.0]]), "x")
        y = tp.sigmoid(x)
        assert np.isfinite(y.data).all()
        np.testing.assert_allclose(y.data, [[1.0, 0.0]], atol=1e-12)


class TestBackwardBasics:
    def test_x_squared(self):
        x = param(np.array([[3.0]]), "x")
        tp = Tape()
        loss = tp.sum(tp.mul(x, x))
        tp.backward(loss)
        np.testing.assert_allclose(x.grad, [[6.0]])

    def test_sum_concat_gives_ones(self):
        a = param(np.ones((2, 2)), "a")
        b = param(np.ones((1, 2)), "b")
        tp = Tape()
        loss = tp.sum(tp.concat([a, b], axis=0))
        tp.backward(loss)
        np.testing.assert_allclose(a.grad, 1.0)
        np.testing.assert_allclose(b.grad, 1.0)

    def test_reuse_sums_gradients(self):
        x = param(np.array([[2.0]]), "x")
        tp = Tape()
        loss = tp.sum(tp.add(x, x))
        tp.backward(loss)
        np.testing.assert_allclose(x.grad, [[2.0]])

    def test_non_scalar_loss_rejected(self):
        x = param(np.ones((2, 2)), "x")
        tp = Tape()
        y = tp.tanh(x)
        with pytest.raises(ShapeError):
            tp.backward(y)

    def test_non_recording_tape_rejects_backward(self):
        tp = Tape(record=False)
        x = param(np.ones((1, 1)), "x")
        y = tp.sum(x)
        with pytest.raises(NumericError):
            tp.backward(y)


class TestShapeErrors:
    def test_matmul_mismatch(self):
        tp = Tape()
        with pytest.raises(ShapeError, match="matmul"):
            tp.matmul(param(np.ones((2, 3)), "a"), param(np.ones((2, 3)), "b"))

    def test_add_mismatch(self):
        tp = Tape()
        with pytest.raises(ShapeError, match="add"):
            tp.add(param(np.ones((2, 3)), "a"), param(np.ones((4, 5)), "b"))

    def test_concat_mismatch(self):
        tp = Tape()
        with pytest.raises(ShapeError, match="concat"):
            tp.concat([param(np.ones((2, 3)), "a"), param(np.ones((2, 4)), "b")], axis=0)

    def test_narrow_out_of_range(self):
        tp = Tape()
        with pytest.raises(ShapeError, match="narrow"):
            tp.narrow(param(np.ones((2, 3)), "a"), 1, 2, 5)

    def test_scatter_bad_width(self):
        tp = Tape()
        with pytest.raises(ShapeError, match="scatter"):
            tp.scatter_cols(param(np.ones((1, 3)), "v"), [0, 1, 9], width=4)


@pytest.mark.parametrize("seed", SEEDS)
class TestGradcheckPerOp:
    def test_matmul(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rnd(rng, 2, 3), rnd(rng, 3, 4)
        assert gradcheck(lambda tp: tp.sum(tp.matmul(a, b)), [a, b]) < TOL64

    def test_add_mul_broadcast(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = rnd(rng, 3, 4), rnd(rng, 1, 4), rnd(rng, 3, 1)
        fn = lambda tp: tp.sum(tp.mul(tp.add(a, b), c))
        assert gradcheck(fn, [a, b, c]) < TOL64

    def test_sub(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rnd(rng, 2, 5), rnd(rng, 2, 5)
        assert gradcheck(lambda tp: tp.sum(tp.sub(a, b)), [a, b]) < TOL64

    def test_tanh_sigmoid_exp(self, seed):
        rng = np.random.default_rng(seed)
        a = rnd(rng, 2, 4)
        fn = lambda tp: tp.sum(tp.exp(tp.mul_scalar(tp.tanh(tp.sigmoid(a)), 0.5)))
        assert gradcheck(fn, [a]) < TOL64

    def test_log(self, seed):
        rng = np.random.default_rng(seed)
        a = rnd(rng, 3, 3, positive=True)
        assert gradcheck(lambda tp: tp.sum(tp.log(a)), [a]) < TOL64

    def test_softmax_last_axis(self, seed):
        rng = np.random.default_rng(seed)
        a, w = rnd(rng, 2, 5), rnd(rng, 2, 5)
        fn = lambda tp: tp.sum(tp.mul(tp.softmax(a, axis=-1), w))
        assert gradcheck(fn, [a]) < TOL64

    def test_softmax_axis0(self, seed):
        rng = np.random.default_rng(seed)
        a, w = rnd(rng, 4, 3), rnd(rng, 4, 3)
        fn = lambda tp: tp.sum(tp.mul(tp.softmax(a, axis=0), w))
        assert gradcheck(fn, [a]) < TOL64

    def test_concat_narrow(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rnd(rng, 2, 3), rnd(rng, 2, 2)
        fn = lambda tp: tp.sum(
            tp.tanh(tp.narrow(tp.concat([a, b], axis=1), 1, 1, 3))
        )
        assert gradcheck(fn, [a, b]) < TOL64

    def test_take_rows_repeated_indices(self, seed):
        rng = np.random.default_rng(seed)
        table = rnd(rng, 5, 3)
        idx = rng.integers(0, 5, size=7)
        fn = lambda tp: tp.sum(tp.tanh(tp.take_rows(table, idx)))
        assert gradcheck(fn, [table]) < TOL64

    def test_scatter_cols_with_collisions(self, seed):
        rng = np.random.default_rng(seed)
        v = rnd(rng, 2, 6)
        idx = rng.integers(0, 4, size=6)  # forces collisions
        fn = lambda tp: tp.sum(tp.tanh(tp.scatter_cols(v, idx, width=4)))
        assert gradcheck(fn, [v]) < TOL64

    def test_sum_mean_axes(self, seed):
        rng = np.random.default_rng(seed)
        a = rnd(rng, 3, 4)
        fn = lambda tp: tp.sum(
            tp.mul(tp.mean(a, axis=0, keepdims=True), tp.sum(a, axis=1, keepdims=True))
        )
        assert gradcheck(fn, [a]) < TOL64

    def test_minimum_away_from_ties(self, seed):
        rng = np.random.default_rng(seed)
        a = param(rng.standard_normal((3, 4)), "a")
        b = param(a.data + np.where(rng.random((3, 4)) < 0.5, 0.3, -0.3), "b")
        assert gradcheck(lambda tp: tp.sum(tp.minimum(a, b)), [a, b]) < TOL64

    def test_clip_min_away_from_boundary(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((3, 4))
        x[np.abs(x) < 0.05] = 0.5
        a = param(x, "a")
        assert gradcheck(lambda tp: tp.sum(tp.clip_min(a, 0.0)), [a]) < TOL64

    def test_dropout_fixed_mask(self, seed):
        rng = np.random.default_rng(seed)
        a = rnd(rng, 3, 4)
        fn = lambda tp: tp.sum(tp.dropout(a, 0.4, np.random.default_rng(seed)))
        assert gradcheck(fn, [a]) < TOL64

    def test_transpose_reshape(self, seed):
        rng = np.random.default_rng(seed)
        a = rnd(rng, 2, 6)
        fn = lambda tp: tp.sum(tp.tanh(tp.reshape(tp.transpose(a), (3, 4))))
        assert gradcheck(fn, [a]) < TOL64

    def test_composite_graph_f64(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rnd(rng, 2, 3), rnd(rng, 3, 4)
        c, w = rnd(rng, 1, 4), rnd(rng, 2, 4)

        def fn(tp):
            h = tp.tanh(tp.add(tp.matmul(a, b), c))
            att = tp.softmax(h, axis=-1)
            return tp.sum(tp.mul(tp.sigmoid(att), w))

        assert gradcheck(fn, [a, b, c, w]) < TOL64


class TestGradcheck32Bit:
    def test_composite_graph_f32(self):
        rng = np.random.default_rng(1)
        a = param(rng.standard_normal((2, 3)).astype(np.float32), "a")
        b = param(rng.standard_normal((3, 4)).astype(np.float32), "b")
        c = param(rng.standard_normal((1, 4)).astype(np.float32), "c")

        def fn(tp):
            return tp.sum(tp.softmax(tp.tanh(tp.add(tp.matmul(a, b), c)), axis=-1))

        assert gradcheck(fn, [a, b, c]) < 1e-3

    def test_linear_function_is_exact_in_f64(self):
        a = param(np.array([[1.0, -2.0, 0.5]]), "a")
        assert gradcheck(lambda tp: tp.sum(tp.mul_scalar(a, 3.0)), [a]) < 1e-9


class TestDropout:
    def test_zero_rate_identity(self):
        tp = Tape()
        a = param(np.ones((2, 2)), "a")
        assert tp.dropout(a, 0.0, np.random.default_rng(0)) is a

    def test_replayable_mask(self):
        a = param(np.ones((4, 4)), "a")
        y1 = Tape().dropout(a, 0.5, np.random.default_rng(9)).data
        y2 = Tape().dropout(a, 0.5, np.random.default_rng(9)).data
        np.testing.assert_array_equal(y1, y2)

    def test_scaling_preserves_mean(self):
        a = param(np.ones((200, 200)), "a")
        y = Tape().dropout(a, 0.1, np.random.default_rng(3)).data
        assert abs(y.mean() - 1.0) < 0.01

    def test_bad_rate(self):
        with pytest.raises(NumericError):
            Tape().dropout(param(np.ones((1, 1)), "a"), 1.0, np.random.default_rng(0))


class TestInit:
    def test_uniform_bounds(self):
        w = uniform_init(np.random.default_rng(0), (50, 50))
        assert w.dtype == np.float32
        assert (np.abs(w) <= 0.08).all()

    def test_glorot_bounds(self):
        w = glorot_init(np.random.default_rng(0), 30, 70)
        limit = np.sqrt(6.0 / 100.0)
        assert (np.abs(w) <= limit).all()


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        arrays = {
            "emb": rng.standard_normal((4, 3)).astype(np.float32),
            "w": rng.standard_normal((2, 2)).astype(np.float32),
            "b": rng.standard_normal(3).astype(np.float32),
        }
        path = tmp_path / "ck.bin"
        save_arrays(path, arrays)
        loaded = load_arrays(path)
        assert set(loaded) == set(arrays)
        for k in arrays:
            assert loaded[k].dtype == np.float32
            np.testing.assert_array_equal(loaded[k], arrays[k])

    def test_deterministic_bytes(self, tmp_path):
        arrays = {"b": np.ones(2, np.float32), "a": np.zeros(3, np.float32)}
        p1, p2 = tmp_path / "1.bin", tmp_path / "2.bin"
        save_arrays(p1, arrays)
        save_arrays(p2, dict(reversed(list(arrays.items()))))
        assert p1.read_bytes() == p2.read_bytes()

    def test_float64_cast_on_save(self, tmp_path):
        path = tmp_path / "ck.bin"
        save_arrays(path, {"x": np.array([1.5, 2.5], dtype=np.float64)})
        assert load_arrays(path)["x"].dtype == np.float32

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"JUNKxxxx")
        with pytest.raises(DataError):
            load_arrays(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "ck.bin"
        save_arrays(path, {"x": np.ones(1, np.float32)})
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(DataError):
            load_arrays(path)
