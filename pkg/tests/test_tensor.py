import numpy as np
import pytest

from mkdcnet import ops
from mkdcnet.tensor import Shape4, ShapeError, Tensor


class TestConstructors:
    def test_zeros(self):
        t = Tensor.zeros((1, 1, 2, 2))
        assert t.shape == (1, 1, 2, 2)
        assert np.array_equal(t.flat(), [0, 0, 0, 0])

    def test_full(self):
        t = Tensor.full((1, 2, 1, 1), 3.5)
        assert np.array_equal(t.flat(), [3.5, 3.5])

    def test_ones_dtype(self):
        assert Tensor.ones((2, 1, 1, 1)).dtype == np.float32
        assert Tensor.ones((2, 1, 1, 1), dtype=np.float64).dtype == np.float64

    def test_from_values_length_mismatch(self):
        with pytest.raises(ShapeError):
            Tensor.from_values((1, 1, 1, 3), [1, 2])

    def test_from_values_roundtrip(self):
        rng = np.random.default_rng(0)
        t = Tensor(rng.standard_normal((2, 3, 4, 5)).astype(np.float32))
        again = Tensor.from_values(t.shape, t.flat())
        assert np.array_equal(t.data, again.data)

    def test_shape4_rejects_negative(self):
        with pytest.raises(ShapeError):
            Shape4(1, -1, 2, 2)

    def test_requires_4d(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 3)))


class TestLayout:
    def test_flat_index_formula(self):
        # element (n,c,h,w) must sit at ((n*C+c)*H+h)*W+w in the flat buffer
        n_, c_, h_, w_ = 2, 3, 4, 5
        t = Tensor.from_values((n_, c_, h_, w_), np.arange(n_ * c_ * h_ * w_))
        flat = t.flat()
        for n in range(n_):
            for c in range(c_):
                for h in range(h_):
                    for w in range(w_):
                        idx = ((n * c_ + c) * h_ + h) * w_ + w
                        assert flat[idx] == t.data[n, c, h, w]

    def test_finite_check(self):
        t = Tensor.zeros((1, 1, 2, 2))
        assert t.is_finite()
        t.data[0, 0, 0, 0] = np.nan
        assert not t.is_finite()
        with pytest.raises(FloatingPointError):
            t.require_finite("bad")


class TestDumpFormat:
    def test_roundtrip(self, tmp_path):
        from mkdcnet.tensor import load_tensor, save_tensor

        rng = np.random.default_rng(3)
        t = Tensor(rng.standard_normal((2, 3, 5, 7)).astype(np.float32))
        path = tmp_path / "t.mkdt"
        save_tensor(path, t)
        back = load_tensor(path)
        assert back.shape == t.shape
        assert np.array_equal(back.data, t.data)

    def test_header_layout(self):
        t = Tensor.full((1, 2, 3, 4), 1.0)
        raw = t.to_bytes()
        assert raw[:4] == b"MKDT"
        assert int.from_bytes(raw[4:8], "little") == 1
        shape = [int.from_bytes(raw[8 + 4 * i:12 + 4 * i], "little") for i in range(4)]
        assert shape == [1, 2, 3, 4]
        assert len(raw) == 24 + 4 * 24

    def test_truncated_dump(self):
        t = Tensor.full((1, 1, 2, 2), 1.0)
        raw = t.to_bytes()[:-3]
        with pytest.raises(ValueError, match="truncated"):
            Tensor.from_bytes(raw)


class TestElementwise:
    def test_relu_definition(self):
        t = Tensor.from_values((1, 1, 1, 3), [-1.0, 0.0, 2.0])
        assert np.array_equal(ops.relu(t).flat(), [0.0, 0.0, 2.0])

    def test_relu_idempotent(self):
        rng = np.random.default_rng(1)
        t = Tensor(rng.standard_normal((2, 3, 4, 4)).astype(np.float32))
        once = ops.relu(t)
        twice = ops.relu(once)
        assert np.array_equal(once.data, twice.data)

    def test_sigmoid_midpoint(self):
        assert ops.sigmoid(Tensor.zeros((1, 1, 1, 1))).item() == 0.5

    def test_sigmoid_open_interval(self):
        t = Tensor.from_values((1, 1, 1, 4), [-100.0, -1.0, 1.0, 100.0])
        y = ops.sigmoid(t).flat()
        assert np.all(y > 0.0) and np.all(y < 1.0)

    def test_add(self):
        a = Tensor.from_values((1, 1, 1, 2), [1.0, 2.0])
        b = Tensor.from_values((1, 1, 1, 2), [3.0, 4.0])
        assert np.array_equal(ops.add(a, b).flat(), [4.0, 6.0])

    def test_binary_shape_mismatch(self):
        a = Tensor.zeros((1, 1, 2, 2))
        b = Tensor.zeros((1, 2, 2, 2))
        with pytest.raises(ShapeError):
            ops.add(a, b)

    def test_dispatcher(self):
        a = Tensor.full((1, 1, 1, 2), 2.0)
        b = Tensor.full((1, 1, 1, 2), 5.0)
        assert np.array_equal(ops.elementwise("mul", a, b).flat(), [10.0, 10.0])
        assert np.array_equal(ops.elementwise("scale", a, 3.0).flat(), [6.0, 6.0])
        assert np.array_equal(ops.elementwise("sub", b, a).flat(), [3.0, 3.0])
        with pytest.raises(ValueError):
            ops.elementwise("pow", a, b)


class TestConcat:
    def test_shape_arithmetic(self):
        a = Tensor.zeros((1, 2, 4, 4))
        b = Tensor.zeros((1, 3, 4, 4))
        assert ops.concat_channels([a, b]).shape == (1, 5, 4, 4)

    def test_single_identity(self):
        rng = np.random.default_rng(2)
        a = Tensor(rng.standard_normal((1, 2, 3, 3)).astype(np.float32))
        assert np.array_equal(ops.concat_channels([a]).data, a.data)

    def test_data_order(self):
        # frozen from a manual index-map enumeration of the layout rule
        a = Tensor.from_values((1, 1, 2, 2), [1, 2, 3, 4])
        b = Tensor.from_values((1, 1, 2, 2), [5, 6, 7, 8])
        out = ops.concat_channels([a, b])
        assert np.array_equal(out.flat(), [1, 2, 3, 4, 5, 6, 7, 8])

    def test_mismatch(self):
        a = Tensor.zeros((1, 2, 4, 4))
        b = Tensor.zeros((1, 2, 5, 4))
        with pytest.raises(ShapeError):
            ops.concat_channels([a, b])

    def test_slice_recovers_inputs(self):
        rng = np.random.default_rng(4)
        parts = [Tensor(rng.standard_normal((2, c, 3, 3)).astype(np.float32))
                 for c in (1, 3, 2)]
        merged = ops.concat_channels(parts)
        start = 0
        for p in parts:
            stop = start + p.shape[1]
            assert np.array_equal(ops.slice_channels(merged, start, stop).data, p.data)
            start = stop
