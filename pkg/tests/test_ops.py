import numpy as np
import pytest

from mkdcnet import ops
from mkdcnet.ops import BatchNormState, Conv2dParams, conv_out_size
from mkdcnet.tensor import ShapeError, Tensor

from oracles import bilinear_reference, naive_conv2d


def make_conv(rng, ci, co, k, stride=1, padding=0, dilation=1, bias=True,
              dtype=np.float32):
    w = Tensor(rng.standard_normal((co, ci, k, k)).astype(dtype))
    b = Tensor(rng.standard_normal((1, co, 1, 1)).astype(dtype)) if bias else None
    return Conv2dParams(w, b, stride=stride, padding=padding, dilation=dilation)


def random_conv_config(rng):
    """One valid random configuration with a small output, oracle-friendly."""
    k = int(rng.choice([1, 3, 7, 11]))
    d = int(rng.choice([1, 2, 3, 7, 11]))
    s = int(rng.choice([1, 2]))
    p = int(rng.integers(0, 6))
    oh = int(rng.integers(1, 4))
    ow = int(rng.integers(1, 4))
    k_eff = d * (k - 1) + 1
    h = (oh - 1) * s + k_eff - 2 * p
    w = (ow - 1) * s + k_eff - 2 * p
    if h < 1 or w < 1:
        return None
    ci = int(rng.integers(1, 4))
    co = int(rng.integers(1, 4))
    n = int(rng.integers(1, 3))
    return n, ci, co, k, s, p, d, h, w


class TestConvForward:
    def test_sum_kernel_3x3(self):
        x = Tensor.from_values((1, 1, 3, 3), np.arange(1, 10))
        p = Conv2dParams(Tensor(np.ones((1, 1, 3, 3), dtype=np.float32)))
        for mode in ("exact", "fast"):
            assert ops.conv2d(x, p, mode=mode).item() == 45.0

    def test_dilated_samples_alternate_pixels(self):
        x = Tensor.from_values((1, 1, 5, 5), np.arange(1, 26))
        p = Conv2dParams(Tensor(np.ones((1, 1, 3, 3), dtype=np.float32)), dilation=2)
        assert ops.conv2d(x, p, mode="exact").item() == 117.0

    def test_same_padding_shape(self):
        assert conv_out_size(256, 3, 1, 1, 1) == 256

    def test_effective_kernel_extent(self):
        # k_eff = d*(k-1)+1
        assert conv_out_size(23, 3, 1, 0, 11) == 1

    def test_identity_weights(self):
        rng = np.random.default_rng(0)
        c = 3
        w = np.zeros((c, c, 1, 1), dtype=np.float32)
        for i in range(c):
            w[i, i, 0, 0] = 1.0
        p = Conv2dParams(Tensor(w))
        x = Tensor(rng.standard_normal((2, c, 5, 5)).astype(np.float32))
        assert np.array_equal(ops.conv2d(x, p).data, x.data)

    def test_channel_mismatch(self):
        rng = np.random.default_rng(1)
        p = make_conv(rng, 3, 4, 3)
        with pytest.raises(ShapeError):
            ops.conv2d(Tensor.zeros((1, 2, 8, 8)), p)

    def test_nonpositive_output(self):
        rng = np.random.default_rng(2)
        p = make_conv(rng, 1, 1, 11, dilation=11)  # k_eff = 111
        with pytest.raises(ShapeError):
            ops.conv2d(Tensor.zeros((1, 1, 32, 32)), p)

    def test_exact_matches_naive_loop_bit_for_bit(self):
        rng = np.random.default_rng(42)
        checked = 0
        while checked < 30:
            cfg = random_conv_config(rng)
            if cfg is None:
                continue
            n, ci, co, k, s, p, d, h, w = cfg
            x = Tensor(rng.standard_normal((n, ci, h, w)).astype(np.float32))
            params = make_conv(rng, ci, co, k, stride=s, padding=p, dilation=d)
            got = ops.conv2d(x, params, mode="exact")
            want = naive_conv2d(x.data, params.weight.data, params.bias.data.ravel(),
                                s, p, d)
            assert got.shape == want.shape
            assert np.array_equal(got.data, want), f"config {cfg}"
            checked += 1

    def test_fast_agrees_with_exact(self):
        rng = np.random.default_rng(43)
        checked = 0
        while checked < 30:
            cfg = random_conv_config(rng)
            if cfg is None:
                continue
            n, ci, co, k, s, p, d, h, w = cfg
            x = Tensor(rng.standard_normal((n, ci, h, w)).astype(np.float32))
            params = make_conv(rng, ci, co, k, stride=s, padding=p, dilation=d)
            fast = ops.conv2d(x, params, mode="fast").data
            exact = ops.conv2d(x, params, mode="exact").data
            np.testing.assert_allclose(fast, exact, rtol=2e-5, atol=2e-5)
            checked += 1

    def test_fft_path_agrees_on_large_kernels(self):
        rng = np.random.default_rng(44)
        for k in (7, 11):
            x = Tensor(rng.standard_normal((2, 4, 2 * k, 2 * k)).astype(np.float32))
            params = make_conv(rng, 4, 3, k, padding=(k - 1) // 2)
            fast = ops.conv2d(x, params, mode="fast").data
            exact = ops.conv2d(x, params, mode="exact").data
            np.testing.assert_allclose(fast, exact, rtol=1e-4, atol=1e-4)


class TestBatchNorm:
    def _state(self, c, dtype=np.float32):
        return BatchNormState(
            gamma=Tensor(np.ones((1, c, 1, 1), dtype=dtype)),
            beta=Tensor(np.zeros((1, c, 1, 1), dtype=dtype)),
            running_mean=np.zeros(c, dtype=dtype),
            running_var=np.ones(c, dtype=dtype))

    def test_constant_input_gives_beta(self):
        st = self._state(2)
        st.beta.data[...] = np.array([0.3, -0.7]).reshape(1, 2, 1, 1)
        x = Tensor.full((2, 2, 4, 4), 5.0)
        y = ops.batchnorm2d(x, st, training=True)
        assert np.abs(y.data - st.beta.data).max() <= 1e-5

    def test_standardizes_batch(self):
        rng = np.random.default_rng(5)
        st = self._state(3)
        x = Tensor((rng.standard_normal((4, 3, 8, 8)) * 3 + 2).astype(np.float32))
        y = ops.batchnorm2d(x, st, training=True)
        mean = y.data.mean(axis=(0, 2, 3))
        var = y.data.var(axis=(0, 2, 3))
        assert np.abs(mean).max() < 1e-5
        assert np.abs(var - 1).max() < 1e-3

    def test_eval_mode_formula(self):
        st = self._state(1)
        st.gamma.data[...] = 2.0
        st.beta.data[...] = 1.0
        x = Tensor.full((1, 1, 1, 1), 3.0)
        y = ops.batchnorm2d(x, st, training=False)
        # y = gamma*(x-rm)/sqrt(rv+eps)+beta = 2*3/sqrt(1+1e-5)+1
        assert abs(y.item() - 7.0) <= 1e-4

    def test_running_stats_update(self):
        rng = np.random.default_rng(6)
        st = self._state(2)
        x = Tensor((rng.standard_normal((4, 2, 8, 8)) * 2 + 1).astype(np.float32))
        ops.batchnorm2d(x, st, training=True)
        batch_mean = x.data.mean(axis=(0, 2, 3))
        batch_var = x.data.var(axis=(0, 2, 3))
        np.testing.assert_allclose(st.running_mean, 0.1 * batch_mean, rtol=1e-5)
        np.testing.assert_allclose(st.running_var, 0.9 + 0.1 * batch_var, rtol=1e-5)

    def test_eval_ignores_batch(self):
        rng = np.random.default_rng(7)
        st = self._state(2)
        before_m = st.running_mean.copy()
        x = Tensor(rng.standard_normal((4, 2, 4, 4)).astype(np.float32))
        ops.batchnorm2d(x, st, training=False)
        assert np.array_equal(st.running_mean, before_m)

    def test_channel_mismatch(self):
        st = self._state(3)
        with pytest.raises(ShapeError):
            ops.batchnorm2d(Tensor.zeros((1, 2, 4, 4)), st, training=True)


class TestBilinearUpsample:
    def test_single_pixel(self):
        x = Tensor.full((1, 1, 1, 1), 5.0)
        y = ops.bilinear_upsample2x(x)
        assert y.shape == (1, 1, 2, 2)
        assert np.array_equal(y.flat(), [5.0] * 4)

    def test_constant_stays_constant(self):
        for value in (5.0, -2.75, 0.1234567):
            x = Tensor.full((2, 3, 4, 6), value, dtype=np.float32)
            y = ops.bilinear_upsample2x(x)
            assert np.array_equal(y.data, np.full(y.shape, np.float32(value)))

    def test_mean_preserved_for_constants(self):
        x = Tensor.full((1, 2, 3, 3), 7.5)
        y = ops.bilinear_upsample2x(x)
        assert y.data.mean() == x.data.mean()

    def test_matches_scalar_reference(self):
        x = Tensor.from_values((1, 1, 2, 2), [1.0, 2.0, 3.0, 4.0])
        y = ops.bilinear_upsample2x(x)
        want = bilinear_reference(x.data, 4, 4)
        np.testing.assert_allclose(y.data, want, atol=1e-7)

    def test_matches_reference_random(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.standard_normal((2, 3, 5, 7)).astype(np.float32))
        y = ops.bilinear_upsample2x(x)
        want = bilinear_reference(x.data, 10, 14)
        np.testing.assert_allclose(y.data, want, atol=1e-6)


class TestPool:
    def test_global_avg(self):
        x = Tensor.from_values((1, 1, 2, 2), [1.0, 2.0, 3.0, 4.0])
        assert ops.pool(x, "global_avg").item() == 2.5

    def test_global_max(self):
        x = Tensor.from_values((1, 1, 2, 2), [1.0, 9.0, 3.0, 4.0])
        assert ops.pool(x, "global_max").item() == 9.0

    def test_channel_reductions(self):
        x = Tensor.from_values((1, 2, 1, 2), [1.0, 5.0, 2.0, 0.0])
        mx = ops.pool(x, "channel_max")
        avg = ops.pool(x, "channel_avg")
        assert np.array_equal(mx.flat(), [2.0, 5.0])
        assert np.array_equal(avg.flat(), [1.5, 2.5])

    def test_maxpool2x(self):
        x = Tensor.from_values((1, 1, 2, 2), [1.0, 2.0, 3.0, 4.0])
        y = ops.pool(x, "maxpool2x")
        assert y.shape == (1, 1, 1, 1)
        assert y.item() == 4.0

    def test_maxpool_odd_size_rejected(self):
        with pytest.raises(ShapeError):
            ops.maxpool2x(Tensor.zeros((1, 1, 3, 4)))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ops.pool(Tensor.zeros((1, 1, 2, 2)), "median")

    def test_maxpool_matches_blockwise_loop(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.standard_normal((2, 3, 6, 8)).astype(np.float32))
        y = ops.maxpool2x(x).data
        for n in range(2):
            for c in range(3):
                for i in range(3):
                    for j in range(4):
                        block = x.data[n, c, 2 * i:2 * i + 2, 2 * j:2 * j + 2]
                        assert y[n, c, i, j] == block.max()
