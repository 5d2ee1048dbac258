"""The gradient-check suite: every differentiable operator, every block, and
a toy-width full model, verified against 64-bit central differences.

Losses are random-weighted sums of the outputs so sign errors cannot cancel.
Entry names are grouped by prefix (ops/, loss/, blocks/, model/) for the CLI
filter. The whole suite is sized to finish well inside the 10-minute gate.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .blocks import (ChannelAttention, Conv2dLayer, ConvBnRelu, DecoderBlock,
                     MKDCBlock, MSFFBlock, ResidualBlock, SpatialAttention)
from .gradcheck import grad_check
from .losses import bce_dice_loss, bce_loss, dice_loss
from .model import ModelConfig, build_model
from .tensor import Tensor

TOLERANCE = 1e-4


def _t(rng, shape, scale=1.0, shift=0.0):
    return Tensor(rng.standard_normal(shape) * scale + shift, requires_grad=True)


def _randomize_affine(module, rng) -> None:
    """Move BN affine params and conv biases off their init values so the
    check point is generic (beta=0 parks every ReLU exactly on its kink)."""
    for name, t in module.iter_params("r"):
        if name.endswith(".beta"):
            t.data += rng.standard_normal(t.data.shape) * 0.3
        elif name.endswith(".gamma"):
            t.data *= rng.uniform(0.7, 1.3, t.data.shape)
        elif name.endswith(".b"):
            t.data += rng.standard_normal(t.data.shape) * 0.05


def _wsum(y: Tensor, rng) -> Tensor:
    w = Tensor(rng.standard_normal(y.shape))
    return ops.sum_all(ops.mul(y, w))


def _params_of(module) -> list[Tensor]:
    return [t for _, t in module.iter_params("g")]


def _check_elementwise(name):
    def run():
        rng = np.random.default_rng(11)
        a = _t(rng, (2, 3, 4, 5))
        b = _t(rng, (2, 3, 4, 5))
        wrng = np.random.default_rng(12)

        def loss():
            if name == "scale":
                y = ops.scale(a, 1.7)
            elif name in ("relu", "sigmoid"):
                y = getattr(ops, name)(a)
            else:
                y = getattr(ops, name)(a, b)
            return _wsum(y, np.random.default_rng(13))

        tensors = [a] if name in ("scale", "relu", "sigmoid") else [a, b]
        return grad_check(loss, tensors, rng=wrng)

    return run


def _check_concat():
    rng = np.random.default_rng(21)
    a = _t(rng, (2, 2, 4, 4))
    b = _t(rng, (2, 3, 4, 4))

    def loss():
        y = ops.concat_channels([a, b])
        y = ops.slice_channels(y, 1, 4)
        return _wsum(y, np.random.default_rng(22))

    return grad_check(loss, [a, b], rng=np.random.default_rng(23))


def _check_conv(k, stride, padding, dilation, mode):
    rng = np.random.default_rng(100 * k + stride + padding + dilation)
    size = max(8, dilation * (k - 1) + 1 + stride)
    x = _t(rng, (2, 3, size, size))
    layer = Conv2dLayer(rng, 3, 4, k, stride=stride, padding=padding,
                        dilation=dilation, dtype=np.float64)

    def loss():
        y = ops.conv2d(x, layer.p, mode=mode)
        return _wsum(y, np.random.default_rng(31))

    return grad_check(loss, [x] + _params_of(layer), max_coords_per_tensor=12,
                      rng=np.random.default_rng(32))


def _check_batchnorm(training):
    rng = np.random.default_rng(41)
    from .blocks import BatchNorm2dLayer

    x = _t(rng, (3, 4, 5, 5), scale=2.0, shift=0.5)
    bn = BatchNorm2dLayer(4, dtype=np.float64)
    bn.st.running_mean[:] = rng.standard_normal(4) * 0.2
    bn.st.running_var[:] = rng.uniform(0.5, 2.0, 4)

    def loss():
        y = ops.batchnorm2d(x, bn.st, training=training, update_running=False)
        return _wsum(y, np.random.default_rng(42))

    return grad_check(loss, [x] + _params_of(bn), rng=np.random.default_rng(43))


def _check_upsample():
    rng = np.random.default_rng(51)
    x = _t(rng, (2, 3, 5, 7))

    def loss():
        return _wsum(ops.bilinear_upsample2x(x), np.random.default_rng(52))

    return grad_check(loss, [x], rng=np.random.default_rng(53))


def _check_pool(kind):
    rng = np.random.default_rng(61)
    x = _t(rng, (2, 4, 6, 6))

    def loss():
        return _wsum(ops.pool(x, kind), np.random.default_rng(62))

    return grad_check(loss, [x], rng=np.random.default_rng(63))


def _check_gate(spatial):
    rng = np.random.default_rng(71)
    x = _t(rng, (2, 3, 4, 4))
    gate = _t(rng, (2, 1, 4, 4) if spatial else (2, 3, 1, 1), scale=0.3, shift=0.5)

    def loss():
        fn = ops.scale_spatial if spatial else ops.scale_channels
        return _wsum(fn(x, gate), np.random.default_rng(72))

    return grad_check(loss, [x, gate], rng=np.random.default_rng(73))


def _check_loss(which):
    rng = np.random.default_rng(81)
    # predictions stay inside the clamp so the loss is smooth at the check point
    p = Tensor(rng.uniform(0.05, 0.95, (1, 1, 4, 4)), requires_grad=True)
    t = Tensor((rng.random((1, 1, 4, 4)) > 0.5).astype(np.float64))
    fn = {"bce": bce_loss, "dice": dice_loss, "bce_dice": bce_dice_loss}[which]

    def loss():
        return fn(p, t)

    return grad_check(loss, [p], rng=np.random.default_rng(82))


def _check_block(factory, shape, seed, coords=6):
    rng = np.random.default_rng(seed)
    block = factory(rng)
    _randomize_affine(block, rng)
    x = _t(rng, shape, scale=0.8)

    def loss():
        y = block.forward(x, True)
        return _wsum(y, np.random.default_rng(seed + 1))

    return grad_check(loss, [x] + _params_of(block),
                      max_coords_per_tensor=coords, rng=np.random.default_rng(seed + 2))


def _check_decoder():
    rng = np.random.default_rng(91)
    block = DecoderBlock(rng, 6, 4, 5, dtype=np.float64)
    _randomize_affine(block, rng)
    d = _t(rng, (1, 6, 4, 4), scale=0.8)
    skip = _t(rng, (1, 4, 8, 8), scale=0.8)

    def loss():
        return _wsum(block.forward(d, skip, True), np.random.default_rng(92))

    return grad_check(loss, [d, skip] + _params_of(block),
                      max_coords_per_tensor=6, rng=np.random.default_rng(93))


def _check_msff():
    rng = np.random.default_rng(95)
    block = MSFFBlock(rng, 8, 8, reduction=8, dtype=np.float64)
    _randomize_affine(block, rng)
    d1 = _t(rng, (1, 8, 4, 4), scale=0.8)
    d2 = _t(rng, (1, 8, 8, 8), scale=0.8)
    d3 = _t(rng, (1, 8, 16, 16), scale=0.8)

    def loss():
        return _wsum(block.forward(d1, d2, d3, True), np.random.default_rng(96))

    return grad_check(loss, [d1, d2, d3] + _params_of(block),
                      max_coords_per_tensor=4, rng=np.random.default_rng(97))


def _check_model():
    cfg = ModelConfig(encoder_widths=(4, 8, 8, 8), trunk_width=8, seed=7)
    net = build_model(cfg, dtype=np.float64)
    _randomize_affine(net, np.random.default_rng(102))
    rng = np.random.default_rng(98)
    x = _t(rng, (1, 3, 32, 32), scale=0.5, shift=0.5)

    def loss():
        y = net.forward(x, training=True)
        t = Tensor((np.random.default_rng(5).random((1, 1, 32, 32)) > 0.5).astype(np.float64))
        return bce_dice_loss(y, t)

    params = [x] + [t for _, t in sorted(net.named_params().items())]
    return grad_check(loss, params, max_coords_per_tensor=2,
                      rng=np.random.default_rng(99))


def suite_entries():
    entries = []
    for name in ("add", "sub", "mul", "scale", "relu", "sigmoid"):
        entries.append((f"ops/{name}", _check_elementwise(name)))
    entries.append(("ops/concat_slice", _check_concat))
    entries.append(("ops/conv2d_k3_fast", lambda: _check_conv(3, 1, 1, 1, "fast")))
    entries.append(("ops/conv2d_k3_exact", lambda: _check_conv(3, 1, 1, 1, "exact")))
    entries.append(("ops/conv2d_k1", lambda: _check_conv(1, 1, 0, 1, "fast")))
    entries.append(("ops/conv2d_dilated_d3", lambda: _check_conv(3, 1, 3, 3, "fast")))
    entries.append(("ops/conv2d_strided", lambda: _check_conv(3, 2, 1, 1, "fast")))
    entries.append(("ops/conv2d_k7", lambda: _check_conv(7, 1, 3, 1, "fast")))
    entries.append(("ops/batchnorm_train", lambda: _check_batchnorm(True)))
    entries.append(("ops/batchnorm_eval", lambda: _check_batchnorm(False)))
    entries.append(("ops/bilinear_upsample2x", _check_upsample))
    for kind in ("global_avg", "global_max", "channel_avg", "channel_max", "maxpool2x"):
        entries.append((f"ops/pool_{kind}", lambda k=kind: _check_pool(k)))
    entries.append(("ops/scale_channels", lambda: _check_gate(False)))
    entries.append(("ops/scale_spatial", lambda: _check_gate(True)))
    for which in ("bce", "dice", "bce_dice"):
        entries.append((f"loss/{which}", lambda w=which: _check_loss(w)))
    entries.append(("blocks/conv_bn_relu",
                    lambda: _check_block(lambda r: ConvBnRelu(r, 3, 4, 3, dtype=np.float64),
                                         (2, 3, 6, 6), 201)))
    entries.append(("blocks/residual_same",
                    lambda: _check_block(lambda r: ResidualBlock(r, 4, 4, dtype=np.float64),
                                         (1, 4, 6, 6), 203)))
    entries.append(("blocks/residual_project",
                    lambda: _check_block(lambda r: ResidualBlock(r, 3, 5, stride=2, dtype=np.float64),
                                         (1, 3, 8, 8), 205)))
    entries.append(("blocks/channel_attention",
                    lambda: _check_block(lambda r: ChannelAttention(r, 8, 4, dtype=np.float64),
                                         (1, 8, 5, 5), 207)))
    entries.append(("blocks/spatial_attention",
                    lambda: _check_block(lambda r: SpatialAttention(r, dtype=np.float64),
                                         (1, 4, 8, 8), 209)))
    entries.append(("blocks/mkdc",
                    lambda: _check_block(lambda r: MKDCBlock(r, 4, 8, reduction=8, dtype=np.float64),
                                         (1, 4, 8, 8), 211, coords=4)))
    entries.append(("blocks/decoder", _check_decoder))
    entries.append(("blocks/msff", _check_msff))
    entries.append(("model/full_toy", _check_model))
    return entries


def run_suite(module_filter: str | None = None):
    """Run the checks; yields (name, max_rel_err) in order."""
    for name, fn in suite_entries():
        if module_filter and not name.startswith(module_filter.rstrip("/") + "/") \
                and module_filter != name:
            continue
        yield name, fn()
