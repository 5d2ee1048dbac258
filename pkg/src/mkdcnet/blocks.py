"""Reusable network blocks: conv-BN-ReLU stacks, residual units, channel and
spatial attention gates, the multiple-kernel dilated convolution block, the
decoder stage, and the multiscale feature fusion stage.

Every block owns its parameters, exposes ``forward(x, training)`` and yields
``(name, tensor)`` pairs via ``iter_params`` in construction order so the
whole model can be flattened into a deterministic parameter store.
"""

from __future__ import annotations

import math

import numpy as np

from . import ops
from .ops import BatchNormState, Conv2dParams
from .tensor import ShapeError, Tensor

KERNEL_SIZES = (1, 3, 7, 11)
DILATION_RATES = (1, 3, 7, 11)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2dLayer:
    """Parameter holder for one convolution (Kaiming-uniform weights, zero bias)."""

    def __init__(self, rng, in_ch: int, out_ch: int, k: int, stride: int = 1,
                 padding: int = 0, dilation: int = 1, bias: bool = True,
                 dtype=np.float32):
        w = kaiming_uniform(rng, (out_ch, in_ch, k, k), in_ch * k * k, dtype)
        b = Tensor(np.zeros((1, out_ch, 1, 1), dtype=dtype), requires_grad=True) if bias else None
        self.p = Conv2dParams(Tensor(w, requires_grad=True), b,
                              stride=stride, padding=padding, dilation=dilation)

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.p)

    def iter_params(self, prefix: str):
        yield prefix + ".w", self.p.weight
        if self.p.bias is not None:
            yield prefix + ".b", self.p.bias

    def iter_buffers(self, prefix: str):
        return iter(())


class BatchNorm2dLayer:
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=np.float32):
        self.st = BatchNormState(
            gamma=Tensor(np.ones((1, channels, 1, 1), dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros((1, channels, 1, 1), dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            eps=eps, momentum=momentum)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        return ops.batchnorm2d(x, self.st, training)

    def iter_params(self, prefix: str):
        yield prefix + ".gamma", self.st.gamma
        yield prefix + ".beta", self.st.beta

    def iter_buffers(self, prefix: str):
        yield prefix + ".running_mean", self.st.running_mean
        yield prefix + ".running_var", self.st.running_var


class _Composite:
    """Base for blocks made of named children."""

    def _children(self):
        for name, child in self.__dict__.items():
            if hasattr(child, "iter_params"):
                yield name, child
            elif isinstance(child, (list, tuple)):
                for i, sub in enumerate(child):
                    if hasattr(sub, "iter_params"):
                        yield f"{name}{i}", sub

    def iter_params(self, prefix: str):
        for name, child in self._children():
            yield from child.iter_params(f"{prefix}.{name}")

    def iter_buffers(self, prefix: str):
        for name, child in self._children():
            yield from child.iter_buffers(f"{prefix}.{name}")


class ConvBnRelu(_Composite):
    """conv (no bias) -> batchnorm -> relu, spatial size preserved when
    padding keeps the effective kernel centered."""

    def __init__(self, rng, in_ch: int, out_ch: int, k: int, stride: int = 1,
                 padding: int | None = None, dilation: int = 1, dtype=np.float32):
        if padding is None:
            padding = dilation * (k - 1) // 2
        self.conv = Conv2dLayer(rng, in_ch, out_ch, k, stride=stride,
                                padding=padding, dilation=dilation, bias=False, dtype=dtype)
        self.bn = BatchNorm2dLayer(out_ch, dtype=dtype)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        return ops.relu(self.bn.forward(self.conv.forward(x), training))


class ResidualBlock(_Composite):
    """Two conv-BN stages plus a shortcut; the second ReLU follows the add.

    The shortcut is a 1x1 conv + BN whenever the channel count or stride
    changes, otherwise the plain identity.
    """

    def __init__(self, rng, in_ch: int, out_ch: int, stride: int = 1, dtype=np.float32):
        self.conv1 = Conv2dLayer(rng, in_ch, out_ch, 3, stride=stride, padding=1,
                                 bias=False, dtype=dtype)
        self.bn1 = BatchNorm2dLayer(out_ch, dtype=dtype)
        self.conv2 = Conv2dLayer(rng, out_ch, out_ch, 3, padding=1, bias=False, dtype=dtype)
        self.bn2 = BatchNorm2dLayer(out_ch, dtype=dtype)
        self.project = in_ch != out_ch or stride != 1
        if self.project:
            self.conv_id = Conv2dLayer(rng, in_ch, out_ch, 1, stride=stride,
                                       bias=False, dtype=dtype)
            self.bn_id = BatchNorm2dLayer(out_ch, dtype=dtype)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        y = ops.relu(self.bn1.forward(self.conv1.forward(x), training))
        y = self.bn2.forward(self.conv2.forward(y), training)
        shortcut = self.bn_id.forward(self.conv_id.forward(x), training) if self.project else x
        return ops.relu(ops.add(y, shortcut))


class ChannelAttention(_Composite):
    """Sigmoid gate from a shared two-layer map over global avg and max pools."""

    def __init__(self, rng, channels: int, reduction: int = 8, dtype=np.float32):
        if channels % reduction:
            raise ShapeError(f"channel attention: {channels} channels not divisible "
                             f"by reduction {reduction}")
        self.fc1 = Conv2dLayer(rng, channels, channels // reduction, 1, dtype=dtype)
        self.fc2 = Conv2dLayer(rng, channels // reduction, channels, 1, dtype=dtype)

    def _map(self, v: Tensor) -> Tensor:
        return self.fc2.forward(ops.relu(self.fc1.forward(v)))

    def forward(self, x: Tensor, training: bool) -> Tensor:
        gate = ops.sigmoid(ops.add(self._map(ops.global_avg_pool(x)),
                                   self._map(ops.global_max_pool(x))))
        return ops.scale_channels(x, gate)


class SpatialAttention(_Composite):
    """Sigmoid gate from a conv over stacked channel-mean and channel-max maps."""

    def __init__(self, rng, kernel: int = 7, dtype=np.float32):
        if kernel % 2 == 0 or kernel < 1:
            raise ShapeError(f"spatial attention kernel must be odd, got {kernel}")
        self.conv = Conv2dLayer(rng, 2, 1, kernel, padding=(kernel - 1) // 2, dtype=dtype)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        stats = ops.concat_channels([ops.channel_avg_pool(x), ops.channel_max_pool(x)])
        gate = ops.sigmoid(self.conv.forward(stats))
        return ops.scale_spatial(x, gate)


class MKDCBlock(_Composite):
    """Multiple-kernel dilated convolution block.

    Four parallel conv-BN-ReLU branches with kernel sizes 1/3/7/11, concat,
    four parallel 3x3 branches with dilations 1/3/7/11, concat, a 1x1
    fusion conv, a 1x1-projected residual of the block input, then channel
    and spatial attention. Spatial dims are preserved throughout.
    """

    def __init__(self, rng, in_ch: int, out_ch: int, reduction: int = 8, dtype=np.float32):
        self.kernel_branches = [ConvBnRelu(rng, in_ch, out_ch, k, dtype=dtype)
                                for k in KERNEL_SIZES]
        self.dilation_branches = [ConvBnRelu(rng, 4 * out_ch, out_ch, 3, dilation=d, dtype=dtype)
                                  for d in DILATION_RATES]
        self.fuse = Conv2dLayer(rng, 4 * out_ch, out_ch, 1, dtype=dtype)
        self.shortcut = Conv2dLayer(rng, in_ch, out_ch, 1, dtype=dtype)
        self.channel_att = ChannelAttention(rng, out_ch, reduction, dtype=dtype)
        self.spatial_att = SpatialAttention(rng, dtype=dtype)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        multi_kernel = ops.concat_channels([b.forward(x, training) for b in self.kernel_branches])
        multi_dilation = ops.concat_channels([b.forward(multi_kernel, training)
                                              for b in self.dilation_branches])
        y = ops.add(self.fuse.forward(multi_dilation), self.shortcut.forward(x))
        y = self.channel_att.forward(y, training)
        return self.spatial_att.forward(y, training)


class DecoderBlock(_Composite):
    """2x upsample, concat with the skip feature, then two residual blocks."""

    def __init__(self, rng, in_ch: int, skip_ch: int, out_ch: int, dtype=np.float32):
        self.res1 = ResidualBlock(rng, in_ch + skip_ch, out_ch, dtype=dtype)
        self.res2 = ResidualBlock(rng, out_ch, out_ch, dtype=dtype)

    def forward(self, x: Tensor, skip: Tensor, training: bool) -> Tensor:
        up = ops.bilinear_upsample2x(x)
        if up.shape[2:] != skip.shape[2:]:
            raise ShapeError(f"decoder: upsampled input {up.shape[2:]} does not match "
                             f"skip {skip.shape[2:]}")
        y = ops.concat_channels([up, skip])
        y = self.res1.forward(y, training)
        return self.res2.forward(y, training)


class MSFFBlock(_Composite):
    """Multiscale feature fusion: progressively upsample the deepest decoder
    output, folding in the shallower ones, finishing with attention.

    Expects d1/d2/d3 at 1/8, 1/4, 1/2 of the target resolution; the three
    doublings land the output at full resolution.
    """

    def __init__(self, rng, ch: int, out_ch: int, reduction: int = 8, dtype=np.float32):
        self.fuse1 = ConvBnRelu(rng, ch, out_ch, 3, dtype=dtype)
        self.fuse2 = ConvBnRelu(rng, out_ch + ch, out_ch, 3, dtype=dtype)
        self.fuse3 = ConvBnRelu(rng, out_ch + ch, out_ch, 3, dtype=dtype)
        self.channel_att = ChannelAttention(rng, out_ch, reduction, dtype=dtype)
        self.spatial_att = SpatialAttention(rng, dtype=dtype)

    def forward(self, d1: Tensor, d2: Tensor, d3: Tensor, training: bool) -> Tensor:
        y = self.fuse1.forward(ops.bilinear_upsample2x(d1), training)
        if y.shape[2:] != d2.shape[2:]:
            raise ShapeError(f"msff: scale chain mismatch {y.shape[2:]} vs d2 {d2.shape[2:]}")
        y = self.fuse2.forward(ops.bilinear_upsample2x(ops.concat_channels([y, d2])), training)
        if y.shape[2:] != d3.shape[2:]:
            raise ShapeError(f"msff: scale chain mismatch {y.shape[2:]} vs d3 {d3.shape[2:]}")
        y = self.fuse3.forward(ops.bilinear_upsample2x(ops.concat_channels([y, d3])), training)
        y = self.channel_att.forward(y, training)
        return self.spatial_att.forward(y, training)
