"""Full segmentation network: residual encoder, per-scale trunk convs and
multiple-kernel dilated convolution blocks, three decoder stages, multiscale
feature fusion, and a 1x1 sigmoid head.

The encoder emits four feature maps at strides 2/4/8/16; three decoder
doublings plus the fusion stage's three doublings bring the mask back to
the input resolution, so any input with H and W divisible by 16 works.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .blocks import (Conv2dLayer, ConvBnRelu, DecoderBlock, MKDCBlock, MSFFBlock,
                     ResidualBlock, _Composite)
from .tensor import ShapeError, Tensor


@dataclass
class ModelConfig:
    encoder_widths: tuple[int, int, int, int] = (16, 32, 64, 128)
    trunk_width: int = 96
    use_mkdc: bool = True
    use_msff: bool = True
    attention_reduction: int = 8
    in_channels: int = 3
    seed: int = 0

    def __post_init__(self):
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        if len(self.encoder_widths) != 4 or any(w < 1 for w in self.encoder_widths):
            raise ValueError(f"encoder_widths must be 4 positive ints, got {self.encoder_widths}")
        if self.trunk_width < 1:
            raise ValueError("trunk_width must be positive")
        if self.trunk_width % self.attention_reduction:
            raise ValueError(f"trunk_width {self.trunk_width} must be divisible by "
                             f"attention_reduction {self.attention_reduction}")


class Encoder(_Composite):
    """Stem conv (stride 2) followed by three stride-2 residual stages."""

    def __init__(self, rng, in_ch: int, widths, dtype=np.float32):
        w1, w2, w3, w4 = widths
        self.stem = ConvBnRelu(rng, in_ch, w1, 3, stride=2, dtype=dtype)
        self.stage2 = ResidualBlock(rng, w1, w2, stride=2, dtype=dtype)
        self.stage3 = ResidualBlock(rng, w2, w3, stride=2, dtype=dtype)
        self.stage4 = ResidualBlock(rng, w3, w4, stride=2, dtype=dtype)

    def forward(self, x: Tensor, training: bool):
        f1 = self.stem.forward(x, training)
        f2 = self.stage2.forward(f1, training)
        f3 = self.stage3.forward(f2, training)
        f4 = self.stage4.forward(f3, training)
        return f1, f2, f3, f4


class MKDCNet(_Composite):
    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        t = cfg.trunk_width
        r = cfg.attention_reduction
        self.encoder = Encoder(rng, cfg.in_channels, cfg.encoder_widths, dtype=dtype)
        self.trunks = [ConvBnRelu(rng, w, t, 3, dtype=dtype) for w in cfg.encoder_widths]
        if cfg.use_mkdc:
            self.scales = [MKDCBlock(rng, t, t, r, dtype=dtype) for _ in range(4)]
        else:
            self.scales = [ConvBnRelu(rng, t, t, 3, dtype=dtype) for _ in range(4)]
        self.dec1 = DecoderBlock(rng, t, t, t, dtype=dtype)
        self.dec2 = DecoderBlock(rng, t, t, t, dtype=dtype)
        self.dec3 = DecoderBlock(rng, t, t, t, dtype=dtype)
        if cfg.use_msff:
            self.fusion = MSFFBlock(rng, t, t, r, dtype=dtype)
        else:
            self.fusion = ConvBnRelu(rng, t, t, 3, dtype=dtype)
        self.head = Conv2dLayer(rng, t, 1, 1, dtype=dtype)

    def forward(self, x: Tensor, training: bool = False,
                collect: dict | None = None) -> Tensor:
        n, c, h, w = x.shape
        if c != self.cfg.in_channels:
            raise ShapeError(f"model expects {self.cfg.in_channels} input channels, got {c}")
        if h % 16 or w % 16:
            raise ShapeError(f"input H and W must be divisible by 16, got {h}x{w}")
        feats = self.encoder.forward(x, training)
        s = [self.scales[i].forward(self.trunks[i].forward(feats[i], training), training)
             for i in range(4)]
        d1 = self.dec1.forward(s[3], s[2], training)
        d2 = self.dec2.forward(d1, s[1], training)
        d3 = self.dec3.forward(d2, s[0], training)
        if self.cfg.use_msff:
            fused = self.fusion.forward(d1, d2, d3, training)
        else:
            fused = self.fusion.forward(ops.bilinear_upsample2x(d3), training)
        prob = ops.sigmoid(self.head.forward(fused))
        if collect is not None:
            for key, val in zip(("f1", "f2", "f3", "f4"), feats):
                collect[key] = val
            for i, si in enumerate(s, 1):
                collect[f"scale{i}"] = si
            collect.update({"d1": d1, "d2": d2, "d3": d3, "fused": fused, "prob": prob})
        return prob

    # -- parameter store ----------------------------------------------------

    def named_params(self) -> dict[str, Tensor]:
        """Parameters keyed by path, iterated in sorted-name order."""
        pairs = list(self.iter_params("net"))
        names = [n for n, _ in pairs]
        if len(set(names)) != len(names):
            raise RuntimeError("duplicate parameter names")
        return dict(sorted(pairs))

    def named_buffers(self) -> dict[str, np.ndarray]:
        return dict(sorted(self.iter_buffers("net")))

    def count_params(self) -> int:
        return count_params(self)

    def load_arrays(self, params: dict[str, np.ndarray],
                    buffers: dict[str, np.ndarray] | None = None) -> None:
        own = self.named_params()
        if set(params) != set(own):
            missing = sorted(set(own) - set(params))
            extra = sorted(set(params) - set(own))
            raise ValueError(f"parameter name mismatch: missing={missing[:3]} extra={extra[:3]}")
        for name, arr in params.items():
            t = own[name]
            if arr.shape != t.data.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {t.data.shape}")
            t.data[...] = arr.astype(t.dtype)
        if buffers:
            own_b = self.named_buffers()
            for name, arr in buffers.items():
                if name not in own_b:
                    raise ValueError(f"unknown buffer {name}")
                own_b[name][...] = arr.reshape(own_b[name].shape).astype(own_b[name].dtype)


def count_params(module) -> int:
    """Total element count over a module's parameter tensors."""
    return sum(t.size for _, t in module.iter_params("m"))


def build_model(cfg: ModelConfig, dtype=np.float32) -> MKDCNet:
    return MKDCNet(cfg, dtype=dtype)


ABLATION_VARIANTS = (
    ("MKDCNet w/o Multiple Kernel Dilated Convolution", False, True),
    ("MKDCNet w/o Multiscale Feature Fusion", True, False),
    ("MKDCNet w/o Multiple Kernel Dilated Convolution & Multiscale Feature Fusion", False, False),
    ("MKDCNet", True, True),
)


def ablate(cfg: ModelConfig, use_mkdc: bool, use_msff: bool) -> MKDCNet:
    """Build a variant of `cfg` with the two block families toggled."""
    variant = ModelConfig(encoder_widths=cfg.encoder_widths, trunk_width=cfg.trunk_width,
                          use_mkdc=use_mkdc, use_msff=use_msff,
                          attention_reduction=cfg.attention_reduction,
                          in_channels=cfg.in_channels, seed=cfg.seed)
    return build_model(variant)
