"""Dataset plumbing: samples, deterministic splits, resizing, the training
augmentations (rotation, flips, coarse dropout), batching, and a synthetic
blob corpus that makes desk-scale training self-contained.

Randomness is derived per (seed, epoch, sample) so prefetch or evaluation
order can never change results.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .netpbm import load_netpbm, save_netpbm
from .ops import resize_bilinear_array
from .tensor import ShapeError, Tensor


@dataclass
class Sample:
    id: str
    image: Tensor  # (1,3,H,W) in [0,1]
    mask: Tensor   # (1,1,H,W) in {0,1}

    def validate(self) -> "Sample":
        if self.image.shape[0] != 1 or self.image.shape[1] != 3:
            raise ShapeError(f"{self.id}: image shape {self.image.shape} != (1,3,H,W)")
        if self.mask.shape[0] != 1 or self.mask.shape[1] != 1:
            raise ShapeError(f"{self.id}: mask shape {self.mask.shape} != (1,1,H,W)")
        if self.image.shape[2:] != self.mask.shape[2:]:
            raise ShapeError(f"{self.id}: image {self.image.shape[2:]} and mask "
                             f"{self.mask.shape[2:]} disagree")
        m = self.mask.data
        if not np.all((m == 0) | (m == 1)):
            raise ValueError(f"{self.id}: mask is not binary")
        return self


# ---------------------------------------------------------------------------
# resizing
# ---------------------------------------------------------------------------

def resize_bilinear(img: Tensor, size: tuple[int, int]) -> Tensor:
    h, w = size
    if h < 1 or w < 1:
        raise ShapeError(f"resize target must be positive, got {size}")
    if (h, w) == img.shape[2:]:
        return img.copy()
    return Tensor(resize_bilinear_array(img.data, h, w))


def resize_nearest(mask: Tensor, size: tuple[int, int]) -> Tensor:
    h, w = size
    if h < 1 or w < 1:
        raise ShapeError(f"resize target must be positive, got {size}")
    ih, iw = mask.shape[2:]
    if (h, w) == (ih, iw):
        return mask.copy()
    rows = np.clip(np.rint((np.arange(h) + 0.5) * ih / h - 0.5).astype(np.int64), 0, ih - 1)
    cols = np.clip(np.rint((np.arange(w) + 0.5) * iw / w - 0.5).astype(np.int64), 0, iw - 1)
    return Tensor(mask.data[:, :, rows[:, None], cols[None, :]])


def resize_sample(s: Sample, size: int) -> Sample:
    return Sample(s.id, resize_bilinear(s.image, (size, size)),
                  resize_nearest(s.mask, (size, size))).validate()


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

@dataclass
class SplitManifest:
    seed: int
    train: list[str]
    valid: list[str]
    test: list[str]
    ratios: tuple[float, ...] = (0.8, 0.1, 0.1)

    def ids(self, split: str) -> list[str]:
        if split not in ("train", "valid", "test"):
            raise ValueError(f"unknown split {split!r}")
        return getattr(self, split)


def split(ids: list[str], ratios: tuple[float, float, float], seed: int) -> SplitManifest:
    """Seeded shuffle then largest-remainder partition into train/valid/test."""
    if len(set(ids)) != len(ids):
        raise ValueError("corpus ids must be unique")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    order = list(np.random.default_rng(seed).permutation(len(ids)))
    shuffled = [ids[i] for i in order]
    n = len(ids)
    targets = [n * r for r in ratios]
    sizes = [math.floor(t) for t in targets]
    remainders = [t - s for t, s in zip(targets, sizes)]
    for _ in range(n - sum(sizes)):
        k = max(range(3), key=lambda i: (remainders[i], -i))
        sizes[k] += 1
        remainders[k] = -1.0
    a, b = sizes[0], sizes[0] + sizes[1]
    return SplitManifest(seed, shuffled[:a], shuffled[a:b], shuffled[b:], tuple(ratios))


def split_counts(ids: list[str], counts: tuple[int, int], seed: int) -> SplitManifest:
    """Two-way fixed-count mode (e.g. 880 train / 120 test, no validation)."""
    if len(set(ids)) != len(ids):
        raise ValueError("corpus ids must be unique")
    n_train, n_test = counts
    if n_train + n_test != len(ids):
        raise ValueError(f"counts {counts} do not cover {len(ids)} ids")
    order = list(np.random.default_rng(seed).permutation(len(ids)))
    shuffled = [ids[i] for i in order]
    return SplitManifest(seed, shuffled[:n_train], [], shuffled[n_train:],
                         (n_train / len(ids), 0.0, n_test / len(ids)))


def write_manifest(m: SplitManifest, path) -> None:
    with open(path, "w") as f:
        for name in ("train", "valid", "test"):
            for i in m.ids(name):
                f.write(f"{name} {i}\n")


def read_manifest(path, seed: int = 0) -> SplitManifest:
    m = SplitManifest(seed, [], [], [])
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2 or parts[0] not in ("train", "valid", "test"):
                raise ValueError(f"{path}:{lineno}: bad manifest line {line!r}")
            m.ids(parts[0]).append(parts[1])
    return m


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

@dataclass
class AugmentConfig:
    rotation_degrees: float = 45.0  # draw from [-r, +r]
    p_hflip: float = 0.5
    p_vflip: float = 0.5
    p_dropout: float = 0.5
    dropout_max_holes: int = 8
    dropout_max_h: int = 32
    dropout_max_w: int = 32
    dropout_on_mask: bool = False
    seed: int = 0

    def __post_init__(self):
        for p in (self.p_hflip, self.p_vflip, self.p_dropout):
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"augment probabilities must lie in [0,1], got {p}")


def _rotate_channels(x: np.ndarray, angle_deg: float, nearest: bool) -> np.ndarray:
    """Rotate (C,H,W) about the image center, zero fill outside."""
    if angle_deg == 0.0:
        return x.copy()
    c, h, w = x.shape
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64) - cy,
                         np.arange(w, dtype=np.float64) - cx, indexing="ij")
    sy = cos_t * yy + sin_t * xx + cy
    sx = -sin_t * yy + cos_t * xx + cx
    if nearest:
        yi = np.rint(sy).astype(np.int64)
        xi = np.rint(sx).astype(np.int64)
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        out = np.zeros_like(x)
        out[:, valid] = x[:, yi[valid], xi[valid]]
        return out
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy = sy - y0
    fx = sx - x0
    acc = np.zeros((c, h, w), dtype=np.float64)
    corners = ((y0, x0, (1 - fy) * (1 - fx)), (y0, x0 + 1, (1 - fy) * fx),
               (y0 + 1, x0, fy * (1 - fx)), (y0 + 1, x0 + 1, fy * fx))
    for yi, xi, wgt in corners:
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = np.zeros((c, h, w), dtype=np.float64)
        vals[:, valid] = x[:, yi[valid], xi[valid]]
        acc += vals * wgt
    return acc.astype(x.dtype)


def augment(sample: Sample, cfg: AugmentConfig, rng: np.random.Generator) -> Sample:
    """One fresh random draw per call: rotation, flips, coarse dropout.

    Rotation and flips transform image and mask identically (bilinear vs
    nearest resampling); dropout zeroes image rectangles only unless
    configured otherwise. The draw order is fixed so streams replay.
    """
    img = sample.image.data[0]
    mask = sample.mask.data[0]
    if cfg.rotation_degrees > 0:
        angle = float(rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees))
        img = _rotate_channels(img, angle, nearest=False)
        mask = _rotate_channels(mask, angle, nearest=True)
    else:
        img = img.copy()
        mask = mask.copy()
    if rng.random() < cfg.p_hflip:
        img = img[:, :, ::-1].copy()
        mask = mask[:, :, ::-1].copy()
    if rng.random() < cfg.p_vflip:
        img = img[:, ::-1, :].copy()
        mask = mask[:, ::-1, :].copy()
    if cfg.dropout_max_holes > 0 and rng.random() < cfg.p_dropout:
        h, w = img.shape[1:]
        holes = int(rng.integers(1, cfg.dropout_max_holes + 1))
        for _ in range(holes):
            hh = int(rng.integers(1, min(cfg.dropout_max_h, h) + 1))
            ww = int(rng.integers(1, min(cfg.dropout_max_w, w) + 1))
            y0 = int(rng.integers(0, h - hh + 1))
            x0 = int(rng.integers(0, w - ww + 1))
            img[:, y0:y0 + hh, x0:x0 + ww] = 0.0
            if cfg.dropout_on_mask:
                mask[:, y0:y0 + hh, x0:x0 + ww] = 0.0
    return Sample(sample.id, Tensor(img[None]), Tensor(mask[None])).validate()


def sample_rng(seed: int, epoch: int, sample_id: str) -> np.random.Generator:
    """Stream keyed by (seed, epoch, id) so prefetch order cannot matter."""
    digest = hashlib.sha256(sample_id.encode()).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence((seed, epoch, key)))


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, epoch)))


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

_BLUR_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _blur(img: np.ndarray) -> np.ndarray:
    """Separable 5-tap binomial blur with edge padding, per channel."""
    out = img.astype(np.float64)
    for axis in (1, 2):
        padded = np.pad(out, [(0, 0)] + [(2, 2) if a == axis else (0, 0) for a in (1, 2)],
                        mode="edge")
        acc = np.zeros_like(out)
        for k, wgt in enumerate(_BLUR_KERNEL):
            sl = [slice(None)] * 3
            sl[axis] = slice(k, k + out.shape[axis])
            acc += wgt * padded[tuple(sl)]
        out = acc
    return out


def _ellipse_mask(size: int, rng: np.random.Generator) -> np.ndarray:
    cy, cx = rng.uniform(0.25 * size, 0.75 * size, size=2)
    ry, rx = rng.uniform(size / 10.0, size / 4.0, size=2)
    phi = rng.uniform(0.0, math.pi)
    yy, xx = np.meshgrid(np.arange(size) - cy, np.arange(size) - cx, indexing="ij")
    u = math.cos(phi) * yy + math.sin(phi) * xx
    v = -math.sin(phi) * yy + math.cos(phi) * xx
    return (u / ry) ** 2 + (v / rx) ** 2 <= 1.0


def _polygon_mask(size: int, rng: np.random.Generator) -> np.ndarray:
    cy, cx = rng.uniform(0.3 * size, 0.7 * size, size=2)
    m = int(rng.integers(5, 10))
    angles = np.sort(rng.uniform(0.0, 2.0 * math.pi, size=m))
    radii = rng.uniform(size / 10.0, size / 4.0, size=m)
    py = cy + radii * np.sin(angles)
    px = cx + radii * np.cos(angles)
    yy, xx = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64), indexing="ij")
    inside = np.zeros((size, size), dtype=bool)
    # even-odd crossing test, vectorized over the pixel grid
    for i in range(m):
        j = (i - 1) % m
        cond = (py[i] > yy) != (py[j] > yy)
        denom = py[j] - py[i]
        xcross = (px[j] - px[i]) * (yy - py[i]) / denom + px[i]
        inside ^= cond & (xx < xcross)
    return inside


def _make_sample(sample_id: str, size: int, rng: np.random.Generator) -> Sample:
    for _ in range(100):
        mask = np.zeros((size, size), dtype=bool)
        for _ in range(int(rng.integers(1, 4))):
            blob = _ellipse_mask(size, rng) if rng.random() < 0.6 else _polygon_mask(size, rng)
            mask |= blob
        frac = mask.mean()
        if 0.01 <= frac <= 0.6:
            break
    else:
        raise RuntimeError(f"{sample_id}: could not draw a mask within area bounds")

    base = rng.uniform(0.3, 0.55, size=3)
    low = rng.standard_normal((3, size // 8 + 1, size // 8 + 1))
    texture = resize_bilinear_array(low[None], size, size)[0] * 0.05
    noise = rng.standard_normal((3, size, size)) * 0.02
    img = base[:, None, None] + texture + noise
    shift = rng.uniform(0.25, 0.45, size=3) * rng.choice([-1.0, 1.0], size=3)
    img = img + shift[:, None, None] * mask[None]
    img = np.clip(_blur(img), 0.0, 1.0).astype(np.float32)
    return Sample(sample_id, Tensor(img[None]),
                  Tensor(mask[None, None].astype(np.float32))).validate()


def synth_dataset(n: int, size: int, seed: int) -> list[Sample]:
    """Deterministic corpus of blob images; every mask covers 1-60% of pixels."""
    if size % 16:
        raise ValueError(f"synthetic image size must be divisible by 16, got {size}")
    return [_make_sample(f"synth{i:04d}", size,
                         np.random.default_rng(np.random.SeedSequence((seed, i))))
            for i in range(n)]


def save_corpus(samples: list[Sample], root) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for s in samples:
        save_netpbm(s.image, root / "images" / f"{s.id}.ppm")
        save_netpbm(s.mask, root / "masks" / f"{s.id}.pgm")


def load_corpus(root) -> list[Sample]:
    root = Path(root)
    image_dir = root / "images"
    if not image_dir.is_dir():
        raise FileNotFoundError(f"no images/ directory under {root}")
    samples = []
    for img_path in sorted(image_dir.glob("*.ppm")):
        sid = img_path.stem
        mask_path = root / "masks" / f"{sid}.pgm"
        if not mask_path.exists():
            raise FileNotFoundError(f"missing mask for {sid}: {mask_path}")
        samples.append(Sample(sid, load_netpbm(img_path), load_netpbm(mask_path)).validate())
    if not samples:
        raise FileNotFoundError(f"no .ppm images found under {image_dir}")
    return samples


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def batches(samples: list[Sample], batch_size: int,
            rng: np.random.Generator | None = None):
    """Yield (ids, images, masks) stacks; the final partial batch is kept.

    Pass an epoch-derived rng for the training shuffle; None preserves
    corpus order (evaluation).
    """
    if not samples:
        raise ValueError("cannot batch an empty corpus")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = list(rng.permutation(len(samples))) if rng is not None else range(len(samples))
    ordered = [samples[i] for i in order]
    for start in range(0, len(ordered), batch_size):
        chunk = ordered[start:start + batch_size]
        images = Tensor(np.concatenate([s.image.data for s in chunk], axis=0))
        masks = Tensor(np.concatenate([s.mask.data for s in chunk], axis=0))
        yield [s.id for s in chunk], images, masks
