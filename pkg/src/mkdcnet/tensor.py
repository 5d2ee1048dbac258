"""Dense 4-D float tensor with a fixed (N, C, H, W) row-major layout.

Every value flowing through the network is one of these. The layout is
pinned so that flat indices, file dumps, and hand-written oracles agree
bit-for-bit: element (n, c, h, w) lives at ((n*C + c)*H + h)*W + w.
"""

from __future__ import annotations

import struct

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)

TENSOR_MAGIC = b"MKDT"
TENSOR_VERSION = 1


class ShapeError(ValueError):
    """Raised when tensor shapes violate an operation's contract."""


class Shape4(tuple):
    """A validated (n, c, h, w) shape."""

    def __new__(cls, n, c, h, w):
        for v in (n, c, h, w):
            if int(v) != v or v < 0:
                raise ShapeError(f"shape components must be non-negative integers, got {(n, c, h, w)}")
        return super().__new__(cls, (int(n), int(c), int(h), int(w)))

    @property
    def n(self):
        return self[0]

    @property
    def c(self):
        return self[1]

    @property
    def h(self):
        return self[2]

    @property
    def w(self):
        return self[3]

    def size(self) -> int:
        return self[0] * self[1] * self[2] * self[3]


def _as_shape4(shape) -> Shape4:
    if isinstance(shape, Shape4):
        return shape
    if len(shape) != 4:
        raise ShapeError(f"expected a 4-component shape, got {tuple(shape)}")
    return Shape4(*shape)


class Tensor:
    """4-D array of 32-bit floats (64-bit in gradient-check shadow mode).

    `data` is a C-contiguous numpy array; `grad` is filled in by
    GradTape.backward for tensors that participate in differentiation.
    Tensors are treated as immutable after construction except for the
    explicit in-place parameter updates done by the optimizer.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data: np.ndarray, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.ndim != 4:
            raise ShapeError(f"tensors are 4-D (N,C,H,W); got ndim={arr.ndim}")
        if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zeros(shape, dtype=np.float32, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(_as_shape4(shape), dtype=dtype), requires_grad=requires_grad)

    @staticmethod
    def ones(shape, dtype=np.float32, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.ones(_as_shape4(shape), dtype=dtype), requires_grad=requires_grad)

    @staticmethod
    def full(shape, value: float, dtype=np.float32, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.full(_as_shape4(shape), value, dtype=dtype), requires_grad=requires_grad)

    @staticmethod
    def from_values(shape, values, dtype=np.float32, requires_grad: bool = False) -> "Tensor":
        shp = _as_shape4(shape)
        flat = np.asarray(values, dtype=dtype).ravel()
        if flat.size != shp.size():
            raise ShapeError(f"from_values: got {flat.size} values for shape {tuple(shp)} "
                             f"(need {shp.size()})")
        return Tensor(flat.reshape(shp), requires_grad=requires_grad)

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def flat(self) -> np.ndarray:
        """The row-major flat view (read-only semantics by convention)."""
        return self.data.reshape(-1)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad, name=self.name)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def require_finite(self, what: str = "tensor") -> "Tensor":
        if not self.is_finite():
            raise FloatingPointError(f"{what} contains NaN or Inf")
        return self

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{tag})"

    # -- binary dump --------------------------------------------------------
    # Little-endian: magic "MKDT", u32 version, 4 x u32 shape, then
    # N*C*H*W float32 values in row-major order.

    def to_bytes(self) -> bytes:
        header = TENSOR_MAGIC + struct.pack("<5I", TENSOR_VERSION, *self.shape)
        return header + self.data.astype("<f4", copy=False).tobytes()

    @staticmethod
    def from_bytes(buf: bytes, offset: int = 0) -> tuple["Tensor", int]:
        """Parse one dump starting at `offset`; returns (tensor, next_offset)."""
        if buf[offset:offset + 4] != TENSOR_MAGIC:
            raise ValueError(f"bad tensor magic at byte {offset}")
        version, n, c, h, w = struct.unpack_from("<5I", buf, offset + 4)
        if version != TENSOR_VERSION:
            raise ValueError(f"unsupported tensor dump version {version}")
        count = n * c * h * w
        start = offset + 4 + 20
        end = start + 4 * count
        if len(buf) < end:
            raise ValueError(f"truncated tensor dump: need {end} bytes, have {len(buf)}")
        data = np.frombuffer(buf[start:end], dtype="<f4").astype(np.float32).reshape(n, c, h, w)
        return Tensor(data.copy()), end


def save_tensor(path, t: Tensor) -> None:
    with open(path, "wb") as f:
        f.write(t.to_bytes())


def load_tensor(path) -> Tensor:
    with open(path, "rb") as f:
        buf = f.read()
    t, end = Tensor.from_bytes(buf)
    if end != len(buf):
        raise ValueError(f"trailing bytes after tensor dump at byte {end}")
    return t
