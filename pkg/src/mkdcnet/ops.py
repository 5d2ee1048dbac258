"""Differentiable tensor operators: forward passes plus hand-written backward.

Convolution ships with two interchangeable execution paths:

* ``exact``  — accumulates taps sequentially in (channel, row, col) order,
  bit-identical to a scalar quintuple-loop reference.
* ``fast``   — im2col + BLAS matmul. Orders of magnitude quicker, used for
  training; agrees with ``exact`` to float32 round-off but not bit-exactly
  because BLAS reassociates the reduction.

Both paths are deterministic for fixed inputs within one process.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tape import active_tape
from .tensor import ShapeError, Tensor

DEFAULT_CONV_MODE = "fast"


def set_default_conv_mode(mode: str) -> None:
    global DEFAULT_CONV_MODE
    if mode not in ("fast", "exact"):
        raise ValueError(f"conv mode must be 'fast' or 'exact', got {mode!r}")
    DEFAULT_CONV_MODE = mode


def _record(kind, inputs, output, backward_fn):
    tape = active_tape()
    if tape is not None:
        tape.record(kind, inputs, output, backward_fn)
    return output


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape} (no broadcasting)")


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor(a.data + b.data)
    return _record("add", (a, b), out, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)
    return _record("sub", (a, b), out, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)
    return _record("mul", (a, b), out, lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, s: float) -> Tensor:
    s = a.data.dtype.type(s)
    out = Tensor(a.data * s)
    return _record("scale", (a,), out, lambda g: (g * s,))


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))
    mask = a.data > 0
    return _record("relu", (a,), out, lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)
    return _record("sigmoid", (a,), out, lambda g: (g * (y * (1.0 - y)),))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "scale": scale,
                "relu": relu, "sigmoid": sigmoid}


def elementwise(op: str, a: Tensor, b=None) -> Tensor:
    """Dispatcher form: binary ops take a second tensor, scale a scalar."""
    fn = _ELEMENTWISE.get(op)
    if fn is None:
        raise ValueError(f"unknown elementwise op {op!r}")
    if op in ("relu", "sigmoid"):
        if b is not None:
            raise ValueError(f"{op} is unary")
        return fn(a)
    if b is None:
        raise ValueError(f"{op} needs a second operand")
    return fn(a, b)


# ---------------------------------------------------------------------------
# concat / slice along channels
# ---------------------------------------------------------------------------

def concat_channels(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_channels: empty input list")
    n, _, h, w = parts[0].shape
    for p in parts[1:]:
        if (p.shape[0], p.shape[2], p.shape[3]) != (n, h, w):
            raise ShapeError(f"concat_channels: N/H/W mismatch {parts[0].shape} vs {p.shape}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    sizes = [p.shape[1] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]].copy() for i in range(len(parts)))

    return _record("concat_channels", tuple(parts), out, backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= x.shape[1]):
        raise ShapeError(f"slice_channels: [{start}:{stop}] out of range for C={x.shape[1]}")
    out = Tensor(x.data[:, start:stop].copy())

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return _record("slice_channels", (x,), out, backward)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv_out_size(size: int, k: int, stride: int, padding: int, dilation: int) -> int:
    k_eff = dilation * (k - 1) + 1
    return (size + 2 * padding - k_eff) // stride + 1


@dataclass
class Conv2dParams:
    """Learnable state plus hyperparameters of one 2-D convolution.

    weight has shape (out_channels, in_channels, kh, kw); bias, when
    present, is stored (1, out_channels, 1, 1) so it rides the tape like
    any other tensor.
    """

    weight: Tensor
    bias: Tensor | None = None
    stride: int = 1
    padding: int = 0
    dilation: int = 1

    def __post_init__(self):
        if self.stride < 1 or self.dilation < 1 or self.padding < 0:
            raise ShapeError(f"invalid conv hyperparameters: stride={self.stride} "
                             f"padding={self.padding} dilation={self.dilation}")
        if self.bias is not None and self.bias.shape != (1, self.out_channels, 1, 1):
            raise ShapeError(f"bias shape {self.bias.shape} != (1,{self.out_channels},1,1)")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]


def _pad_input(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(xp_chunk: np.ndarray, kh: int, kw: int, s: int, d: int,
            oh: int, ow: int) -> np.ndarray:
    """Patch tensor for a padded batch chunk (n, C, Hp, Wp) -> (n, C*kh*kw, oh*ow).

    The K axis is (c, u, v) major-to-minor, matching the documented
    accumulation order; columns are output positions in row-major order.
    """
    n, c = xp_chunk.shape[:2]
    sn, sc, sh, sw = xp_chunk.strides
    view = as_strided(
        xp_chunk,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, sh * d, sw * d, sh * s, sw * s),
        writeable=False,
    )
    return np.ascontiguousarray(view).reshape(n, c * kh * kw, oh * ow)


def _im2col_kmajor(xp_chunk: np.ndarray, kh: int, kw: int, s: int, d: int,
                   oh: int, ow: int) -> np.ndarray:
    """As _im2col but flattened K-major: (C*kh*kw, n*oh*ow), so the backward
    contractions run as single 2-D GEMMs."""
    n, c = xp_chunk.shape[:2]
    sn, sc, sh, sw = xp_chunk.strides
    view = as_strided(
        xp_chunk,
        shape=(c, kh, kw, n, oh, ow),
        strides=(sc, sh * d, sw * d, sn, sh * s, sw * s),
        writeable=False,
    )
    return np.ascontiguousarray(view).reshape(c * kh * kw, n * oh * ow)


# batch chunking keeps im2col buffers below ~64 MiB in float32
_IM2COL_BUDGET = 16_000_000


def _chunk_size(n: int, k: int, cols: int) -> int:
    return max(1, min(n, _IM2COL_BUDGET // max(1, k * cols)))


# Kernels this wide inflate im2col by k*k; a frequency-domain correlation is
# far cheaper. Only stride-1, dilation-1 convs qualify (the 7x7/11x11
# branches and the spatial-attention conv).
_FFT_MIN_KERNEL = 7


def _use_fft(kh, kw, s, d) -> bool:
    return s == 1 and d == 1 and min(kh, kw) >= _FFT_MIN_KERNEL


def _fft_corr(fa: np.ndarray, fb: np.ndarray, out_h: int, out_w: int,
              fh: int, fw: int) -> np.ndarray:
    """Valid 2-D cross-correlation of pre-transformed planes.

    out[a, b] = sum over k of corr(plane fa[a,k], plane fb[b,k]), cropped
    to (out_h, out_w). The per-frequency contraction runs as one batched
    complex matmul.
    """
    lhs = fa.transpose(2, 3, 0, 1)               # (H, W2, A, K)
    rhs = np.conj(fb).transpose(2, 3, 1, 0)      # (H, W2, K, B)
    prod = np.matmul(lhs, rhs).transpose(2, 3, 0, 1)
    full = np.fft.irfft2(prod, s=(fh, fw))
    return full[..., :out_h, :out_w]


def _conv_forward_fft(xp, w, oh, ow):
    """Returns (output, cached input FFT) for stride-1 undilated kernels."""
    fh, fw = xp.shape[2], xp.shape[3]
    fx = np.fft.rfft2(xp, s=(fh, fw))
    fk = np.fft.rfft2(w, s=(fh, fw))
    out = _fft_corr(fx, fk, oh, ow, fh, fw)
    return out.astype(xp.dtype, copy=False), fx


def _conv_backward_fft(g, fx, xp_shape, w):
    n, ci, hp, wp = xp_shape
    co, _, kh, kw = w.shape
    oh, ow = g.shape[2], g.shape[3]
    fg = np.fft.rfft2(g, s=(hp, wp))
    # weight grad: correlate input with the output grad, contracting batch
    gw = _fft_corr(fx.transpose(1, 0, 2, 3), fg.transpose(1, 0, 2, 3),
                   kh, kw, hp, wp).transpose(1, 0, 2, 3)
    # input grad: full correlation of g with the transposed, flipped kernel
    gh, gwid = oh + 2 * (kh - 1), ow + 2 * (kw - 1)
    gpad = np.zeros((n, co, gh, gwid), dtype=g.dtype)
    gpad[:, :, kh - 1:kh - 1 + oh, kw - 1:kw - 1 + ow] = g
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    fgp = np.fft.rfft2(gpad, s=(gh, gwid))
    fwt = np.fft.rfft2(wt, s=(gh, gwid))
    gxp = _fft_corr(fgp, fwt, hp, wp, gh, gwid)
    return gxp.astype(g.dtype, copy=False), gw.astype(g.dtype, copy=False)


def _conv_forward_fast(xp, w, oh, ow, s, d):
    n = xp.shape[0]
    co, ci, kh, kw = w.shape
    k = ci * kh * kw
    w2 = w.reshape(co, k)
    out = np.empty((n, co, oh, ow), dtype=xp.dtype)
    step = _chunk_size(n, k, oh * ow)
    for i0 in range(0, n, step):
        i1 = min(n, i0 + step)
        cols = _im2col(xp[i0:i1], kh, kw, s, d, oh, ow)
        out[i0:i1] = np.matmul(w2, cols).reshape(i1 - i0, co, oh, ow)
    return out


def _conv_forward_1x1(x, w):
    n, ci, h, wd = x.shape
    co = w.shape[0]
    w2 = w.reshape(co, ci)
    out = np.matmul(w2, x.reshape(n, ci, h * wd))
    return out.reshape(n, co, h, wd)


def _conv_forward_exact(xp, w, bias, oh, ow, s, d):
    """Sequential tap accumulation: per output element the sum runs over
    (c, u, v) in exactly that order, one float add per tap, starting from
    the bias. Bit-identical to the scalar reference loop."""
    n = xp.shape[0]
    co, ci, kh, kw = w.shape
    out = np.zeros((n, co, oh, ow), dtype=xp.dtype)
    if bias is not None:
        out += bias.reshape(1, co, 1, 1)
    for c in range(ci):
        xc = xp[:, c]
        for u in range(kh):
            r0 = u * d
            for v in range(kw):
                c0 = v * d
                patch = xc[:, r0:r0 + s * (oh - 1) + 1:s, c0:c0 + s * (ow - 1) + 1:s]
                out += w[:, c, u, v][None, :, None, None] * patch[:, None, :, :]
    return out


def _conv_backward(g, xp, w, s, d, p, x_shape, mode):
    n, ci, h, wd = x_shape
    co, _, kh, kw = w.shape
    oh, ow = g.shape[2], g.shape[3]
    k = ci * kh * kw
    w2 = w.reshape(co, k)

    gb = g.sum(axis=(0, 2, 3)).reshape(1, co, 1, 1)
    gw2 = np.zeros((co, k), dtype=g.dtype)
    gxp = np.zeros_like(xp)

    if mode == "fast" and not (kh == kw == 1 and d == 1 and s == 1 and p == 0):
        step = _chunk_size(n, k, oh * ow)
        for i0 in range(0, n, step):
            i1 = min(n, i0 + step)
            nc = i1 - i0
            # (co, nc*p) with samples along columns, matching _im2col_kmajor
            g2 = np.ascontiguousarray(g[i0:i1].transpose(1, 0, 2, 3)).reshape(co, nc * oh * ow)
            cols = _im2col_kmajor(xp[i0:i1], kh, kw, s, d, oh, ow)
            gw2 += g2 @ cols.T
            gcols = (w2.T @ g2).reshape(ci, kh, kw, nc, oh, ow)
            for u in range(kh):
                for v in range(kw):
                    gxp[i0:i1, :, u * d:u * d + s * (oh - 1) + 1:s,
                        v * d:v * d + s * (ow - 1) + 1:s] += \
                        gcols[:, u, v].transpose(1, 0, 2, 3)
    elif mode == "fast":  # 1x1 shortcut, xp is the raw input
        gflat = g.reshape(n, co, oh * ow)
        xflat = xp.reshape(n, ci, oh * ow)
        gw2 += np.matmul(gflat, xflat.transpose(0, 2, 1)).sum(axis=0)
        gxp = np.matmul(w2.T, gflat).reshape(n, ci, oh, ow)
    else:  # exact mode mirrors the forward tap loop
        for c in range(ci):
            xc = xp[:, c]
            for u in range(kh):
                r0 = u * d
                for v in range(kw):
                    c0 = v * d
                    rs = slice(r0, r0 + s * (oh - 1) + 1, s)
                    cs = slice(c0, c0 + s * (ow - 1) + 1, s)
                    patch = xc[:, rs, cs]
                    gw2[:, (c * kh + u) * kw + v] += (g * patch[:, None, :, :]).sum(axis=(0, 2, 3))
                    gxp[:, c, rs, cs] += (w[:, c, u, v][None, :, None, None] * g).sum(axis=1)

    gx = gxp if p == 0 else gxp[:, :, p:-p, p:-p]
    return np.ascontiguousarray(gx), gw2.reshape(w.shape), gb


def conv2d(x: Tensor, params: Conv2dParams, mode: str | None = None) -> Tensor:
    """2-D convolution with zero padding, stride, and dilation.

    out(n,o,i,j) = bias(o) + sum over (c,u,v) of
        w(o,c,u,v) * x(n,c, i*s - p + u*d, j*s - p + v*d)
    with out-of-range input treated as zero.
    """
    mode = mode or DEFAULT_CONV_MODE
    if mode not in ("fast", "exact"):
        raise ValueError(f"conv mode must be 'fast' or 'exact', got {mode!r}")
    n, ci, h, wd = x.shape
    if ci != params.in_channels:
        raise ShapeError(f"conv2d: input has {ci} channels, weights expect {params.in_channels}")
    kh, kw = params.kernel
    s, p, d = params.stride, params.padding, params.dilation
    oh = conv_out_size(h, kh, s, p, d)
    ow = conv_out_size(wd, kw, s, p, d)
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d: non-positive output size {oh}x{ow} for input {h}x{wd}, "
                         f"kernel {kh}x{kw}, stride {s}, padding {p}, dilation {d}")

    w = params.weight.data
    b = params.bias.data if params.bias is not None else None
    one_by_one = kh == kw == 1 and d == 1 and s == 1 and p == 0
    use_fft = mode == "fast" and _use_fft(kh, kw, s, d)

    fx = None
    if mode == "exact":
        xp = _pad_input(x.data, p)
        y = _conv_forward_exact(xp, w, b, oh, ow, s, d)
    elif one_by_one:
        xp = x.data
        y = _conv_forward_1x1(x.data, w)
        if b is not None:
            y += b.reshape(1, -1, 1, 1)
    else:
        xp = _pad_input(x.data, p)
        if use_fft:
            y, fx = _conv_forward_fft(xp, w, oh, ow)
        else:
            y = _conv_forward_fast(xp, w, oh, ow, s, d)
        if b is not None:
            y += b.reshape(1, -1, 1, 1)

    out = Tensor(y)
    inputs = (x, params.weight) if params.bias is None else (x, params.weight, params.bias)
    xp_shape = xp.shape
    co = params.out_channels

    def backward(g):
        if use_fft:
            gxp, gw = _conv_backward_fft(g, fx, xp_shape, w)
            gx = gxp if p == 0 else np.ascontiguousarray(gxp[:, :, p:-p, p:-p])
            gb = g.sum(axis=(0, 2, 3)).reshape(1, co, 1, 1) if b is not None else None
        else:
            gx, gw, gb = _conv_backward(g, xp, w, s, d, p, x.shape, mode)
        if params.bias is None:
            return gx, gw
        return gx, gw, gb

    return _record("conv2d", inputs, out, backward)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

@dataclass
class BatchNormState:
    """Per-channel affine parameters plus running statistics.

    gamma/beta are tape tensors shaped (1,C,1,1); running stats are plain
    arrays updated as a side effect of train-mode forwards (biased
    variance, matching the normalization itself).
    """

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        if self.eps <= 0 or not (0 < self.momentum <= 1):
            raise ValueError(f"batchnorm needs eps > 0 and momentum in (0,1], "
                             f"got eps={self.eps} momentum={self.momentum}")

    @property
    def channels(self) -> int:
        return self.gamma.shape[1]


def batchnorm2d(x: Tensor, st: BatchNormState, training: bool,
                update_running: bool | None = None) -> Tensor:
    if x.shape[1] != st.channels:
        raise ShapeError(f"batchnorm2d: input has {x.shape[1]} channels, state has {st.channels}")
    if update_running is None:
        update_running = training
    dt = x.dtype
    gamma = st.gamma.data
    beta = st.beta.data

    if training:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.data.mean(axis=(0, 2, 3), dtype=dt)
        var = x.data.var(axis=(0, 2, 3), dtype=dt)
        if update_running:
            mom = st.momentum
            st.running_mean[:] = (1 - mom) * st.running_mean + mom * mean.astype(st.running_mean.dtype)
            st.running_var[:] = (1 - mom) * st.running_var + mom * var.astype(st.running_var.dtype)
        inv_std = 1.0 / np.sqrt(var + dt.type(st.eps))
        xhat = (x.data - mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
        y = gamma * xhat + beta
        out = Tensor(y)

        def backward(g):
            ggamma = (g * xhat).sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
            gbeta = g.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
            gxhat = g * gamma
            # d/dx of ((x - mean)/std) folded into one pass per channel
            sum_g = gxhat.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
            sum_gx = (gxhat * xhat).sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
            gx = (gxhat - sum_g / m - xhat * sum_gx / m) * inv_std.reshape(1, -1, 1, 1)
            return gx.astype(dt, copy=False), ggamma, gbeta

        return _record("batchnorm2d", (x, st.gamma, st.beta), out, backward)

    inv_std = (1.0 / np.sqrt(st.running_var + st.eps)).astype(dt).reshape(1, -1, 1, 1)
    mean = st.running_mean.astype(dt).reshape(1, -1, 1, 1)
    xhat = (x.data - mean) * inv_std
    out = Tensor(gamma * xhat + beta)

    def backward_eval(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
        gbeta = g.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
        gx = g * gamma * inv_std
        return gx, ggamma, gbeta

    return _record("batchnorm2d", (x, st.gamma, st.beta), out, backward_eval)


# ---------------------------------------------------------------------------
# bilinear interpolation (upsample / resize)
# ---------------------------------------------------------------------------

_INTERP_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _interp_matrix(in_size: int, out_size: int) -> np.ndarray:
    """Dense (out, in) half-pixel-center bilinear map, float64.

    src = (dst + 0.5) * in/out - 0.5, clamped to the borders. Rows hold at
    most two nonzero weights that sum to one.
    """
    key = (in_size, out_size)
    mat = _INTERP_CACHE.get(key)
    if mat is not None:
        return mat
    if in_size < 1 or out_size < 1:
        raise ShapeError(f"interpolation needs positive sizes, got {in_size}->{out_size}")
    scale = in_size / out_size
    dst = np.arange(out_size, dtype=np.float64)
    src = np.clip((dst + 0.5) * scale - 0.5, 0.0, in_size - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i0 = np.minimum(i0, in_size - 1)
    i1 = np.minimum(i0 + 1, in_size - 1)
    f = src - i0
    mat = np.zeros((out_size, in_size), dtype=np.float64)
    rows = np.arange(out_size)
    np.add.at(mat, (rows, i0), 1.0 - f)
    np.add.at(mat, (rows, i1), f)
    _INTERP_CACHE[key] = mat
    return mat


def _bilinear_apply(x: np.ndarray, ah: np.ndarray, aw: np.ndarray) -> np.ndarray:
    # computed in float64 so dyadic 2x weights reproduce constants exactly
    t = np.matmul(ah, x.astype(np.float64, copy=False))
    return np.matmul(t, aw.T)


def resize_bilinear_array(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    ah = _interp_matrix(x.shape[2], out_h)
    aw = _interp_matrix(x.shape[3], out_w)
    return _bilinear_apply(x, ah, aw).astype(x.dtype)


def bilinear_upsample2x(x: Tensor) -> Tensor:
    """Double H and W with half-pixel-center bilinear interpolation."""
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise ShapeError("bilinear_upsample2x: empty spatial dims")
    ah = _interp_matrix(h, 2 * h)
    aw = _interp_matrix(w, 2 * w)
    out = Tensor(_bilinear_apply(x.data, ah, aw).astype(x.dtype))

    def backward(g):
        gx = np.matmul(np.matmul(ah.T, g.astype(np.float64, copy=False)), aw)
        return (gx.astype(x.dtype),)

    return _record("bilinear_upsample2x", (x,), out, backward)


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(2, 3), keepdims=True))
    inv = x.dtype.type(1.0 / (h * w))

    def backward(g):
        return (np.broadcast_to(g * inv, x.shape).copy(),)

    return _record("global_avg_pool", (x,), out, backward)


def global_max_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    idx = flat.argmax(axis=2)  # first max wins ties, deterministically
    out = Tensor(np.take_along_axis(flat, idx[:, :, None], axis=2).reshape(n, c, 1, 1))

    def backward(g):
        gx = np.zeros_like(flat)
        np.put_along_axis(gx, idx[:, :, None], g.reshape(n, c, 1), axis=2)
        return (gx.reshape(x.shape),)

    return _record("global_max_pool", (x,), out, backward)


def channel_avg_pool(x: Tensor) -> Tensor:
    c = x.shape[1]
    out = Tensor(x.data.mean(axis=1, keepdims=True))
    inv = x.dtype.type(1.0 / c)

    def backward(g):
        return (np.broadcast_to(g * inv, x.shape).copy(),)

    return _record("channel_avg_pool", (x,), out, backward)


def channel_max_pool(x: Tensor) -> Tensor:
    idx = x.data.argmax(axis=1)  # (N,H,W), first max on ties
    out = Tensor(np.take_along_axis(x.data, idx[:, None], axis=1))

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx[:, None], g, axis=1)
        return (gx,)

    return _record("channel_max_pool", (x,), out, backward)


def maxpool2x(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x needs even H and W, got {h}x{w}")
    win = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = np.ascontiguousarray(win).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=4)
    out = Tensor(np.take_along_axis(win, idx[..., None], axis=4)[..., 0])

    def backward(g):
        gw = np.zeros_like(win)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=4)
        gx = gw.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (np.ascontiguousarray(gx).reshape(x.shape),)

    return _record("maxpool2x", (x,), out, backward)


_POOLS = {"global_avg": global_avg_pool, "global_max": global_max_pool,
          "channel_avg": channel_avg_pool, "channel_max": channel_max_pool,
          "maxpool2x": maxpool2x}


def pool(x: Tensor, kind: str) -> Tensor:
    fn = _POOLS.get(kind)
    if fn is None:
        raise ValueError(f"unknown pool kind {kind!r}")
    return fn(x)


# ---------------------------------------------------------------------------
# gating broadcasts (attention)
# ---------------------------------------------------------------------------

def scale_channels(x: Tensor, gate: Tensor) -> Tensor:
    """Multiply x by a per-channel gate shaped (N,C,1,1)."""
    n, c, _, _ = x.shape
    if gate.shape != (n, c, 1, 1):
        raise ShapeError(f"scale_channels: gate shape {gate.shape} != ({n},{c},1,1)")
    out = Tensor(x.data * gate.data)

    def backward(g):
        return g * gate.data, (g * x.data).sum(axis=(2, 3), keepdims=True)

    return _record("scale_channels", (x, gate), out, backward)


def scale_spatial(x: Tensor, gate: Tensor) -> Tensor:
    """Multiply x by a per-pixel gate shaped (N,1,H,W)."""
    n, _, h, w = x.shape
    if gate.shape != (n, 1, h, w):
        raise ShapeError(f"scale_spatial: gate shape {gate.shape} != ({n},1,{h},{w})")
    out = Tensor(x.data * gate.data)

    def backward(g):
        return g * gate.data, (g * x.data).sum(axis=1, keepdims=True)

    return _record("scale_spatial", (x, gate), out, backward)


# ---------------------------------------------------------------------------
# scalar reductions
# ---------------------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.full((1, 1, 1, 1), x.data.sum(), dtype=x.dtype))

    def backward(g):
        return (np.full(x.shape, g.reshape(-1)[0], dtype=x.dtype),)

    return _record("sum_all", (x,), out, backward)


def mean_all(x: Tensor) -> Tensor:
    out = Tensor(np.full((1, 1, 1, 1), x.data.mean(), dtype=x.dtype))
    inv = x.dtype.type(1.0 / x.size)

    def backward(g):
        return (np.full(x.shape, g.reshape(-1)[0] * inv, dtype=x.dtype),)

    return _record("mean_all", (x,), out, backward)
