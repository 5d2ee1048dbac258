"""Independent brute-force reference implementations used as test oracles.

Everything here is deliberately written as plain scalar loops, separate
from the library's vectorized paths.
"""

import numpy as np


def naive_conv2d(x: np.ndarray, w: np.ndarray, bias: np.ndarray | None,
                 stride: int, padding: int, dilation: int) -> np.ndarray:
    """Quintuple-loop convolution with sequential (c, u, v) accumulation.

    Arithmetic stays in the input dtype throughout, one multiply and one
    add per tap, so float32 results are bit-comparable against any
    implementation honouring the same accumulation order.
    """
    n, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    k_eff_h = dilation * (kh - 1) + 1
    k_eff_w = dilation * (kw - 1) + 1
    oh = (h + 2 * padding - k_eff_h) // stride + 1
    ow = (wd + 2 * padding - k_eff_w) // stride + 1
    dt = x.dtype.type
    out = np.zeros((n, co, oh, ow), dtype=x.dtype)
    for b in range(n):
        for o in range(co):
            for i in range(oh):
                for j in range(ow):
                    acc = dt(bias[o]) if bias is not None else dt(0.0)
                    for c in range(ci):
                        for u in range(kh):
                            for v in range(kw):
                                yy = i * stride - padding + u * dilation
                                xx = j * stride - padding + v * dilation
                                if 0 <= yy < h and 0 <= xx < wd:
                                    acc = dt(acc + dt(w[o, c, u, v] * x[b, c, yy, xx]))
                    out[b, o, i, j] = acc
    return out


def bilinear_reference(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Per-pixel half-pixel-center bilinear sampling, float64 math."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, out_h, out_w), dtype=np.float64)
    sy = h / out_h
    sx = w / out_w
    for i in range(out_h):
        src_y = min(max((i + 0.5) * sy - 0.5, 0.0), h - 1.0)
        y0 = min(int(np.floor(src_y)), h - 1)
        y1 = min(y0 + 1, h - 1)
        fy = src_y - y0
        for j in range(out_w):
            src_x = min(max((j + 0.5) * sx - 0.5, 0.0), w - 1.0)
            x0 = min(int(np.floor(src_x)), w - 1)
            x1 = min(x0 + 1, w - 1)
            fx = src_x - x0
            out[:, :, i, j] = ((1 - fy) * (1 - fx) * x[:, :, y0, x0]
                               + (1 - fy) * fx * x[:, :, y0, x1]
                               + fy * (1 - fx) * x[:, :, y1, x0]
                               + fy * fx * x[:, :, y1, x1])
    return out.astype(x.dtype)


def confusion_loop(pred: np.ndarray, target: np.ndarray, threshold: float):
    """Per-pixel confusion counting, one pixel at a time."""
    tp = fp = fn = tn = 0
    for p, t in zip(pred.ravel(), target.ravel()):
        pos = p >= threshold
        tru = t >= 0.5
        if pos and tru:
            tp += 1
        elif pos:
            fp += 1
        elif tru:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn
