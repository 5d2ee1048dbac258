"""Binary NetPBM readers and writers: P6 (color images) and P5 (gray masks).

The on-disk corpus format is deliberately dependency-free and bit-exact to
parse. Images scale to [0,1] on load; P5 files are treated as binary masks
and thresholded at 0.5. Parse errors name the offending byte offset.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class NetpbmError(ValueError):
    pass


def _parse_header(buf: bytes):
    """Returns (magic, width, height, maxval, payload_offset)."""
    if len(buf) < 2:
        raise NetpbmError("truncated file: no magic at offset 0")
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise NetpbmError(f"unsupported magic {magic!r} at offset 0 (need P5 or P6)")
    pos = 2
    fields = []
    while len(fields) < 3:
        # skip whitespace and '#' comments between header tokens
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos] == ord("#"):
            while pos < len(buf) and buf[pos] != ord("\n"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        token = buf[start:pos]
        if not token:
            raise NetpbmError(f"truncated header at offset {start}")
        if not token.isdigit():
            raise NetpbmError(f"malformed header token {token!r} at offset {start}")
        fields.append(int(token))
    if pos >= len(buf):
        raise NetpbmError(f"truncated header at offset {pos}: missing payload separator")
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise NetpbmError(f"invalid dimensions {width}x{height}")
    if maxval != 255:
        raise NetpbmError(f"unsupported maxval {maxval} (only 255)")
    return magic, width, height, maxval, pos


def load_netpbm(path) -> Tensor:
    """P6 -> (1,3,H,W) float image in [0,1]; P5 -> (1,1,H,W) binary mask."""
    with open(path, "rb") as f:
        buf = f.read()
    magic, w, h, _, pos = _parse_header(buf)
    channels = 3 if magic == b"P6" else 1
    need = w * h * channels
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise NetpbmError(f"truncated payload at offset {pos + len(payload)}: "
                          f"need {need} bytes, have {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8).astype(np.float32) / 255.0
    if magic == b"P6":
        img = arr.reshape(h, w, 3).transpose(2, 0, 1)[None]
        return Tensor(img.copy())
    mask = (arr.reshape(1, 1, h, w) >= 0.5).astype(np.float32)
    return Tensor(mask)


def save_netpbm(t: Tensor, path) -> None:
    """3-channel tensors write P6; 1-channel write P5. Values clip to [0,1]."""
    n, c, h, w = t.shape
    if n != 1 or c not in (1, 3):
        raise NetpbmError(f"can only save (1,1,H,W) or (1,3,H,W) tensors, got {t.shape}")
    data = np.clip(t.data[0], 0.0, 1.0)
    bytes_ = np.rint(data * 255.0).astype(np.uint8)
    if c == 3:
        header = b"P6\n%d %d\n255\n" % (w, h)
        payload = bytes_.transpose(1, 2, 0).tobytes()
    else:
        header = b"P5\n%d %d\n255\n" % (w, h)
        payload = bytes_[0].tobytes()
    with open(path, "wb") as f:
        f.write(header + payload)
