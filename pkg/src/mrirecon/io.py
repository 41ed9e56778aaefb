"""Binary file formats.

KTSR tensor file (little-endian)::

    offset 0   b"KTSR"
    offset 4   u32 version (= 1)
    offset 8   u32 ndim
    offset 12  u64 dims[ndim]
    ...        f32 payload, row-major, 4 * prod(dims) bytes

Parameter container (``.kprm``): b"KPRM", u32 version, u32 record count, then
per record a u32 name length, the UTF-8 name and a complete KTSR blob.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"KTSR"
VERSION = 1
PARAM_MAGIC = b"KPRM"


class FormatError(ValueError):
    """Malformed file; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def encode_tensor(arr) -> bytes:
    a = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
    head = MAGIC + struct.pack("<II", VERSION, a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + a.tobytes(order="C")


def decode_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one KTSR blob at ``offset``; returns (array, next offset)."""
    if len(buf) < offset + 12:
        raise FormatError("truncated header", len(buf))
    if buf[offset:offset + 4] != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[offset:offset + 4])!r}", offset)
    version, ndim = struct.unpack_from("<II", buf, offset + 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset + 4)
    pos = offset + 12
    if len(buf) < pos + 8 * ndim:
        raise FormatError("truncated dimension list", len(buf))
    dims = struct.unpack_from(f"<{ndim}Q", buf, pos)
    pos += 8 * ndim
    nbytes = 4 * int(np.prod(dims, dtype=np.int64))
    if len(buf) < pos + nbytes:
        raise FormatError(f"truncated payload: need {nbytes} bytes, have {len(buf) - pos}", len(buf))
    arr = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims)
    return arr.astype(np.float32), pos + nbytes


def save_tensor(path, arr) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def load_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = decode_tensor(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes", end)
    return arr


def save_params(path, named: dict) -> None:
    parts = [PARAM_MAGIC, struct.pack("<II", VERSION, len(named))]
    for name, arr in named.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(encode_tensor(arr))
    Path(path).write_bytes(b"".join(parts))


def load_params(path) -> dict:
    buf = Path(path).read_bytes()
    if buf[:4] != PARAM_MAGIC:
        raise FormatError(f"bad parameter container magic {buf[:4]!r}", 0)
    if len(buf) < 12:
        raise FormatError("truncated container header", len(buf))
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    pos, out = 12, {}
    for _ in range(count):
        if len(buf) < pos + 4:
            raise FormatError("truncated record header", len(buf))
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        if len(buf) < pos + n:
            raise FormatError("truncated parameter name", len(buf))
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        out[name], pos = decode_tensor(buf, pos)
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes", pos)
    return out


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------

def export_image(img, path) -> None:
    """Write a magnitude image as 16-bit binary PGM (P5, big-endian samples).

    ``img`` is H x W (real) or 2 x H x W / 1 x 2 x H x W (complex channels);
    magnitudes are clipped to [0, 1] and scaled to [0, 65535].
    """
    a = np.asarray(img, dtype=np.float64)
    a = a.reshape(a.shape[-3:]) if a.ndim == 4 else a
    if a.ndim == 3:
        a = np.sqrt(a[0] ** 2 + a[1] ** 2) if a.shape[0] == 2 else a[0]
    if a.ndim != 2:
        raise ValueError(f"export_image: cannot interpret shape {np.shape(img)}")
    q = np.round(np.clip(a, 0.0, 1.0) * 65535).astype(">u2")
    h, w = q.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n65535\n".encode("ascii") + q.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM (8- or 16-bit) as float64 in [0, 1] relative to maxval."""
    buf = Path(path).read_bytes()
    if buf[:2] != b"P5":
        raise FormatError("not a binary PGM (P5)", 0)
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header", pos)
        fields.append(int(buf[start:pos]))
    pos += 1
    w, h, maxval = fields
    dtype = ">u2" if maxval > 255 else "u1"
    n = w * h * np.dtype(dtype).itemsize
    if len(buf) < pos + n:
        raise FormatError("truncated PGM payload", len(buf))
    data = np.frombuffer(buf, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return data.astype(np.float64) / maxval
