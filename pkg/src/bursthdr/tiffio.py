"""Minimal 16-bit TIFF reader/writer.

Supported subset: little-endian baseline TIFF, uncompressed, 16-bit unsigned
samples, 1 (gray) or 3 (RGB) samples per pixel, chunky planar layout.
Files are written as a single strip; the reader also accepts several strips.
Unknown tags are ignored.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import SceneIOError, TiffFormatError, ValidationError
from .imgcore import quantize_to_16bit

# tag ids
IMAGE_WIDTH = 256
IMAGE_LENGTH = 257
BITS_PER_SAMPLE = 258
COMPRESSION = 259
PHOTOMETRIC = 262
STRIP_OFFSETS = 273
SAMPLES_PER_PIXEL = 277
ROWS_PER_STRIP = 278
STRIP_BYTE_COUNTS = 279
PLANAR_CONFIG = 284
SAMPLE_FORMAT = 339

SHORT, LONG = 3, 4
_TYPE_SIZES = {1: 1, 2: 1, 3: 2, 4: 4, 5: 8, 6: 1, 7: 1, 8: 2, 9: 4, 10: 8, 11: 4, 12: 8}


def encode_tiff16(img: np.ndarray) -> bytes:
    """Serialize an ``(H, W)`` or ``(H, W, 3)`` image; floats in [0, 1] are quantized."""
    img = np.asarray(img)
    if img.dtype.kind == "f" and not (np.all(img >= 0.0) and np.all(img <= 1.0)):
        raise ValidationError("float samples must lie in [0, 1]")
    if img.dtype != np.uint16:
        img = quantize_to_16bit(img)
    if img.ndim == 2:
        spp = 1
    elif img.ndim == 3 and img.shape[2] == 3:
        spp = 3
    else:
        raise TiffFormatError(f"expected (H, W) or (H, W, 3) image, got shape {img.shape}")
    h, w = img.shape[:2]
    if h == 0 or w == 0:
        raise TiffFormatError("empty image")
    pixels = np.ascontiguousarray(img, dtype="<u2").tobytes()

    n_entries = 10
    ifd_size = 2 + 12 * n_entries + 4
    extra_off = 8 + ifd_size
    extra = b""
    if spp == 1:
        bits_value = struct.pack("<HH", 16, 0)
    else:
        bits_value = struct.pack("<I", extra_off)
        extra = struct.pack("<HHH", 16, 16, 16)
    data_off = extra_off + len(extra)
    if data_off % 2:  # keep the strip word-aligned
        extra += b"\0"
        data_off += 1

    def short(v):
        return struct.pack("<HH", v, 0)

    def long_(v):
        return struct.pack("<I", v)

    entries = [
        (IMAGE_WIDTH, LONG, 1, long_(w)),
        (IMAGE_LENGTH, LONG, 1, long_(h)),
        (BITS_PER_SAMPLE, SHORT, spp, bits_value),
        (COMPRESSION, SHORT, 1, short(1)),
        (PHOTOMETRIC, SHORT, 1, short(1 if spp == 1 else 2)),
        (STRIP_OFFSETS, LONG, 1, long_(data_off)),
        (SAMPLES_PER_PIXEL, SHORT, 1, short(spp)),
        (ROWS_PER_STRIP, LONG, 1, long_(h)),
        (STRIP_BYTE_COUNTS, LONG, 1, long_(len(pixels))),
        (PLANAR_CONFIG, SHORT, 1, short(1)),
    ]
    out = bytearray(b"II" + struct.pack("<HI", 42, 8))
    out += struct.pack("<H", n_entries)
    for tag, typ, count, value in entries:
        out += struct.pack("<HHI", tag, typ, count) + value
    out += struct.pack("<I", 0)
    out += extra
    out += pixels
    return bytes(out)


def _read_values(buf: bytes, typ: int, count: int, field: bytes) -> list[int]:
    size = _TYPE_SIZES.get(typ)
    if size is None:
        return []
    nbytes = size * count
    if nbytes <= 4:
        raw = field[:nbytes]
    else:
        (off,) = struct.unpack("<I", field)
        if off + nbytes > len(buf):
            raise TiffFormatError("tag value runs past end of file")
        raw = buf[off:off + nbytes]
    if typ == SHORT:
        return list(struct.unpack(f"<{count}H", raw))
    if typ == LONG:
        return list(struct.unpack(f"<{count}I", raw))
    if typ == 1:
        return list(raw)
    return []  # other types only appear in tags we ignore


def decode_tiff16(buf: bytes) -> np.ndarray:
    """Parse the first image of a TIFF in the supported subset to ``uint16``."""
    if len(buf) < 8:
        raise TiffFormatError("file too short for a TIFF header")
    if buf[:2] == b"MM":
        raise TiffFormatError("big-endian (MM) byte order is not supported")
    if buf[:2] != b"II":
        raise TiffFormatError("not a TIFF file (bad byte-order mark)")
    magic, ifd = struct.unpack("<HI", buf[2:8])
    if magic != 42:
        raise TiffFormatError(f"bad TIFF magic {magic}")
    if ifd + 2 > len(buf):
        raise TiffFormatError("IFD offset past end of file")
    (n,) = struct.unpack("<H", buf[ifd:ifd + 2])
    if ifd + 2 + 12 * n > len(buf):
        raise TiffFormatError("truncated IFD")
    tags: dict[int, list[int]] = {}
    for i in range(n):
        base = ifd + 2 + 12 * i
        tag, typ, count = struct.unpack("<HHI", buf[base:base + 8])
        tags[tag] = _read_values(buf, typ, count, buf[base + 8:base + 12])

    def one(tag, default=None):
        v = tags.get(tag)
        if not v:
            if default is None:
                raise TiffFormatError("required tag missing", tag)
            return default
        return v[0]

    w, h = one(IMAGE_WIDTH), one(IMAGE_LENGTH)
    spp = one(SAMPLES_PER_PIXEL, 1)
    if one(COMPRESSION, 1) != 1:
        raise TiffFormatError(f"compression {one(COMPRESSION)} is not supported", COMPRESSION)
    bits = tags.get(BITS_PER_SAMPLE) or [1]
    if any(b != 16 for b in bits):
        raise TiffFormatError(f"only 16-bit samples are supported, got {bits}", BITS_PER_SAMPLE)
    if spp not in (1, 3):
        raise TiffFormatError(f"{spp} samples per pixel is not supported", SAMPLES_PER_PIXEL)
    if spp > 1 and one(PLANAR_CONFIG, 1) != 1:
        raise TiffFormatError("planar (separate) sample layout is not supported", PLANAR_CONFIG)
    if any(f != 1 for f in tags.get(SAMPLE_FORMAT, [1])):
        raise TiffFormatError("only unsigned integer samples are supported", SAMPLE_FORMAT)
    offsets = tags.get(STRIP_OFFSETS)
    counts = tags.get(STRIP_BYTE_COUNTS)
    if not offsets:
        raise TiffFormatError("required tag missing", STRIP_OFFSETS)
    expected = w * h * spp * 2
    if not counts:
        counts = [expected] if len(offsets) == 1 else None
        if counts is None:
            raise TiffFormatError("required tag missing", STRIP_BYTE_COUNTS)
    if len(counts) != len(offsets):
        raise TiffFormatError("strip offsets and byte counts disagree", STRIP_BYTE_COUNTS)
    data = b"".join(buf[o:o + c] for o, c in zip(offsets, counts))
    if len(data) < expected:
        raise TiffFormatError(f"pixel data truncated: {len(data)} of {expected} bytes")
    arr = np.frombuffer(data[:expected], dtype="<u2").astype(np.uint16)
    return arr.reshape((h, w) if spp == 1 else (h, w, 3))


def write_tiff16(img: np.ndarray, path) -> None:
    data = encode_tiff16(img)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise SceneIOError(f"cannot write {path}: {exc}") from exc


def read_tiff16(path) -> np.ndarray:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise SceneIOError(f"cannot read {path}: {exc}") from exc
    try:
        return decode_tiff16(buf)
    except TiffFormatError as exc:
        err = TiffFormatError(f"{path}: {exc}")
        err.tag = exc.tag
        raise err from exc
