"""Image containers, Bayer packing, bit-depth conversion and Bayer-aware flips.

Conventions used throughout the package:

* a plane is a 2-D ``float64`` array of linear-light samples, nominally in [0, 1];
* an RGB image is an ``(H, W, 3)`` array (float in [0, 1], or ``uint8``/``uint16``);
* a packed raw is a ``(4, H/2, W/2)`` array with planes ordered R, G1, G2, B,
  where G1 is the green site sharing a row with R.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum
from typing import Literal

import numpy as np

from .errors import DimensionError, ValidationError

PACKED_ORDER = ("R", "G1", "G2", "B")

# Rec.601 luma weights (R, G, B)
LUMA_601 = (0.299, 0.587, 0.114)


class CfaPattern(str, Enum):
    RGGB = "RGGB"
    GRBG = "GRBG"
    GBRG = "GBRG"
    BGGR = "BGGR"

    @classmethod
    def parse(cls, value: "CfaPattern | str") -> "CfaPattern":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValidationError(f"unknown CFA pattern {value!r}") from None

    def site_offsets(self) -> dict[str, tuple[int, int]]:
        """(row, col) offset of each packed site inside the 2x2 cell."""
        cells = {(i // 2, i % 2): c for i, c in enumerate(self.value)}
        r_pos = next(p for p, c in cells.items() if c == "R")
        b_pos = next(p for p, c in cells.items() if c == "B")
        greens = [p for p, c in cells.items() if c == "G"]
        g1 = next(p for p in greens if p[0] == r_pos[0])
        g2 = next(p for p in greens if p != g1)
        return {"R": r_pos, "G1": g1, "G2": g2, "B": b_pos}

    def color_cell(self) -> np.ndarray:
        """2x2 array of color indices (0=R, 1=G, 2=B)."""
        lut = {"R": 0, "G": 1, "B": 2}
        return np.array([[lut[self.value[0]], lut[self.value[1]]],
                         [lut[self.value[2]], lut[self.value[3]]]], dtype=np.int8)


class ExposureGroup(str, Enum):
    LOW = "low"
    MID = "mid"
    HIGH = "high"


@dataclass(frozen=True)
class NoiseParams:
    """Poisson-Gaussian sensor noise.

    ``shot_fullwell`` is the electron count at saturation (the Poisson scale)
    and ``read_sigma`` the read-noise std in normalized [0, 1] units.
    """

    shot_fullwell: float = 1000.0
    read_sigma: float = 0.002

    def __post_init__(self):
        if not self.shot_fullwell > 0:
            raise ValidationError("shot_fullwell must be > 0")
        if not self.read_sigma >= 0:
            raise ValidationError("read_sigma must be >= 0")

    def variance(self, x):
        """Per-sample variance of a normalized signal ``x``."""
        return np.asarray(x, dtype=np.float64) / self.shot_fullwell + self.read_sigma ** 2


@dataclass(frozen=True, eq=False)
class RawFrame:
    """One mosaicked Bayer frame plus its capture metadata."""

    data: np.ndarray
    cfa: CfaPattern = CfaPattern.RGGB
    exposure_gain: float = 1.0
    exposure_group: ExposureGroup = ExposureGroup.MID
    noise: NoiseParams | None = None
    bit_depth: int = 16

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise DimensionError(f"raw frame must be 2-D, got shape {data.shape}")
        check_even(data.shape)
        if not np.all(np.isfinite(data)):
            raise ValidationError("raw frame contains non-finite samples")
        if not self.exposure_gain > 0:
            raise ValidationError("exposure_gain must be > 0")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "cfa", CfaPattern.parse(self.cfa))
        object.__setattr__(self, "exposure_group", ExposureGroup(self.exposure_group))

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def pack(self) -> np.ndarray:
        return pack_cfa(self.data, self.cfa)

    def replace(self, **changes) -> "RawFrame":
        return dataclasses.replace(self, **changes)


def check_even(shape) -> None:
    h, w = shape[:2]
    if h % 2 or w % 2:
        raise DimensionError(f"dimensions must be even, got {h}x{w}")


def _mosaic_array(frame) -> tuple[np.ndarray, CfaPattern | None]:
    if isinstance(frame, RawFrame):
        return frame.data, frame.cfa
    return np.asarray(frame), None


def pack_cfa(frame: RawFrame | np.ndarray, cfa: CfaPattern | str | None = None) -> np.ndarray:
    """Split a mosaic into four half-resolution planes ordered R, G1, G2, B."""
    data, own_cfa = _mosaic_array(frame)
    if data.ndim != 2:
        raise DimensionError(f"mosaic must be 2-D, got shape {data.shape}")
    check_even(data.shape)
    pattern = CfaPattern.parse(cfa if cfa is not None else own_cfa or CfaPattern.RGGB)
    offsets = pattern.site_offsets()
    return np.stack([data[dy::2, dx::2] for dy, dx in (offsets[k] for k in PACKED_ORDER)])


def unpack_cfa(packed: np.ndarray, cfa: CfaPattern | str = CfaPattern.RGGB) -> np.ndarray:
    """Inverse of :func:`pack_cfa`."""
    packed = np.asarray(packed)
    if packed.ndim != 3 or packed.shape[0] != 4:
        raise DimensionError(f"packed raw must have shape (4, h, w), got {packed.shape}")
    _, h, w = packed.shape
    out = np.empty((2 * h, 2 * w), dtype=packed.dtype)
    offsets = CfaPattern.parse(cfa).site_offsets()
    for plane, key in zip(packed, PACKED_ORDER):
        dy, dx = offsets[key]
        out[dy::2, dx::2] = plane
    return out


def site_class_map(height: int, width: int, cfa: CfaPattern | str = CfaPattern.RGGB) -> np.ndarray:
    """Color index (0=R, 1=G, 2=B) of every photosite."""
    cell = CfaPattern.parse(cfa).color_cell()
    return np.tile(cell, (height // 2 + 1, width // 2 + 1))[:height, :width]


FlipAxis = Literal["horizontal", "vertical", "transpose"]


def _transpose_shift(cfa: CfaPattern) -> int:
    # out[a, b] = in[b + p, a - p]; p is the smallest shift that keeps colors
    cell = cfa.color_cell()
    for p in (0, 1):
        if all(cell[(b + p) % 2, (a - p) % 2] == cell[a, b] for a in (0, 1) for b in (0, 1)):
            return p
    raise AssertionError("no color-preserving transpose shift")  # unreachable for Bayer


def bayer_flip(frame: RawFrame | np.ndarray, axis: FlipAxis,
               cfa: CfaPattern | str | None = None):
    """Flip or transpose a mosaic while keeping every sample on its color.

    A plain flip moves samples onto the wrong CFA phase. Flips here are
    taken about row/column 0 with wrap-around (``x -> -x mod W``), which is
    the plain flip shifted by one pixel. The result keeps the frame size,
    preserves site colors and is an exact involution. Transposition uses
    the same trick with a one-pixel anti-diagonal shift when the pattern
    needs it.
    """
    data, own_cfa = _mosaic_array(frame)
    check_even(data.shape)
    pattern = CfaPattern.parse(cfa if cfa is not None else own_cfa or CfaPattern.RGGB)
    h, w = data.shape
    if axis == "horizontal":
        out = data[:, (-np.arange(w)) % w]
    elif axis == "vertical":
        out = data[(-np.arange(h)) % h, :]
    elif axis == "transpose":
        p = _transpose_shift(pattern)
        # out has shape (w, h): out[a, b] = in[(b + p) % h, (a - p) % w]
        out = data[(np.arange(h)[None, :] + p) % h, (np.arange(w)[:, None] - p) % w]
    else:
        raise ValidationError(f"unknown flip axis {axis!r}")
    if isinstance(frame, RawFrame):
        return frame.replace(data=out)
    return out


def to_float(img: np.ndarray) -> np.ndarray:
    """Integer images to [0, 1] floats; float input passes through as float64."""
    img = np.asarray(img)
    if img.dtype == np.uint16:
        return img.astype(np.float64) / 65535.0
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    return img.astype(np.float64, copy=False)


def _round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def quantize_to_8bit(img: np.ndarray) -> np.ndarray:
    """``clamp(round(v * 255), 0, 255)`` with round-half-away-from-zero."""
    v = to_float(img)
    return np.clip(_round_half_away(v * 255.0), 0, 255).astype(np.uint8)


def quantize_to_16bit(img: np.ndarray) -> np.ndarray:
    v = to_float(img)
    return np.clip(_round_half_away(v * 65535.0), 0, 65535).astype(np.uint16)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Rec.601 luma of an ``(H, W, 3)`` image, in the image's own scale."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"expected (H, W, 3) image, got {img.shape}")
    v = img.astype(np.float64)
    r, _, b = LUMA_601
    g = v[..., 1]
    # same weights, arranged so constant inputs map to themselves exactly
    return g + r * (v[..., 0] - g) + b * (v[..., 2] - g)
