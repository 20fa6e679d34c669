"""Burst scene synthesis.

A scene is nine mosaicked frames captured from one linear HDR radiance map
at three exposure levels. Each frame goes through a fixed chain:
rigid transform -> motion blur -> gain and sensor clip -> mosaic ->
Poisson-Gaussian noise. The ground truth is rendered from the untransformed
radiance at the reference exposure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import MalformedSceneError, ValidationError
from .imgcore import (CfaPattern, ExposureGroup, NoiseParams, RawFrame, check_even,
                      quantize_to_16bit, site_class_map)

__all__ = [
    "NoiseParams", "RigidTransform", "BlurKernel", "SceneSpec", "BurstScene",
    "make_rng", "procedural_hdr", "apply_rigid", "apply_blur", "mosaic",
    "add_poisson_gaussian", "synth_frame", "render_gt", "synth_scene",
    "random_scene_spec", "DEFAULT_GAINS", "DEFAULT_ORDER",
]

DEFAULT_GAINS = (1.0, 4.0, 16.0)
DEFAULT_NOISE = NoiseParams(shot_fullwell=1000.0, read_sigma=0.002)
DEFAULT_SIZE = (768, 1536)
BLOB_MAX_RADIUS = 20.0

_L, _M, _H = ExposureGroup.LOW, ExposureGroup.MID, ExposureGroup.HIGH
DEFAULT_ORDER = (_M, _L, _L, _L, _M, _M, _H, _H, _H)

# RNG stream tags
STREAM_CONTENT = 0
STREAM_SPEC = 1
STREAM_NOISE = 2


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based (Philox) generator for the substream ``(seed, *stream)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *stream])))


@dataclass(frozen=True)
class RigidTransform:
    """Rotation by ``theta`` radians about the image center, then a shift.

    Content moves by ``(+tx, +ty)``: a feature at ``(x, y)`` ends up at
    ``(x + tx, y + ty)`` when ``theta == 0``.
    """

    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        if not abs(self.theta) < math.pi:
            raise ValidationError("|theta| must be < pi")

    @property
    def is_identity(self) -> bool:
        return self.theta == 0 and self.tx == 0 and self.ty == 0


@dataclass(frozen=True)
class BlurKernel:
    """Linear motion blur of ``length`` pixels along ``angle`` radians."""

    length: int = 1
    angle: float = 0.0

    def __post_init__(self):
        if int(self.length) != self.length or self.length < 1:
            raise ValidationError("blur length must be a positive integer")

    @property
    def is_identity(self) -> bool:
        return self.length == 1

    def taps(self) -> np.ndarray:
        """Kernel rasterized by bilinear splatting of unit-spaced line samples."""
        n = int(self.length)
        if n == 1:
            return np.ones((1, 1))
        half = (n - 1) / 2
        size = 2 * math.ceil(half) + 1
        c = size // 2
        k = np.zeros((size + 1, size + 1))
        t = np.arange(n) - half
        xs = c + t * math.cos(self.angle)
        ys = c + t * math.sin(self.angle)
        for x, y in zip(xs, ys):
            x0, y0 = math.floor(x), math.floor(y)
            ax, ay = x - x0, y - y0
            k[y0, x0] += (1 - ax) * (1 - ay)
            k[y0, x0 + 1] += ax * (1 - ay)
            k[y0 + 1, x0] += (1 - ax) * ay
            k[y0 + 1, x0 + 1] += ax * ay
        k = k[:size, :size]
        return k / k.sum()


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    gains: tuple[float, float, float] = DEFAULT_GAINS
    transforms: tuple[RigidTransform, ...] = field(default_factory=lambda: (RigidTransform(),) * 9)
    blurs: tuple[BlurKernel, ...] = field(default_factory=lambda: (BlurKernel(),) * 9)
    noise: NoiseParams | None = DEFAULT_NOISE
    cfa: CfaPattern = CfaPattern.RGGB
    groups: tuple[ExposureGroup, ...] = DEFAULT_ORDER

    def __post_init__(self):
        object.__setattr__(self, "cfa", CfaPattern.parse(self.cfa))
        object.__setattr__(self, "gains", tuple(float(g) for g in self.gains))
        object.__setattr__(self, "groups", tuple(ExposureGroup(g) for g in self.groups))
        object.__setattr__(self, "transforms", tuple(self.transforms))
        object.__setattr__(self, "blurs", tuple(self.blurs))
        lo, mid, hi = self.gains
        if not 0 < lo < mid < hi:
            raise ValidationError(f"gains must satisfy 0 < low < mid < high, got {self.gains}")
        if not (len(self.transforms) == len(self.blurs) == len(self.groups) == 9):
            raise MalformedSceneError("a scene has exactly 9 frames")
        for g in ExposureGroup:
            if self.groups.count(g) != 3:
                raise MalformedSceneError(f"expected 3 frames in group {g.value}, "
                                          f"got {self.groups.count(g)}")
        if not self.transforms[0].is_identity:
            raise ValidationError("frame 0 is the reference and must have the identity transform")
        if not self.blurs[0].is_identity:
            raise ValidationError("frame 0 is the reference and must be unblurred")

    def gain_of(self, group: ExposureGroup) -> float:
        return self.gains[(_L, _M, _H).index(ExposureGroup(group))]

    def frame_gain(self, index: int) -> float:
        return self.gain_of(self.groups[index])

    @property
    def reference_gain(self) -> float:
        return self.frame_gain(0)

    @property
    def headroom(self) -> float:
        """Display headroom above the reference exposure: ``g_high / g_mid``."""
        return self.gains[2] / self.gains[1]


@dataclass(frozen=True, eq=False)
class BurstScene:
    frames: tuple[RawFrame, ...]
    gt: np.ndarray
    spec: SceneSpec
    scene_id: str = "scene"
    headroom: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if len(self.frames) != 9:
            raise MalformedSceneError(f"expected 9 frames, got {len(self.frames)}")
        shape = self.frames[0].shape
        if any(f.shape != shape for f in self.frames):
            raise ValidationError("all frames must share dimensions")
        if self.gt is not None and tuple(self.gt.shape[:2]) != tuple(shape):
            raise ValidationError(f"gt shape {self.gt.shape[:2]} != frame shape {shape}")
        if self.headroom is None:
            object.__setattr__(self, "headroom", self.spec.headroom)

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames[0].shape


# ---------------------------------------------------------------------------
# content

def _smooth_field(rng, h, w, cells, order=3):
    gh, gw = max(4, h // cells), max(4, w // cells)
    coarse = rng.standard_normal((gh, gw))
    f = ndimage.zoom(coarse, (h / gh, w / gw), order=order, mode="nearest")[:h, :w]
    f = (f - f.mean()) / (f.std() + 1e-12)
    return f


def _stroke_mask(h, w, rng, n_strokes):
    mask = np.zeros((h, w))
    sign = np.zeros((h, w))
    for _ in range(n_strokes):
        # short glyph-like polyline of 2-3 segments
        x, y = rng.uniform(0, w), rng.uniform(0, h)
        width = rng.uniform(0.7, 2.0)
        level = rng.choice([-1.0, 1.0])
        for _seg in range(rng.integers(2, 4)):
            ang = rng.uniform(0, 2 * math.pi)
            ln = rng.uniform(4, 14)
            x2, y2 = x + ln * math.cos(ang), y + ln * math.sin(ang)
            dx, dy = x2 - x, y2 - y
            # the stroke is zero farther than width + 0.5 from the segment
            r = width + 1.0
            y0, y1 = max(0, int(min(y, y2) - r)), min(h, int(max(y, y2) + r) + 2)
            x0, x1 = max(0, int(min(x, x2) - r)), min(w, int(max(x, x2) + r) + 2)
            if y0 < y1 and x0 < x1:
                yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
                t = np.clip(((xx - x) * dx + (yy - y) * dy) / (dx * dx + dy * dy), 0, 1)
                d = np.hypot(xx - (x + t * dx), yy - (y + t * dy))
                m = np.clip(width + 0.5 - d, 0, 1)
                sub = (slice(y0, y1), slice(x0, x1))
                upd = m > mask[sub]
                mask[sub] = np.where(upd, m, mask[sub])
                sign[sub] = np.where(upd, level, sign[sub])
            x, y = x2, y2
    return mask * sign


def procedural_hdr(seed: int, width: int, height: int) -> np.ndarray:
    """Deterministic linear HDR test image of shape ``(height, width, 3)``.

    Log-radiance is a sum of a smooth random field, a horizontal gradient,
    checker tiles with random per-tile offsets, glyph-like strokes, fine
    texture and a few highlight blobs. Most of the image sits well below 1
    while highlights exceed it so short exposures are needed.
    """
    check_even((height, width))
    rng = make_rng(seed, STREAM_CONTENT)
    h, w = height, width
    stops = -4.5 + 1.6 * _smooth_field(rng, h, w, 48)
    stops += np.linspace(-1.0, 1.0, w)[None, :]
    tile = int(rng.integers(6, 14))
    ty, tx = -(-h // tile), -(-w // tile)
    offsets = rng.uniform(-1.2, 1.2, (ty, tx))
    stops += np.kron(offsets, np.ones((tile, tile)))[:h, :w]
    n_strokes = max(4, (h * w) // 900)
    stops += 2.0 * _stroke_mask(h, w, rng, n_strokes)
    stops += 0.35 * ndimage.gaussian_filter(rng.standard_normal((h, w)), 0.8) / 0.3
    # blob count scales with area and radius is fixed in pixels, so the
    # clipped fraction does not depend on the image size
    for _ in range(max(1, (h * w) // 20000)):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = rng.uniform(2.0, BLOB_MAX_RADIUS)
        # the bump is below 2^-11 stops beyond 5 radii
        y0, y1 = max(0, int(cy - 5 * r)), min(h, int(cy + 5 * r) + 2)
        x0, x1 = max(0, int(cx - 5 * r)), min(w, int(cx + 5 * r) + 2)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        stops[y0:y1, x0:x1] += 5.0 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
    lum = np.exp2(np.clip(stops, -11.0, 2.5))
    hue = np.stack([_smooth_field(rng, h, w, 64, order=1) for _ in range(3)], axis=-1)
    color = 0.55 + 0.45 * np.tanh(0.8 * hue)
    color /= color.mean(axis=-1, keepdims=True)
    return lum[..., None] * color


# ---------------------------------------------------------------------------
# degradations

def apply_rigid(plane: np.ndarray, t: RigidTransform) -> np.ndarray:
    """Inverse-mapped bilinear resampling about the image center; outside samples are 0.

    Accepts ``(H, W)`` or ``(H, W, C)`` arrays.
    """
    plane = np.asarray(plane, dtype=np.float64)
    if t.is_identity:
        return plane.copy()
    h, w = plane.shape[:2]
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    c, s = math.cos(t.theta), math.sin(t.theta)
    ux, uy = xx - cx - t.tx, yy - cy - t.ty
    src_x = c * ux + s * uy + cx
    src_y = -s * ux + c * uy + cy
    stack = plane[None] if plane.ndim == 2 else np.moveaxis(plane, -1, 0)
    out, _, _ = kernels.warp_bilinear(stack, src_x - xx, src_y - yy)
    return out[0] if plane.ndim == 2 else np.moveaxis(out, 0, -1)


def apply_blur(plane: np.ndarray, k: BlurKernel | np.ndarray) -> np.ndarray:
    """Convolve with a normalized kernel using replicate borders.

    Accepts ``(H, W)`` or ``(H, W, C)`` arrays.
    """
    plane = np.asarray(plane, dtype=np.float64)
    if isinstance(k, BlurKernel):
        if k.is_identity:
            return plane.copy()
        taps = k.taps()
    else:
        taps = np.asarray(k, dtype=np.float64)
    if abs(taps.sum() - 1.0) > 1e-6:
        raise ValidationError(f"blur kernel taps sum to {taps.sum():.6g}, expected 1")
    if plane.ndim == 3:
        return np.stack([ndimage.convolve(plane[..., i], taps, mode="nearest")
                         for i in range(plane.shape[2])], axis=-1)
    return ndimage.convolve(plane, taps, mode="nearest")


def mosaic(img: np.ndarray, cfa: CfaPattern | str = CfaPattern.RGGB) -> np.ndarray:
    """Sample an ``(H, W, 3)`` image through the CFA; returns the 2-D mosaic."""
    img = np.asarray(img, dtype=np.float64)
    check_even(img.shape)
    classes = site_class_map(img.shape[0], img.shape[1], cfa)
    return np.take_along_axis(img, classes[..., None].astype(np.intp), axis=2)[..., 0]


def add_poisson_gaussian(plane: np.ndarray, p: NoiseParams, rng: np.random.Generator,
                         clip: bool = True) -> np.ndarray:
    """``Poisson(x * W) / W + N(0, read_sigma^2)``, clamped to [0, 1] unless ``clip`` is False."""
    x = np.clip(np.asarray(plane, dtype=np.float64), 0.0, None)
    w = p.shot_fullwell
    y = rng.poisson(x * w) / w
    if p.read_sigma > 0:
        y = y + rng.normal(0.0, p.read_sigma, size=x.shape)
    return np.clip(y, 0.0, 1.0) if clip else y


def synth_frame(hdr: np.ndarray, t: RigidTransform, gain: float, k: BlurKernel,
                p: NoiseParams | None, cfa: CfaPattern | str, rng: np.random.Generator,
                group: ExposureGroup = ExposureGroup.MID) -> RawFrame:
    """One captured frame. Saturation is applied before mosaicking."""
    radiance = apply_blur(apply_rigid(hdr, t), k)
    exposed = np.clip(radiance * gain, 0.0, 1.0)
    raw = mosaic(exposed, cfa)
    if p is not None:
        raw = add_poisson_gaussian(raw, p, rng)
    return RawFrame(raw, cfa=cfa, exposure_gain=gain, exposure_group=group, noise=p)


def render_gt(hdr: np.ndarray, gains=DEFAULT_GAINS, cfa: CfaPattern | str = CfaPattern.RGGB,
              headroom: float | None = None) -> np.ndarray:
    """16-bit display ground truth at the reference (mid) exposure.

    Radiance is scaled to the mid exposure and clipped at the longest range
    the burst can represent (``g_mid / g_low``). It is then rendered with the
    same mosaic -> bilinear demosaic -> tone map path the restorer uses, so
    an undegraded burst restores to the ground truth.
    """
    from .rawisp import demosaic_bilinear, tone_map

    lo, mid, hi = gains
    if headroom is None:
        headroom = hi / mid
    linear = np.clip(np.asarray(hdr, dtype=np.float64) * mid, 0.0, mid / lo)
    rgb = demosaic_bilinear(mosaic(linear, cfa), cfa)
    return quantize_to_16bit(tone_map(rgb, headroom))


def synth_scene(hdr: np.ndarray, spec: SceneSpec, scene_id: str = "scene") -> BurstScene:
    frames = []
    for i in range(9):
        frames.append(synth_frame(hdr, spec.transforms[i], spec.frame_gain(i), spec.blurs[i],
                                  spec.noise, spec.cfa, make_rng(spec.seed, STREAM_NOISE, i),
                                  group=spec.groups[i]))
    gt = render_gt(hdr, spec.gains, spec.cfa)
    return BurstScene(tuple(frames), gt, spec, scene_id=scene_id)


def random_scene_spec(seed: int, *, gains=DEFAULT_GAINS, max_shift: float = 8.0,
                      max_rot_deg: float = 1.0, blur_len: int = 7,
                      noise: NoiseParams | None = DEFAULT_NOISE,
                      cfa: CfaPattern | str = CfaPattern.RGGB,
                      shift_step: int | None = None,
                      groups=DEFAULT_ORDER) -> SceneSpec:
    """Randomized degradations; frame 0 is always identity and unblurred.

    ``shift_step`` quantizes shifts to multiples of that many pixels and
    disables rotation (``shift_step=2`` gives integer shifts at packed
    resolution).
    """
    rng = make_rng(seed, STREAM_SPEC)
    transforms = [RigidTransform()]
    blurs = [BlurKernel()]
    for _ in range(8):
        tx, ty = rng.uniform(-max_shift, max_shift, 2)
        theta = math.radians(rng.uniform(-max_rot_deg, max_rot_deg))
        if shift_step:
            tx = shift_step * round(tx / shift_step)
            ty = shift_step * round(ty / shift_step)
            theta = 0.0
        transforms.append(RigidTransform(theta=float(theta), tx=float(tx), ty=float(ty)))
        length = int(rng.integers(1, max(1, blur_len) + 1))
        blurs.append(BlurKernel(length=length, angle=float(rng.uniform(0, math.pi))))
    return SceneSpec(seed=seed, gains=tuple(gains), transforms=tuple(transforms),
                     blurs=tuple(blurs), noise=noise, cfa=CfaPattern.parse(cfa), groups=groups)
