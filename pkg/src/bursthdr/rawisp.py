"""Display rendering (demosaic, tone map) and the end-to-end restore pipeline."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .alignflow import AlignedBurst, align_burst
from .config import RestoreConfig
from .errors import PipelineError, ValidationError
from .hdrmerge import MergedRadiance, merge, merge_weights, reject_outliers
from .imgcore import CfaPattern, check_even, quantize_to_16bit, site_class_map, unpack_cfa

GAMMA = 2.2

_K_RB = np.array([[0.25, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 0.25]])
_K_G = np.array([[0.0, 0.25, 0.0], [0.25, 1.0, 0.25], [0.0, 0.25, 0.0]])


def demosaic_bilinear(raw: np.ndarray, cfa: CfaPattern | str = CfaPattern.RGGB) -> np.ndarray:
    """Bilinear demosaic to an ``(H, W, 3)`` linear image.

    Implemented as normalized convolution of each color lattice, so measured
    samples pass through unchanged and border pixels average only the
    neighbors that exist (equivalent to replicating each lattice).
    """
    raw = np.asarray(getattr(raw, "data", raw), dtype=np.float64)
    check_even(raw.shape)
    classes = site_class_map(raw.shape[0], raw.shape[1], cfa)
    out = np.empty(raw.shape + (3,))
    for c, k in ((0, _K_RB), (1, _K_G), (2, _K_RB)):
        m = (classes == c).astype(np.float64)
        num = ndimage.correlate(raw * m, k, mode="constant", cval=0.0)
        den = ndimage.correlate(m, k, mode="constant", cval=0.0)
        out[..., c] = num / den
    return out


def tone_map(linear: np.ndarray, headroom: float) -> np.ndarray:
    """``clip(v / headroom, 0, 1) ** (1 / 2.2)``."""
    if not headroom > 0:
        raise ValidationError("headroom must be > 0")
    return np.clip(np.asarray(linear, dtype=np.float64) / headroom, 0.0, 1.0) ** (1.0 / GAMMA)


@dataclass(frozen=True, eq=False)
class RestoreResult:
    image: np.ndarray              # (H, W, 3) uint16
    linear: np.ndarray             # (H, W, 3) radiance at the reference exposure
    aligned: AlignedBurst
    merged: MergedRadiance


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:  # tag the failing stage for the caller
        raise PipelineError(name, exc) from exc


def _mid_scale(scene) -> float:
    """Factor from frame-0 units to mid-exposure units."""
    return scene.spec.gains[1] / scene.frames[0].exposure_gain


def restore_details(scene, config: RestoreConfig | None = None,
                    origin: tuple[int, int] = (0, 0)) -> RestoreResult:
    """Full pipeline with intermediates. ``origin`` is the even (y, x) offset of a crop."""
    cfg = config or RestoreConfig()
    frames = scene.frames
    cfa = frames[0].cfa
    packed = _stage("pack", lambda: [f.pack() for f in frames])
    noise = frames[0].noise
    aligned = _stage("align", align_burst, packed, [f.exposure_gain for f in frames], cfg, noise,
                     (origin[0] // 2, origin[1] // 2))
    stack = np.stack(aligned.frames)
    masks = np.stack(aligned.masks)
    if cfg.reject_z is not None:
        masks = _stage("reject", reject_outliers, stack, masks, aligned.gains, noise,
                       z_lo=cfg.reject_z, z_hi=cfg.reject_z + 2.0, near_clip=aligned.near_clip)
    weights = _stage("merge_weights", merge_weights, stack, masks, aligned.gains, noise)
    # where every frame is clipped the brightest normalized sample is the best lower bound
    fallback = np.where(masks[0] > 0, stack[0], stack.max(axis=0))
    merged = _stage("merge", merge, stack, weights, fallback, cfg.merge_eps)
    scale = _mid_scale(scene) / aligned.gains[0]
    headroom = cfg.headroom or scene.headroom
    linear = _stage("demosaic", demosaic_bilinear, unpack_cfa(merged.data * scale, cfa), cfa)
    image = _stage("tone_map", lambda: quantize_to_16bit(tone_map(linear, headroom)))
    return RestoreResult(image, linear, aligned, merged)


def restore_scene(scene, config: RestoreConfig | None = None) -> np.ndarray:
    """pack -> align -> merge -> unpack -> demosaic -> tone map -> 16-bit."""
    return restore_details(scene, config).image


def reference_only_isp(scene, headroom: float | None = None) -> np.ndarray:
    """Render frame 0 alone through the same demosaic and tone map."""
    f0 = scene.frames[0]
    linear = demosaic_bilinear(f0.data * _mid_scale(scene), f0.cfa)
    return quantize_to_16bit(tone_map(linear, headroom or scene.headroom))


# ---------------------------------------------------------------------------
# tiled inference

# pixels at an inner tile edge that get zero blend weight (demosaic reach + 1)
EDGE_MARGIN = 2


def _starts(n: int, tile: int, overlap: int) -> list[int]:
    if tile >= n:
        return [0]
    step = tile - overlap
    starts = list(range(0, n - tile, step))
    starts.append(n - tile)
    return sorted(set(starts))


def _ramp(length: int, overlap: int) -> np.ndarray:
    """Raised-cosine rise over an inner edge; complementary for equal overlaps."""
    d = np.arange(length, dtype=np.float64)
    margin = EDGE_MARGIN if overlap >= 2 * EDGE_MARGIN + 2 else 0
    span = overlap - 2 * margin
    if span <= 0:
        return np.ones(length)
    t = np.clip((d - margin + 0.5) / span, 0.0, 1.0)
    w = 0.5 - 0.5 * np.cos(math.pi * t)
    w[d < margin] = 0.0
    return w


def _window_1d(start: int, size: int, prev_end: int | None, next_start: int | None) -> np.ndarray:
    w = np.ones(size)
    if prev_end is not None:
        ov = prev_end - start
        w = np.minimum(w, _ramp(size, ov))
    if next_start is not None:
        ov = start + size - next_start
        w = np.minimum(w, _ramp(size, ov)[::-1])
    return w


def crop_scene(scene, y0: int, x0: int, h: int, w: int):
    """Sub-scene over ``[y0:y0+h, x0:x0+w]``; offsets must be even to keep the CFA phase."""
    from .synthforge import BurstScene

    if y0 % 2 or x0 % 2:
        raise ValidationError("crop offsets must be even")
    frames = [f.replace(data=f.data[y0:y0 + h, x0:x0 + w]) for f in scene.frames]
    gt = None if scene.gt is None else scene.gt[y0:y0 + h, x0:x0 + w]
    return BurstScene(tuple(frames), gt, scene.spec, scene.scene_id, scene.headroom)


def tiled_restore(scene, tile: int = 256, overlap: int = 32,
                  config: RestoreConfig | None = None) -> np.ndarray:
    """Restore overlapping tiles independently and blend them.

    Every statistic (gains, flow, merge prior) is computed from the tile's
    own data. Tiles are blended with raised-cosine windows over the overlap.
    """
    if tile % 2 or overlap % 2 or overlap < 0 or not tile > 2 * overlap:
        raise ValidationError("need even tile and overlap with tile > 2 * overlap")
    h, w = scene.shape
    ys, xs = _starts(h, tile, overlap), _starts(w, tile, overlap)
    if len(ys) == 1 and len(xs) == 1:
        return restore_scene(scene, config)
    acc = np.zeros((h, w, 3))
    wsum = np.zeros((h, w))
    th, tw = min(tile, h), min(tile, w)
    for i, y0 in enumerate(ys):
        wy = _window_1d(y0, th, ys[i - 1] + th if i else None, ys[i + 1] if i + 1 < len(ys) else None)
        for j, x0 in enumerate(xs):
            wx = _window_1d(x0, tw, xs[j - 1] + tw if j else None,
                            xs[j + 1] if j + 1 < len(xs) else None)
            sub = crop_scene(scene, y0, x0, th, tw)
            out = restore_details(sub, config, (y0, x0)).image.astype(np.float64)
            win = np.outer(wy, wx)
            acc[y0:y0 + th, x0:x0 + tw] += win[..., None] * out
            wsum[y0:y0 + th, x0:x0 + tw] += win
    blended = acc / wsum[..., None]
    return np.clip(np.floor(blended + 0.5), 0, 65535).astype(np.uint16)
