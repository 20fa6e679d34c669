"""Inverse-variance fusion of aligned, exposure-normalized frames."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MalformedSceneError
from .imgcore import ExposureGroup, NoiseParams

MIN_VARIANCE = 1e-12


@dataclass(frozen=True, eq=False)
class MergeWeights:
    weights: np.ndarray        # (K, ...) nonnegative
    max_total: np.ndarray      # weight sum with every mask at 1
    signal: np.ndarray         # robust per-pixel signal estimate used for the noise model
    uniform: bool = False      # True when no noise model was available


@dataclass(frozen=True, eq=False)
class MergedRadiance:
    data: np.ndarray           # exposure-normalized linear radiance, may exceed 1
    confidence: np.ndarray     # normalized total weight in [0, 1]; 0 where the reference was used


def robust_signal(frames: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Median across frames of the valid samples; plain median where none is valid."""
    frames = np.asarray(frames, dtype=np.float64)
    valid = np.broadcast_to(np.asarray(masks) > 0, frames.shape)
    # invalid samples sort to the end; the median sits among the first n
    srt = np.sort(np.where(valid, frames, np.inf), axis=0)
    n = valid.sum(axis=0)
    lo = np.take_along_axis(srt, np.maximum(n - 1, 0)[None] // 2, axis=0)[0]
    hi = np.take_along_axis(srt, (n // 2)[None], axis=0)[0] if len(frames) > 1 else lo
    med = np.where(n > 0, 0.5 * (lo + np.where(n > 1, hi, lo)), 0.0)
    return np.where(n > 0, med, np.median(frames, axis=0))


def merge_weights(frames, masks, gains, noise: NoiseParams | None) -> MergeWeights:
    """Per-frame weights ``mask / variance``.

    ``gains`` are the normalization multipliers applied to each raw frame.
    A frame normalized by ``n`` had expected raw signal ``s = x / n`` for
    normalized signal ``x``, so its normalized variance is
    ``(s / W + read_sigma^2) * n^2``. Short exposures (large ``n``) weigh
    less except where the long ones are masked.
    """
    frames = np.asarray(frames, dtype=np.float64)
    masks = np.broadcast_to(np.asarray(masks, dtype=np.float64), frames.shape)
    signal = robust_signal(frames, masks)
    if noise is None:
        return MergeWeights(masks.copy(), np.full(frames.shape[1:], float(len(frames))),
                            signal, uniform=True)
    inv = 1.0 / _normalized_variance(signal, gains, noise)
    return MergeWeights(masks * inv, inv.sum(axis=0), signal)


def _normalized_variance(signal, gains, noise: NoiseParams) -> np.ndarray:
    n = np.asarray(gains, dtype=np.float64).reshape((-1,) + (1,) * np.ndim(signal))
    raw_signal = np.clip(np.asarray(signal)[None] / n, 0.0, 1.0)
    return np.maximum(noise.variance(raw_signal) * n * n, MIN_VARIANCE)


def reject_outliers(frames, masks, gains, noise: NoiseParams | None, reference: int = 0,
                    z_lo: float = 4.0, z_hi: float = 6.0, near_clip=None) -> np.ndarray:
    """Masks scaled down where a frame disagrees with the reference beyond its noise.

    Where the reference is valid it is the anchor. Where it is clipped the
    radiance is only bounded from below: by the reference's own normalized
    value and by the second-largest value among the other zero-mask
    (clipped or padded) samples, so one misaligned frame cannot raise the
    bound. There only samples below the bound count as deviations. The
    mask ramps from 1 at ``z_lo`` combined noise deviations to 0 at
    ``z_hi``. Without a noise model the masks are returned unchanged.

    ``near_clip`` flags valid samples close enough to full scale that they
    may be clipped samples pulled down by noise. A near-clip sample, the
    reference included, is dropped when the samples clear of the clip level
    sit well above it, and then counts as a lower bound like a clipped one.
    Otherwise the reference keeps its own mask.
    """
    frames = np.asarray(frames, dtype=np.float64)
    masks = np.broadcast_to(np.asarray(masks, dtype=np.float64), frames.shape)
    if noise is None:
        return masks.copy()
    valid = masks > 0
    near = np.zeros(frames.shape, dtype=bool) if near_clip is None else \
        np.broadcast_to(np.asarray(near_clip, dtype=bool), frames.shape) & valid
    sure = valid & ~near
    signal = robust_signal(frames, masks)
    var = _normalized_variance(signal, gains, noise)
    ref = frames[reference]
    # samples clear of the clip level that sit above a near-clip sample
    # expose it as clipped
    consensus = np.where(sure.any(axis=0), robust_signal(frames, sure), -np.inf)
    spread = np.where(sure, var, 0.0).max(axis=0)
    z_near = np.maximum(consensus - frames, 0.0) / np.sqrt(var + spread)
    keep_near = np.where(near, np.clip((z_hi - z_near) / (z_hi - z_lo), 0.0, 1.0), 1.0)
    ref_ok = valid[reference] & (keep_near[reference] >= 1.0)
    censored = np.where(valid & (keep_near >= 1.0), -np.inf, frames)
    censored[reference] = -np.inf
    second = np.sort(censored, axis=0)[-2] if len(frames) > 2 else np.full(ref.shape, -np.inf)
    bound = np.maximum(ref, second)
    dev = np.where(ref_ok, np.abs(frames - ref), np.maximum(bound - frames, 0.0))
    z = dev / np.sqrt(var + np.where(ref_ok, var[reference], 0.0))
    keep = np.clip((z_hi - z) / (z_hi - z_lo), 0.0, 1.0)
    keep[reference] = 1.0
    return masks * keep * keep_near


def merge(frames, weights: MergeWeights | np.ndarray, reference: np.ndarray,
          eps: float = 1e-8) -> MergedRadiance:
    """Weighted mean of the frames; pixels with total weight below ``eps`` take ``reference``."""
    frames = np.asarray(frames, dtype=np.float64)
    if isinstance(weights, MergeWeights):
        w, max_total = weights.weights, weights.max_total
    else:
        w = np.asarray(weights, dtype=np.float64)
        max_total = None
    total = w.sum(axis=0)
    ok = total >= eps
    safe = np.where(ok, total, 1.0)
    # residuals about the most trusted frame: identical inputs come back bit-exact
    base = np.take_along_axis(frames, w.argmax(axis=0)[None], axis=0)[0]
    mean = base + (w * (frames - base)).sum(axis=0) / safe
    out = np.where(ok, mean, np.asarray(reference, dtype=np.float64))
    if max_total is None:
        conf = ok.astype(np.float64)
    else:
        conf = np.where(ok, np.clip(total / np.maximum(max_total, eps), 0.0, 1.0), 0.0)
    return MergedRadiance(out, conf)


def group_exposures(scene_or_frames) -> dict[ExposureGroup, list[int]]:
    """Frame indices of each exposure trio, in frame order."""
    frames = getattr(scene_or_frames, "frames", scene_or_frames)
    groups = {g: [] for g in ExposureGroup}
    for i, f in enumerate(frames):
        groups[ExposureGroup(f.exposure_group)].append(i)
    bad = {g.value: len(v) for g, v in groups.items() if len(v) != 3}
    if bad:
        raise MalformedSceneError(f"each exposure group needs 3 frames, got {bad}")
    return groups
