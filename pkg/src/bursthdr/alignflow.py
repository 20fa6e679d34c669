"""Exposure normalization and dense flow alignment at packed resolution.

Frames of different exposures are first brought to the brightness of the
longest exposure, using only pixels that are unclipped in both frames.
Flow is estimated coarse-to-fine: tile block matching (integer SAD search)
followed by a few damped Gauss-Newton (Lucas-Kanade) steps per tile, then
densified by bilinear interpolation of the tile flows.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import kernels
from .config import RestoreConfig
from .errors import DimensionError, InsufficientOverlapError, ValidationError
from .imgcore import NoiseParams

log = logging.getLogger(__name__)

FLOW_MAGIC = b"BFLOW\x00\x01\x00"


@dataclass(frozen=True)
class GainEstimate:
    gain: float
    inlier_fraction: float = 1.0

    def __post_init__(self):
        if not self.gain > 0:
            raise ValidationError("gain must be > 0")


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel displacement: output ``(x, y)`` samples the target at ``(x + dx, y + dy)``."""

    dx: np.ndarray
    dy: np.ndarray
    tile_dx: np.ndarray | None = None
    tile_dy: np.ndarray | None = None
    block: int | None = None

    @classmethod
    def zeros(cls, shape) -> "FlowField":
        return cls(np.zeros(shape), np.zeros(shape))

    @classmethod
    def uniform(cls, shape, dx: float, dy: float) -> "FlowField":
        return cls(np.full(shape, float(dx)), np.full(shape, float(dy)))

    @property
    def shape(self):
        return self.dx.shape


def validity_mask(raw: np.ndarray, sat_thresh: float = 0.98, floor_thresh: float | None = 0.02,
                  ramp: float = 0.02) -> np.ndarray:
    """Weights in [0, 1]: 0 at or above ``sat_thresh`` (and at or below ``floor_thresh``),
    ramping linearly to 1 over ``ramp``."""
    raw = np.asarray(raw, dtype=np.float64)
    m = np.clip((sat_thresh - raw) / ramp, 0.0, 1.0)
    if floor_thresh is not None:
        m = np.minimum(m, np.clip((raw - floor_thresh) / ramp, 0.0, 1.0))
    return m


# Clip margins in noise deviations below full scale. Samples between the two
# stay valid but are flagged as possibly clipped for outlier rejection.
CLIP_SIGMAS = 3.0
NEAR_CLIP_SIGMAS = 5.0


def effective_sat_thresh(sat_thresh: float, noise: NoiseParams | None,
                         sigmas: float = CLIP_SIGMAS) -> float:
    """Saturation threshold lowered to sit ``sigmas`` noise deviations below full scale.

    Noise is added after the sensor clips, so a clipped sample scatters
    around 1.0 and a fixed threshold just under 1.0 lets many through.
    """
    if noise is None:
        return sat_thresh
    return min(sat_thresh, 1.0 - sigmas * float(np.sqrt(noise.variance(1.0))))


def estimate_exposure_gain(target: np.ndarray, reference_longest: np.ndarray,
                           sat_thresh: float = 0.98, floor_thresh: float = 0.02,
                           valid: np.ndarray | None = None,
                           min_inlier_fraction: float = 0.01) -> GainEstimate:
    """Median of ``reference / target`` over pixels unclipped in both frames."""
    t = np.asarray(target, dtype=np.float64)
    r = np.asarray(reference_longest, dtype=np.float64)
    if t.shape != r.shape:
        raise DimensionError(f"shape mismatch {t.shape} vs {r.shape}")
    inl = (t > floor_thresh) & (t < sat_thresh) & (r > floor_thresh) & (r < sat_thresh)
    if valid is not None:
        inl &= np.broadcast_to(valid, t.shape) >= 1.0
    frac = float(inl.mean()) if inl.size else 0.0
    if frac < min_inlier_fraction:
        raise InsufficientOverlapError(frac)
    return GainEstimate(float(np.median(r[inl] / t[inl])), frac)


def normalize_exposure(frame: np.ndarray, g: GainEstimate | float, sat_thresh: float = 0.98,
                       floor_thresh: float | None = 0.02, ramp: float = 0.02):
    """Scale by the gain (no clamp) and flag clipped or dead-black samples."""
    gain = g.gain if isinstance(g, GainEstimate) else float(g)
    if not gain > 0:
        raise ValidationError("gain must be > 0")
    frame = np.asarray(frame, dtype=np.float64)
    return frame * gain, validity_mask(frame, sat_thresh, floor_thresh, ramp)


# ---------------------------------------------------------------------------
# flow

def _pool2(a: np.ndarray) -> np.ndarray:
    h, w = a.shape
    return a.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _pool2_min(a: np.ndarray) -> np.ndarray:
    h, w = a.shape
    return a.reshape(h // 2, 2, w // 2, 2).min(axis=(1, 3))


def _tiles(n: int, block: int, offset: int = 0):
    """Tile grid over ``n`` samples whose boundaries fall on multiples of ``block``
    in a frame where this array starts at ``offset``."""
    first = (-offset) % block
    starts = np.arange(first, n, block)
    if first:
        starts = np.concatenate([[0], starts])
    sizes = np.minimum(block, n - starts)
    centers = starts + (sizes - 1) / 2.0
    return starts, sizes, centers


def _interp_matrix(query: np.ndarray, knots: np.ndarray) -> np.ndarray:
    """Linear-interpolation weights (clamped at the ends), shape ``(len(query), len(knots))``."""
    eye = np.eye(len(knots))
    return np.stack([np.interp(query, knots, eye[i]) for i in range(len(knots))], axis=1)


def densify(tile_values: np.ndarray, centers_y, centers_x, qy, qx) -> np.ndarray:
    """Bilinear interpolation of tile-center values at the grid ``qy x qx``."""
    wy = _interp_matrix(np.asarray(qy, dtype=np.float64), np.asarray(centers_y, dtype=np.float64))
    wx = _interp_matrix(np.asarray(qx, dtype=np.float64), np.asarray(centers_x, dtype=np.float64))
    return wy @ tile_values @ wx.T


def _tile_sum(a: np.ndarray, ys, xs) -> np.ndarray:
    return np.add.reduceat(np.add.reduceat(a, ys, axis=0), xs, axis=1)


def _expand(tile_values: np.ndarray, sy, sx) -> np.ndarray:
    return np.repeat(np.repeat(tile_values, sy, axis=0), sx, axis=1)


def fill_holes(values: np.ndarray, known: np.ndarray) -> np.ndarray:
    """Replace unknown tiles by the mean of known 8-neighbors, growing inward."""
    values = values.copy()
    known = known.copy()
    if not known.any():
        return values
    while not known.all():
        pv = np.pad(np.where(known, values, 0.0), 1)
        pk = np.pad(known.astype(np.float64), 1)
        h, w = known.shape
        s = sum(pv[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
                for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dy or dx)
        n = sum(pk[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
                for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dy or dx)
        grow = ~known & (n > 0)
        values[grow] = s[grow] / n[grow]
        known |= grow
    return values


def median3(values: np.ndarray) -> np.ndarray:
    """3x3 median over tiles with linearly extrapolated borders.

    Removes isolated bad vectors. A flow field that is linear in the tile
    index (any rigid motion on a regular grid) passes through unchanged.
    """
    if min(values.shape) < 2:
        return values.copy()
    p = np.pad(values, 1, mode="reflect", reflect_type="odd")
    h, w = values.shape
    win = np.stack([p[dy:dy + h, dx:dx + w] for dy in range(3) for dx in range(3)])
    return np.median(win, axis=0)


PROPAGATION_PASSES = 2


def _propagate(ref, tgt, wref, wtgt, geom, bdy, bdx, status, cost, grid, bm):
    """Let each matched tile try its neighbors' displacements (radius-1 search around each).

    Rescues tiles whose search window missed the true motion because the
    coarser level was misled, e.g. next to clipped highlights.
    """
    bdy, bdx, cost, status = bdy.copy(), bdx.copy(), cost.copy(), status.copy()
    matched = status == 1
    target = matched | (status == 3)
    if not matched.any():
        return bdy, bdx, status
    for _ in range(PROPAGATION_PASSES):
        changed = False
        gy, gx = bdy.reshape(grid), bdx.reshape(grid)
        gm = matched.reshape(grid)
        for oy in (-1, 0, 1):
            for ox in (-1, 0, 1):
                if not (oy or ox):
                    continue
                # neighbor (i + oy, j + ox) proposes its displacement to tile (i, j)
                ny = np.roll(gy, (-oy, -ox), axis=(0, 1)).ravel()
                nx = np.roll(gx, (-oy, -ox), axis=(0, 1)).ravel()
                nm = np.roll(gm, (-oy, -ox), axis=(0, 1)).ravel()
                ii, jj = np.unravel_index(np.arange(matched.size), grid)
                inside = ((ii + oy >= 0) & (ii + oy < grid[0])
                          & (jj + ox >= 0) & (jj + ox < grid[1]))
                cand = target & nm & inside & ((ny != bdy) | (nx != bdx))
                if not cand.any():
                    continue
                sel = np.flatnonzero(cand)
                cdy, cdx, cst, cc = kernels.block_match(
                    ref, tgt, wref, wtgt, *(g[sel] for g in geom), ny[sel], nx[sel], 1, **bm)
                better = ((cst == 1) | (cst == 3)) & (cc < cost[sel])
                if better.any():
                    idx = sel[better]
                    bdy[idx], bdx[idx], cost[idx] = cdy[better], cdx[better], cc[better]
                    status[idx] = cst[better]
                    changed = True
        if not changed:
            break
    return bdy, bdx, status


MIN_GRADIENT_ENERGY = 1e-9


def _lk_refine(ref, tgt, grads, wref, wtgt, ys, xs, sy, sx, fdx, fdy, iters, damping,
               min_valid, backend):
    """Damped Gauss-Newton translation update per tile; tiles without structure are left alone."""
    npix = np.outer(sy, sx)
    start_dx, start_dy = fdx.copy(), fdy.copy()
    stack = np.stack([tgt, grads[0], grads[1]])
    for _ in range(iters):
        pdx, pdy = _expand(fdx, sy, sx), _expand(fdy, sy, sx)
        warped, pad, amin = kernels.warp_bilinear(stack, pdx, pdy, wtgt, backend=backend)
        w = wref * amin * (pad >= 1.0 - 1e-9)
        gx, gy = warped[1], warped[2]
        r = warped[0] - ref
        sw = _tile_sum(w, ys, xs)
        ok = sw >= min_valid * npix
        den = np.where(ok, sw, 1.0)
        a11 = _tile_sum(w * gx * gx, ys, xs) / den + damping
        a12 = _tile_sum(w * gx * gy, ys, xs) / den
        a22 = _tile_sum(w * gy * gy, ys, xs) / den + damping
        b1 = _tile_sum(w * gx * r, ys, xs) / den
        b2 = _tile_sum(w * gy * r, ys, xs) / den
        # tiles without gradient energy carry no motion information
        ok &= (a11 + a22 - 2.0 * damping) > MIN_GRADIENT_ENERGY
        det = a11 * a22 - a12 * a12
        det = np.where(ok & (det > 0), det, 1.0)
        ux = np.where(ok, -(a22 * b1 - a12 * b2) / det, 0.0)
        uy = np.where(ok, -(a11 * b2 - a12 * b1) / det, 0.0)
        ux, uy = np.clip(ux, -1.0, 1.0), np.clip(uy, -1.0, 1.0)
        fdx = np.clip(fdx + ux, start_dx - 1.0, start_dx + 1.0)
        fdy = np.clip(fdy + uy, start_dy - 1.0, start_dy + 1.0)
        if np.max(np.abs(ux), initial=0.0) < 1e-6 and np.max(np.abs(uy), initial=0.0) < 1e-6:
            break
    return fdx, fdy


def estimate_flow(ref: np.ndarray, tgt: np.ndarray, levels: int = 3, radius: int = 4, *,
                  ref_mask: np.ndarray | None = None, tgt_mask: np.ndarray | None = None,
                  ref_clip: np.ndarray | None = None, tgt_clip: np.ndarray | None = None,
                  block: int = 16, lk_iters: int = 5, damping: float = 1e-6,
                  min_valid: float = 0.25, origin: tuple[int, int] = (0, 0),
                  backend: str | None = None) -> FlowField:
    """Dense flow from ``ref`` to ``tgt`` (both ``(4, h, w)`` packed, exposure-normalized).

    Matching runs on the mean of the four packed channels. Masks are per
    channel ``(4, h, w)`` or per pixel ``(h, w)`` weights; a pixel is used
    only as far as all of its channels are valid.

    ``ref_clip``/``tgt_clip`` flag clipped samples (any channel). Block
    matching treats them as lower bounds rather than discarding them, so
    every candidate displacement is scored on the same pixels; the
    Gauss-Newton refinement still ignores them through the masks.

    ``origin`` is the position of this array inside a larger frame. Tile
    boundaries are anchored to that frame, so a crop whose origin is a
    multiple of ``2^(levels-1)`` matches the same blocks as the full frame.
    """
    ref = np.asarray(ref, dtype=np.float64)
    tgt = np.asarray(tgt, dtype=np.float64)
    if ref.shape != tgt.shape:
        raise DimensionError(f"shape mismatch {ref.shape} vs {tgt.shape}")
    if ref.ndim == 3:
        lum_r, lum_t = ref.mean(axis=0), tgt.mean(axis=0)
    else:
        lum_r, lum_t = ref, tgt
    h, w = lum_r.shape
    scale = 2 ** (levels - 1)
    if h % scale or w % scale:
        raise DimensionError(f"{h}x{w} not divisible by 2^(levels-1) = {scale}")

    def _mask(m):
        if m is None:
            return np.ones((h, w))
        m = np.asarray(m, dtype=np.float64)
        return m.min(axis=0) if m.ndim == 3 else m

    def _clip(c):
        if c is None:
            return np.zeros((h, w), dtype=bool)
        c = np.asarray(c, dtype=bool)
        return c.any(axis=0) if c.ndim == 3 else c

    pyr = [(lum_r, lum_t, _mask(ref_mask), _mask(tgt_mask), _clip(ref_clip), _clip(tgt_clip))]
    for _ in range(levels - 1):
        r, t, mr, mt, cr, ct = pyr[-1]
        # a pooled sample containing a clipped one is itself a lower bound
        pyr.append((_pool2(r), _pool2(t), _pool2_min(mr), _pool2_min(mt),
                    _pool2(cr.astype(np.float64)) > 0, _pool2(ct.astype(np.float64)) > 0))

    max_disp = radius * (2 ** levels - 1) + levels
    prev = None
    for lvl in range(levels - 1, -1, -1):
        r, t, mr, mt, cr, ct = pyr[lvl]
        # clipped samples take part in matching as censored values
        br, bt = np.where(cr, 1.0, mr), np.where(ct, 1.0, mt)
        hl, wl = r.shape
        ys, sy, cy = _tiles(hl, block, origin[0] >> lvl)
        xs, sx, cx = _tiles(wl, block, origin[1] >> lvl)
        if prev is None:
            fdx = np.zeros((len(ys), len(xs)))
            fdy = np.zeros((len(ys), len(xs)))
        else:
            pdx, pdy, pcy, pcx = prev
            qy, qx = (cy + 0.5) / 2.0 - 0.5, (cx + 0.5) / 2.0 - 0.5
            fdx = 2.0 * densify(pdx, pcy, pcx, qy, qx)
            fdy = 2.0 * densify(pdy, pcy, pcx, qy, qx)
        ty0, tx0 = np.meshgrid(ys, xs, indexing="ij")
        tys, txs = np.meshgrid(sy, sx, indexing="ij")
        idy, idx = np.rint(fdy).astype(np.int64), np.rint(fdx).astype(np.int64)
        geom = (ty0.ravel(), tx0.ravel(), tys.ravel(), txs.ravel())
        bm = dict(min_valid=min_valid, cref=cr, ctgt=ct, backend=backend)
        bdy, bdx, status, cost = kernels.block_match(
            r, t, br, bt, *geom, idy.ravel(), idx.ravel(), radius, **bm)
        bdy, bdx, status = _propagate(r, t, br, bt, geom, bdy, bdx, status, cost, fdx.shape, bm)
        status = status.reshape(fdx.shape)
        found = (status == 1) | (status == 3)
        fdx = np.where(found, bdx.reshape(fdx.shape), fdx)
        fdy = np.where(found, bdy.reshape(fdy.shape), fdy)
        if lk_iters > 0:
            grads = np.gradient(t)[::-1]  # (d/dx, d/dy)
            fdx, fdy = _lk_refine(r, t, grads, mr, mt, ys, xs, sy, sx, fdx, fdy, lk_iters,
                                  damping, min_valid, backend)
        # tiles without usable data or with an ambiguous match (e.g. inside
        # clipped highlights) follow their neighbors. Flat tiles keep the
        # coarse flow unless they are mostly clipped or there is no coarser
        # level.
        unclipped = _tile_sum((~cr & ~ct).astype(np.float64), ys, xs) >= min_valid * np.outer(sy, sx)
        keep = (status == 2) & unclipped & (prev is not None)
        known = (status == 1) | keep
        fdx = median3(fill_holes(fdx, known))
        fdy = median3(fill_holes(fdy, known))
        lim = max_disp / 2 ** lvl
        fdx, fdy = np.clip(fdx, -lim, lim), np.clip(fdy, -lim, lim)
        prev = (fdx, fdy, cy, cx)

    fdx, fdy, cy, cx = prev
    qy, qx = np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64)
    return FlowField(densify(fdx, cy, cx, qy, qx), densify(fdy, cy, cx, qy, qx),
                     tile_dx=fdx, tile_dy=fdy, block=block)


def warp_bilinear(tgt: np.ndarray, flow: FlowField, backend: str | None = None):
    """Warp packed planes by ``flow``; returns ``(warped, padding_mask)``.

    Samples outside the target are zero and the mask holds the share of the
    bilinear footprint that fell inside the frame.
    """
    tgt = np.asarray(tgt, dtype=np.float64)
    planes = tgt if tgt.ndim == 3 else tgt[None]
    if not (np.all(np.isfinite(flow.dx)) and np.all(np.isfinite(flow.dy))):
        raise ValidationError("flow contains non-finite values")
    out, pad, _ = kernels.warp_bilinear(planes, flow.dx, flow.dy, backend=backend)
    return (out if tgt.ndim == 3 else out[0]), pad


# ---------------------------------------------------------------------------
# burst

@dataclass(frozen=True, eq=False)
class AlignedBurst:
    """Frames warped onto the reference and normalized to the longest exposure."""

    frames: list
    masks: list            # per-channel merge validity (saturation x padding)
    flows: list
    gains: list            # normalization multiplier applied to each raw frame
    longest: int
    near_clip: list | None = None   # valid samples that may be clipped (see reject_outliers)


GAIN_SMOOTH = 5


def _box(a: np.ndarray, size: int) -> np.ndarray:
    return ndimage.uniform_filter(a, size=(1, size, size), mode="nearest")


def _box_min(a: np.ndarray, size: int) -> np.ndarray:
    return ndimage.minimum_filter(a.astype(np.uint8), size=(1, size, size), mode="nearest") > 0


def align_burst(packed: list, exposure_gains: list, config: RestoreConfig | None = None,
                noise: NoiseParams | None = None, origin: tuple[int, int] = (0, 0)) -> AlignedBurst:
    """Align frames 1..n-1 onto frame 0 and normalize all of them to the longest exposure.

    With a noise model, samples within a few noise deviations of full scale
    count as clipped (see :func:`effective_sat_thresh`). ``origin`` places a
    crop inside its full frame (packed pixels) for the flow tile grid.
    """
    cfg = config or RestoreConfig()
    sat = effective_sat_thresh(cfg.sat_thresh, noise)
    sat_near = effective_sat_thresh(cfg.sat_thresh, noise, NEAR_CLIP_SIGMAS)
    packed = [np.asarray(p, dtype=np.float64) for p in packed]
    if len(packed) != len(exposure_gains) or not packed:
        raise ValidationError("need one exposure gain per frame")
    shape = packed[0].shape[1:]
    gmax = max(exposure_gains)
    longest = int(np.argmax(exposure_gains))
    meta = [gmax / g for g in exposure_gains]

    # Flow masks drop only clipped highlights. A dark floor would leave the
    # reference and a shorter exposure valid on disjoint luminance bands, and
    # the zero-displacement candidate would lose its overlap.
    ref_n, ref_m = normalize_exposure(packed[0], meta[0], sat, None, cfg.ramp)
    ref_c = packed[0] >= sat
    flows = [FlowField.zeros(shape)]
    for k in range(1, len(packed)):
        if cfg.flow == "zero":
            flows.append(FlowField.zeros(shape))
            continue
        tgt_n, tgt_m = normalize_exposure(packed[k], meta[k], sat, None, cfg.ramp)
        flows.append(estimate_flow(ref_n, tgt_n, cfg.levels, cfg.radius, ref_mask=ref_m,
                                   tgt_mask=tgt_m, ref_clip=ref_c,
                                   tgt_clip=packed[k] >= sat, block=cfg.block, lk_iters=cfg.lk_iters,
                                   damping=cfg.lk_damping, min_valid=cfg.min_valid,
                                   origin=origin, backend=cfg.backend))

    warped, masks, near_clip = [], [], []
    for k, (p, f) in enumerate(zip(packed, flows)):
        valid = validity_mask(p, sat, None, cfg.ramp)
        clear = (p < sat_near).astype(np.float64)
        if k == 0:
            warped.append(p)
            masks.append(valid)
            near_clip.append(clear < 1.0)
            continue
        out, pad, amin = kernels.warp_bilinear(p, f.dx, f.dy, np.concatenate([valid, clear]),
                                               backend=cfg.backend)
        warped.append(out)
        masks.append(amin[:len(p)] * pad)
        near_clip.append(amin[len(p):] < 1.0)

    gains = list(meta)
    if cfg.gain_source == "estimate":
        # ratios of box-averaged samples: per-sample noise near the floor
        # would otherwise bias the median, differently for every crop
        smooth = [_box(wk, GAIN_SMOOTH) for wk in warped]
        full = [_box_min(m > 0, GAIN_SMOOTH) for m in masks]  # window fully valid
        for k in range(len(packed)):
            if k == longest:
                continue
            try:
                est = estimate_exposure_gain(smooth[k], smooth[longest], sat, cfg.floor_thresh,
                                             valid=full[longest] & full[k])
                gains[k] = est.gain
            except InsufficientOverlapError as exc:
                log.info("frame %d: %s; using metadata gain", k, exc)
    aligned = [wk * gk for wk, gk in zip(warped, gains)]
    return AlignedBurst(aligned, masks, flows, gains, longest, near_clip)


# ---------------------------------------------------------------------------
# flow dump

def write_flow(flow: FlowField, path) -> None:
    """``BFLOW\\0\\1\\0`` magic, u32 width, u32 height, then interleaved f32 (dx, dy), little-endian."""
    h, w = flow.shape
    data = np.stack([flow.dx, flow.dy], axis=-1).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(FLOW_MAGIC)
        fh.write(struct.pack("<II", w, h))
        fh.write(data.tobytes(order="C"))


def read_flow(path) -> FlowField:
    raw = Path(path).read_bytes()
    if raw[:8] != FLOW_MAGIC:
        raise ValidationError(f"{path}: not a flow dump (bad magic)")
    w, h = struct.unpack("<II", raw[8:16])
    data = np.frombuffer(raw[16:], dtype="<f4")
    if data.size != 2 * w * h:
        raise ValidationError(f"{path}: expected {2 * w * h} floats, found {data.size}")
    data = data.reshape(h, w, 2).astype(np.float64)
    return FlowField(data[..., 0].copy(), data[..., 1].copy())
