"""Ranking metrics (8-bit PSNR, grayscale SSIM), training-loss diagnostics and set reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DimensionError, IncompleteSetError, SceneIOError, ValidationError
from .imgcore import LUMA_601, quantize_to_8bit, to_float, to_grayscale

PSNR_CAP_DB = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_L = 255.0

# BT.601 chroma scales: U = (B - Y) * 0.436 / (1 - 0.114), V = (R - Y) * 0.615 / (1 - 0.299)
_U_SCALE = 0.436 / (1.0 - LUMA_601[2])
_V_SCALE = 0.615 / (1.0 - LUMA_601[0])


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")


def psnr_8bit(pred: np.ndarray, gt: np.ndarray) -> float:
    """PSNR of the 8-bit quantized images; identical inputs give the 100 dB cap."""
    p = quantize_to_8bit(pred).astype(np.float64)
    g = quantize_to_8bit(gt).astype(np.float64)
    _same_shape(p, g)
    mse = float(np.mean((p - g) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(255.0 ** 2 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(img, taps, axis=0, mode="constant")
    out = ndimage.correlate1d(out, taps, axis=1, mode="constant")
    r = len(taps) // 2
    return out[r:img.shape[0] - r, r:img.shape[1] - r]


def _gray8(img: np.ndarray) -> np.ndarray:
    q = quantize_to_8bit(img)
    if q.ndim == 2:
        return q.astype(np.float64)
    return to_grayscale(q)


def ssim_map(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """SSIM at every valid 11x11 window position of the 8-bit grayscale pair."""
    x, y = _gray8(pred), _gray8(gt)
    _same_shape(x, y)
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise DimensionError(f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    taps = gaussian_window()
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    mx, my = _filter_valid(x, taps), _filter_valid(y, taps)
    sxx = _filter_valid(x * x, taps) - mx * mx
    syy = _filter_valid(y * y, taps) - my * my
    sxy = _filter_valid(x * y, taps) - mx * my
    num = (2.0 * mx * my + c1) * (2.0 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return num / den


def ssim_gray(pred: np.ndarray, gt: np.ndarray) -> float:
    return float(np.mean(ssim_map(pred, gt)))


# ---------------------------------------------------------------------------
# loss diagnostics (inputs are taken as floats; integer images scale to [0, 1])

def charbonnier(pred: np.ndarray, gt: np.ndarray, eps: float = 1e-3) -> float:
    if not eps > 0:
        raise ValidationError("eps must be > 0")
    p, g = to_float(pred), to_float(gt)
    _same_shape(p, g)
    return float(np.mean(np.sqrt((p - g) ** 2 + eps * eps)))


def fft_l1(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute difference of the unnormalized 2-D spectra over bins, channels, re/im."""
    p, g = to_float(pred), to_float(gt)
    _same_shape(p, g)
    d = np.fft.fft2(p - g, axes=(0, 1))
    return float((np.abs(d.real).mean() + np.abs(d.imag).mean()) / 2.0)


def downsample8(img: np.ndarray) -> np.ndarray:
    """8x8 mean pooling; partial blocks at the far edges average the pixels they have."""
    x = to_float(img)
    h, w = x.shape[:2]
    hh, ww = -(-h // 8), -(-w // 8)
    ph, pw = hh * 8 - h, ww * 8 - w
    pad = ((0, ph), (0, pw)) + ((0, 0),) * (x.ndim - 2)
    s = np.pad(x, pad).reshape((hh, 8, ww, 8) + x.shape[2:]).sum(axis=(1, 3))
    n = np.pad(np.ones((h, w)), ((0, ph), (0, pw))).reshape(hh, 8, ww, 8).sum(axis=(1, 3))
    return s / n.reshape(n.shape + (1,) * (x.ndim - 2))


def _gradients(x: np.ndarray) -> np.ndarray:
    """Forward differences in x and y, last column/row replicated (zero difference there)."""
    gx = np.diff(x, axis=1, append=x[:, -1:])
    gy = np.diff(x, axis=0, append=x[-1:])
    return np.stack([gx, gy])


def rgb_to_yuv(img: np.ndarray) -> np.ndarray:
    x = to_float(img)
    if x.ndim != 3 or x.shape[2] != 3:
        raise DimensionError(f"expected (H, W, 3) image, got {x.shape}")
    y = to_grayscale(x)
    u = _U_SCALE * (x[..., 2] - y)
    v = _V_SCALE * (x[..., 0] - y)
    return np.stack([y, u, v], axis=-1)


@dataclass(frozen=True)
class CompositeLoss:
    pixel: float
    gradient: float
    yuv_ds8: float

    @property
    def total(self) -> float:
        return self.pixel + self.gradient + self.yuv_ds8


def cidaut_terms(pred, gt, pred_ds8=None, gt_ds8=None) -> CompositeLoss:
    """Pixel L1 + 50 x gradient L1 + 0.8 x YUV L1 on 8x-downsampled images (all mean L1)."""
    p, g = to_float(pred), to_float(gt)
    _same_shape(p, g)
    want = (-(-p.shape[0] // 8), -(-p.shape[1] // 8))
    pd = downsample8(p) if pred_ds8 is None else to_float(pred_ds8)
    gd = downsample8(g) if gt_ds8 is None else to_float(gt_ds8)
    for d in (pd, gd):
        if d.shape[:2] != want:
            raise DimensionError(f"downsampled image is {d.shape[:2]}, expected {want}")
    pixel = float(np.mean(np.abs(p - g)))
    grad = 50.0 * float(np.mean(np.abs(_gradients(p) - _gradients(g))))
    yuv = 0.8 * float(np.mean(np.abs(rgb_to_yuv(pd) - rgb_to_yuv(gd))))
    return CompositeLoss(pixel, grad, yuv)


def cidaut_composite(pred, gt, pred_ds8=None, gt_ds8=None) -> float:
    return cidaut_terms(pred, gt, pred_ds8, gt_ds8).total


# ---------------------------------------------------------------------------
# set evaluation

@dataclass
class MetricsReport:
    per_scene: dict[str, dict[str, float]]
    bit_depth: int = 8
    losses: dict[str, dict[str, float]] = field(default_factory=dict)

    @property
    def n_scenes(self) -> int:
        return len(self.per_scene)

    def _mean(self, key: str) -> float:
        vals = [v[key] for v in self.per_scene.values()]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def mean_psnr_db(self) -> float:
        return self._mean("psnr_db")

    @property
    def mean_ssim(self) -> float:
        return self._mean("ssim")

    def to_dict(self) -> dict:
        out = {
            "per_scene": self.per_scene,
            "mean_psnr_db": self.mean_psnr_db,
            "mean_ssim": self.mean_ssim,
            "n_scenes": self.n_scenes,
            "bit_depth": self.bit_depth,
        }
        if self.losses:
            out["losses"] = self.losses
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    def text_table(self, params: float | None = None, flops: float | None = None,
                   seconds: float | None = None) -> str:
        """One row in the ranking-table column order: PSNR, SSIM, Params (M), FLOPs (T), Time (s)."""
        def fmt(v, spec):
            return "-" if v is None else format(v, spec)
        header = f"{'PSNR':>8} {'SSIM':>7} {'Params':>8} {'FLOPs':>8} {'Time':>7}"
        row = (f"{self.mean_psnr_db:8.2f} {self.mean_ssim:7.3f} "
               f"{fmt(None if params is None else params / 1e6, '8.3f'):>8} "
               f"{fmt(None if flops is None else flops / 1e12, '8.3f'):>8} "
               f"{fmt(seconds, '7.2f'):>7}")
        return header + "\n" + row


def _scene_images(root) -> dict[str, Path]:
    """``<id>.tif`` files and ``<id>/gt.tif`` scene directories under ``root``."""
    root = Path(root)
    if not root.is_dir():
        raise SceneIOError(f"not a directory: {root}")
    found: dict[str, Path] = {}
    for p in sorted(root.iterdir()):
        if p.is_file() and p.suffix.lower() in (".tif", ".tiff"):
            found[p.stem] = p
        elif p.is_dir() and (p / "gt.tif").is_file():
            found[p.name] = p / "gt.tif"
    return found


def evaluate_set(pred_dir, gt_dir, losses: bool = False) -> MetricsReport:
    """Per-scene PSNR/SSIM of predictions against ground truth, ordered by scene id."""
    from .tiffio import read_tiff16

    preds, gts = _scene_images(pred_dir), _scene_images(gt_dir)
    missing = sorted(set(gts) - set(preds))
    extra = sorted(set(preds) - set(gts))
    if missing or extra:
        raise IncompleteSetError(missing, extra)
    per_scene, diag = {}, {}
    for sid in sorted(gts):
        p, g = read_tiff16(preds[sid]), read_tiff16(gts[sid])
        _same_shape(p, g)
        per_scene[sid] = {"psnr_db": psnr_8bit(p, g), "ssim": ssim_gray(p, g)}
        if losses:
            terms = cidaut_terms(p, g)
            diag[sid] = {"charbonnier": charbonnier(p, g), "fft_l1": fft_l1(p, g),
                         "composite": terms.total, "composite_pixel": terms.pixel,
                         "composite_gradient": terms.gradient, "composite_yuv_ds8": terms.yuv_ds8}
    return MetricsReport(per_scene, losses=diag)
