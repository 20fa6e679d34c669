import numpy as np
import pytest
from scipy import ndimage

from bursthdr.alignflow import (
    FlowField,
    GainEstimate,
    align_burst,
    effective_sat_thresh,
    estimate_exposure_gain,
    estimate_flow,
    fill_holes,
    median3,
    normalize_exposure,
    read_flow,
    validity_mask,
    warp_bilinear,
    write_flow,
)
from bursthdr.errors import DimensionError, InsufficientOverlapError, ValidationError
from bursthdr.imgcore import NoiseParams, pack_cfa
from bursthdr.synthforge import (
    RigidTransform,
    SceneSpec,
    apply_rigid,
    mosaic,
    procedural_hdr,
    random_scene_spec,
    synth_scene,
)


def _packed_texture(seed=0, h=128, w=192):
    """Exposure-safe packed planes of a procedural scene."""
    hdr = procedural_hdr(seed, 2 * w, 2 * h)
    return pack_cfa(mosaic(np.clip(hdr * 0.5, 0.0, 0.95), "RGGB"), "RGGB")


# ---------------------------------------------------------------------------
# exposure gain

def test_gain_exact_ratio():
    ref = np.random.default_rng(0).uniform(0.1, 0.9, (4, 32, 32))
    assert estimate_exposure_gain(ref / 4.0, ref).gain == 4.0


def test_gain_ignores_clipped_reference():
    rng = np.random.default_rng(1)
    radiance = rng.uniform(0.1, 0.9, (4, 40, 40))
    clipped = rng.random(radiance.shape) < 0.3
    radiance[clipped] = rng.uniform(1.0, 3.0, clipped.sum())
    ref = np.minimum(radiance, 1.0)
    est = estimate_exposure_gain(radiance / 4.0, ref)
    assert est.gain == pytest.approx(4.0, abs=1e-3)
    assert est.inlier_fraction == pytest.approx(1.0 - clipped.mean(), abs=0.02)


def test_gain_identical_frames():
    ref = np.random.default_rng(2).uniform(0.1, 0.9, (4, 16, 16))
    assert estimate_exposure_gain(ref, ref).gain == 1.0


def test_gain_insufficient_overlap():
    with pytest.raises(InsufficientOverlapError):
        estimate_exposure_gain(np.ones((4, 8, 8)), np.ones((4, 8, 8)))
    with pytest.raises(DimensionError):
        estimate_exposure_gain(np.ones((4, 8, 8)), np.ones((4, 8, 6)))
    with pytest.raises(ValidationError):
        GainEstimate(0.0)


def test_normalize_identity_and_threshold():
    frame = np.full((4, 4, 4), 0.5)
    out, mask = normalize_exposure(frame, 1.0)
    assert np.array_equal(out, frame) and np.all(mask == 1.0)
    frame[0, 0, 0] = 0.999
    _, mask = normalize_exposure(frame, GainEstimate(1.0), sat_thresh=0.99)
    assert mask[0, 0, 0] == 0.0 and mask[1, 0, 0] == 1.0


def test_normalize_round_trip():
    ref = np.random.default_rng(3).uniform(0.1, 0.9, (4, 8, 8))
    out, mask = normalize_exposure(ref / 4.0, 4.0)
    assert np.max(np.abs(out - ref)[mask > 0]) < 1e-6


def test_validity_mask_ramp():
    m = validity_mask(np.array([0.0, 0.02, 0.03, 0.5, 0.97, 0.98, 1.0]), 0.98, 0.02, 0.02)
    assert m.tolist() == pytest.approx([0.0, 0.0, 0.5, 1.0, 0.5, 0.0, 0.0])


def test_effective_sat_thresh():
    assert effective_sat_thresh(0.98, None) == 0.98
    p = NoiseParams(1000.0, 0.002)
    assert effective_sat_thresh(0.98, p) == pytest.approx(1.0 - 3.0 * np.sqrt(1e-3 + 4e-6))
    assert effective_sat_thresh(0.5, p) == 0.5


# ---------------------------------------------------------------------------
# flow

def test_flow_identity():
    ref = _packed_texture()
    f = estimate_flow(ref, ref)
    assert np.all(f.dx == 0) and np.all(f.dy == 0)


def test_flow_integer_shift():
    ref = _packed_texture(1)
    tgt = np.roll(ref, (2, 3), axis=(1, 2))  # content moves by dx=3, dy=2
    f = estimate_flow(ref, tgt)
    assert np.array_equal(f.tile_dx[1:-1, 1:-1], np.full_like(f.tile_dx[1:-1, 1:-1], 3.0))
    assert np.array_equal(f.tile_dy[1:-1, 1:-1], np.full_like(f.tile_dy[1:-1, 1:-1], 2.0))


def test_flow_subpixel_half():
    rng = np.random.default_rng(2)
    base = ndimage.gaussian_filter(rng.random((4, 128, 192)), (0, 1.5, 1.5))
    base = 0.2 + 0.6 * (base - base.min()) / (base.max() - base.min())
    tgt = np.stack([apply_rigid(p, RigidTransform(tx=0.5)) for p in base])
    f = estimate_flow(base, tgt)
    inner = f.tile_dx[1:-1, 1:-1]
    assert np.all((inner >= 0.4) & (inner <= 0.6))
    assert np.all(np.abs(f.tile_dy[1:-1, 1:-1]) <= 0.1)


def test_flow_rejects_indivisible_shape():
    with pytest.raises(DimensionError):
        estimate_flow(np.zeros((4, 30, 32)), np.zeros((4, 30, 32)), levels=3)


def test_flow_origin_anchors_tile_grid():
    ref = _packed_texture(3, 96, 128)
    tgt = np.roll(ref, (1, -2), axis=(1, 2))
    full = estimate_flow(ref, tgt)
    crop = estimate_flow(ref[:, 32:, 64:], tgt[:, 32:, 64:], origin=(32, 64))
    assert crop.tile_dx.shape == (4, 4)
    assert np.array_equal(crop.tile_dx[1:-1, 1:-1], full.tile_dx[3:-1, 5:-1])


def test_fill_holes_and_median():
    v = np.arange(20, dtype=float).reshape(4, 5)
    known = np.ones_like(v, dtype=bool)
    known[1:3, 1:3] = False
    filled = fill_holes(np.where(known, v, -99.0), known)
    assert np.all(filled[known] == v[known]) and np.all(filled > -99)
    plane = 0.3 * np.arange(6)[:, None] - 0.7 * np.arange(7)[None, :] + 1.0
    assert np.allclose(median3(plane), plane)
    spiky = plane.copy()
    spiky[2, 3] += 9.0
    out = median3(spiky)
    # the outlier is gone; values near it shift by at most one grid step
    assert np.max(np.abs(out - plane)) <= 0.3 + 0.7 + 1e-12


# ---------------------------------------------------------------------------
# warp

def test_warp_zero_and_out_of_frame():
    tgt = np.random.default_rng(4).random((4, 6, 8))
    out, mask = warp_bilinear(tgt, FlowField.zeros((6, 8)))
    assert np.array_equal(out, tgt) and np.all(mask == 1.0)
    out, mask = warp_bilinear(tgt, FlowField.uniform((6, 8), 8.0, 0.0))
    assert np.all(out == 0.0) and np.all(mask == 0.0)


def test_warp_half_pixel_and_partial_mask():
    tgt = np.arange(12, dtype=float).reshape(1, 3, 4)
    out, mask = warp_bilinear(tgt, FlowField.uniform((3, 4), 0.5, 0.0))
    assert np.allclose(out[0, :, :3], tgt[0, :, :3] + 0.5)
    assert np.allclose(mask[:, 3], 0.5) and np.allclose(mask[:, :3], 1.0)


def test_warp_rejects_nonfinite_flow():
    with pytest.raises(ValidationError):
        warp_bilinear(np.zeros((1, 2, 2)), FlowField.uniform((2, 2), np.nan, 0.0))


# ---------------------------------------------------------------------------
# burst

def test_align_identity_scene():
    scene = synth_scene(procedural_hdr(0, 128, 64), SceneSpec(noise=None))
    al = align_burst([f.pack() for f in scene.frames], [f.exposure_gain for f in scene.frames])
    assert all(np.all(f.dx == 0) and np.all(f.dy == 0) for f in al.flows)
    assert al.gains[al.longest] == 1.0
    assert al.gains[1] == pytest.approx(16.0, rel=1e-3)


def test_align_known_integer_shifts():
    spec = random_scene_spec(5, shift_step=2, max_shift=4, blur_len=1, noise=None)
    scene = synth_scene(procedural_hdr(1005, 384, 192), spec)
    al = align_burst([f.pack() for f in scene.frames], [f.exposure_gain for f in scene.frames])
    for k in range(1, 9):
        t = spec.transforms[k]
        f = al.flows[k]
        assert np.array_equal(f.tile_dx[1:-1, 1:-1], np.full((4, 10), t.tx / 2))
        assert np.array_equal(f.tile_dy[1:-1, 1:-1], np.full((4, 10), t.ty / 2))


def test_align_needs_gain_per_frame():
    with pytest.raises(ValidationError):
        align_burst([np.zeros((4, 8, 8))], [1.0, 2.0])


def test_flow_dump_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    f = FlowField(rng.normal(size=(5, 7)).astype(np.float32).astype(float),
                  rng.normal(size=(5, 7)).astype(np.float32).astype(float))
    path = tmp_path / "f.bflow"
    write_flow(f, path)
    raw = path.read_bytes()
    assert raw[:8] == b"BFLOW\x00\x01\x00" and len(raw) == 16 + 5 * 7 * 8
    assert raw[8:16] == (7).to_bytes(4, "little") + (5).to_bytes(4, "little")
    g = read_flow(path)
    assert np.array_equal(g.dx, f.dx) and np.array_equal(g.dy, f.dy)
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValidationError):
        read_flow(path)
