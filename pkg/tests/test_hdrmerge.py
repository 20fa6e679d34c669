import numpy as np
import pytest

from bursthdr.errors import MalformedSceneError
from bursthdr.hdrmerge import group_exposures, merge, merge_weights, reject_outliers, robust_signal
from bursthdr.imgcore import ExposureGroup, NoiseParams
from bursthdr.synthforge import SceneSpec, procedural_hdr, synth_scene


def test_equal_gains_give_equal_weights():
    frames = np.full((9, 4, 5), 0.3)
    w = merge_weights(frames, np.ones_like(frames), [1.0] * 9, NoiseParams())
    assert np.allclose(w.weights, w.weights[0])


def test_weight_ratio_matches_noise_model():
    # gains 1 and 4, both normalized to the gain-4 exposure, no read noise
    p = NoiseParams(shot_fullwell=500.0, read_sigma=0.0)
    x = 0.4
    frames = np.full((2, 3, 3), x)
    w = merge_weights(frames, np.ones_like(frames), [4.0, 1.0], p)
    # raw means x/4 and x; normalized variances (x/4)/W * 16 and x/W
    var_g1 = (x / 4.0) / 500.0 * 16.0
    var_g4 = x / 500.0
    assert np.allclose(w.weights[1] / w.weights[0], var_g1 / var_g4)
    assert np.allclose(w.weights[1] / w.weights[0], 4.0)


def test_saturated_long_frames_leave_weight_on_short_trio():
    frames = np.full((9, 2, 2), 5.0)
    masks = np.zeros_like(frames)
    masks[:3] = 1.0
    w = merge_weights(frames, masks, [1.0] * 3 + [4.0] * 3 + [16.0] * 3, NoiseParams())
    assert np.all(w.weights[3:] == 0) and np.all(w.weights[:3] > 0)


def test_unknown_noise_gives_uniform_flagged_weights():
    frames = np.random.default_rng(0).random((3, 4, 4))
    w = merge_weights(frames, np.ones_like(frames), [1.0, 2.0, 4.0], None)
    assert w.uniform and np.all(w.weights == 1.0)


def test_merge_identical_frames_is_exact():
    f = np.random.default_rng(1).random((4, 6, 6))
    stack = np.stack([f] * 9)
    w = merge_weights(stack, np.ones_like(stack), [1.0] * 9, NoiseParams())
    assert np.array_equal(merge(stack, w, f).data, f)


def test_merge_variance_drops_ninefold():
    rng = np.random.default_rng(2)
    clean = rng.random(100_000)
    sigma = 0.05
    frames = clean + rng.normal(0.0, sigma, (9, clean.size))
    out = merge(frames, np.ones_like(frames), clean).data
    assert np.var(out - clean) == pytest.approx(sigma**2 / 9, rel=0.1)


def test_merge_zero_weight_falls_back_to_reference():
    frames = np.random.default_rng(3).random((9, 3, 3))
    weights = np.ones_like(frames)
    weights[:, 1, 1] = 0.0
    ref = np.full((3, 3), -1.0)
    m = merge(frames, weights, ref)
    assert m.data[1, 1] == -1.0 and m.confidence[1, 1] == 0.0
    assert np.all(m.confidence[0] == 1.0)


def test_merge_is_convex():
    rng = np.random.default_rng(4)
    frames = rng.random((9, 20, 20))
    weights = rng.random((9, 20, 20)) * (rng.random((9, 20, 20)) > 0.3)
    out = merge(frames, weights, frames[0]).data
    used = weights > 0
    lo = np.where(used, frames, np.inf).min(axis=0)
    hi = np.where(used, frames, -np.inf).max(axis=0)
    ok = used.any(axis=0)
    assert np.all((out[ok] >= lo[ok] - 1e-12) & (out[ok] <= hi[ok] + 1e-12))


def test_robust_signal_matches_masked_median():
    rng = np.random.default_rng(5)
    frames = rng.random((9, 30, 30))
    masks = rng.random((9, 30, 30)) > 0.4
    expected = np.where(masks.any(axis=0),
                        np.nanmedian(np.where(masks, frames, np.nan), axis=0),
                        np.median(frames, axis=0))
    assert np.allclose(robust_signal(frames, masks), expected)


def test_reject_outliers():
    p = NoiseParams(1000.0, 0.002)
    frames = np.full((9, 4, 4), 0.5)
    masks = np.ones_like(frames)
    gains = [1.0] * 9
    frames[3, 0, 0] = 0.9          # far beyond the noise of either frame
    keep = reject_outliers(frames, masks, gains, p)
    assert keep[3, 0, 0] == 0.0 and np.all(keep[:, 1:, 1:] == 1.0)
    assert np.array_equal(reject_outliers(frames, masks, gains, None), masks)
    # clipped reference: only samples below its value count as deviations
    frames[:, 2, 2] = [4.0, 9.0, 3.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0]
    masks[0, 2, 2] = 0.0
    keep = reject_outliers(frames, masks, gains, p)
    assert keep[2, 2, 2] == 0.0 and keep[1, 2, 2] == 1.0 and keep[0, 2, 2] == 0.0


def test_group_exposures():
    scene = synth_scene(procedural_hdr(0, 16, 16), SceneSpec(noise=None))
    g = group_exposures(scene)
    assert g == {ExposureGroup.LOW: [1, 2, 3], ExposureGroup.MID: [0, 4, 5],
                 ExposureGroup.HIGH: [6, 7, 8]}
    order = [8, 3, 0, 6, 1, 4, 2, 7, 5]
    shuffled = [scene.frames[i] for i in order]
    regrouped = {k: sorted(order[i] for i in v) for k, v in group_exposures(shuffled).items()}
    assert regrouped == g
    with pytest.raises(MalformedSceneError):
        group_exposures([f.replace(exposure_group=ExposureGroup.MID) for f in scene.frames])


def test_reject_near_clip_reference():
    # a clipped reference sample that noise pulled under the threshold, with
    # the short exposures reading well above it
    p = NoiseParams(1000.0, 0.002)
    gains = [4.0] + [16.0] * 3 + [4.0] * 2 + [1.0] * 3
    frames = np.full((9, 1, 2), 8.0)
    masks = np.zeros_like(frames)
    masks[[1, 2, 3]] = 1.0
    frames[0] = 3.6
    masks[0] = 1.0
    near = np.zeros(frames.shape, dtype=bool)
    near[0] = True
    keep = reject_outliers(frames, masks, gains, p, near_clip=near)
    assert np.all(keep[0] == 0.0) and np.all(keep[1:4] == 1.0)
    # a genuine near-clip value that agrees with the short exposures stays
    frames[0] = 8.0
    keep = reject_outliers(frames, masks, gains, p, near_clip=near)
    assert np.all(keep[0] == 1.0)
