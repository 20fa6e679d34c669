"""Scene directories: nine 16-bit mosaic TIFFs, an RGB ground truth and a JSON manifest."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import MalformedSceneError, SceneIOError, ValidationError
from .imgcore import CfaPattern, ExposureGroup, NoiseParams, RawFrame, to_float
from .synthforge import BlurKernel, BurstScene, RigidTransform, SceneSpec
from .tiffio import read_tiff16, write_tiff16

FORMAT_VERSION = "1.0"
MANIFEST = "manifest.json"
GT_FILE = "gt.tif"


def frame_file(i: int) -> str:
    return f"frame_{i}.tif"


def scene_manifest(scene: BurstScene, opaque: bool = False) -> dict:
    """Manifest dict; ``opaque`` drops the degradation parameters (motion, blur, noise, seed)."""
    spec = scene.spec
    frames = []
    for i, f in enumerate(scene.frames):
        entry = {"file": frame_file(i), "exposure_group": f.exposure_group.value,
                 "gain": f.exposure_gain}
        if not opaque:
            t, b = spec.transforms[i], spec.blurs[i]
            entry["transform"] = {"theta": t.theta, "tx": t.tx, "ty": t.ty}
            entry["blur"] = {"length": b.length, "angle": b.angle}
        frames.append(entry)
    m = {
        "format_version": FORMAT_VERSION,
        "scene_id": scene.scene_id,
        "cfa": spec.cfa.value,
        "gains": list(spec.gains),
        "headroom": scene.headroom,
        "opaque": bool(opaque),
        "frames": frames,
        "gt": GT_FILE if scene.gt is not None else None,
    }
    if not opaque:
        m["seed"] = spec.seed
        m["noise"] = (None if spec.noise is None else
                      {"shot_fullwell": spec.noise.shot_fullwell,
                       "read_sigma": spec.noise.read_sigma})
    return m


def save_scene(scene: BurstScene, directory, opaque: bool = False) -> Path:
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SceneIOError(f"cannot create {d}: {exc}") from exc
    for i, f in enumerate(scene.frames):
        write_tiff16(np.clip(f.data, 0.0, 1.0), d / frame_file(i))
    if scene.gt is not None:
        write_tiff16(scene.gt, d / GT_FILE)
    text = json.dumps(scene_manifest(scene, opaque), indent=2) + "\n"
    try:
        (d / MANIFEST).write_text(text)
    except OSError as exc:
        raise SceneIOError(f"cannot write {d / MANIFEST}: {exc}") from exc
    return d


def _check_version(v) -> None:
    try:
        major = int(str(v).split(".")[0])
    except ValueError:
        raise ValidationError(f"bad manifest format_version {v!r}") from None
    supported = int(FORMAT_VERSION.split(".")[0])
    if major > supported:
        raise ValidationError(f"manifest format_version {v} is newer than supported {FORMAT_VERSION}")


def _spec_from_manifest(m: dict) -> SceneSpec:
    frames = m["frames"]
    if len(frames) != 9:
        raise MalformedSceneError(f"manifest lists {len(frames)} frames, expected 9")
    opaque = bool(m.get("opaque", False))
    transforms, blurs = [], []
    for e in frames:
        t = e.get("transform") or {}
        b = e.get("blur") or {}
        transforms.append(RigidTransform(float(t.get("theta", 0.0)), float(t.get("tx", 0.0)),
                                         float(t.get("ty", 0.0))))
        blurs.append(BlurKernel(int(b.get("length", 1)), float(b.get("angle", 0.0))))
    noise = m.get("noise")
    if noise is not None:
        noise = NoiseParams(float(noise["shot_fullwell"]), float(noise["read_sigma"]))
    return SceneSpec(
        seed=int(m.get("seed", 0)) if not opaque else 0,
        gains=tuple(float(g) for g in m["gains"]),
        transforms=tuple(transforms),
        blurs=tuple(blurs),
        noise=noise,
        cfa=CfaPattern.parse(m["cfa"]),
        groups=tuple(ExposureGroup(e["exposure_group"]) for e in frames),
    )


def load_scene(directory) -> BurstScene:
    """Read and validate a scene directory written by :func:`save_scene`."""
    d = Path(directory)
    mpath = d / MANIFEST
    if not mpath.is_file():
        raise SceneIOError(f"missing {mpath}")
    try:
        m = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{mpath}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise SceneIOError(f"cannot read {mpath}: {exc}") from exc
    try:
        _check_version(m["format_version"])
        spec = _spec_from_manifest(m)
        entries = m["frames"]
        gt_name = m.get("gt", GT_FILE)
        scene_id = str(m.get("scene_id", d.name))
        headroom = m.get("headroom")
    except KeyError as exc:
        raise ValidationError(f"{mpath}: missing field {exc}") from exc
    files = [d / e["file"] for e in entries] + ([d / gt_name] if gt_name else [])
    for p in files:
        if not p.is_file():
            raise SceneIOError(f"scene file missing: {p}")
    frames = []
    for i, e in enumerate(entries):
        data = read_tiff16(d / e["file"])
        if data.ndim != 2:
            raise ValidationError(f"{e['file']}: expected a single-channel mosaic")
        gain = float(e["gain"])
        if gain != spec.frame_gain(i):
            raise ValidationError(f"{e['file']}: gain {gain} disagrees with its group "
                                  f"{spec.groups[i].value} ({spec.frame_gain(i)})")
        frames.append(RawFrame(to_float(data), cfa=spec.cfa, exposure_gain=gain,
                               exposure_group=spec.groups[i], noise=spec.noise))
    gt = read_tiff16(d / gt_name) if gt_name else None
    return BurstScene(tuple(frames), gt, spec, scene_id=scene_id,
                      headroom=None if headroom is None else float(headroom))
