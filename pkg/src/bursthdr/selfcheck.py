"""Closed-loop identity and flow-recovery suites shared by ``burst selfcheck`` and the tests."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .alignflow import align_burst
from .rawisp import restore_scene
from .synthforge import DEFAULT_NOISE, SceneSpec, procedural_hdr, random_scene_spec, synth_scene

SIZE = (192, 384)
BORDER = 4
IDENTITY_MAX_LSB = 0.5
IDENTITY_MAX_SECONDS = 10.0
FLOW_SEEDS = 20
FLOW_EXACT_FRACTION = 0.95
FLOW_NOISY_FRACTION = 0.90
FLOW_NOISY_EPE = 0.5


@dataclass(frozen=True)
class IdentityResult:
    max_lsb: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_lsb <= IDENTITY_MAX_LSB and self.seconds < IDENTITY_MAX_SECONDS


def closed_loop_identity(seed: int = 0, size: tuple[int, int] = SIZE) -> IdentityResult:
    """Undegraded burst: no noise, no motion, no blur. Error in 8-bit LSB on the interior."""
    h, w = size
    scene = synth_scene(procedural_hdr(seed, w, h), SceneSpec(seed=seed, noise=None))
    t0 = time.perf_counter()
    out = restore_scene(scene)
    seconds = time.perf_counter() - t0
    diff = np.abs(out.astype(np.float64) - scene.gt.astype(np.float64)) * (255.0 / 65535.0)
    return IdentityResult(float(diff[BORDER:-BORDER, BORDER:-BORDER].max()), seconds)


def flow_errors(seed: int, noisy: bool, size: tuple[int, int] = SIZE) -> np.ndarray:
    """Endpoint errors (packed pixels) over interior tiles of frames 1..8 of one scene."""
    h, w = size
    spec = random_scene_spec(seed, shift_step=2, blur_len=1,
                             noise=DEFAULT_NOISE if noisy else None)
    scene = synth_scene(procedural_hdr(1000 + seed, w, h), spec)
    aligned = align_burst([f.pack() for f in scene.frames],
                          [f.exposure_gain for f in scene.frames], None, scene.frames[0].noise)
    errs = []
    for k in range(1, 9):
        f, t = aligned.flows[k], spec.transforms[k]
        e = np.hypot(f.tile_dx - t.tx / 2.0, f.tile_dy - t.ty / 2.0)
        errs.append(e[1:-1, 1:-1].ravel())
    return np.concatenate(errs)


@dataclass(frozen=True)
class FlowResult:
    fractions: tuple[float, ...]    # per scene, fraction of interior tiles within tolerance
    threshold: float

    @property
    def mean_fraction(self) -> float:
        return float(np.mean(self.fractions))

    @property
    def passed(self) -> bool:
        return self.mean_fraction >= self.threshold


def flow_recovery(noisy: bool, seeds: int = FLOW_SEEDS) -> FlowResult:
    fracs = []
    for s in range(seeds):
        e = flow_errors(s, noisy)
        fracs.append(float(np.mean(e <= FLOW_NOISY_EPE if noisy else e < 1e-6)))
    return FlowResult(tuple(fracs), FLOW_NOISY_FRACTION if noisy else FLOW_EXACT_FRACTION)


def run_selfcheck():
    """Yield ``(name, passed, detail)`` per suite."""
    ident = closed_loop_identity()
    yield ("closed-loop identity", ident.passed,
           f"max interior error {ident.max_lsb:.3f} LSB in {ident.seconds:.2f} s")
    for noisy in (False, True):
        r = flow_recovery(noisy)
        label = "flow recovery (noisy, EPE <= 0.5 px)" if noisy else "flow recovery (noise-free, exact)"
        yield (label, r.passed,
               f"{r.mean_fraction:.2%} of interior tiles (min scene {min(r.fractions):.2%}, "
               f"need {r.threshold:.0%})")
