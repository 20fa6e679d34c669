"""``burst`` command line: synth, restore, eval, budget, selfcheck.

Exit codes: 0 success, 1 validation failure, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import budget as budget_mod
from .config import RestoreConfig
from .errors import BurstError, PipelineError, SceneIOError, ValidationError
from .imgcore import CfaPattern, NoiseParams

log = logging.getLogger("bursthdr")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
STREAM_SCENE_SEEDS = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ValidationError(f"size must look like HxW, got {text!r}") from None
    if h <= 0 or w <= 0 or h % 2 or w % 2:
        raise ValidationError(f"size must be positive and even, got {text!r}")
    return h, w


def _gains(text: str) -> tuple[float, float, float]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ValidationError(f"gains must be three comma-separated numbers, got {text!r}") from None
    if len(vals) != 3:
        raise ValidationError(f"gains must be three comma-separated numbers, got {text!r}")
    return vals


def _write_json(path, data) -> None:
    try:
        Path(path).write_text(json.dumps(data, indent=2) + "\n")
    except OSError as exc:
        raise SceneIOError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    from .sceneio import save_scene
    from .synthforge import make_rng, procedural_hdr, random_scene_spec, synth_scene

    h, w = _size(args.size)
    noise = None if args.noise_free else NoiseParams(args.fullwell, args.read_sigma)
    out = Path(args.out)
    if args.scenes < 1:
        raise ValidationError("--scenes must be >= 1")
    for i in range(args.scenes):
        content_seed, spec_seed = (int(v) for v in
                                   make_rng(args.seed, STREAM_SCENE_SEEDS, i).integers(0, 2**31, 2))
        spec = random_scene_spec(spec_seed, gains=_gains(args.gains), max_shift=args.max_shift,
                                 max_rot_deg=args.max_rot, blur_len=args.blur_len, noise=noise,
                                 cfa=CfaPattern.parse(args.cfa))
        scene_id = f"scene_{i:04d}"
        scene = synth_scene(procedural_hdr(content_seed, w, h), spec, scene_id)
        save_scene(scene, out / scene_id, opaque=args.opaque)
        log.info("wrote %s", out / scene_id)
    print(f"wrote {args.scenes} scene(s) to {out}")
    return EXIT_OK


def cmd_restore(args) -> int:
    from .alignflow import align_burst, write_flow
    from .rawisp import restore_details, tiled_restore
    from .sceneio import load_scene
    from .tiffio import write_tiff16

    cfg = RestoreConfig.from_json(args.config) if args.config else RestoreConfig()
    scene = load_scene(args.scene)
    t0 = time.perf_counter()
    flows = None
    if args.tile:
        image = tiled_restore(scene, args.tile, args.overlap, cfg)
    else:
        details = restore_details(scene, cfg)
        image, flows = details.image, details.aligned.flows
    elapsed = time.perf_counter() - t0
    try:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SceneIOError(f"cannot create {Path(args.out).parent}: {exc}") from exc
    write_tiff16(image, args.out)
    if args.dump_flow:
        if flows is None:  # tiles align independently; dump a full-frame alignment
            packed = [f.pack() for f in scene.frames]
            flows = align_burst(packed, [f.exposure_gain for f in scene.frames], cfg,
                                scene.frames[0].noise).flows
        d = Path(args.dump_flow)
        try:
            d.mkdir(parents=True, exist_ok=True)
            for k, f in enumerate(flows):
                write_flow(f, d / f"flow_{k}.bflow")
        except OSError as exc:
            raise SceneIOError(f"cannot write flows to {d}: {exc}") from exc
    print(f"restored {scene.scene_id} in {elapsed:.2f} s -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .qmetrics import evaluate_set

    report = evaluate_set(args.pred, args.gt, losses=args.losses)
    _write_json(args.report, report.to_dict())
    print(report.text_table(params=0))
    return EXIT_OK


def cmd_budget(args) -> int:
    size = _size(args.size)
    if args.config:
        graph = budget_mod.load_graph(args.config, size)
    else:
        graph = budget_mod.pipeline_graph(RestoreConfig(), size)
    report = budget_mod.count_flops(graph, size, mac_flops=args.mac_flops)
    check = budget_mod.check_budget(report)
    print(report.text_table())
    print(check.summary())
    if args.report:
        _write_json(args.report, {**report.to_dict(), "param_margin": check.param_margin,
                                  "flop_margin": check.flop_margin})
    return EXIT_OK if check.passed else EXIT_INVALID


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_selfcheck

    ok = True
    for name, passed, detail in run_selfcheck():
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        ok &= passed
    return EXIT_OK if ok else EXIT_INVALID


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="burst", description="Multi-exposure burst HDR toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="synthesize burst scenes")
    s.add_argument("--out", required=True)
    s.add_argument("--scenes", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--size", default="768x1536", help="HxW (default 768x1536)")
    s.add_argument("--gains", default="1,4,16")
    s.add_argument("--max-shift", type=float, default=8.0)
    s.add_argument("--max-rot", type=float, default=1.0, help="degrees")
    s.add_argument("--blur-len", type=int, default=7)
    s.add_argument("--fullwell", type=float, default=1000.0)
    s.add_argument("--read-sigma", type=float, default=0.002)
    s.add_argument("--noise-free", action="store_true")
    s.add_argument("--cfa", default="rggb", type=str.lower,
                   choices=[c.value.lower() for c in CfaPattern])
    s.add_argument("--opaque", action="store_true", help="omit degradation parameters from manifests")
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("restore", help="restore one scene directory to a 16-bit RGB TIFF")
    r.add_argument("--scene", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--tile", type=int, default=None)
    r.add_argument("--overlap", type=int, default=32)
    r.add_argument("--dump-flow", default=None)
    r.add_argument("--config", default=None)
    r.set_defaults(func=cmd_restore)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--losses", action="store_true")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("budget", help="count parameters and FLOPs against the limits")
    b.add_argument("--config", default=None)
    b.add_argument("--size", default="768x1536")
    b.add_argument("--mac-flops", type=int, default=2, choices=(1, 2))
    b.add_argument("--report", default=None)
    b.set_defaults(func=cmd_budget)

    c = sub.add_parser("selfcheck", help="closed-loop identity and flow-recovery checks")
    c.set_defaults(func=cmd_selfcheck)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, PipelineError) and exc.__cause__ is not None:
        return _exit_code(exc.__cause__)
    if isinstance(exc, SceneIOError) or isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_INVALID


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (BurstError, OSError) as exc:
        print(f"burst: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
