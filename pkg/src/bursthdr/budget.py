"""Parameter and FLOP accounting for operation graphs, with the challenge limits.

FLOP formulas (``m`` is FLOPs per multiply-add, 2 by default):

=============  =====================================================
conv2d         m * K^2 * Cin * Cout * H * W
pointwise      m * Cin * Cout * H * W
blockmatch     3 * (2r + 1)^2 * B^2 * tiles   (abs-diff, weight, add)
lk_iter        iters * (23 * B^2 * tiles + 15 * tiles)
resample       8 * C * H * W                  (bilinear tap blend)
elementwise    c * C * H * W                  (c given per node)
reduce         c * C * H * W                  (c given per node)
fft            5 * N * log2(N) * C, N = H * W
=============  =====================================================

``tiles`` is ``ceil(H / B) * ceil(W / B)``. The Lucas-Kanade per-pixel
constant covers the bilinear target sample (8), residual (1), gradient
(4) and the five normal-equation products with their accumulation (10);
the per-tile constant covers damping, the 2x2 solve and the update.
Every node may carry a ``repeat`` count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .config import RestoreConfig
from .errors import ValidationError

PARAM_LIMIT = 30e6
FLOP_LIMIT = 4e12

LK_PIXEL_FLOPS = 23
LK_TILE_FLOPS = 15
BILINEAR_FLOPS = 8


class OpKind(str, Enum):
    CONV2D = "conv2d"
    POINTWISE = "pointwise"
    RESAMPLE = "resample"
    BLOCKMATCH = "blockmatch"
    LK_ITER = "lk_iter"
    ELEMENTWISE = "elementwise"
    REDUCE = "reduce"
    FFT = "fft"


_REQUIRED = {
    OpKind.CONV2D: ("cin", "cout", "kernel", "height", "width"),
    OpKind.POINTWISE: ("cin", "cout", "height", "width"),
    OpKind.RESAMPLE: ("channels", "height", "width"),
    OpKind.BLOCKMATCH: ("radius", "block", "height", "width"),
    OpKind.LK_ITER: ("iters", "block", "height", "width"),
    OpKind.ELEMENTWISE: ("channels", "height", "width", "per_element"),
    OpKind.REDUCE: ("channels", "height", "width", "per_element"),
    OpKind.FFT: ("channels", "height", "width"),
}
_MAY_BE_ZERO = {"radius", "iters", "per_element"}


@dataclass(frozen=True)
class OpNode:
    kind: OpKind
    name: str
    params: dict = field(default_factory=dict)
    param_count: int = 0
    repeat: int = 1

    def __post_init__(self):
        try:
            kind = OpKind(self.kind)
        except ValueError:
            raise ValidationError(f"{self.name}: unknown op kind {self.kind!r}") from None
        object.__setattr__(self, "kind", kind)
        missing = [k for k in _REQUIRED[kind] if k not in self.params]
        if missing:
            raise ValidationError(f"{self.name}: missing shape parameters {missing}")
        for k in _REQUIRED[kind]:
            v = self.params[k]
            if v < 0 or (v == 0 and k not in _MAY_BE_ZERO):
                raise ValidationError(f"{self.name}: {k} must be > 0, got {v}")
        if self.param_count < 0 or self.repeat < 0:
            raise ValidationError(f"{self.name}: param_count and repeat must be >= 0")

    def tiles(self) -> int:
        b = self.params["block"]
        return math.ceil(self.params["height"] / b) * math.ceil(self.params["width"] / b)

    def flops(self, mac_flops: int = 2) -> float:
        p = self.params
        hw = p["height"] * p["width"]
        k = self.kind
        if k is OpKind.CONV2D:
            f = mac_flops * p["kernel"] ** 2 * p["cin"] * p["cout"] * hw
        elif k is OpKind.POINTWISE:
            f = mac_flops * p["cin"] * p["cout"] * hw
        elif k is OpKind.BLOCKMATCH:
            f = 3 * (2 * p["radius"] + 1) ** 2 * p["block"] ** 2 * self.tiles()
        elif k is OpKind.LK_ITER:
            t = self.tiles()
            f = p["iters"] * (LK_PIXEL_FLOPS * p["block"] ** 2 * t + LK_TILE_FLOPS * t)
        elif k is OpKind.RESAMPLE:
            f = BILINEAR_FLOPS * p["channels"] * hw
        elif k in (OpKind.ELEMENTWISE, OpKind.REDUCE):
            f = p["per_element"] * p["channels"] * hw
        else:  # FFT
            f = 5 * hw * math.log2(hw) * p["channels"] if hw > 1 else 0.0
        return f * self.repeat

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "name": self.name, "params": dict(self.params),
                "param_count": self.param_count, "repeat": self.repeat}

    @classmethod
    def from_dict(cls, d: dict) -> "OpNode":
        unknown = set(d) - {"kind", "name", "params", "param_count", "repeat"}
        if unknown:
            raise ValidationError(f"unknown op node keys {sorted(unknown)}")
        return cls(d["kind"], d.get("name", d["kind"]), dict(d.get("params", {})),
                   int(d.get("param_count", 0)), int(d.get("repeat", 1)))


@dataclass(frozen=True)
class BudgetReport:
    total_params: int
    total_flops: float
    breakdown: tuple            # (name, kind, flops, params) per node
    param_limit: float = PARAM_LIMIT
    flop_limit: float = FLOP_LIMIT

    @property
    def passed(self) -> bool:
        return self.total_params <= self.param_limit and self.total_flops <= self.flop_limit

    def to_dict(self) -> dict:
        return {
            "total_params": self.total_params,
            "total_flops": self.total_flops,
            "limits": {"params": self.param_limit, "flops": self.flop_limit},
            "pass": self.passed,
            "breakdown": [{"name": n, "kind": k, "flops": f, "params": p}
                          for n, k, f, p in self.breakdown],
        }

    def text_table(self) -> str:
        width = max([len(n) for n, *_ in self.breakdown] + [4])
        lines = [f"{'node':<{width}} {'kind':<11} {'FLOPs':>16} {'params':>10}"]
        for n, k, f, p in self.breakdown:
            lines.append(f"{n:<{width}} {k:<11} {f:>16,.0f} {p:>10,d}")
        lines.append(f"{'total':<{width}} {'':<11} {self.total_flops:>16,.0f} {self.total_params:>10,d}")
        return "\n".join(lines)


def count_flops(graph, input_dims: tuple[int, int] | None = None,
                mac_flops: int = 2) -> BudgetReport:
    """Sum FLOPs and parameters over ``graph``.

    With ``input_dims`` given, every node's spatial size must fit inside it.
    """
    if mac_flops not in (1, 2):
        raise ValidationError("mac_flops must be 1 or 2")
    nodes = [n if isinstance(n, OpNode) else OpNode.from_dict(n) for n in graph]
    if input_dims is not None:
        h, w = input_dims
        for n in nodes:
            if n.params["height"] > h or n.params["width"] > w:
                raise ValidationError(
                    f"{n.name}: {n.params['height']}x{n.params['width']} exceeds input {h}x{w}")
    breakdown = tuple((n.name, n.kind.value, n.flops(mac_flops), n.param_count * n.repeat)
                      for n in nodes)
    return BudgetReport(sum(b[3] for b in breakdown), sum(b[2] for b in breakdown), breakdown)


@dataclass(frozen=True)
class BudgetCheck:
    passed: bool
    param_margin: float         # (limit - total) / limit; negative when over
    flop_margin: float
    violations: tuple           # (limit name, total / limit) for each exceeded limit

    def summary(self) -> str:
        head = "PASS" if self.passed else "FAIL"
        text = f"{head}: params margin {self.param_margin:.1%}, FLOPs margin {self.flop_margin:.1%}"
        for name, ratio in self.violations:
            text += f"; {name} at {ratio:.9g}x the limit"
        return text


def check_budget(report: BudgetReport | tuple) -> BudgetCheck:
    """Compare totals with the limits (inclusive). Accepts a report or ``(params, flops)``."""
    if isinstance(report, BudgetReport):
        params, flops = report.total_params, report.total_flops
        plim, flim = report.param_limit, report.flop_limit
    else:
        params, flops = report
        plim, flim = PARAM_LIMIT, FLOP_LIMIT
    if params < 0 or flops < 0:
        raise ValidationError("totals must be nonnegative")
    violations = []
    if params > plim:
        violations.append(("params", params / plim))
    if flops > flim:
        violations.append(("flops", flops / flim))
    return BudgetCheck(not violations, (plim - params) / plim, (flim - flops) / flim,
                       tuple(violations))


def pipeline_graph(config: RestoreConfig | None = None,
                   size: tuple[int, int] = (768, 1536), frames: int = 9) -> list[OpNode]:
    """Operation graph of the classical restore pipeline at ``size`` (full-resolution H, W)."""
    cfg = config or RestoreConfig()
    H, W = size
    if H % 2 or W % 2:
        raise ValidationError("size must be even")
    h, w = H // 2, W // 2
    others = frames - 1
    g: list[OpNode] = []

    def add(kind, name, repeat=1, **params):
        g.append(OpNode(kind, name, params, 0, repeat))

    add("elementwise", "normalize_exposure", frames, channels=4, height=h, width=w, per_element=4)
    if cfg.flow == "estimate":
        add("reduce", "luminance_proxy", 2 * others, channels=1, height=h, width=w, per_element=4)
        for lvl in range(cfg.levels):
            lh, lw = h >> lvl, w >> lvl
            if lvl > 0:
                add("reduce", f"pyramid_pool_l{lvl}", 2 * others, channels=3, height=lh, width=lw,
                    per_element=4)
            add("blockmatch", f"block_match_l{lvl}", others, radius=cfg.radius, block=cfg.block,
                height=lh, width=lw)
            # neighbor propagation: up to 8 radius-1 searches per pass, two passes
            add("blockmatch", f"propagate_l{lvl}", others * 16, radius=1, block=cfg.block,
                height=lh, width=lw)
            add("elementwise", f"gradients_l{lvl}", others, channels=2, height=lh, width=lw,
                per_element=2)
            if cfg.lk_iters:
                add("lk_iter", f"lucas_kanade_l{lvl}", others, iters=cfg.lk_iters, block=cfg.block,
                    height=lh, width=lw)
            # 3x3 median of the tile flow (dx and dy), about 30 comparisons per tile
            add("reduce", f"flow_median_l{lvl}", 2 * others, channels=1,
                height=-(-lh // cfg.block), width=-(-lw // cfg.block), per_element=30)
        add("resample", "densify_flow", others, channels=2, height=h, width=w)
    add("resample", "warp", others, channels=8, height=h, width=w)
    if cfg.gain_source == "estimate":
        # separable 5x5 box on samples and 5x5 minimum on masks
        add("elementwise", "gain_smoothing", frames, channels=4, height=h, width=w, per_element=20)
        add("reduce", "gain_estimate", others, channels=4, height=h, width=w, per_element=6)
    if cfg.reject_z is not None:
        add("reduce", "reject_median", 1, channels=4, height=h, width=w, per_element=3 * frames)
        add("reduce", "reject_consensus", 1, channels=4, height=h, width=w, per_element=3 * frames)
        add("reduce", "reject_bound", 1, channels=4, height=h, width=w, per_element=3 * frames)
        add("elementwise", "reject_ramp", frames, channels=4, height=h, width=w, per_element=10)
    add("reduce", "robust_median", 1, channels=4, height=h, width=w, per_element=3 * frames)
    add("elementwise", "merge_weights", frames, channels=4, height=h, width=w, per_element=7)
    add("elementwise", "weighted_sum", frames, channels=4, height=h, width=w, per_element=3)
    add("elementwise", "demosaic", 1, channels=3, height=H, width=W, per_element=20)
    add("elementwise", "tone_map", 1, channels=3, height=H, width=W, per_element=4)
    add("elementwise", "quantize", 1, channels=3, height=H, width=W, per_element=3)
    return g


def load_graph(path, size: tuple[int, int] = (768, 1536)) -> list[OpNode]:
    """A graph JSON (``{"nodes": [...]}``) or a restore-config JSON (classical pipeline graph)."""
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict) and "nodes" in data:
        return [OpNode.from_dict(n) for n in data["nodes"]]
    if isinstance(data, list):
        return [OpNode.from_dict(n) for n in data]
    return pipeline_graph(RestoreConfig.from_dict(data), size)
