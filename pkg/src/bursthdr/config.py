"""Restore pipeline configuration."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError


@dataclass(frozen=True)
class RestoreConfig:
    # alignment
    block: int = 16
    radius: int = 4
    levels: int = 3
    lk_iters: int = 5
    lk_damping: float = 1e-6
    min_valid: float = 0.25
    flow: str = "estimate"          # "estimate" | "zero"
    # exposure normalization
    sat_thresh: float = 0.98
    floor_thresh: float = 0.02
    ramp: float = 0.02
    gain_source: str = "estimate"   # "estimate" | "metadata"
    # merge / ISP
    merge_eps: float = 1e-8
    reject_z: float | None = 4.0    # outlier rejection onset in noise deviations; None disables
    headroom: float | None = None   # None: taken from the scene
    backend: str | None = None      # kernel backend override

    def __post_init__(self):
        if self.flow not in ("estimate", "zero"):
            raise ValidationError(f"flow must be 'estimate' or 'zero', got {self.flow!r}")
        if self.gain_source not in ("estimate", "metadata"):
            raise ValidationError(f"gain_source must be 'estimate' or 'metadata', got {self.gain_source!r}")
        if self.block < 2 or self.radius < 0 or self.levels < 1 or self.lk_iters < 0:
            raise ValidationError("block >= 2, radius >= 0, levels >= 1, lk_iters >= 0 required")
        if not 0 <= self.floor_thresh < self.sat_thresh <= 1:
            raise ValidationError("need 0 <= floor_thresh < sat_thresh <= 1")
        if self.reject_z is not None and not self.reject_z > 0:
            raise ValidationError("reject_z must be > 0 or None")
        if not self.ramp > 0:
            raise ValidationError("ramp must be > 0")

    @classmethod
    def per_pixel_only(cls, **overrides) -> "RestoreConfig":
        """Configuration whose stages are all per-pixel: metadata gains and zero flow."""
        return cls(**{"gain_source": "metadata", "flow": "zero", **overrides})

    @classmethod
    def from_dict(cls, data: dict) -> "RestoreConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "RestoreConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)
