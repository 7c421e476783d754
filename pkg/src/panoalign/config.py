"""Flat pipeline configuration read from ``key = value`` files and CLI overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .alignment import AlignmentConfig
from .errors import InputError
from .losses import LossConfig


@dataclass
class PipelineConfig:
    # alignment
    lambda_cross: float = AlignmentConfig.lambda_cross
    lambda_scale: float = AlignmentConfig.lambda_scale
    lambda_mag: float = AlignmentConfig.lambda_mag
    lambda_grid: float = AlignmentConfig.lambda_grid
    grid_side: int = AlignmentConfig.grid_side
    max_iters: int = AlignmentConfig.max_iters
    step_init: float = AlignmentConfig.step_init
    huber_eps: float = AlignmentConfig.huber_eps
    tol: float = AlignmentConfig.tol
    fuse_power: float = AlignmentConfig.fuse_power
    preconditioner: str = AlignmentConfig.preconditioner
    # losses
    lambda_pho: float = LossConfig.lambda_pho
    lambda_geo: float = LossConfig.lambda_geo
    ssim_window: int = LossConfig.ssim_window
    ssim_sigma: float = LossConfig.ssim_sigma
    ssim_c1: float = LossConfig.ssim_c1
    ssim_c2: float = LossConfig.ssim_c2
    # projection
    fov_deg: float = 80.0
    face_resolution: int = 128
    pano_width: int = 512
    seed: int = 0
    # export / preview
    stride: int = 1
    splat_px: int = 1
    render_resolution: int = 256
    render_fov_deg: float = 60.0
    trajectory: str = "orbit"
    n_poses: int = 8
    trajectory_radius: float = 0.5
    # synthetic scenes
    scene: str = "box_room"
    sphere_radius: float = 2.0
    box_half_x: float = 4.0
    box_half_y: float = 3.0
    box_half_z: float = 2.5
    camera_x: float = 0.3
    camera_y: float = -0.2
    camera_z: float = 0.1
    corruption: str = "per_face_constant"
    s_min: float = 0.7
    s_max: float = 1.4
    o_min: float = -0.2
    o_max: float = 0.2

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def updated(self, values: dict) -> "PipelineConfig":
        """Copy with string or typed ``values`` applied; unknown keys are rejected."""
        types = {f.name: type(f.default) for f in fields(self)}
        changes = {}
        for key, raw in values.items():
            if key not in types:
                raise InputError(f"unknown config key {key!r}")
            typ = types[key]
            try:
                if typ is int:
                    val = int(raw) if not isinstance(raw, str) else int(raw.strip())
                elif typ is float:
                    val = float(raw)
                else:
                    val = str(raw).strip()
            except ValueError:
                raise InputError(f"config key {key!r}: cannot parse {raw!r} as {typ.__name__}") from None
            changes[key] = val
        return dataclasses.replace(self, **changes)

    def alignment(self) -> AlignmentConfig:
        names = {f.name for f in fields(AlignmentConfig)}
        return AlignmentConfig(**{k: getattr(self, k) for k in names})

    def losses(self) -> LossConfig:
        names = {f.name for f in fields(LossConfig)}
        return LossConfig(**{k: getattr(self, k) for k in names})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise InputError(f"config line {lineno}: empty key")
        out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc.strerror}") from None
        cfg = cfg.updated(parse_config_text(text))
    if overrides:
        cfg = cfg.updated(overrides)
    return cfg
