"""Command-line front end: ``panoalign {synth,project,align,losses,export,render}``.

Exit codes: 0 success, 2 input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import io
from .alignment import FaceDepth, optimize
from .config import PipelineConfig, load_config
from .errors import InputError, NumericalError, ParameterError
from .export import camera_trajectory, read_ply, render_points, unproject_panorama, write_ply
from .losses import NormalMap, gaussian_loss, normals_from_depth
from .oracle import (
    CorruptionSpec,
    SyntheticScene,
    analytic_face_depths,
    analytic_panorama,
    corrupt_faces,
    depth_rmse,
)
from .sphere import K_FACES, EquirectImage, icosahedron_frames, project_to_faces

log = logging.getLogger("panoalign")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


def _face_name(k: int, ext: str) -> str:
    return f"face_{k:02d}.{ext}"


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_equirect_png(path) -> EquirectImage:
    rgb = io.read_png(path)
    h, w = rgb.shape[:2]
    if w != 2 * h:
        raise InputError(f"{path}: panorama must be 2:1, got {w}x{h}")
    return EquirectImage(rgb)


def _read_depth_pfm(path) -> np.ndarray:
    data = io.read_pfm(path)
    if data.ndim != 2:
        raise InputError(f"{path}: expected a single-channel depth PFM")
    return data


def _as_depth_image(data: np.ndarray) -> EquirectImage:
    h, w = data.shape
    if w != 2 * h:
        raise InputError(f"depth panorama must be 2:1, got {w}x{h}")
    return EquirectImage(np.where(np.isfinite(data), data, 0.0), np.isfinite(data) & (data > 0))


def _depth_to_file(img: EquirectImage) -> np.ndarray:
    return np.where(img.valid, img.data, 0.0)


def _scene(cfg: PipelineConfig) -> SyntheticScene:
    if cfg.scene == "sphere_room":
        return SyntheticScene.sphere_room(cfg.sphere_radius)
    if cfg.scene == "box_room":
        return SyntheticScene.box_room(
            (cfg.box_half_x, cfg.box_half_y, cfg.box_half_z), (cfg.camera_x, cfg.camera_y, cfg.camera_z)
        )
    raise InputError(f"unknown scene {cfg.scene!r}")


def cmd_synth(args, cfg: PipelineConfig) -> int:
    out = _out_dir(args)
    scene = _scene(cfg)
    w = cfg.pano_width
    rgb, depth, normals = analytic_panorama(scene, w, w // 2)
    io.write_png(out / "pano_rgb.png", rgb.data)
    io.write_pfm(out / "pano_depth.pfm", depth.data)
    io.write_pfm(out / "pano_normals.pfm", normals.data)
    frames = icosahedron_frames(cfg.fov_deg, cfg.face_resolution)
    truth = analytic_face_depths(scene, frames)
    spec = CorruptionSpec(cfg.corruption, (cfg.s_min, cfg.s_max), (cfg.o_min, cfg.o_max), cfg.seed)
    bad, params = corrupt_faces(truth, spec)
    for sub, faces in (("faces", truth), ("corrupted", bad)):
        (out / sub).mkdir(exist_ok=True)
        for d in faces:
            io.write_pfm(out / sub / _face_name(d.face_id, "pfm"), np.where(d.valid, d.depth, 0.0))
    _write_json(
        out / "corruption.json",
        {
            "config": cfg.to_dict(),
            "faces": [
                {"face_id": c.face_id, "scale": np.asarray(c.scale).tolist(), "offset": np.asarray(c.offset).tolist()}
                for c in params
            ],
        },
    )
    return EXIT_OK


def cmd_project(args, cfg: PipelineConfig) -> int:
    src = Path(args.pano)
    if src.suffix.lower() == ".pfm":
        pano, ext = _as_depth_image(_read_depth_pfm(src)), "pfm"
    else:
        pano, ext = _read_equirect_png(src), "png"
    frames = icosahedron_frames(cfg.fov_deg, cfg.face_resolution)
    out = _out_dir(args)
    for view in project_to_faces(pano, frames):
        path = out / _face_name(view.frame.face_id, ext)
        if ext == "pfm":
            io.write_pfm(path, np.where(view.valid, view.image, 0.0))
        else:
            io.write_png(path, view.image)
    _write_json(
        out / "frames.json",
        {
            "config": cfg.to_dict(),
            "frames": [
                {
                    "face_id": f.face_id,
                    "center": f.center.tolist(),
                    "up": f.up.tolist(),
                    "fov_deg": f.fov_deg,
                    "resolution": f.resolution,
                }
                for f in frames
            ],
        },
    )
    return EXIT_OK


def cmd_align(args, cfg: PipelineConfig) -> int:
    face_dir = Path(args.faces)
    depths = []
    for k in range(K_FACES):
        path = face_dir / _face_name(k, "pfm")
        if not path.is_file():
            raise InputError(f"missing face depth {path}")
        depths.append(FaceDepth(k, _read_depth_pfm(path)))
    res = {d.resolution for d in depths}
    if len(res) != 1:
        raise InputError(f"face depth maps differ in size: {sorted(res)}")
    frames = icosahedron_frames(cfg.fov_deg, res.pop())
    with np.errstate(over="ignore", invalid="ignore"):
        result = optimize(depths, frames, cfg.alignment(), pano_width=cfg.pano_width)
    out = _out_dir(args)
    io.write_pfm(out / "fused.pfm", _depth_to_file(result.fused))
    _write_json(out / "trace.json", [e.to_dict() for e in result.trace])
    report = {
        "config": cfg.to_dict(),
        "iterations": result.iterations,
        "converged": result.converged,
        "final_energy": result.trace[-1].to_dict(),
        "field_stats": {
            "max_abs_scale_minus_one": max(float(np.max(np.abs(f.scales - 1.0))) for f in result.fields),
            "max_abs_offset": max(float(np.max(np.abs(f.offsets))) for f in result.fields),
        },
        "fields": [
            {"face_id": f.face_id, "scales": f.scales.tolist(), "offsets": f.offsets.tolist()} for f in result.fields
        ],
    }
    if args.gt:
        gt = _as_depth_image(_read_depth_pfm(args.gt))
        if gt.data.shape != result.fused.data.shape:
            raise InputError(f"ground truth {gt.data.shape} does not match fused {result.fused.data.shape}")
        mean = float(np.mean(gt.data[gt.valid]))
        rmse = {g: depth_rmse(result.fused, gt, g) for g in ("none", "global_affine")}
        report["rmse"] = {
            "mean_depth": mean,
            "none": rmse["none"],
            "global_affine": rmse["global_affine"],
            "relative_none": rmse["none"] / mean,
            "relative_global_affine": rmse["global_affine"] / mean,
        }
    _write_json(out / "report.json", report)
    return EXIT_OK


def cmd_losses(args, cfg: PipelineConfig) -> int:
    render = io.read_png(args.render)
    gt = io.read_png(args.gt)
    if render.shape != gt.shape:
        raise InputError(f"render {render.shape[:2]} and ground truth {gt.shape[:2]} differ in size")
    lcfg = cfg.losses()
    h, w = render.shape[:2]
    f = w / (2.0 * math.tan(math.radians(cfg.fov_deg) / 2))
    if args.depth:
        depth = _read_depth_pfm(args.depth)
        if depth.shape != (h, w):
            raise InputError(f"depth {depth.shape} does not match images {(h, w)}")
        if args.normals:
            n = io.read_pfm(args.normals)
            if n.shape != (h, w, 3):
                raise InputError(f"normals {n.shape} must be {(h, w, 3)}")
            norm = np.linalg.norm(n, axis=-1)
            normals = NormalMap(n / np.where(norm > 0, norm, 1.0)[..., None], norm > 0.5)
        else:
            normals = normals_from_depth(depth, f)
    else:
        if args.normals:
            raise InputError("--normals requires --depth")
        depth = np.ones((h, w))
        normals = NormalMap(np.tile([0.0, 0.0, -1.0], (h, w, 1)), np.ones((h, w), dtype=bool))
    values = gaussian_loss(render, gt, depth, normals, f, lcfg)
    _write_json(_out_dir(args) / "losses.json", {"config": cfg.to_dict(), "focal_px": f, "losses": values.to_dict()})
    return EXIT_OK


def cmd_export(args, cfg: PipelineConfig) -> int:
    rgb = _read_equirect_png(args.pano)
    depth = _as_depth_image(_read_depth_pfm(args.depth))
    if depth.data.shape != rgb.data.shape[:2]:
        raise InputError(f"depth {depth.data.shape} does not match panorama {rgb.data.shape[:2]}")
    cloud = unproject_panorama(rgb, depth, cfg.stride)
    out = _out_dir(args)
    (out / "scene.ply").write_bytes(write_ply(cloud))
    _write_json(out / "export.json", {"config": cfg.to_dict(), "points": len(cloud)})
    return EXIT_OK


def cmd_render(args, cfg: PipelineConfig) -> int:
    try:
        data = Path(args.ply).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {args.ply}: {exc.strerror}") from None
    cloud = read_ply(data)
    poses = camera_trajectory(cfg.trajectory, cfg.n_poses, cfg.trajectory_radius, cfg.render_fov_deg)
    out = _out_dir(args)
    stats = []
    for i, pose in enumerate(poses):
        rgb, _, covered = render_points(cloud, pose, cfg.render_resolution, cfg.splat_px)
        io.write_png(out / f"pose_{i:02d}.png", rgb)
        stats.append({"pose_index": i, "covered_fraction": float(covered.mean())})
    _write_json(out / "coverage.json", {"config": cfg.to_dict(), "coverage": stats})
    return EXIT_OK


def _add_overrides(p: argparse.ArgumentParser):
    g = p.add_argument_group("config overrides")
    for f in fields(PipelineConfig):
        g.add_argument(f"--{f.name}", dest=f"cfg_{f.name}", metavar=type(f.default).__name__.upper(), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="panoalign", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--out", required=True, help="output directory")
        _add_overrides(p)
        p.set_defaults(func=func)
        return p

    add("synth", cmd_synth, "write analytic oracle panoramas and face depth sets")
    p = add("project", cmd_project, "project a panorama (PNG, or depth PFM) onto the 20 faces")
    p.add_argument("pano")
    p = add("align", cmd_align, "align and fuse face_00..face_19.pfm")
    p.add_argument("faces", help="directory holding face_XX.pfm")
    p.add_argument("--gt", help="ground-truth panorama depth PFM for an RMSE report")
    p = add("losses", cmd_losses, "photometric and geometry-aware losses")
    p.add_argument("render")
    p.add_argument("gt")
    p.add_argument("--depth", help="z-depth PFM matching the images")
    p.add_argument("--normals", help="3-channel normal PFM; recomputed from depth when omitted")
    p = add("export", cmd_export, "unproject panoramic RGB-D to an ASCII PLY")
    p.add_argument("pano")
    p.add_argument("depth")
    p = add("render", cmd_render, "render a PLY along a virtual trajectory")
    p.add_argument("ply")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = {
            k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None
        }
        cfg = load_config(args.config, overrides)
        return args.func(args, cfg)
    except NumericalError as exc:
        print(f"panoalign: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ParameterError) as exc:
        print(f"panoalign: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
