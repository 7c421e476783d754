"""Point clouds from panoramic RGB-D, virtual camera paths and point-splat previews."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, ParameterError
from .losses import central_tangents
from .sphere import EquirectImage, direction_to_spherical, equirect_directions, spherical_to_pixel


@dataclass(eq=False)
class PointCloud:
    positions: np.ndarray  # (N, 3) float
    normals: np.ndarray  # (N, 3) unit
    colors: np.ndarray  # (N, 3) uint8

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        if not len(self.positions) == len(self.normals) == len(self.colors):
            raise ParameterError("positions, normals and colors must have the same length")

    def __len__(self):
        return len(self.positions)


@dataclass(eq=False)
class CameraPose:
    position: np.ndarray
    forward: np.ndarray
    up: np.ndarray
    fov_deg: float = 60.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.forward = np.asarray(self.forward, dtype=np.float64)
        self.up = np.asarray(self.up, dtype=np.float64)
        if abs(self.forward @ self.up) > 1e-9:
            raise ParameterError("camera forward and up must be orthogonal")

    @property
    def right(self) -> np.ndarray:
        return np.cross(self.forward, self.up)


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    """Float RGB in [0, 1] to 8-bit, rounding to nearest."""
    return np.clip(np.round(np.asarray(rgb, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def unproject_panorama(rgb: EquirectImage, depth: EquirectImage, stride: int = 1) -> PointCloud:
    """One point per valid pixel of the stride grid, camera at the origin.

    Normals come from cross products of longitude / latitude central-difference
    tangents (longitude wraps), oriented towards the origin.  Pixels whose
    tangent stencil touches invalid depth, or whose cross product vanishes,
    fall back to the inward ray direction.
    """
    if int(stride) != stride or stride < 1:
        raise ParameterError("stride must be an integer >= 1")
    if rgb.data.shape[:2] != depth.data.shape[:2]:
        raise ParameterError("rgb and depth panoramas differ in size")
    d = depth.data
    ok = depth.valid & np.isfinite(d) & (d > 0)
    dirs = equirect_directions(depth.width, depth.height)
    pts = np.where(ok, d, 1.0)[..., None] * dirs
    tx, ty = central_tangents(pts, wrap_cols=True)
    n = np.cross(tx, ty)
    norm = np.linalg.norm(n, axis=-1)
    stencil_ok = ok & np.roll(ok, 1, axis=1) & np.roll(ok, -1, axis=1)
    stencil_ok[1:-1] &= ok[2:] & ok[:-2]
    stencil_ok[0] &= ok[1]
    stencil_ok[-1] &= ok[-2]
    good = stencil_ok & (norm > 1e-300)
    n = np.where(good[..., None], n / np.where(good, norm, 1.0)[..., None], -dirs)
    n[np.sum(n * dirs, axis=-1) > 0] *= -1.0

    sel = np.zeros_like(ok)
    sel[::stride, ::stride] = True
    sel &= ok
    colors = rgb.data if rgb.data.ndim == 3 else np.repeat(rgb.data[..., None], 3, axis=-1)
    return PointCloud(pts[sel], n[sel], to_uint8(colors[sel][:, :3]))


def camera_trajectory(kind: str, n: int, radius: float, fov_deg: float = 60.0) -> list[CameraPose]:
    """Outward-looking poses; pose ``i`` looks along azimuth ``2 pi i / n`` (pose 0 along +X).

    ``orbit`` moves on a horizontal circle, ``spiral`` adds a height ramp from
    ``-radius/2`` to ``+radius/2``, ``lemniscate`` traces a horizontal figure-eight.
    """
    if int(n) != n or n < 1:
        raise ParameterError("trajectory needs n >= 1 poses")
    if not radius >= 0:
        raise ParameterError("radius must be >= 0")
    if kind not in ("orbit", "spiral", "lemniscate"):
        raise ParameterError(f"unknown trajectory kind {kind!r}")
    up = np.array([0.0, 0.0, 1.0])
    heights = np.linspace(-radius / 2, radius / 2, n) if n > 1 else np.zeros(1)
    poses = []
    for i in range(n):
        a = 2.0 * math.pi * i / n
        fwd = np.array([math.cos(a), math.sin(a), 0.0])
        if kind == "orbit":
            pos = radius * fwd
        elif kind == "spiral":
            pos = radius * fwd + np.array([0.0, 0.0, heights[i]])
        else:
            pos = radius * np.array([math.cos(a), math.sin(a) * math.cos(a), 0.0])
        poses.append(CameraPose(pos, fwd, up, float(fov_deg)))
    return poses


def _splat_offsets(splat_px: int) -> np.ndarray:
    lo = -((splat_px - 1) // 2)
    r = np.arange(lo, lo + splat_px)
    dy, dx = np.meshgrid(r, r, indexing="ij")
    return np.stack([dy.ravel(), dx.ravel()], axis=1)


def _zbuffer(rows, cols, depth, colors, h: int, w: int, splat_px: int, wrap_cols: bool = False):
    """Nearest-fragment compositing; on equal depth the lowest point index wins."""
    rgb = np.zeros((h, w, 3))
    zbuf = np.full((h, w), np.inf)
    covered = np.zeros((h, w), dtype=bool)
    if rows.size == 0:
        return rgb, zbuf, covered
    offs = _splat_offsets(splat_px)
    pid = np.tile(np.arange(rows.size), len(offs))
    rr = (rows[None, :] + offs[:, :1]).ravel()
    cc = (cols[None, :] + offs[:, 1:]).ravel()
    if wrap_cols:
        cc = np.mod(cc, w)
    keep = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
    pid, rr, cc = pid[keep], rr[keep], cc[keep]
    flat = rr * w + cc
    order = np.lexsort((pid, depth[pid], flat))
    flat, pid = flat[order], pid[order]
    first = np.flatnonzero(np.r_[True, flat[1:] != flat[:-1]])
    win_px, win_pt = flat[first], pid[first]
    zbuf.reshape(-1)[win_px] = depth[win_pt]
    rgb.reshape(-1, 3)[win_px] = colors[win_pt]
    covered.reshape(-1)[win_px] = True
    return rgb, zbuf, covered


def render_points(cloud: PointCloud, pose: CameraPose, resolution: int, splat_px: int = 1):
    """Square-splat pinhole render: ``(rgb, z-depth, covered)`` rasters of side ``resolution``."""
    if int(splat_px) != splat_px or splat_px < 1:
        raise ParameterError("splat_px must be an integer >= 1")
    rel = cloud.positions - pose.position
    cam = np.stack([rel @ pose.right, -(rel @ pose.up), rel @ pose.forward], axis=-1)
    front = cam[:, 2] > 1e-9
    f = resolution / (2.0 * math.tan(math.radians(pose.fov_deg) / 2))
    z = np.where(front, cam[:, 2], 1.0)
    cols = np.floor(f * cam[:, 0] / z + resolution / 2.0).astype(np.int64)
    rows = np.floor(f * cam[:, 1] / z + resolution / 2.0).astype(np.int64)
    idx = np.flatnonzero(front)
    rgb, zbuf, covered = _zbuffer(
        rows[idx], cols[idx], z[idx], cloud.colors[idx] / 255.0, resolution, resolution, int(splat_px)
    )
    return rgb, zbuf, covered


def render_points_panorama(cloud: PointCloud, position, width: int, splat_px: int = 1):
    """Equirect render from ``position``: ``(rgb, distance, covered)`` of size ``width/2 x width``."""
    if width % 2:
        raise ParameterError("panorama width must be even")
    h = width // 2
    rel = cloud.positions - np.asarray(position, dtype=np.float64)
    dist = np.linalg.norm(rel, axis=-1)
    nz = dist > 1e-12
    theta, phi = direction_to_spherical(rel[nz] / dist[nz, None])
    u, v = spherical_to_pixel(theta, phi, width, h)
    cols = np.mod(np.floor(u + 0.5).astype(np.int64), width)
    rows = np.clip(np.floor(v + 0.5).astype(np.int64), 0, h - 1)
    idx = np.flatnonzero(nz)
    return _zbuffer(rows, cols, dist[idx], cloud.colors[idx] / 255.0, h, width, int(splat_px), wrap_cols=True)


class PlyError(InputError):
    pass


_PLY_PROPS = [("float", n) for n in ("x", "y", "z", "nx", "ny", "nz")] + [
    ("uchar", n) for n in ("red", "green", "blue")
]
_FLOAT_NAMES = {"float", "float32"}
_UCHAR_NAMES = {"uchar", "uint8"}


def write_ply(cloud: PointCloud) -> bytes:
    lines = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}"]
    lines += [f"property {t} {n}" for t, n in _PLY_PROPS]
    lines.append("end_header")
    pos = cloud.positions.astype(np.float32).astype(np.float64)
    nrm = cloud.normals.astype(np.float32).astype(np.float64)
    for p, q, c in zip(pos, nrm, cloud.colors):
        lines.append(
            "%.9g %.9g %.9g %.9g %.9g %.9g %d %d %d" % (p[0], p[1], p[2], q[0], q[1], q[2], c[0], c[1], c[2])
        )
    return ("\n".join(lines) + "\n").encode("ascii")


def read_ply(data: bytes) -> PointCloud:
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise PlyError(f"PLY is not ASCII text: {exc}") from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    def line(i):
        if i >= len(lines):
            raise PlyError(f"line {i + 1}: unexpected end of file")
        return lines[i].strip()

    if line(0) != "ply":
        raise PlyError("line 1: missing 'ply' magic")
    if line(1) != "format ascii 1.0":
        raise PlyError(f"line 2: unsupported format {line(1)!r}")
    i = 2
    while line(i).startswith("comment"):
        i += 1
    parts = line(i).split()
    if len(parts) != 3 or parts[:2] != ["element", "vertex"] or not parts[2].isdigit():
        raise PlyError(f"line {i + 1}: expected 'element vertex <count>', got {line(i)!r}")
    count = int(parts[2])
    i += 1
    for kind, name in _PLY_PROPS:
        parts = line(i).split()
        allowed = _FLOAT_NAMES if kind == "float" else _UCHAR_NAMES
        if len(parts) != 3 or parts[0] != "property" or parts[1] not in allowed or parts[2] != name:
            raise PlyError(f"line {i + 1}: expected 'property {kind} {name}', got {line(i)!r}")
        i += 1
    if line(i) != "end_header":
        raise PlyError(f"line {i + 1}: expected 'end_header', got {line(i)!r}")
    i += 1
    body = lines[i:]
    if len(body) < count:
        raise PlyError(f"line {i + len(body) + 1}: truncated body, {len(body)} of {count} vertices")
    if len(body) > count and any(b.strip() for b in body[count:]):
        raise PlyError(f"line {i + count + 1}: data after the last vertex")
    pos = np.empty((count, 3))
    nrm = np.empty((count, 3))
    col = np.empty((count, 3), dtype=np.uint8)
    for k in range(count):
        tok = body[k].split()
        if len(tok) != 9:
            raise PlyError(f"line {i + k + 1}: expected 9 values, got {len(tok)}")
        try:
            vals = [float(t) for t in tok[:6]]
            rgb = [int(t) for t in tok[6:]]
        except ValueError:
            raise PlyError(f"line {i + k + 1}: non-numeric vertex data") from None
        if any(c < 0 or c > 255 for c in rgb):
            raise PlyError(f"line {i + k + 1}: color out of 0..255")
        pos[k], nrm[k], col[k] = vals[:3], vals[3:], rgb
    return PointCloud(pos, nrm, col)
