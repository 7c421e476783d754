"""Equirectangular rasters, icosahedral tangent frames and gnomonic resampling.

World frame: +Z is up, longitude ``theta`` is measured from +X towards +Y.
A direction ``(theta, phi)`` maps to ``(cos phi cos theta, cos phi sin theta, sin phi)``.

Tangent-face rasters follow the usual pinhole layout: column index grows along
``frame.right``, row index grows along ``-frame.up``, and pixel ``(row, col)``
sits at tangent-plane coordinates ``x = (col + 0.5 - R/2) / f``,
``y = -(row + 0.5 - R/2) / f``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ParameterError

K_FACES = 20
DEFAULT_FOV_DEG = 80.0


@dataclass(eq=False)
class EquirectImage:
    """A 2:1 longitude/latitude raster.

    ``data`` is ``(H, W)`` for scalar rasters (depth) or ``(H, W, C)`` for
    RGB / normal rasters.  ``valid`` is an ``(H, W)`` boolean mask.
    """

    data: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim not in (2, 3):
            raise ParameterError(f"equirect data must be 2-D or 3-D, got shape {self.data.shape}")
        h, w = self.data.shape[:2]
        if w != 2 * h:
            raise ParameterError(f"equirect width must be 2 x height, got {w}x{h}")
        if self.valid is None:
            self.valid = np.ones((h, w), dtype=bool)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != (h, w):
                raise ParameterError("validity mask shape does not match raster")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else self.data.shape[2]


def pixel_to_spherical(u, v, width: int, height: int):
    """Pixel-centre longitude/latitude of equirect pixel ``(u, v)``."""
    theta = 2.0 * np.pi * (np.asarray(u, dtype=np.float64) + 0.5) / width
    phi = np.pi / 2 - np.pi * (np.asarray(v, dtype=np.float64) + 0.5) / height
    return theta, phi


def spherical_to_pixel(theta, phi, width: int, height: int):
    """Continuous pixel coordinates; inverse of :func:`pixel_to_spherical`."""
    u = np.mod(theta, 2.0 * np.pi) * width / (2.0 * np.pi) - 0.5
    v = (np.pi / 2 - np.asarray(phi)) * height / np.pi - 0.5
    return u, v


def spherical_to_direction(theta, phi) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    cp = np.cos(phi)
    return np.stack([cp * np.cos(theta), cp * np.sin(theta), np.sin(phi)], axis=-1)


def direction_to_spherical(dirs: np.ndarray):
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    theta = np.mod(np.arctan2(y, x), 2.0 * np.pi)
    phi = np.arctan2(z, np.hypot(x, y))
    return theta, phi


def equirect_directions(width: int, height: int) -> np.ndarray:
    """Unit directions of every pixel centre, shape ``(H, W, 3)``."""
    u, v = np.meshgrid(np.arange(width), np.arange(height))
    return spherical_to_direction(*pixel_to_spherical(u, v, width, height))


@dataclass(eq=False, frozen=True)
class TangentFrame:
    """Pinhole camera tangent to the sphere at one icosahedron face centre."""

    face_id: int
    center: np.ndarray
    up: np.ndarray
    fov_deg: float
    resolution: int

    @cached_property
    def right(self) -> np.ndarray:
        # (right, -up, center) is a right-handed x-right / y-down / z-forward camera.
        return np.cross(self.center, self.up)

    @cached_property
    def half_extent(self) -> float:
        """Half side of the field of view on the tangent plane, ``tan(fov/2)``."""
        return math.tan(math.radians(self.fov_deg) / 2)

    @cached_property
    def focal(self) -> float:
        return self.resolution / (2.0 * self.half_extent)

    @cached_property
    def rotation(self) -> np.ndarray:
        """Rows are the camera axes (right, down, forward) in world coordinates."""
        return np.stack([self.right, -self.up, self.center])

    def pixel_to_plane(self, rows, cols):
        c = self.resolution / 2.0
        x = (np.asarray(cols, dtype=np.float64) + 0.5 - c) / self.focal
        y = -(np.asarray(rows, dtype=np.float64) + 0.5 - c) / self.focal
        return x, y

    def plane_to_pixel(self, x, y):
        c = self.resolution / 2.0
        cols = np.asarray(x) * self.focal + c - 0.5
        rows = -np.asarray(y) * self.focal + c - 0.5
        return rows, cols

    @cached_property
    def pixel_directions(self) -> np.ndarray:
        """Unit direction of every face pixel centre, shape ``(R, R, 3)``."""
        rows, cols = np.meshgrid(np.arange(self.resolution), np.arange(self.resolution), indexing="ij")
        return gnomonic_unproject(*self.pixel_to_plane(rows, cols), self)

    def project(self, dirs: np.ndarray):
        """Vectorised gnomonic projection: ``(x, y, in_front)`` for each direction."""
        dirs = np.asarray(dirs, dtype=np.float64)
        denom = dirs @ self.center
        in_front = denom > 0
        safe = np.where(in_front, denom, 1.0)
        x = (dirs @ self.right) / safe
        y = (dirs @ self.up) / safe
        return x, y, in_front

    def inside_fov(self, dirs: np.ndarray) -> np.ndarray:
        """Directions strictly inside the square field of view."""
        x, y, front = self.project(dirs)
        t = self.half_extent
        return front & (np.abs(x) < t) & (np.abs(y) < t)


@dataclass(eq=False)
class PerspectiveView:
    frame: TangentFrame
    image: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        r = self.frame.resolution
        if self.image.shape[:2] != (r, r):
            raise ParameterError(f"view raster must be {r}x{r}, got {self.image.shape[:2]}")
        if self.valid is None:
            self.valid = np.ones((r, r), dtype=bool)

    @property
    def focal(self) -> float:
        return self.frame.focal


def icosahedron_face_centers() -> np.ndarray:
    """The 20 outward face normals of a golden-ratio icosahedron, in canonical order."""
    p = (1.0 + math.sqrt(5.0)) / 2.0
    verts = []
    for a in (-1.0, 1.0):
        for b in (-p, p):
            verts += [(0.0, a, b), (a, b, 0.0), (b, 0.0, a)]
    verts = np.array(verts)
    faces = [
        tri
        for tri in itertools.combinations(range(len(verts)), 3)
        if all(abs(np.linalg.norm(verts[i] - verts[j]) - 2.0) < 1e-9 for i, j in itertools.combinations(tri, 2))
    ]
    centers = np.array([verts[list(tri)].sum(axis=0) for tri in faces])
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    # round the sort key so that symmetric faces order independently of float noise
    keys = [(round(c[2], 9), round(math.atan2(c[1], c[0]), 9)) for c in centers]
    order = sorted(range(len(centers)), key=keys.__getitem__)
    return centers[order]


def _up_vector(center: np.ndarray) -> np.ndarray:
    ref = np.array([0.0, 0.0, 1.0])
    if np.linalg.norm(np.cross(center, ref)) < 1e-9:
        ref = np.array([1.0, 0.0, 0.0])
    up = ref - (ref @ center) * center
    return up / np.linalg.norm(up)


def icosahedron_frames(fov_deg: float = DEFAULT_FOV_DEG, resolution: int = 128) -> list[TangentFrame]:
    """One tangent camera per icosahedron face."""
    if not 0.0 < fov_deg < 180.0:
        raise ParameterError(f"fov_deg must lie in (0, 180), got {fov_deg}")
    if int(resolution) != resolution or resolution < 2:
        raise ParameterError(f"resolution must be an integer >= 2, got {resolution}")
    return [
        TangentFrame(k, c, _up_vector(c), float(fov_deg), int(resolution))
        for k, c in enumerate(icosahedron_face_centers())
    ]


def _check_unit(dirs: np.ndarray, tol: float = 1e-9):
    norms = np.linalg.norm(dirs, axis=-1)
    if not np.all(np.abs(norms - 1.0) <= tol):
        raise ParameterError("direction vectors must have unit norm")


def gnomonic_project(direction, frame: TangentFrame):
    """Tangent-plane coordinates ``(x, y)`` of a unit direction, or ``None`` when behind."""
    d = np.asarray(direction, dtype=np.float64)
    _check_unit(d)
    x, y, front = frame.project(d)
    if not front:
        return None
    return float(x), float(y)


def gnomonic_unproject(x, y, frame: TangentFrame) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)[..., None]
    y = np.asarray(y, dtype=np.float64)[..., None]
    v = frame.center + x * frame.right + y * frame.up
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _weighted_stencil(values: np.ndarray, valid: np.ndarray, idx: np.ndarray, w: np.ndarray):
    """Renormalised bilinear blend over the valid members of each 4-pixel stencil."""
    flat_valid = valid.reshape(-1)
    w = w * flat_valid[idx]
    wsum = w.sum(axis=-1)
    ok = wsum > 0
    w = w / np.where(ok, wsum, 1.0)[..., None]
    flat = values.reshape(flat_valid.size, -1)
    out = np.einsum("...k,...kc->...c", w, flat[idx])
    return out, ok


def bilinear_stencil(rows, cols, n_rows: int, n_cols: int, wrap_cols: bool = False):
    """Flat indices ``(..., 4)`` and weights ``(..., 4)`` of the bilinear stencil.

    Rows are clamped to the raster.  Columns are clamped, or wrapped when
    ``wrap_cols`` is set (equirect longitude).
    """
    rows = np.clip(np.asarray(rows, dtype=np.float64), 0.0, n_rows - 1)
    cols = np.asarray(cols, dtype=np.float64)
    if not wrap_cols:
        cols = np.clip(cols, 0.0, n_cols - 1)
    r0 = np.minimum(np.floor(rows).astype(np.int64), max(n_rows - 2, 0))
    fr = rows - r0
    r1 = np.minimum(r0 + 1, n_rows - 1)
    if wrap_cols:
        c0f = np.floor(cols)
        fc = cols - c0f
        c0 = np.mod(c0f.astype(np.int64), n_cols)
        c1 = np.mod(c0 + 1, n_cols)
    else:
        c0 = np.minimum(np.floor(cols).astype(np.int64), max(n_cols - 2, 0))
        fc = cols - c0
        c1 = np.minimum(c0 + 1, n_cols - 1)
    idx = np.stack([r0 * n_cols + c0, r0 * n_cols + c1, r1 * n_cols + c0, r1 * n_cols + c1], axis=-1)
    w = np.stack([(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc], axis=-1)
    return idx, w


def sample_equirect(img: EquirectImage, dirs):
    """Bilinearly sample ``img`` along unit directions.

    Returns ``(values, ok)``: values have shape ``dirs.shape[:-1]`` for scalar
    rasters and ``dirs.shape[:-1] + (C,)`` otherwise; ``ok`` is False where the
    whole stencil is invalid (those values are NaN).
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    _check_unit(dirs)
    theta, phi = direction_to_spherical(dirs)
    u, v = spherical_to_pixel(theta, phi, img.width, img.height)
    idx, w = bilinear_stencil(v, u, img.height, img.width, wrap_cols=True)
    out, ok = _weighted_stencil(img.data, img.valid, idx, w)
    out[~ok] = np.nan
    if img.channels == 1 and img.data.ndim == 2:
        out = out[..., 0]
    return out, ok


def sample_face(raster: np.ndarray, valid: np.ndarray, rows, cols):
    """Bilinear sampling of a square face raster at continuous pixel coordinates."""
    n = raster.shape[0]
    idx, w = bilinear_stencil(rows, cols, n, n)
    out, ok = _weighted_stencil(raster, valid, idx, w)
    if raster.ndim == 2:
        out = out[..., 0]
    return out, ok


def project_to_faces(pano: EquirectImage, frames: list[TangentFrame]) -> list[PerspectiveView]:
    """Resample the panorama into one perspective view per frame."""
    if not frames:
        raise ParameterError("frame list is empty")
    views = []
    for frame in frames:
        values, ok = sample_equirect(pano, frame.pixel_directions)
        values = np.where(ok[..., None] if values.ndim == 3 else ok, values, 0.0)
        views.append(PerspectiveView(frame, values, ok))
    return views


@dataclass(eq=False)
class OverlapMask:
    """Pixels of face ``a`` whose directions fall strictly inside face ``b``.

    ``pixels`` are flat indices into face ``a``; ``rows_b`` / ``cols_b`` are the
    continuous coordinates of the same directions in face ``b``'s raster.
    """

    a: int
    b: int
    pixels: np.ndarray
    rows_b: np.ndarray
    cols_b: np.ndarray
    resolution_b: int

    def __len__(self):
        return int(self.pixels.size)

    @cached_property
    def stencil(self):
        """Bilinear stencil ``(idx, w)`` in face ``b`` for each overlap pixel."""
        n = self.resolution_b
        return bilinear_stencil(self.rows_b, self.cols_b, n, n)


def overlap_mask(a: TangentFrame, b: TangentFrame) -> OverlapMask:
    if a.face_id == b.face_id:
        raise ParameterError("overlap of a face with itself is undefined")
    dirs = a.pixel_directions.reshape(-1, 3)
    x, y, front = b.project(dirs)
    t = b.half_extent
    inside = front & (np.abs(x) < t) & (np.abs(y) < t)
    pix = np.flatnonzero(inside)
    rows_b, cols_b = b.plane_to_pixel(x[pix], y[pix])
    return OverlapMask(a.face_id, b.face_id, pix, rows_b, cols_b, b.resolution)


def pairwise_overlaps(frames: list[TangentFrame]) -> dict[tuple[int, int], OverlapMask]:
    """Non-empty overlaps for every unordered pair ``a < b`` (keyed by face id)."""
    out = {}
    for fa, fb in itertools.combinations(sorted(frames, key=lambda f: f.face_id), 2):
        m = overlap_mask(fa, fb)
        if len(m):
            out[(fa.face_id, fb.face_id)] = m
    return out


def coverage_count(frames: list[TangentFrame], dirs: np.ndarray) -> np.ndarray:
    """Number of faces whose field of view strictly contains each direction."""
    count = np.zeros(dirs.shape[:-1], dtype=np.int64)
    for f in frames:
        count += f.inside_fov(dirs)
    return count
