"""Analytic test scenes, depth corruption models and error metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alignment import FaceDepth
from .errors import InputError, ParameterError
from .sphere import EquirectImage, PerspectiveView, TangentFrame, equirect_directions

# (direction weights, angular frequency, per-channel amplitude, per-channel phase)
_TEXTURE = (
    (np.array([0.48, 0.60, 0.64]), 3.0, np.array([0.16, 0.12, 0.10]), np.array([0.3, 1.7, 2.9])),
    (np.array([-0.80, 0.36, 0.48]), 2.0, np.array([0.10, 0.15, 0.12]), np.array([2.1, 0.4, 1.2])),
    (np.array([0.00, -0.60, 0.80]), 4.0, np.array([0.08, 0.07, 0.14]), np.array([1.0, 2.6, 0.2])),
)


def procedural_texture(dirs: np.ndarray) -> np.ndarray:
    """Smooth RGB in [0, 1] from three low-frequency sinusoids over the sphere."""
    dirs = np.asarray(dirs, dtype=np.float64)
    rgb = np.full(dirs.shape[:-1] + (3,), 0.5)
    for axis, freq, amp, phase in _TEXTURE:
        rgb += amp * np.sin(freq * (dirs @ axis)[..., None] + phase)
    return rgb


@dataclass(frozen=True)
class SyntheticScene:
    """A camera inside either a sphere (radius) or an axis-aligned box.

    The box is centred at the origin with ``half_extents``; the camera sits at
    ``camera_offset`` and all depths are measured from it.
    """

    kind: str
    radius: float = 2.0
    half_extents: tuple = (4.0, 3.0, 2.5)
    camera_offset: tuple = (0.0, 0.0, 0.0)

    @classmethod
    def sphere_room(cls, radius: float = 2.0) -> "SyntheticScene":
        return cls("sphere_room", radius=float(radius)).validate()

    @classmethod
    def box_room(cls, half_extents=(4.0, 3.0, 2.5), camera_offset=(0.3, -0.2, 0.1)) -> "SyntheticScene":
        return cls(
            "box_room",
            half_extents=tuple(float(h) for h in half_extents),
            camera_offset=tuple(float(c) for c in camera_offset),
        ).validate()

    def validate(self) -> "SyntheticScene":
        if self.kind == "sphere_room":
            if not self.radius > 0:
                raise ParameterError("sphere radius must be > 0")
        elif self.kind == "box_room":
            h = np.asarray(self.half_extents)
            c = np.asarray(self.camera_offset)
            if h.shape != (3,) or c.shape != (3,) or np.any(h <= 0):
                raise ParameterError("box_room needs three positive half extents and a 3-D camera offset")
            if np.any(np.abs(c) >= h):
                raise ParameterError("camera must lie strictly inside the box")
        else:
            raise ParameterError(f"unknown scene kind {self.kind!r}")
        return self

    def _box_hits(self, dirs: np.ndarray):
        h = np.asarray(self.half_extents)
        c = np.asarray(self.camera_offset)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(dirs > 0, (h - c) / dirs, np.where(dirs < 0, (-h - c) / dirs, np.inf))
        axis = np.argmin(t, axis=-1)
        return np.take_along_axis(t, axis[..., None], axis=-1)[..., 0], axis

    def depth(self, dirs: np.ndarray) -> np.ndarray:
        """Distance from the camera to the first surface along each unit direction."""
        dirs = np.asarray(dirs, dtype=np.float64)
        if self.kind == "sphere_room":
            return np.full(dirs.shape[:-1], self.radius)
        return self._box_hits(dirs)[0]

    def normals(self, dirs: np.ndarray) -> np.ndarray:
        """Surface normals at the hit points, facing the camera."""
        dirs = np.asarray(dirs, dtype=np.float64)
        if self.kind == "sphere_room":
            return -dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
        _, axis = self._box_hits(dirs)
        n = np.zeros(dirs.shape)
        sign = -np.sign(np.take_along_axis(dirs, axis[..., None], axis=-1)[..., 0])
        np.put_along_axis(n, axis[..., None], sign[..., None], axis=-1)
        return n

    def wall_labels(self, dirs: np.ndarray) -> np.ndarray:
        """Index 0..5 of the box wall hit (``2 * axis + (direction > 0)``); 0 for spheres."""
        dirs = np.asarray(dirs, dtype=np.float64)
        if self.kind == "sphere_room":
            return np.zeros(dirs.shape[:-1], dtype=np.int64)
        _, axis = self._box_hits(dirs)
        positive = np.take_along_axis(dirs, axis[..., None], axis=-1)[..., 0] > 0
        return 2 * axis + positive

    def rgb(self, dirs: np.ndarray) -> np.ndarray:
        return procedural_texture(dirs)


def analytic_panorama(scene: SyntheticScene, width: int, height: int):
    """Exact ``(rgb, depth, normals)`` equirect rasters of a scene."""
    if width != 2 * height:
        raise ParameterError(f"panorama width must be 2 x height, got {width}x{height}")
    scene.validate()
    dirs = equirect_directions(width, height)
    return (
        EquirectImage(scene.rgb(dirs)),
        EquirectImage(scene.depth(dirs)),
        EquirectImage(scene.normals(dirs)),
    )


def analytic_face_depths(scene: SyntheticScene, frames: list[TangentFrame]) -> list[FaceDepth]:
    """Ground-truth radial depth for every face pixel."""
    return [FaceDepth(f.face_id, scene.depth(f.pixel_directions)) for f in frames]


def analytic_views(scene: SyntheticScene, frames: list[TangentFrame]) -> list[PerspectiveView]:
    """Exact pinhole RGB renders of the scene texture for every face."""
    return [PerspectiveView(f, scene.rgb(f.pixel_directions)) for f in frames]


@dataclass(frozen=True)
class CorruptionSpec:
    mode: str = "per_face_constant"
    s_range: tuple = (0.7, 1.4)
    o_range: tuple = (-0.2, 0.2)
    seed: int = 0

    def validate(self) -> "CorruptionSpec":
        if self.mode not in ("per_face_constant", "smooth_field"):
            raise ParameterError(f"unknown corruption mode {self.mode!r}")
        lo, hi = self.s_range
        if lo > hi or self.o_range[0] > self.o_range[1]:
            raise ParameterError("ranges must be ordered (low, high)")
        if lo <= 0 <= hi:
            raise ParameterError("s_range must exclude 0")
        return self


@dataclass(eq=False)
class Corruption:
    """Scale / offset actually applied to one face.

    ``scale`` and ``offset`` are scalars for ``per_face_constant`` and 2x2
    corner grids for ``smooth_field``.
    """

    face_id: int
    scale: np.ndarray
    offset: np.ndarray

    def fields(self, resolution: int):
        s = np.asarray(self.scale, dtype=np.float64)
        o = np.asarray(self.offset, dtype=np.float64)
        if s.ndim == 0:
            return np.full((resolution, resolution), float(s)), np.full((resolution, resolution), float(o))
        t = np.arange(resolution) / (resolution - 1)
        wr = np.stack([1 - t, t], axis=1)  # (R, 2)
        return wr @ s @ wr.T, wr @ o @ wr.T


def corrupt_faces(true_faces: list[FaceDepth], spec: CorruptionSpec):
    """Apply seeded affine corruption; returns ``(faces, corruptions)``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    shape = () if spec.mode == "per_face_constant" else (2, 2)
    out, params = [], []
    for d in true_faces:
        c = Corruption(d.face_id, rng.uniform(*spec.s_range, size=shape), rng.uniform(*spec.o_range, size=shape))
        s, o = c.fields(d.resolution)
        out.append(FaceDepth(d.face_id, np.where(d.valid, s * d.depth + o, 0.0), d.valid))
        params.append(c)
    return out, params


def invert_corruption(faces: list[FaceDepth], corruptions: list[Corruption]) -> list[FaceDepth]:
    by_id = {c.face_id: c for c in corruptions}
    out = []
    for d in faces:
        s, o = by_id[d.face_id].fields(d.resolution)
        out.append(FaceDepth(d.face_id, np.where(d.valid, (d.depth - o) / s, 0.0), d.valid))
    return out


def fit_global_affine(a: np.ndarray, b: np.ndarray):
    """Closed-form ``(s, o)`` minimising ``sum (s a + o - b)^2``."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    n = a.size
    saa, sa, sab, sb = a @ a, a.sum(), a @ b, b.sum()
    det = saa * n - sa * sa
    if det <= 0:
        return 1.0, float(np.mean(b - a))
    s = (sab * n - sa * sb) / det
    o = (saa * sb - sa * sab) / det
    return float(s), float(o)


def depth_rmse(a: EquirectImage, b: EquirectImage, gauge: str = "none") -> float:
    """RMSE of ``a`` against ``b`` over jointly valid pixels, optionally after a global affine fit."""
    if a.data.shape != b.data.shape:
        raise ParameterError(f"raster shapes differ: {a.data.shape} vs {b.data.shape}")
    if gauge not in ("none", "global_affine"):
        raise ParameterError(f"unknown gauge {gauge!r}")
    both = a.valid & b.valid
    if not both.any():
        raise InputError("no jointly valid pixels")
    x, y = a.data[both], b.data[both]
    if gauge == "global_affine":
        s, o = fit_global_affine(x, y)
        x = s * x + o
    return float(np.sqrt(np.mean(np.square(x - y))))
