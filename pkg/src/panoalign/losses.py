"""Photometric and geometry-aware losses on image / depth / normal rasters.

Depth rasters here are pinhole z-depths: the camera looks down +Z, the
principal point is the raster centre, and pixel ``(row, col)`` unprojects to
``z * ((col + 0.5 - W/2) / f, (row + 0.5 - H/2) / f, 1)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import binary_erosion

from .errors import ParameterError


@dataclass
class LossConfig:
    lambda_pho: float = 0.2
    lambda_geo: float = 0.05
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_c1: float = 0.01**2
    ssim_c2: float = 0.03**2

    def validate(self) -> "LossConfig":
        if not 0.0 <= self.lambda_pho <= 1.0:
            raise ParameterError(f"lambda_pho must lie in [0, 1], got {self.lambda_pho}")
        if not self.lambda_geo >= 0.0:
            raise ParameterError(f"lambda_geo must be >= 0, got {self.lambda_geo}")
        w = self.ssim_window
        if int(w) != w or w < 3 or w % 2 == 0:
            raise ParameterError(f"ssim_window must be an odd integer >= 3, got {w}")
        if not self.ssim_sigma > 0:
            raise ParameterError("ssim_sigma must be > 0")
        return self


@dataclass(eq=False)
class NormalMap:
    """Unit camera-frame normals ``(H, W, 3)`` with an ``(H, W)`` validity mask."""

    normals: np.ndarray
    valid: np.ndarray


@dataclass
class LossValues:
    l1: float = 0.0
    ssim_value: float = 1.0
    l_ssim: float = 0.0
    l_pho: float = 0.0
    l_geo: float = 0.0
    l_gaussian: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _same_shape(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ParameterError(f"raster shapes differ: {a.shape} vs {b.shape}")


def l1_loss(a, b) -> float:
    """Mean absolute difference over all pixels and channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    return float(np.mean(np.abs(a - b)))


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - size // 2
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable Gaussian filtering of ``(H, W, C)`` keeping only full windows."""
    y = sliding_window_view(x, g.size, axis=0) @ g
    return sliding_window_view(y, g.size, axis=1) @ g


def ssim_map(a, b, cfg: LossConfig | None = None) -> np.ndarray:
    """Per-window SSIM, shape ``(H - w + 1, W - w + 1, C)``."""
    cfg = (cfg or LossConfig()).validate()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < cfg.ssim_window:
        raise ParameterError(f"rasters smaller than the {cfg.ssim_window}-pixel SSIM window")
    g = gaussian_window(cfg.ssim_window, cfg.ssim_sigma)
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    c1, c2 = cfg.ssim_c1, cfg.ssim_c2
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))


def ssim(a, b, cfg: LossConfig | None = None) -> float:
    """Single-scale Gaussian-window SSIM averaged over windows and channels."""
    return float(np.mean(ssim_map(a, b, cfg)))


def photometric_loss(render, gt, cfg: LossConfig | None = None) -> LossValues:
    cfg = (cfg or LossConfig()).validate()
    l1 = l1_loss(render, gt)
    s = ssim(render, gt, cfg)
    l_ssim = 1.0 - s
    l_pho = (1.0 - cfg.lambda_pho) * l1 + cfg.lambda_pho * l_ssim
    return LossValues(l1=l1, ssim_value=s, l_ssim=l_ssim, l_pho=l_pho, l_geo=0.0, l_gaussian=l_pho)


def unproject_depth(depth, f: float) -> np.ndarray:
    """Camera-frame 3-D points ``(H, W, 3)`` of a z-depth raster."""
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    x = (cols + 0.5 - w / 2.0) / f
    y = (rows + 0.5 - h / 2.0) / f
    return np.stack([x * depth, y * depth, depth], axis=-1)


def central_tangents(points: np.ndarray, wrap_cols: bool = False):
    """Central-difference tangents along columns and rows, one-sided at borders."""
    tx = np.empty_like(points)
    ty = np.empty_like(points)
    if wrap_cols:
        tx[:] = np.roll(points, -1, axis=1) - np.roll(points, 1, axis=1)
    else:
        tx[:, 1:-1] = points[:, 2:] - points[:, :-2]
        tx[:, 0] = points[:, 1] - points[:, 0]
        tx[:, -1] = points[:, -1] - points[:, -2]
    ty[1:-1] = points[2:] - points[:-2]
    ty[0] = points[1] - points[0]
    ty[-1] = points[-1] - points[-2]
    return tx, ty


def _depth_valid(depth: np.ndarray, valid=None) -> np.ndarray:
    ok = np.isfinite(depth) & (depth > 0)
    return ok if valid is None else ok & np.asarray(valid, dtype=bool)


def normals_from_depth(depth, f: float, valid=None) -> NormalMap:
    """Camera-facing unit normals from cross products of unprojected tangents.

    A normal is valid only where the whole 3x3 neighbourhood has valid depth
    and the tangent cross product is non-degenerate.
    """
    if not f > 0:
        raise ParameterError("focal length must be > 0")
    depth = np.asarray(depth, dtype=np.float64)
    ok = _depth_valid(depth, valid)
    pts = unproject_depth(np.where(ok, depth, 1.0), f)
    tx, ty = central_tangents(pts)
    n = np.cross(tx, ty)
    norm = np.linalg.norm(n, axis=-1)
    good = binary_erosion(ok, structure=np.ones((3, 3), dtype=bool), border_value=1) & (norm > 1e-300)
    n = n / np.where(good, norm, 1.0)[..., None]
    flip = np.sum(n * pts, axis=-1) > 0
    n[flip] *= -1.0
    n[~good] = 0.0
    return NormalMap(n, good)


def geo_loss_terms(depth, normals: NormalMap, f: float, valid=None):
    """Per-pixel ``|t_x . N|`` and ``|t_y . N|`` with normalised tangents, plus the mask used.

    The mask keeps interior pixels whose tangent stencil has valid depth,
    whose supplied normal is valid, and whose tangents are non-zero.
    """
    depth = np.asarray(depth, dtype=np.float64)
    nrm = np.asarray(normals.normals, dtype=np.float64)
    if nrm.shape[:2] != depth.shape or nrm.shape[-1] != 3:
        raise ParameterError(f"normal map {nrm.shape} does not match depth {depth.shape}")
    ok = _depth_valid(depth, valid)
    pts = unproject_depth(np.where(ok, depth, 1.0), f)
    tx, ty = central_tangents(pts)
    lx = np.linalg.norm(tx, axis=-1)
    ly = np.linalg.norm(ty, axis=-1)
    mask = np.zeros(depth.shape, dtype=bool)
    mask[1:-1, 1:-1] = (
        ok[1:-1, 2:] & ok[1:-1, :-2] & ok[2:, 1:-1] & ok[:-2, 1:-1]
    )
    mask &= np.asarray(normals.valid, dtype=bool) & (lx > 0) & (ly > 0)
    ex = np.abs(np.sum(tx * nrm, axis=-1)) / np.where(lx > 0, lx, 1.0)
    ey = np.abs(np.sum(ty * nrm, axis=-1)) / np.where(ly > 0, ly, 1.0)
    return np.where(mask, ex, 0.0), np.where(mask, ey, 0.0), mask


def geo_loss(depth, normals: NormalMap, f: float, valid=None) -> float:
    """Mean over valid interior pixels of ``|t_x . N| + |t_y . N|``."""
    ex, ey, mask = geo_loss_terms(depth, normals, f, valid)
    if not mask.any():
        return 0.0
    return float(np.mean(ex[mask] + ey[mask]))


def gaussian_loss(render, gt, depth, normals: NormalMap, f: float, cfg: LossConfig | None = None) -> LossValues:
    cfg = (cfg or LossConfig()).validate()
    vals = photometric_loss(render, gt, cfg)
    vals.l_geo = geo_loss(depth, normals, f)
    vals.l_gaussian = vals.l_pho + cfg.lambda_geo * vals.l_geo
    return vals
