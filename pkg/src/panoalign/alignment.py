"""Affine-field alignment of per-face depth maps and fusion into a panorama.

Each face ``k`` carries a ``G x G`` grid of scale and offset control values.
The grid is bilinearly interpolated over the face raster (control point ``g``
sits at pixel coordinate ``g (R - 1) / (G - 1)``), and the aligned depth is
``s(p) * D(p) + o(p)``.

The optimised energy is

    E = data + lambda_cross * cross + lambda_scale * scale
             + lambda_mag * magnitude + lambda_grid * grid

with ``data`` the squared disagreement of aligned depths over pairwise face
overlaps, ``cross`` the squared disagreement of the fields themselves over the
same overlaps, ``scale`` = sum (s - 1)^2, ``magnitude`` = sum huber(s) + huber(o)
and ``grid`` the squared differences between neighbouring control points.
Every term but ``magnitude`` is quadratic in the control values, so
:class:`AlignmentProblem` assembles them once as sparse operators.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InputError, NonFiniteEnergyError, ParameterError
from .sphere import (
    EquirectImage,
    OverlapMask,
    TangentFrame,
    _weighted_stencil,
    equirect_directions,
    pairwise_overlaps,
    sample_face,
)

log = logging.getLogger(__name__)


@dataclass(eq=False)
class FaceDepth:
    """Square depth raster of one face (radial distance along each pixel ray)."""

    face_id: int
    depth: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.depth.ndim != 2 or self.depth.shape[0] != self.depth.shape[1]:
            raise ParameterError(f"face depth must be a square raster, got {self.depth.shape}")
        finite_pos = np.isfinite(self.depth) & (self.depth > 0)
        if self.valid is None:
            self.valid = finite_pos
        else:
            self.valid = np.asarray(self.valid, dtype=bool) & finite_pos

    @property
    def resolution(self) -> int:
        return self.depth.shape[0]


def _axis_weights(coord, n_pixels: int, n_ctrl: int):
    """Control-grid interpolation along one axis: ``(i0, i1, w0, w1)``."""
    coord = np.asarray(coord, dtype=np.float64)
    if n_ctrl == 1:
        zero = np.zeros(coord.shape, dtype=np.int64)
        return zero, zero, np.ones(coord.shape), np.zeros(coord.shape)
    t = np.clip(coord, 0.0, n_pixels - 1) * (n_ctrl - 1) / (n_pixels - 1)
    i0 = np.minimum(np.floor(t).astype(np.int64), n_ctrl - 2)
    f = t - i0
    return i0, i0 + 1, 1.0 - f, f


def control_weights(rows, cols, n_pixels: int, n_ctrl: int):
    """Flat control-point indices ``(n, 4)`` and weights ``(n, 4)`` at pixel coords."""
    r0, r1, wr0, wr1 = _axis_weights(rows, n_pixels, n_ctrl)
    c0, c1, wc0, wc1 = _axis_weights(cols, n_pixels, n_ctrl)
    idx = np.stack([r0 * n_ctrl + c0, r0 * n_ctrl + c1, r1 * n_ctrl + c0, r1 * n_ctrl + c1], axis=-1)
    w = np.stack([wr0 * wc0, wr0 * wc1, wr1 * wc0, wr1 * wc1], axis=-1)
    return idx, w


def _interp_matrix(rows, cols, n_pixels: int, n_ctrl: int) -> sp.csr_matrix:
    idx, w = control_weights(np.ravel(rows), np.ravel(cols), n_pixels, n_ctrl)
    n = idx.shape[0]
    return sp.csr_matrix(
        (w.ravel(), (np.repeat(np.arange(n), 4), idx.ravel())), shape=(n, n_ctrl * n_ctrl)
    )


@dataclass(eq=False)
class AffineField:
    """Per-face control grids of scale and offset."""

    face_id: int
    scales: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        self.scales = np.asarray(self.scales, dtype=np.float64)
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        if self.scales.shape != self.offsets.shape or self.scales.ndim != 2 or self.scales.shape[0] != self.scales.shape[1]:
            raise ParameterError("scales and offsets must be matching square grids")
        if not np.all(np.isfinite(self.scales)):
            raise ParameterError("field scales must be finite")

    @classmethod
    def identity(cls, face_id: int, grid_side: int) -> "AffineField":
        return cls(face_id, np.ones((grid_side, grid_side)), np.zeros((grid_side, grid_side)))

    @property
    def grid_side(self) -> int:
        return self.scales.shape[0]

    def evaluate_at(self, rows, cols, resolution: int):
        """Interpolated ``(s, o)`` at continuous pixel coordinates of a face raster."""
        idx, w = control_weights(rows, cols, resolution, self.grid_side)
        s = np.sum(self.scales.ravel()[idx] * w, axis=-1)
        o = np.sum(self.offsets.ravel()[idx] * w, axis=-1)
        return s, o

    def evaluate(self, resolution: int):
        """Per-pixel ``(s, o)`` rasters, each ``(R, R)``."""
        rows, cols = np.meshgrid(np.arange(resolution), np.arange(resolution), indexing="ij")
        return self.evaluate_at(rows, cols, resolution)


@dataclass
class AlignmentConfig:
    lambda_cross: float = 1e-4
    lambda_scale: float = 0.03
    lambda_mag: float = 1e-3
    lambda_grid: float = 3.0
    grid_side: int = 8
    max_iters: int = 500
    step_init: float = 1.0
    huber_eps: float = 1e-3
    tol: float = 1e-9
    fuse_power: float = 4.0
    preconditioner: str = "majorizer"

    def validate(self):
        for name in ("lambda_cross", "lambda_scale", "lambda_mag", "lambda_grid"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ParameterError(f"{name} must be a finite non-negative number, got {v}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ParameterError("max_iters must be an integer >= 1")
        if int(self.grid_side) != self.grid_side or self.grid_side < 1:
            raise ParameterError("grid_side must be an integer >= 1")
        if not self.huber_eps > 0:
            raise ParameterError("huber_eps must be > 0")
        if not self.step_init > 0:
            raise ParameterError("step_init must be > 0")
        if not self.tol >= 0:
            raise ParameterError("tol must be >= 0")
        if self.preconditioner not in ("majorizer", "none"):
            raise ParameterError(f"preconditioner must be 'majorizer' or 'none', got {self.preconditioner!r}")
        if not self.fuse_power >= 0:
            raise ParameterError("fuse_power must be >= 0")
        return self


@dataclass
class EnergyBreakdown:
    data: float
    cross: float
    scale: float
    magnitude: float
    grid: float
    total: float

    @classmethod
    def combine(cls, data, cross, scale, magnitude, grid, cfg: AlignmentConfig) -> "EnergyBreakdown":
        total = (
            data
            + cfg.lambda_cross * cross
            + cfg.lambda_scale * scale
            + cfg.lambda_mag * magnitude
            + cfg.lambda_grid * grid
        )
        return cls(float(data), float(cross), float(scale), float(magnitude), float(grid), float(total))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class AlignmentResult:
    fields: list[AffineField]
    aligned: list[FaceDepth]
    fused: EquirectImage
    trace: list[EnergyBreakdown]
    config: AlignmentConfig
    converged: bool = False
    iterations: int = 0


def huber(x, eps: float):
    """Huber-smoothed absolute value: quadratic within ``eps``, ``|x| - eps/2`` outside."""
    ax = np.abs(x)
    return np.where(ax <= eps, 0.5 * np.square(x) / eps, ax - 0.5 * eps)


def huber_grad(x, eps: float):
    return np.where(np.abs(x) <= eps, x / eps, np.sign(x))


def apply_affine(d: FaceDepth, f: AffineField) -> FaceDepth:
    if d.face_id != f.face_id:
        raise ParameterError(f"face id mismatch: depth {d.face_id} vs field {f.face_id}")
    s, o = f.evaluate(d.resolution)
    out = s * d.depth + o
    valid = d.valid & (out > 0) & np.isfinite(out)
    return FaceDepth(d.face_id, np.where(d.valid, out, 0.0), valid)


def _by_id(items) -> dict:
    return {it.face_id: it for it in items}


def data_energy(aligned: list[FaceDepth], overlaps: dict[tuple[int, int], OverlapMask]) -> float:
    """Sum of squared aligned-depth disagreements over all overlaps."""
    faces = _by_id(aligned)
    total = 0.0
    for (a, b), m in sorted(overlaps.items()):
        fa, fb = faces[a], faces[b]
        va = fa.depth.ravel()[m.pixels]
        ok_a = fa.valid.ravel()[m.pixels]
        idx, w = m.stencil
        vb, ok_b = _weighted_stencil(fb.depth, fb.valid, idx, w)
        keep = ok_a & ok_b
        total += float(np.sum(np.square(va[keep] - vb[keep, 0])))
    return total


def _grid_sq_diffs(g: np.ndarray) -> float:
    return float(np.sum(np.square(np.diff(g, axis=0))) + np.sum(np.square(np.diff(g, axis=1))))


def reg_energy(fields: list[AffineField], overlaps, cfg: AlignmentConfig, resolution: int) -> EnergyBreakdown:
    """Regulariser parts; ``data`` is reported as 0."""
    by_id = _by_id(fields)
    cross = 0.0
    for (a, b), m in sorted(overlaps.items()):
        rows_a, cols_a = np.divmod(m.pixels, resolution)
        sa, oa = by_id[a].evaluate_at(rows_a, cols_a, resolution)
        sb, ob = by_id[b].evaluate_at(m.rows_b, m.cols_b, m.resolution_b)
        cross += float(np.sum(np.square(sa - sb)) + np.sum(np.square(oa - ob)))
    scale = sum(float(np.sum(np.square(f.scales - 1.0))) for f in fields)
    mag = sum(
        float(np.sum(huber(f.scales, cfg.huber_eps)) + np.sum(huber(f.offsets, cfg.huber_eps))) for f in fields
    )
    grid = sum(_grid_sq_diffs(f.scales) + _grid_sq_diffs(f.offsets) for f in fields)
    return EnergyBreakdown.combine(0.0, cross, scale, mag, grid, cfg)


def total_energy(aligned, fields, overlaps, cfg: AlignmentConfig) -> EnergyBreakdown:
    resolution = aligned[0].resolution
    reg = reg_energy(fields, overlaps, cfg, resolution)
    return EnergyBreakdown.combine(
        data_energy(aligned, overlaps), reg.cross, reg.scale, reg.magnitude, reg.grid, cfg
    )


def _grid_difference_operator(n_ctrl: int) -> sp.csr_matrix:
    """Rows are differences of horizontally / vertically adjacent control points."""
    d1 = sp.diags([-np.ones(n_ctrl - 1), np.ones(n_ctrl - 1)], [0, 1], shape=(n_ctrl - 1, n_ctrl))
    eye = sp.identity(n_ctrl)
    return sp.vstack([sp.kron(d1, eye), sp.kron(eye, d1)]).tocsr()


class AlignmentProblem:
    """Sparse assembly of the alignment energy for a fixed set of raw face depths.

    The parameter vector stacks, per face in ``depths`` order, the ``G*G``
    scale control values followed by the ``G*G`` offset control values.
    """

    def __init__(self, depths: list[FaceDepth], frames: list[TangentFrame], cfg: AlignmentConfig, overlaps=None):
        cfg.validate()
        if len(depths) != len(frames):
            raise InputError(f"{len(depths)} depth maps for {len(frames)} frames")
        frame_ids = sorted(f.face_id for f in frames)
        if sorted(d.face_id for d in depths) != frame_ids:
            raise InputError("depth face ids do not match frame ids")
        res = {d.resolution for d in depths} | {f.resolution for f in frames}
        if len(res) != 1:
            raise InputError(f"faces and frames must share one resolution, got {sorted(res)}")
        for d in depths:
            if not d.valid.any():
                raise InputError(f"face {d.face_id} has no valid depth")

        self.cfg = cfg
        self.depths = list(depths)
        self.frames = list(frames)
        self.resolution = res.pop()
        self.grid_side = g = int(cfg.grid_side)
        self.n_ctrl = g * g
        self.slot = {d.face_id: k for k, d in enumerate(self.depths)}
        self.n_params = 2 * self.n_ctrl * len(self.depths)
        self.overlaps = pairwise_overlaps(frames) if overlaps is None else overlaps
        self._assemble()

    def _s_cols(self, face_id: int) -> int:
        return 2 * self.n_ctrl * self.slot[face_id]

    def _assemble(self):
        r, nc, n = self.resolution, self.n_ctrl, self.n_params
        rows, cols = np.meshgrid(np.arange(r), np.arange(r), indexing="ij")
        pix_interp = _interp_matrix(rows, cols, r, self.grid_side)  # (R*R, G*G)
        by_id = _by_id(self.depths)

        data_blocks, cross_blocks = [], []
        for (a, b), m in sorted(self.overlaps.items()):
            da, db = by_id[a], by_id[b]
            idx, w = m.stencil
            w = w * db.valid.ravel()[idx]
            wsum = w.sum(axis=1)
            keep = da.valid.ravel()[m.pixels] & (wsum > 0)
            w = w[keep] / wsum[keep, None]
            idx = idx[keep]
            pix = m.pixels[keep]
            k = pix.size
            # face a: s_a(p) D_a(p) + o_a(p)
            ma = pix_interp[pix]
            # face b: sum_q w_q (s_b(q) D_b(q) + o_b(q))
            stencil = sp.csr_matrix(
                (w.ravel(), (np.repeat(np.arange(k), 4), idx.ravel())), shape=(k, r * r)
            )
            mb_o = stencil @ pix_interp
            mb_s = stencil @ sp.diags(db.depth.ravel()) @ pix_interp
            ma_s = sp.diags(da.depth.ravel()[pix]) @ ma
            data_blocks.append(self._place(k, [(a, 0, ma_s), (a, nc, ma), (b, 0, -mb_s), (b, nc, -mb_o)]))

            # field consistency uses all overlap pixels, validity aside
            rows_a, cols_a = np.divmod(m.pixels, r)
            fa = _interp_matrix(rows_a, cols_a, r, self.grid_side)
            fb = _interp_matrix(m.rows_b, m.cols_b, r, self.grid_side)
            kk = m.pixels.size
            cross_blocks.append(self._place(kk, [(a, 0, fa), (b, 0, -fb)]))
            cross_blocks.append(self._place(kk, [(a, nc, fa), (b, nc, -fb)]))

        empty = sp.csr_matrix((0, n))
        self.A_data = sp.vstack(data_blocks).tocsr() if data_blocks else empty
        self.A_cross = sp.vstack(cross_blocks).tocsr() if cross_blocks else empty
        self.H_data = (self.A_data.T @ self.A_data).tocsr()
        self.H_cross = (self.A_cross.T @ self.A_cross).tocsr()

        lap = _grid_difference_operator(self.grid_side)
        self.A_grid = sp.block_diag([lap] * (2 * len(self.depths))).tocsr()
        self.H_grid = (self.A_grid.T @ self.A_grid).tocsr()
        is_scale = np.zeros(n, dtype=bool)
        for k in range(len(self.depths)):
            is_scale[2 * nc * k : 2 * nc * k + nc] = True
        self.is_scale = is_scale

    def _place(self, n_rows: int, parts) -> sp.csr_matrix:
        """Embed per-face column blocks into a full-width sparse matrix."""
        rows, cols, vals = [], [], []
        for face_id, offset, block in parts:
            coo = sp.coo_matrix(block)
            rows.append(coo.row)
            cols.append(coo.col + self._s_cols(face_id) + offset)
            vals.append(coo.data)
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_rows, self.n_params)
        )

    def identity_params(self) -> np.ndarray:
        return self.is_scale.astype(np.float64)

    def params_from_fields(self, fields: list[AffineField]) -> np.ndarray:
        theta = np.zeros(self.n_params)
        for f in fields:
            c0 = self._s_cols(f.face_id)
            theta[c0 : c0 + self.n_ctrl] = f.scales.ravel()
            theta[c0 + self.n_ctrl : c0 + 2 * self.n_ctrl] = f.offsets.ravel()
        return theta

    def fields_from_params(self, theta: np.ndarray) -> list[AffineField]:
        g, nc = self.grid_side, self.n_ctrl
        out = []
        for d in self.depths:
            c0 = self._s_cols(d.face_id)
            out.append(
                AffineField(d.face_id, theta[c0 : c0 + nc].reshape(g, g).copy(), theta[c0 + nc : c0 + 2 * nc].reshape(g, g).copy())
            )
        return out

    def evaluate(self, theta: np.ndarray, with_grad: bool = False):
        """Energy breakdown at ``theta`` and, optionally, its gradient."""
        cfg = self.cfg
        hd = self.H_data @ theta
        hc = self.H_cross @ theta
        hg = self.H_grid @ theta
        ds = theta[self.is_scale] - 1.0
        parts = EnergyBreakdown.combine(
            theta @ hd,
            theta @ hc,
            ds @ ds,
            np.sum(huber(theta, cfg.huber_eps)),
            theta @ hg,
            cfg,
        )
        if not with_grad:
            return parts
        grad = 2.0 * hd + 2.0 * cfg.lambda_cross * hc + 2.0 * cfg.lambda_grid * hg
        grad[self.is_scale] += 2.0 * cfg.lambda_scale * ds
        grad += cfg.lambda_mag * huber_grad(theta, cfg.huber_eps)
        return parts, grad

    def quadratic_hessian(self) -> sp.csc_matrix:
        """Hessian of every term except the Huber magnitude term."""
        cfg = self.cfg
        h = 2.0 * (self.H_data + cfg.lambda_cross * self.H_cross + cfg.lambda_grid * self.H_grid)
        return (h + sp.diags(2.0 * cfg.lambda_scale * self.is_scale)).tocsc()

    def majorizer(self, theta: np.ndarray) -> sp.csc_matrix:
        """Curvature of a quadratic upper bound of the energy that touches it at ``theta``.

        The quadratic terms contribute their exact Hessian; each Huber term is
        bounded by the parabola with curvature ``1 / max(|x|, huber_eps)``.
        """
        cfg = self.cfg
        w = cfg.lambda_mag / np.maximum(np.abs(theta), cfg.huber_eps)
        return (self.quadratic_hessian() + sp.diags(w)).tocsc()

    def preconditioner(self, theta: np.ndarray):
        """Solver for the factored majorizer at ``theta``; a tiny ridge keeps it definite."""
        h = self.majorizer(theta)
        diag = h.diagonal()
        ridge = 1e-12 * (float(diag.mean()) if diag.size else 1.0)
        return spla.splu((h + ridge * sp.identity(h.shape[0], format="csc")).tocsc()).solve


def optimize(
    depths: list[FaceDepth],
    frames: list[TangentFrame],
    cfg: AlignmentConfig | None = None,
    pano_width: int | None = None,
    problem: AlignmentProblem | None = None,
) -> AlignmentResult:
    """Descend the alignment energy from ``s = 1, o = 0`` with backtracking.

    The search direction is the gradient, optionally scaled by a preconditioner
    (``cfg.preconditioner``).  ``"majorizer"`` refactors, at every iterate, the
    curvature of a quadratic upper bound of the energy, so the initial unit
    step is a majorize-minimize step and always decreases the energy.
    ``"none"`` is plain gradient descent with Barzilai-Borwein step proposals.
    Each iteration starts from the proposed step and halves it, at most 30 times, until the total energy decreases.
    Stops after ``max_iters`` accepted steps, when no decreasing step exists,
    or when the relative decrease falls below ``tol``.
    """
    cfg = (cfg or AlignmentConfig()).validate()
    if problem is None:
        problem = AlignmentProblem(depths, frames, cfg)
    theta = problem.identity_params()
    cur, grad = problem.evaluate(theta, with_grad=True)
    if not (np.isfinite(cur.total) and np.all(np.isfinite(grad))):
        raise NonFiniteEnergyError("alignment energy is not finite at the identity fields")
    use_mm = cfg.preconditioner == "majorizer"
    trace = [cur]
    step = cfg.step_init
    converged = False
    iterations = 0
    while iterations < cfg.max_iters:
        direction = problem.preconditioner(theta)(grad) if use_mm else grad
        t = step
        for _ in range(31):
            cand = theta - t * direction
            nxt, nxt_grad = problem.evaluate(cand, with_grad=True)
            if nxt.total < cur.total:
                break
            t *= 0.5
        else:
            converged = True
            break
        if not (np.isfinite(nxt.total) and np.all(np.isfinite(nxt_grad))):
            raise NonFiniteEnergyError("alignment energy became non-finite")
        iterations += 1
        if not use_mm:
            s_vec = cand - theta
            sy = float(s_vec @ (nxt_grad - grad))
            step = float(s_vec @ s_vec) / sy if sy > 0 else 2.0 * t
        rel = (cur.total - nxt.total) / max(abs(cur.total), np.finfo(float).tiny)
        theta, grad, cur = cand, nxt_grad, nxt
        trace.append(cur)
        if rel < cfg.tol:
            converged = True
            break
    log.info("alignment stopped after %d iterations, total energy %.6g", iterations, cur.total)

    fields = problem.fields_from_params(theta)
    aligned = [apply_affine(d, f) for d, f in zip(problem.depths, fields)]
    width = pano_width or 4 * problem.resolution
    fused = fuse_faces(aligned, problem.frames, width // 2, cfg.fuse_power)
    return AlignmentResult(fields, aligned, fused, trace, cfg, converged, iterations)


def fuse_rasters(rasters, valids, frames: list[TangentFrame], height: int, power: float = 4.0) -> EquirectImage:
    """Blend face rasters onto an equirect grid with ``max(0, d . center)^power`` weights."""
    width = 2 * height
    dirs = equirect_directions(width, height)
    first = np.asarray(rasters[0])
    shape = (height, width) + first.shape[2:]
    acc = np.zeros(shape)
    wacc = np.zeros((height, width))
    for raster, valid, frame in zip(rasters, valids, frames):
        x, y, front = frame.project(dirs)
        t = frame.half_extent
        inside = front & (np.abs(x) < t) & (np.abs(y) < t)
        if not inside.any():
            continue
        rows, cols = frame.plane_to_pixel(x[inside], y[inside])
        vals, ok = sample_face(np.asarray(raster, dtype=np.float64), valid, rows, cols)
        w = np.maximum(0.0, dirs[inside] @ frame.center) ** power * ok
        if vals.ndim == 1:
            acc[inside] += w * np.nan_to_num(vals)
        else:
            acc[inside] += w[:, None] * np.nan_to_num(vals)
        wacc[inside] += w
    covered = wacc > 0
    safe = np.where(covered, wacc, 1.0)
    out = acc / (safe if acc.ndim == 2 else safe[..., None])
    return EquirectImage(out, covered)


def fuse_faces(aligned: list[FaceDepth], frames: list[TangentFrame], height: int, power: float = 4.0) -> EquirectImage:
    by_id = _by_id(aligned)
    missing = [f.face_id for f in frames if f.face_id not in by_id]
    if missing:
        raise InputError(f"no aligned depth for faces {missing}")
    ordered = [by_id[f.face_id] for f in frames]
    return fuse_rasters([d.depth for d in ordered], [d.valid for d in ordered], frames, height, power)
