"""Loop-based reference implementations used as oracles by the tests.

Nothing here calls into the package's interpolation or overlap code; the
geometry is rebuilt from the frame vectors alone.
"""

import math

import numpy as np


def brute_field(values, row, col, n):
    """Bilinear control-grid interpolation written out per pixel."""
    g = values.shape[0]
    if g == 1:
        return float(values[0, 0])
    u = min(max(row, 0.0), n - 1) * (g - 1) / (n - 1)
    v = min(max(col, 0.0), n - 1) * (g - 1) / (n - 1)
    i = min(int(math.floor(u)), g - 2)
    j = min(int(math.floor(v)), g - 2)
    fu, fv = u - i, v - j
    return float(
        (1 - fu) * (1 - fv) * values[i, j]
        + (1 - fu) * fv * values[i, j + 1]
        + fu * (1 - fv) * values[i + 1, j]
        + fu * fv * values[i + 1, j + 1]
    )


def brute_sample(raster, row, col, valid=None):
    """Clamped bilinear sample, renormalised over valid taps; ``None`` when no tap survives."""
    n = raster.shape[0]
    row = min(max(row, 0.0), n - 1)
    col = min(max(col, 0.0), n - 1)
    i = min(int(math.floor(row)), n - 2)
    j = min(int(math.floor(col)), n - 2)
    fr, fc = row - i, col - j
    taps = [
        (i, j, (1 - fr) * (1 - fc)),
        (i, j + 1, (1 - fr) * fc),
        (i + 1, j, fr * (1 - fc)),
        (i + 1, j + 1, fr * fc),
    ]
    num = den = 0.0
    for r, c, w in taps:
        if valid is None or valid[r, c]:
            num += w * raster[r, c]
            den += w
    if den <= 0:
        return None
    return num / den


def brute_pairs(fa, fb, n):
    """``(row, col, row_b, col_b)`` for every pixel of ``fa`` strictly inside ``fb``."""
    foc = n / (2 * math.tan(math.radians(fa.fov_deg / 2)))
    t = math.tan(math.radians(fb.fov_deg / 2))
    out = []
    for row in range(n):
        for col in range(n):
            x = (col + 0.5 - n / 2) / foc
            y = -(row + 0.5 - n / 2) / foc
            d = fa.center + x * fa.right + y * fa.up
            d = d / np.linalg.norm(d)
            z = d @ fb.center
            if z <= 0:
                continue
            xb, yb = d @ fb.right / z, d @ fb.up / z
            if abs(xb) < t and abs(yb) < t:
                out.append((row, col, -yb * foc + n / 2 - 0.5, xb * foc + n / 2 - 0.5))
    return out


def all_pairs(frames, n):
    fs = sorted(frames, key=lambda f: f.face_id)
    return {(a.face_id, b.face_id): brute_pairs(a, b, n) for i, a in enumerate(fs) for b in fs[i + 1 :]}


def brute_aligned(depth, field):
    n = depth.shape[0]
    out = np.empty_like(depth)
    for r in range(n):
        for c in range(n):
            out[r, c] = brute_field(field.scales, r, c, n) * depth[r, c] + brute_field(field.offsets, r, c, n)
    return out


def brute_data(depths, valids, fields, pairs):
    """Sum of squared aligned-depth disagreements over overlap pixels."""
    fd = {f.face_id: f for f in fields}
    aligned = {k: brute_aligned(depths[k], fd[k]) for k in depths}
    total = 0.0
    for (a, b), plist in sorted(pairs.items()):
        for row, col, rb, cb in plist:
            if not valids[a][row, col]:
                continue
            vb = brute_sample(aligned[b], rb, cb, valids[b])
            if vb is None:
                continue
            total += (aligned[a][row, col] - vb) ** 2
    return total


def _huber(v, eps):
    av = abs(v)
    return v * v / (2 * eps) if av <= eps else av - eps / 2


def brute_reg(fields, pairs, n, eps):
    """``(cross, scale, magnitude, grid)`` by explicit loops."""
    fd = {f.face_id: f for f in fields}
    cross = 0.0
    for (a, b), plist in sorted(pairs.items()):
        for row, col, rb, cb in plist:
            cross += (brute_field(fd[a].scales, row, col, n) - brute_field(fd[b].scales, rb, cb, n)) ** 2
            cross += (brute_field(fd[a].offsets, row, col, n) - brute_field(fd[b].offsets, rb, cb, n)) ** 2
    scale = mag = grid = 0.0
    for f in fields:
        for v in f.scales.ravel():
            scale += (v - 1.0) ** 2
        for g in (f.scales, f.offsets):
            k = g.shape[0]
            for i in range(k):
                for j in range(k):
                    mag += _huber(g[i, j], eps)
                    if i + 1 < k:
                        grid += (g[i + 1, j] - g[i, j]) ** 2
                    if j + 1 < k:
                        grid += (g[i, j + 1] - g[i, j]) ** 2
    return cross, scale, mag, grid
