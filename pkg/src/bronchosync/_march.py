"""Numba ray-march kernel: sphere trace + fine march + bisection per ray."""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(inline="always", cache=True)
def _trilinear(vol, x, y, z):
    nx, ny, nz = vol.shape
    if x < 0.0 or y < 0.0 or z < 0.0 or x > nx - 1 or y > ny - 1 or z > nz - 1:
        # outside the grid counts as wall/background
        if x < -1.0 or y < -1.0 or z < -1.0 or x > nx or y > ny or z > nz:
            return 0.0
        # within one voxel of the border: clamp-blend toward zero
    i = int(np.floor(x))
    j = int(np.floor(y))
    k = int(np.floor(z))
    fx = x - i
    fy = y - j
    fz = z - k
    acc = 0.0
    for dx in range(2):
        wx = fx if dx == 1 else 1.0 - fx
        ii = i + dx
        if ii < 0 or ii >= nx:
            continue
        for dy in range(2):
            wy = fy if dy == 1 else 1.0 - fy
            jj = j + dy
            if jj < 0 or jj >= ny:
                continue
            for dz in range(2):
                wz = fz if dz == 1 else 1.0 - fz
                kk = k + dz
                if kk < 0 or kk >= nz:
                    continue
                acc += wx * wy * wz * vol[ii, jj, kk]
    return acc


@njit(parallel=True, cache=True)
def march_rays(occ, dtf, spacing, origins, dirs, max_t, fine_dt, safety, bisect_iters):
    n = origins.shape[0]
    out = np.empty(n, dtype=np.float64)
    sx, sy, sz = spacing[0], spacing[1], spacing[2]
    for r in prange(n):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        t = 0.0
        # sphere trace on the distance transform
        for _ in range(200):
            px = (ox + t * dx) / sx
            py = (oy + t * dy) / sy
            pz = (oz + t * dz) / sz
            safe = _trilinear(dtf, px, py, pz) - safety
            if safe <= 0.3 or t >= max_t:
                break
            t += safe
        if t > max_t:
            t = max_t
        # fixed-step march through the remaining band
        t_lo = t
        t_hi = max_t
        hit = False
        while t < max_t:
            tn = t + fine_dt
            if tn > max_t:
                tn = max_t
            px = (ox + tn * dx) / sx
            py = (oy + tn * dy) / sy
            pz = (oz + tn * dz) / sz
            if _trilinear(occ, px, py, pz) < 0.5:
                t_lo = t
                t_hi = tn
                hit = True
                break
            t = tn
            if tn >= max_t:
                break
        if not hit:
            out[r] = max_t
            continue
        # bisection refine against the interpolated occupancy
        lo = t_lo
        hi = t_hi
        for _ in range(bisect_iters):
            mid = 0.5 * (lo + hi)
            px = (ox + mid * dx) / sx
            py = (oy + mid * dy) / sy
            pz = (oz + mid * dz) / sz
            if _trilinear(occ, px, py, pz) >= 0.5:
                lo = mid
            else:
                hi = mid
        out[r] = 0.5 * (lo + hi)
    return out
