"""Sequential 3D homotopic thinning to a voxel curve skeleton.

Simple points are deleted one at a time in distance-transform order (outer
shells first), with curve endpoints preserved. Deleting points sequentially
re-tests every candidate against the *current* object, so the object can
never be annihilated wholesale the way parallel sub-iteration thinning can
on perfectly symmetric shapes: each deletion provably preserves homotopy,
and the survivors are exactly the non-simple points plus endpoints.

Simplicity uses the standard (26, 6) connectivity pair: a voxel is simple
iff its 26-neighborhood contains exactly one 26-connected object component
and the background of its 18-neighborhood contains exactly one 6-connected
component touching a face neighbor.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# 26-neighborhood offsets (all non-zero offsets in a 3x3x3 block)
_N26 = np.array(
    [(dx, dy, dz)
     for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
     if (dx, dy, dz) != (0, 0, 0)],
    dtype=np.int64,
)
# face (6-) neighbors, and the 18-neighborhood (faces + edges)
_N6 = np.array([o for o in _N26 if np.abs(o).sum() == 1], dtype=np.int64)
_N18 = np.array([o for o in _N26 if np.abs(o).sum() <= 2], dtype=np.int64)

# adjacency among the 26 neighborhood cells under 26-connectivity
_ADJ26 = np.zeros((26, 26), dtype=np.bool_)
for _i in range(26):
    for _j in range(26):
        if _i != _j and np.max(np.abs(_N26[_i] - _N26[_j])) <= 1:
            _ADJ26[_i, _j] = True

# adjacency among the 18 neighborhood cells under 6-connectivity
_ADJ6 = np.zeros((18, 18), dtype=np.bool_)
for _i in range(18):
    for _j in range(18):
        if _i != _j and np.abs(_N18[_i] - _N18[_j]).sum() == 1:
            _ADJ6[_i, _j] = True

# which entries of _N18 are face neighbors of the center
_IS_FACE = np.array([np.abs(o).sum() == 1 for o in _N18], dtype=np.bool_)


@njit(cache=True)
def _object_components_ok(occ, x, y, z, n26, adj26):
    """True when the object voxels of N26 form exactly one 26-component."""
    present = np.zeros(26, dtype=np.bool_)
    count = 0
    for i in range(26):
        if occ[x + n26[i, 0], y + n26[i, 1], z + n26[i, 2]]:
            present[i] = True
            count += 1
    if count == 0:
        return False
    # flood fill from the first present cell
    seen = np.zeros(26, dtype=np.bool_)
    stack = np.empty(26, dtype=np.int64)
    top = 0
    for i in range(26):
        if present[i]:
            stack[top] = i
            top += 1
            seen[i] = True
            break
    reached = 0
    while top > 0:
        top -= 1
        u = stack[top]
        reached += 1
        for v in range(26):
            if present[v] and not seen[v] and adj26[u, v]:
                seen[v] = True
                stack[top] = v
                top += 1
    return reached == count


@njit(cache=True)
def _background_components_ok(occ, x, y, z, n18, adj6, is_face):
    """True when background voxels of N18 form one 6-component with a face."""
    present = np.zeros(18, dtype=np.bool_)
    has_face_bg = False
    for i in range(18):
        if not occ[x + n18[i, 0], y + n18[i, 1], z + n18[i, 2]]:
            present[i] = True
            if is_face[i]:
                has_face_bg = True
    if not has_face_bg:
        return False
    # flood fill from any background face neighbor
    seen = np.zeros(18, dtype=np.bool_)
    stack = np.empty(18, dtype=np.int64)
    top = 0
    for i in range(18):
        if present[i] and is_face[i]:
            stack[top] = i
            top += 1
            seen[i] = True
            break
    while top > 0:
        top -= 1
        u = stack[top]
        for v in range(18):
            if present[v] and not seen[v] and adj6[u, v]:
                seen[v] = True
                stack[top] = v
                top += 1
    # every background face neighbor must be in that one component
    for i in range(18):
        if present[i] and is_face[i] and not seen[i]:
            return False
    return True


@njit(cache=True)
def _thin_pass(occ, order, coords, n26, n6, n18, adj26, adj6, is_face):
    """One sequential sweep in the given order; returns deletions made."""
    deleted = 0
    for k in range(order.shape[0]):
        idx = order[k]
        x, y, z = coords[idx, 0], coords[idx, 1], coords[idx, 2]
        if not occ[x, y, z]:
            continue
        # must be a border point (some background face neighbor)
        border = False
        for i in range(6):
            if not occ[x + n6[i, 0], y + n6[i, 1], z + n6[i, 2]]:
                border = True
                break
        if not border:
            continue
        # preserve curve endpoints (<= 1 object neighbor)
        nbrs = 0
        for i in range(26):
            if occ[x + n26[i, 0], y + n26[i, 1], z + n26[i, 2]]:
                nbrs += 1
        if nbrs <= 1:
            continue
        if not _object_components_ok(occ, x, y, z, n26, adj26):
            continue
        if not _background_components_ok(occ, x, y, z, n18, adj6, is_face):
            continue
        occ[x, y, z] = False
        deleted += 1
    return deleted


def thin_skeleton(occupancy: np.ndarray, distance: np.ndarray) -> np.ndarray:
    """Curve-skeletonize a binary volume; deterministic and homotopic.

    `distance` orders the peeling (ascending: outer shells first), which
    keeps the surviving curve near the medial axis.
    """
    occ = np.zeros(tuple(d + 2 for d in occupancy.shape), dtype=np.bool_)
    occ[1:-1, 1:-1, 1:-1] = occupancy
    coords = np.argwhere(occ)
    dvals = distance[tuple((coords - 1).T)]
    # peel by increasing wall distance; index tie-break keeps it deterministic
    order = np.lexsort((np.arange(len(coords)), dvals)).astype(np.int64)
    while True:
        deleted = _thin_pass(occ, order, coords, _N26, _N6, _N18,
                             _ADJ26, _ADJ6, _IS_FACE)
        if deleted == 0:
            break
    return occ[1:-1, 1:-1, 1:-1]
