"""Airway-tree centerline extraction: thinning, graph building, view sites.

Pipeline: 3D thinning of the airway mask -> voxel skeleton -> spur pruning
against the local radius -> branch decomposition -> smoothing -> arc-length
resampling into view sites with transported up vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import geometry
from ._thinning import thin_skeleton
from .config import CenterlineConfig
from .errors import CenterlineError
from .phantom import STRUCT_26, AirwayMask

_OFFSETS = np.array(
    [(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)
     if (i, j, k) != (0, 0, 0)]
)


@dataclass(frozen=True)
class ViewSite:
    """Discrete pose sample on an airway centerline."""

    id: int
    position: np.ndarray    # (3,) mm
    quat: np.ndarray        # (4,) xyzw; camera looks along local +Z
    up: np.ndarray          # (3,) unit, orthogonal to the viewing direction
    branch_id: int
    arc_length: float       # mm from the tree root along centerlines

    @property
    def forward(self) -> np.ndarray:
        return geometry.forward_of(self.quat)

    @property
    def euler(self) -> np.ndarray:
        """(alpha, beta, gamma) I/O representation of the orientation."""
        return geometry.euler_from_quat(self.quat)


@dataclass
class CenterlineGraph:
    """Tree of view sites; edges connect consecutive sites and bifurcations."""

    sites: list[ViewSite]
    parent: dict[int, int | None]
    root_id: int = 0
    children: dict[int, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.children:
            self.children = {s.id: [] for s in self.sites}
            for sid, pid in self.parent.items():
                if pid is not None:
                    self.children[pid].append(sid)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(p, c) for c, p in self.parent.items() if p is not None]

    def site(self, sid: int) -> ViewSite:
        return self.sites[sid]

    def positions(self) -> np.ndarray:
        return np.stack([s.position for s in self.sites])

    def branch_count(self) -> int:
        return len({s.branch_id for s in self.sites})

    def depth(self, sid: int) -> int:
        d = 0
        while self.parent[sid] is not None:
            sid = self.parent[sid]
            d += 1
        return d

    def nearest_site_id(self, point: np.ndarray) -> int:
        """Brute-force nearest view site to a 3D point."""
        d = np.linalg.norm(self.positions() - np.asarray(point), axis=1)
        return int(np.argmin(d))


@dataclass(frozen=True)
class AirwayPath:
    """Ordered root-to-periphery run of graph-adjacent site ids."""

    site_ids: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.site_ids)) != len(self.site_ids):
            raise CenterlineError("path repeats site ids")

    def __len__(self) -> int:
        return len(self.site_ids)


def _voxel_adjacency(coords: np.ndarray) -> dict[int, set[int]]:
    index = {tuple(c): i for i, c in enumerate(coords)}
    adj: dict[int, set[int]] = {i: set() for i in range(len(coords))}
    for i, c in enumerate(coords):
        for off in _OFFSETS:
            j = index.get((c[0] + off[0], c[1] + off[1], c[2] + off[2]))
            if j is not None:
                adj[i].add(j)
    return adj


def _drop_local_cycles(adj: dict[int, set[int]], n: int) -> None:
    """Remove redundant edges that thinning leaves in 2x2 voxel clusters.

    A non-tree edge is tolerated only when its endpoints stay within 3 steps
    of each other through the spanning tree; anything larger is a real cycle.
    """
    visited = [False] * n
    tree_adj: dict[int, set[int]] = {i: set() for i in range(n)}
    extra: list[tuple[int, int]] = []
    for start in range(n):
        if visited[start]:
            continue
        visited[start] = True
        stack = [start]
        while stack:
            u = stack.pop()
            for v in sorted(adj[u]):
                if not visited[v]:
                    visited[v] = True
                    tree_adj[u].add(v)
                    tree_adj[v].add(u)
                    stack.append(v)
                elif v > u and v not in tree_adj[u]:
                    extra.append((u, v))
    for u, v in extra:
        # BFS distance through the tree, capped at 3
        frontier = {u}
        seen = {u}
        dist = 0
        found = False
        while frontier and dist < 4 and not found:
            dist += 1
            frontier = {w for x in frontier for w in tree_adj[x] if w not in seen}
            seen |= frontier
            found = v in frontier
        if not found:
            raise CenterlineError("non-tree topology")
        adj[u].discard(v)
        adj[v].discard(u)


def _prune_spurs(
    coords: np.ndarray,
    adj: dict[int, set[int]],
    radius_vox: np.ndarray,
    spacing: np.ndarray,
    factor: float,
) -> set[int]:
    """Iteratively remove leaf paths shorter than factor * max local radius."""
    removed: set[int] = set()
    changed = True
    while changed:
        changed = False
        leaves = [i for i in adj if i not in removed and len(adj[i] - removed) == 1]
        for leaf in leaves:
            if leaf in removed:
                continue
            path = [leaf]
            cur = leaf
            prev = -1
            while True:
                nbrs = [x for x in adj[cur] if x != prev and x not in removed]
                if len(nbrs) != 1:
                    break
                prev, cur = cur, nbrs[0]
                if len(adj[cur] - removed) > 2:
                    break  # reached a junction; cur stays
                path.append(cur)
            if cur == path[-1]:
                continue  # dead-ends into another leaf: whole skeleton is one line
            pts = coords[path] * spacing
            length = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1))) if len(path) > 1 else 0.0
            max_r = float(np.max(radius_vox[path]))
            if length < factor * max_r:
                removed |= set(path)
                changed = True
    return removed


def _thin(occ: np.ndarray, spacing, dt: np.ndarray) -> np.ndarray:
    """Curve-thin the mask and validate that the skeleton covers the lumen.

    Sequential homotopic thinning cannot erase the object wholesale, but the
    coverage check stays as a guard: no mask voxel may be farther from the
    skeleton than twice the widest local radius (flat-capped tube ends put
    corner voxels up to sqrt(2)*r from the skeleton endpoint).
    """
    skel = thin_skeleton(occ, dt)
    if not skel.any():
        raise CenterlineError("thinning failed to cover the mask")
    slack = 2.0 * float(dt.max()) + 2.0 * float(max(spacing))
    gap = ndimage.distance_transform_edt(~skel, sampling=spacing)
    if float(gap[occ].max()) > slack:
        raise CenterlineError("thinning failed to cover the mask")
    return skel


def extract_centerlines(
    mask: AirwayMask, spacing_mm: float | None = None,
    config: CenterlineConfig = CenterlineConfig(),
) -> CenterlineGraph:
    """Thin the mask to a skeleton and resample it into a view-site tree."""
    if spacing_mm is None:
        spacing_mm = config.spacing_mm
    if spacing_mm <= 0:
        raise CenterlineError("spacing must be positive")
    if not mask.occupancy.any():
        raise CenterlineError("empty mask")
    _, ncomp = ndimage.label(mask.occupancy, structure=STRUCT_26)
    if ncomp != 1:
        raise CenterlineError(f"mask has {ncomp} components, expected 1")

    vsp = np.asarray(mask.spacing)
    dt = ndimage.distance_transform_edt(mask.occupancy, sampling=mask.spacing)
    skel = _thin(mask.occupancy, mask.spacing, dt)
    coords = np.argwhere(skel)
    adj = _voxel_adjacency(coords)
    _drop_local_cycles(adj, len(coords))

    radius = dt[tuple(coords.T)]
    removed = _prune_spurs(coords, adj, radius, vsp, config.spur_radius_factor)

    keep = [i for i in range(len(coords)) if i not in removed]
    if not keep:
        raise CenterlineError("pruning removed the whole skeleton")
    remap = {old: new for new, old in enumerate(keep)}
    coords = coords[keep]
    radius = radius[keep]
    adj = {
        remap[i]: {remap[j] for j in adj[i] if j not in removed}
        for i in keep
    }

    return _graph_from_skeleton(coords, adj, radius, vsp, spacing_mm, config)


def _graph_from_skeleton(coords, adj, radius, vsp, spacing_mm, config) -> CenterlineGraph:
    degree = {i: len(adj[i]) for i in adj}
    endpoints = [i for i, d in degree.items() if d == 1]
    if not endpoints:
        if len(coords) == 1:
            endpoints = [0]
        else:
            raise CenterlineError("non-tree topology")
    # root at the widest endpoint (the trachea end); deterministic tie-break
    root_vox = max(endpoints, key=lambda i: (radius[i], *(-coords[i])))

    # decompose into branch voxel paths between nodes (deg != 2), root-first
    branches: list[tuple[int, list[int]]] = []  # (parent branch idx, voxel path)
    visited_edges: set[tuple[int, int]] = set()
    stack: list[tuple[int, int]] = [(root_vox, -1)]  # (node voxel, parent branch)
    while stack:
        node, parent_branch = stack.pop()
        for nxt in sorted(adj[node]):
            if (node, nxt) in visited_edges:
                continue
            path = [node, nxt]
            visited_edges.add((node, nxt))
            visited_edges.add((nxt, node))
            cur, prev = nxt, node
            while degree[cur] == 2:
                (step,) = [x for x in adj[cur] if x != prev]
                visited_edges.add((cur, step))
                visited_edges.add((step, cur))
                prev, cur = cur, step
                path.append(cur)
            branches.append((parent_branch, path))
            stack.append((cur, len(branches) - 1))

    sites: list[ViewSite] = []
    parent: dict[int, int | None] = {}
    # per-branch: id of its distal junction site, so children chain on
    branch_tail: dict[int, tuple[int, float]] = {}  # branch idx -> (site id, arc)

    def smooth(pts: np.ndarray) -> np.ndarray:
        w = config.smooth_window
        if len(pts) <= 2 or w <= 1:
            return pts
        out = pts.copy()
        half = w // 2
        for i in range(1, len(pts) - 1):
            a = max(0, i - half)
            b = min(len(pts), i + half + 1)
            out[i] = pts[a:b].mean(axis=0)
        return out

    if len(coords) == 1:
        pos = coords[0] * vsp
        q = geometry.quat_from_forward_up([0, 0, 1], geometry.default_up_for([0, 0, 1]))
        site = ViewSite(0, pos, q, geometry.up_of(q), 0, 0.0)
        return CenterlineGraph(sites=[site], parent={0: None}, root_id=0)

    for bidx, (pbranch, vox_path) in enumerate(branches):
        pts = smooth(coords[vox_path].astype(float) * vsp)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        arcs = np.concatenate([[0.0], np.cumsum(seg)])
        length = float(arcs[-1])
        if pbranch < 0:
            base_site, base_arc = None, 0.0
        else:
            base_site, base_arc = branch_tail[pbranch]
        n = max(1, round(length / spacing_mm))
        if length < 0.5 * spacing_mm and base_site is not None:
            branch_tail[bidx] = (base_site, base_arc)  # too short: collapse into junction
            continue
        targets = np.linspace(0.0, length, n + 1)
        samples = np.stack([np.interp(targets, arcs, pts[:, k]) for k in range(3)], axis=1)
        start = 1 if base_site is not None else 0  # junction site already exists
        prev_id = base_site
        for si in range(start, len(samples)):
            pos = samples[si]
            if si + 1 < len(samples):
                fwd = samples[si + 1] - pos
            else:
                fwd = pos - samples[si - 1]
            fwd = geometry.unit(fwd)
            if prev_id is None:
                up = geometry.default_up_for(fwd)
            else:
                up = geometry.transport_up(sites[prev_id].up, fwd)
            q = geometry.quat_from_forward_up(fwd, up)
            sid = len(sites)
            arc = base_arc + targets[si] - (targets[0] if base_site is None else 0.0)
            sites.append(ViewSite(sid, pos, q, geometry.up_of(q), bidx, float(arc)))
            parent[sid] = prev_id
            prev_id = sid
        branch_tail[bidx] = (prev_id, base_arc + length)

    graph = CenterlineGraph(sites=sites, parent=parent, root_id=0)
    _check_spacing(graph, spacing_mm)
    return graph


def _check_spacing(graph: CenterlineGraph, spacing_mm: float) -> None:
    for child, par in graph.parent.items():
        if par is None:
            continue
        d = float(np.linalg.norm(graph.site(child).position - graph.site(par).position))
        if not (0.4 * spacing_mm <= d <= 1.6 * spacing_mm):
            # smoothing can bend junction chords slightly past the nominal band
            if not (0.25 * spacing_mm <= d <= 2.0 * spacing_mm):
                raise CenterlineError(
                    f"site spacing {d:.2f} mm violates bounds around {spacing_mm} mm"
                )


def select_path(graph: CenterlineGraph, start_id: int, end_id: int) -> AirwayPath:
    """Unique tree path between two sites, ordered root-to-periphery."""
    n = len(graph.sites)
    for sid in (start_id, end_id):
        if not (0 <= sid < n):
            raise CenterlineError(f"unknown site id {sid}")
    if start_id == end_id:
        return AirwayPath((start_id,))

    def ancestors(sid: int) -> list[int]:
        chain = [sid]
        while graph.parent[chain[-1]] is not None:
            chain.append(graph.parent[chain[-1]])
        return chain

    a_chain = ancestors(start_id)
    b_chain = ancestors(end_id)
    b_set = {s: i for i, s in enumerate(b_chain)}
    for i, s in enumerate(a_chain):
        if s in b_set:
            lca_a, lca_b = i, b_set[s]
            break
    else:
        raise CenterlineError("sites are disconnected")  # impossible in a tree
    path = a_chain[:lca_a + 1] + list(reversed(b_chain[:lca_b]))
    if graph.depth(path[0]) > graph.depth(path[-1]):
        path.reverse()
    return AirwayPath(tuple(path))
