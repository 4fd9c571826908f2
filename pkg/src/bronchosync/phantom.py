"""Synthetic branching-tube phantoms standing in for a chest CT scan.

A phantom spec is a list of cylindrical branches forming a tree. Rasterizing
it yields a density volume (air inside the tubes, tissue outside) and a
binary airway mask. Voxel (i, j, k) is centered at (i*sx, j*sy, k*sz) mm.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .config import PhantomConfig
from .errors import PhantomSpecError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

STRUCT_26 = np.ones((3, 3, 3), dtype=bool)


@dataclass(frozen=True)
class VoxelVolume:
    """Scalar density grid with isotropic-or-not voxel spacing in mm."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    data: np.ndarray  # shape == dims, float32

    def __post_init__(self):
        if any(d <= 0 for d in self.dims):
            raise PhantomSpecError(f"non-positive dims {self.dims}")
        if any(s <= 0 for s in self.spacing):
            raise PhantomSpecError(f"non-positive spacing {self.spacing}")
        if self.data.shape != self.dims:
            raise PhantomSpecError("data shape does not match dims")


@dataclass(frozen=True)
class AirwayMask:
    """Binary airway occupancy on the same grid as its source volume."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    occupancy: np.ndarray  # shape == dims, bool

    def __post_init__(self):
        if self.occupancy.shape != self.dims:
            raise PhantomSpecError("occupancy shape does not match dims")

    def component_count(self) -> int:
        _, n = ndimage.label(self.occupancy, structure=STRUCT_26)
        return n

    def foreground_volume_mm3(self) -> float:
        return float(self.occupancy.sum()) * float(np.prod(self.spacing))


@dataclass
class Branch:
    name: str
    direction: np.ndarray       # unit
    length_mm: float
    radius_mm: float
    start_mm: np.ndarray | None = None  # derived from parent end when omitted
    children: list[str] = field(default_factory=list)

    @property
    def end_mm(self) -> np.ndarray:
        return self.start_mm + self.direction * self.length_mm


@dataclass
class PhantomSpec:
    branches: dict[str, Branch]
    root: str
    spacing: tuple[float, float, float]
    dims: tuple[int, int, int] | None = None  # derived when omitted

    @classmethod
    def from_dict(cls, doc: dict) -> "PhantomSpec":
        raw = list(doc.get("branches", []))
        if not raw:
            raise PhantomSpecError("empty phantom")
        # children may be inline tables (nested) or names (flat); normalize
        # to the flat form first
        flat: list[dict] = []
        queue = [dict(b) for b in raw]
        counter = 0

        def _named(entry: dict) -> dict:
            nonlocal counter
            if "name" not in entry:
                entry["name"] = f"branch{counter}"
            counter += 1
            return entry

        queue = [_named(b) for b in queue]
        while queue:
            b = queue.pop(0)
            child_names = []
            for c in b.get("children", []):
                if isinstance(c, dict):
                    c = _named(dict(c))
                    child_names.append(c["name"])
                    queue.append(c)
                else:
                    child_names.append(c)
            b["children"] = child_names
            flat.append(b)
        raw = flat
        branches: dict[str, Branch] = {}
        for i, b in enumerate(raw):
            name = b["name"]
            if name in branches:
                raise PhantomSpecError(f"duplicate branch name {name!r}")
            try:
                direction = np.asarray(b["dir"], dtype=float)
                length = float(b["length_mm"])
                radius = float(b["radius_mm"])
            except KeyError as e:
                raise PhantomSpecError(f"branch {name!r} missing field {e}") from None
            if length <= 0 or radius <= 0:
                raise PhantomSpecError(f"branch {name!r} needs positive length and radius")
            n = np.linalg.norm(direction)
            if n == 0:
                raise PhantomSpecError(f"branch {name!r} has zero direction")
            start = np.asarray(b["start_mm"], dtype=float) if "start_mm" in b else None
            branches[name] = Branch(
                name=name,
                direction=direction / n,
                length_mm=length,
                radius_mm=radius,
                start_mm=start,
                children=list(b.get("children", [])),
            )
        grid = doc.get("grid", {})
        sp = grid.get("spacing_mm", 1.0)
        spacing = tuple(float(s) for s in (sp if isinstance(sp, (list, tuple)) else (sp,) * 3))
        dims = tuple(int(d) for d in grid["dims"]) if "dims" in grid else None
        spec = cls(branches=branches, root=raw[0].get("name", "branch0"),
                   spacing=spacing, dims=dims)
        spec._resolve_starts()
        return spec

    @classmethod
    def from_toml(cls, path) -> "PhantomSpec":
        with open(path, "rb") as f:
            return cls.from_dict(tomllib.load(f))

    def _resolve_starts(self):
        root = self.branches[self.root]
        if root.start_mm is None:
            raise PhantomSpecError(f"root branch {self.root!r} needs start_mm")
        seen = set()
        stack = [self.root]
        while stack:
            name = stack.pop()
            if name in seen:
                raise PhantomSpecError(f"branch {name!r} reachable twice (cycle?)")
            seen.add(name)
            b = self.branches[name]
            for child in b.children:
                if child not in self.branches:
                    raise PhantomSpecError(f"unknown child branch {child!r}")
                c = self.branches[child]
                if c.start_mm is None:
                    c.start_mm = b.end_mm.copy()
                stack.append(child)
        orphans = set(self.branches) - seen
        if orphans:
            raise PhantomSpecError(f"branches unreachable from root: {sorted(orphans)}")


def _derived_grid(spec: PhantomSpec, margin_mm: float):
    los = []
    his = []
    for b in spec.branches.values():
        r = b.radius_mm + margin_mm
        los.append(np.minimum(b.start_mm, b.end_mm) - r)
        his.append(np.maximum(b.start_mm, b.end_mm) + r)
    lo = np.min(los, axis=0)
    hi = np.max(his, axis=0)
    if np.any(lo < 0):
        # keep the grid origin at 0; shift the phantom instead
        shift = np.maximum(0.0, -lo)
        for b in spec.branches.values():
            b.start_mm = b.start_mm + shift
        hi = hi + shift
    sp = np.asarray(spec.spacing)
    dims = tuple(int(np.ceil(h / s)) + 1 for h, s in zip(hi, sp))
    return dims


def build_phantom(
    spec: PhantomSpec, config: PhantomConfig = PhantomConfig()
) -> tuple[VoxelVolume, AirwayMask]:
    """Rasterize the tube system into a density volume and airway mask."""
    if not spec.branches:
        raise PhantomSpecError("empty phantom")
    dims = spec.dims or _derived_grid(spec, config.margin_mm)
    sp = np.asarray(spec.spacing, dtype=float)
    extent = (np.asarray(dims) - 1) * sp
    occ = np.zeros(dims, dtype=bool)

    for b in spec.branches.values():
        a, e, r = b.start_mm, b.end_mm, b.radius_mm
        lo = np.minimum(a, e) - r
        hi = np.maximum(a, e) + r
        if np.any(lo < -0.5 * sp) or np.any(hi > extent + 0.5 * sp):
            raise PhantomSpecError(
                f"branch {b.name!r} exits grid bounds (extent {extent} mm)"
            )
        i0 = np.maximum(0, np.floor(lo / sp).astype(int))
        i1 = np.minimum(np.asarray(dims) - 1, np.ceil(hi / sp).astype(int))
        grids = np.meshgrid(
            *[np.arange(i0[k], i1[k] + 1) for k in range(3)], indexing="ij"
        )
        pts = np.stack([g * sp[k] for k, g in enumerate(grids)], axis=-1)
        # flat-ended cylinder: axial coordinate within [0, L], radial within r
        ab = e - a
        denom = float(np.dot(ab, ab))
        t = np.einsum("...k,k->...", pts - a, ab) / denom
        closest = a + np.clip(t, 0.0, 1.0)[..., None] * ab
        d2 = np.sum((pts - closest) ** 2, axis=-1)
        inside = (t >= 0.0) & (t <= 1.0) & (d2 <= r * r)
        if b.name != spec.root:
            # fill the junction wedge where an angled child meets its parent
            inside |= np.sum((pts - a) ** 2, axis=-1) <= r * r
        sub = occ[i0[0]:i1[0] + 1, i0[1]:i1[1] + 1, i0[2]:i1[2] + 1]
        sub |= inside

    volume = np.full(dims, config.tissue_value, dtype=np.float32)
    volume[occ] = config.air_value
    spacing = tuple(float(s) for s in sp)
    return (
        VoxelVolume(dims=tuple(dims), spacing=spacing, data=volume),
        AirwayMask(dims=tuple(dims), spacing=spacing, occupancy=occ),
    )
