"""Endoluminal rendering: ray casting the airway mask from a camera pose.

The wall surface is the 0.5 level set of the trilinearly interpolated
occupancy. Rays march at sub-voxel steps and refine hits by bisection, so
identical inputs give bit-identical depth maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.ndimage import map_coordinates

from . import geometry
from .config import CameraConfig
from .errors import RenderError
from .phantom import AirwayMask


@dataclass(frozen=True)
class DepthFrame:
    """Per-pixel distance to the airway wall plus diffuse shading."""

    width: int
    height: int
    depth: np.ndarray   # (H, W) mm, float32
    shade: np.ndarray   # (H, W) in [0, 1], float32

    def __post_init__(self):
        if not np.all(np.isfinite(self.depth)) or np.any(self.depth < 0):
            raise RenderError("depth map must be finite and non-negative")


def ray_directions(quat: np.ndarray, width: int, height: int, fov_deg: float) -> np.ndarray:
    """(H, W, 3) unit world-space ray directions for a pinhole camera."""
    r, u, f = (geometry.right_of(quat), geometry.up_of(quat), geometry.forward_of(quat))
    half = np.tan(np.radians(fov_deg) / 2.0)
    xs = (2.0 * (np.arange(width) + 0.5) / width - 1.0) * half
    ys = (2.0 * (np.arange(height) + 0.5) / height - 1.0) * half * (height / width)
    dirs = (
        f[None, None, :]
        + xs[None, :, None] * r[None, None, :]
        - ys[:, None, None] * u[None, None, :]
    )
    return dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)


class LumenRenderer:
    """Casts rays against one airway mask; immutable, safe to share."""

    def __init__(self, mask: AirwayMask, camera: CameraConfig = CameraConfig()):
        self.mask = mask
        self.camera = camera
        self._occ = mask.occupancy.astype(np.float32)
        self._spacing = np.asarray(mask.spacing, dtype=float)

    def _dt_sample(self, points_mm: np.ndarray) -> np.ndarray:
        if not hasattr(self, "_dt"):
            from scipy.ndimage import distance_transform_edt
            self._dt = distance_transform_edt(self.mask.occupancy, sampling=self.mask.spacing)
        coords = (points_mm / self._spacing).T
        return map_coordinates(self._dt, coords, order=1, mode="grid-constant", cval=0.0)

    def _sample(self, points_mm: np.ndarray) -> np.ndarray:
        coords = (points_mm / self._spacing).T
        return map_coordinates(self._occ, coords, order=1, mode="grid-constant", cval=0.0)

    def inside(self, position: np.ndarray) -> bool:
        return bool(self._sample(np.asarray(position, dtype=float)[None]) [0] >= 0.5)

    def local_radius(self, position: np.ndarray) -> float:
        """Distance-to-wall at a point, for jitter clamping."""
        return float(self._dt_sample(np.asarray(position, dtype=float)[None])[0])

    def cast_rays(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """March arbitrary rays to the wall; returns hit distances (n,) mm."""
        from ._march import march_rays
        cam = self.camera
        min_sp = float(self._spacing.min())
        if not hasattr(self, "_dt"):
            self._dt_sample(origins[:1])  # build the distance field
        if not hasattr(self, "_dt32"):
            self._dt32 = self._dt.astype(np.float32)
        return march_rays(
            self._occ,
            self._dt32,
            self._spacing,
            np.ascontiguousarray(origins, dtype=np.float64),
            np.ascontiguousarray(dirs, dtype=np.float64),
            cam.max_depth_mm,
            cam.step_voxels * min_sp,
            0.9 * min_sp,
            cam.bisect_iters,
        )

    def cast(
        self, position: np.ndarray, quat: np.ndarray,
        width: int | None = None, height: int | None = None,
        fov_deg: float | None = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Ray-cast one pose; returns (depth (H,W) mm, hit points (H,W,3) mm)."""
        depths, hits = self.cast_batch(
            np.asarray(position, dtype=float)[None],
            np.asarray(quat, dtype=float)[None],
            width, height, fov_deg,
        )
        return depths[0], hits[0]

    def cast_batch(
        self, positions: np.ndarray, quats: np.ndarray,
        width: int | None = None, height: int | None = None,
        fov_deg: float | None = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Ray-cast many poses at once; returns (B,H,W) depths and (B,H,W,3) hits."""
        cam = self.camera
        width = width or cam.width
        height = height or cam.height
        fov = fov_deg if fov_deg is not None else cam.fov_deg
        if not (20.0 < fov < 120.0):
            raise RenderError(f"fov {fov} deg outside (20, 120)")
        b = positions.shape[0]
        vals = self._sample(positions)
        bad = np.nonzero(vals < 0.5)[0]
        if bad.size:
            raise RenderError(f"camera outside airway (pose {int(bad[0])})")
        dirs = np.stack([
            ray_directions(quats[i], width, height, fov).reshape(-1, 3) for i in range(b)
        ]).reshape(-1, 3)
        origins = np.repeat(positions, width * height, axis=0)
        t_hit = self.cast_rays(origins, dirs)
        depth = t_hit.reshape(b, height, width).astype(np.float32)
        hits = (origins + t_hit[:, None] * dirs).reshape(b, height, width, 3)
        return depth, hits.astype(np.float32)

    def render(
        self, position: np.ndarray, quat: np.ndarray,
        width: int | None = None, height: int | None = None,
        fov_deg: float | None = None,
    ) -> DepthFrame:
        cam = self.camera
        width = width or cam.width
        height = height or cam.height
        depth, _ = self.cast(position, quat, width, height, fov_deg)
        shade = shade_from_depth(depth, fov_deg if fov_deg is not None else cam.fov_deg)
        return DepthFrame(width=width, height=height, depth=depth, shade=shade)


def render_vb(
    renderer: LumenRenderer, site, fov_deg: float | None = None,
    width: int | None = None, height: int | None = None,
) -> DepthFrame:
    """Virtual-bronchoscope view at a view site (anything with position/quat)."""
    position = np.asarray(site.position, dtype=float)
    if not renderer.inside(position):
        raise RenderError("camera outside airway")
    return renderer.render(position, np.asarray(site.quat, dtype=float),
                           width, height, fov_deg)


def shade_from_depth(depth: np.ndarray, fov_deg: float, falloff_mm: float = 25.0) -> np.ndarray:
    """Diffuse cosine shading from image-space depth gradients + headlight falloff."""
    h, w = depth.shape
    gy, gx = np.gradient(depth.astype(np.float64))
    # metric size of one pixel at each hit depth
    px = np.maximum(depth, 1e-3) * (2.0 * np.tan(np.radians(fov_deg) / 2.0) / w)
    nz = 1.0 / np.sqrt(1.0 + (gx / px) ** 2 + (gy / px) ** 2)
    attn = 1.0 / (1.0 + (depth / falloff_mm) ** 2)
    return np.clip(nz * attn, 0.0, 1.0).astype(np.float32)


def _hash01(ix: np.ndarray, iy: np.ndarray, iz: np.ndarray, seed: int) -> np.ndarray:
    h = (
        ix.astype(np.int64) * 73856093
        ^ iy.astype(np.int64) * 19349663
        ^ iz.astype(np.int64) * 83492791
        ^ np.int64(seed) * 2654435761
    )
    h = (h ^ (h >> 13)) * 1274126177
    h = h ^ (h >> 16)
    return (h & 0xFFFFFF).astype(np.float64) / float(0xFFFFFF)


@njit(cache=True)
def _value_noise_kernel(pts: np.ndarray, scale: float, seed: np.int64) -> np.ndarray:
    n = pts.shape[0]
    out = np.empty(n)
    for k in range(n):
        ix = np.int64(np.floor(pts[k, 0] / scale))
        iy = np.int64(np.floor(pts[k, 1] / scale))
        iz = np.int64(np.floor(pts[k, 2] / scale))
        fx = pts[k, 0] / scale - ix
        fy = pts[k, 1] / scale - iy
        fz = pts[k, 2] / scale - iz
        fx = fx * fx * (3.0 - 2.0 * fx)  # smoothstep
        fy = fy * fy * (3.0 - 2.0 * fy)
        fz = fz * fz * (3.0 - 2.0 * fz)
        acc = 0.0
        for dx in range(2):
            wx = fx if dx else 1.0 - fx
            for dy in range(2):
                wy = fy if dy else 1.0 - fy
                for dz in range(2):
                    wz = fz if dz else 1.0 - fz
                    h = (
                        (ix + dx) * np.int64(73856093)
                        ^ (iy + dy) * np.int64(19349663)
                        ^ (iz + dz) * np.int64(83492791)
                        ^ seed * np.int64(2654435761)
                    )
                    h = (h ^ (h >> np.int64(13))) * np.int64(1274126177)
                    h = h ^ (h >> np.int64(16))
                    val = (h & np.int64(0xFFFFFF)) / float(0xFFFFFF)
                    acc += wx * wy * wz * val
        out[k] = acc
    return out


def value_noise(points_mm: np.ndarray, scale_mm: float, seed: int) -> np.ndarray:
    """Deterministic trilinear lattice noise in [0, 1] over 3D points."""
    pts = np.ascontiguousarray(points_mm, dtype=np.float64)
    flat = pts.reshape(-1, 3)
    out = _value_noise_kernel(flat, float(scale_mm), np.int64(seed))
    return out.reshape(pts.shape[:-1])


def wall_texture(points_mm: np.ndarray) -> np.ndarray:
    """Mucosa-like broadband texture in [0, 1]; a fixed property of the world."""
    n1 = value_noise(points_mm, 2.0, seed=11)
    n2 = value_noise(points_mm, 0.8, seed=23)
    n3 = value_noise(points_mm, 0.35, seed=47)
    t = 0.5 * n1 + 0.35 * n2 + 0.15 * n3
    return np.clip(t, 0.0, 1.0)


def vessel_field(points_mm: np.ndarray) -> np.ndarray:
    """Ridged vessel-like pattern in [0, 1]; emphasized by the NBI transfer."""
    n = value_noise(points_mm, 1.6, seed=101)
    ridged = 1.0 - np.abs(2.0 * n - 1.0)
    return np.clip((ridged - 0.75) * 4.0, 0.0, 1.0)
