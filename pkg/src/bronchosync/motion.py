"""Incremental camera motion between consecutive frames.

Relative rotation and translation direction are recovered from matched
keypoints with a seeded sampling-consensus fit of the essential matrix
(normalized 8-point, Sampson gating), then a cheirality test over the four
decompositions. Only the translation *direction* is observable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .config import ParseConfig

IDENTITY_QUAT = np.array([0.0, 0.0, 0.0, 1.0])


@dataclass(frozen=True)
class MotionEntry:
    """Estimated motion from frame_a to the next frame."""

    frame_a: int
    quat: np.ndarray             # relative rotation (camera a -> b), xyzw
    translation_dir: np.ndarray  # camera motion direction in a's frame, unit
    inliers: int
    flow_px: float               # median matched-keypoint displacement
    confident: bool

    @property
    def rotation_angle(self) -> float:
        return float(2.0 * np.arccos(min(1.0, abs(self.quat[3]))))


def identity_motion(frame_a: int, inliers: int = 0, flow_px: float = 0.0) -> MotionEntry:
    return MotionEntry(frame_a=frame_a, quat=IDENTITY_QUAT.copy(),
                       translation_dir=np.array([0.0, 0.0, 1.0]),
                       inliers=inliers, flow_px=flow_px, confident=False)


def camera_matrix(width: int, height: int, fov_deg: float) -> np.ndarray:
    fx = (width / 2.0) / np.tan(np.radians(fov_deg) / 2.0)
    return np.array([[fx, 0.0, width / 2.0],
                     [0.0, fx, height / 2.0],
                     [0.0, 0.0, 1.0]])


def _normalize_points(pts: np.ndarray):
    mean = pts.mean(axis=0)
    scale = np.sqrt(2.0) / max(1e-12, np.mean(np.linalg.norm(pts - mean, axis=1)))
    T = np.array([[scale, 0, -scale * mean[0]],
                  [0, scale, -scale * mean[1]],
                  [0, 0, 1.0]])
    return (pts - mean) * scale, T


def _eight_point(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Essential matrix from >= 8 normalized-camera correspondences."""
    p1, T1 = _normalize_points(x1)
    p2, T2 = _normalize_points(x2)
    a = np.column_stack([
        p2[:, 0] * p1[:, 0], p2[:, 0] * p1[:, 1], p2[:, 0],
        p2[:, 1] * p1[:, 0], p2[:, 1] * p1[:, 1], p2[:, 1],
        p1[:, 0], p1[:, 1], np.ones(len(p1)),
    ])
    _, _, vt = np.linalg.svd(a)
    f = vt[-1].reshape(3, 3)
    u, s, vt = np.linalg.svd(f)
    f = u @ np.diag([s[0], s[1], 0.0]) @ vt
    e = T2.T @ f @ T1
    # project onto the essential manifold (equal singular values)
    u, s, vt = np.linalg.svd(e)
    sigma = (s[0] + s[1]) / 2.0
    return u @ np.diag([sigma, sigma, 0.0]) @ vt


def _sampson(e: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    h1 = np.column_stack([x1, np.ones(len(x1))])
    h2 = np.column_stack([x2, np.ones(len(x2))])
    ex1 = h1 @ e.T
    etx2 = h2 @ e
    num = np.sum(h2 * ex1, axis=1) ** 2
    den = ex1[:, 0] ** 2 + ex1[:, 1] ** 2 + etx2[:, 0] ** 2 + etx2[:, 1] ** 2
    return num / np.maximum(den, 1e-15)


def _triangulate(r: np.ndarray, t: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> int:
    """Count correspondences with positive depth in both cameras."""
    p1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    p2 = np.hstack([r, t.reshape(3, 1)])
    good = 0
    for a, b in zip(x1, x2):
        m = np.stack([
            a[0] * p1[2] - p1[0],
            a[1] * p1[2] - p1[1],
            b[0] * p2[2] - p2[0],
            b[1] * p2[2] - p2[1],
        ])
        _, _, vt = np.linalg.svd(m)
        X = vt[-1]
        if abs(X[3]) < 1e-12:
            continue
        X = X[:3] / X[3]
        z1 = X[2]
        z2 = (r @ X + t)[2]
        if z1 > 0 and z2 > 0:
            good += 1
    return good


def _decompose(e: np.ndarray, x1: np.ndarray, x2: np.ndarray):
    u, _, vt = np.linalg.svd(e)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]])
    candidates = []
    for r in (u @ w @ vt, u @ w.T @ vt):
        for t in (u[:, 2], -u[:, 2]):
            candidates.append((r, t))
    sample = slice(0, min(20, len(x1)))
    best = max(candidates, key=lambda rt: _triangulate(rt[0], rt[1], x1[sample], x2[sample]))
    return best


def estimate_relative_motion(
    kp_a: np.ndarray, kp_b: np.ndarray, matches: np.ndarray,
    width: int, height: int, fov_deg: float,
    frame_a: int = 0, config: ParseConfig = ParseConfig(),
) -> MotionEntry:
    """RANSAC essential-matrix fit over matched keypoints."""
    if len(matches) < config.min_motion_matches:
        return identity_motion(frame_a, inliers=len(matches))
    pa = kp_a[matches[:, 0]]
    pb = kp_b[matches[:, 1]]
    flow = float(np.median(np.linalg.norm(pb - pa, axis=1)))
    k = camera_matrix(width, height, fov_deg)
    x1 = (pa - k[:2, 2]) / k[0, 0]
    x2 = (pb - k[:2, 2]) / k[0, 0]
    n = len(x1)
    threshold = (config.ransac_px_threshold / k[0, 0]) ** 2

    rng = np.random.default_rng(config.ransac_seed + frame_a)
    best_inliers: np.ndarray | None = None
    for _ in range(config.ransac_iters):
        idx = rng.choice(n, size=8, replace=False)
        try:
            e = _eight_point(x1[idx], x2[idx])
        except np.linalg.LinAlgError:
            continue
        inl = _sampson(e, x1, x2) < threshold
        if best_inliers is None or inl.sum() > best_inliers.sum():
            best_inliers = inl
    if best_inliers is None or best_inliers.sum() < config.min_motion_matches:
        return identity_motion(frame_a, inliers=n, flow_px=flow)

    e = _eight_point(x1[best_inliers], x2[best_inliers])
    inl = _sampson(e, x1, x2) < threshold
    if inl.sum() >= config.min_motion_matches:
        best_inliers = inl
        e = _eight_point(x1[best_inliers], x2[best_inliers])
    r, t = _decompose(e, x1[best_inliers], x2[best_inliers])
    # camera b's center in a's frame gives the motion direction
    c = -r.T @ t
    nc = np.linalg.norm(c)
    tdir = c / nc if nc > 0 else np.array([0.0, 0.0, 1.0])
    return MotionEntry(
        frame_a=frame_a,
        quat=Rotation.from_matrix(r).as_quat(),
        translation_dir=tdir,
        inliers=int(best_inliers.sum()),
        flow_px=flow,
        confident=True,
    )
