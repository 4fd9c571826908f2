"""Corner detection and binary descriptors for consecutive-frame matching.

FAST-style segment-test corners (16-pixel Bresenham circle, 9 contiguous)
with subpixel refinement, plus 256-bit intensity-pair-comparison descriptors
sampled from a smoothed patch. The pair pattern is fixed at build time by a
seed, so extraction is fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter

from .config import FeatureConfig

# radius-3 Bresenham circle, clockwise from 12 o'clock: (dy, dx)
_CIRCLE = np.array([
    (-3, 0), (-3, 1), (-2, 2), (-1, 3), (0, 3), (1, 3), (2, 2), (3, 1),
    (3, 0), (3, -1), (2, -2), (1, -3), (0, -3), (-1, -3), (-2, -2), (-3, -1),
])

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


@lru_cache(maxsize=4)
def _arc_lut(min_arc: int) -> np.ndarray:
    """lut[mask16] = True when the 16-bit cyclic mask has a run >= min_arc."""
    masks = np.arange(1 << 16, dtype=np.uint32)
    bits = ((masks[:, None] >> np.arange(16)[None, :]) & 1).astype(bool)
    wrapped = np.concatenate([bits, bits[:, : min_arc - 1]], axis=1)
    ok = np.zeros(1 << 16, dtype=bool)
    run = np.zeros(1 << 16, dtype=np.int16)
    for j in range(wrapped.shape[1]):
        run = np.where(wrapped[:, j], run + 1, 0)
        ok |= run >= min_arc
    return ok


@dataclass(frozen=True)
class FrameFeatures:
    """Keypoints (x, y subpixel) and packed 256-bit descriptors per frame."""

    keypoints: np.ndarray    # (N, 2) float, (x, y) pixel coords
    descriptors: np.ndarray  # (N, 32) uint8, packed bits

    def __len__(self) -> int:
        return len(self.keypoints)


def luminance(frame: np.ndarray) -> np.ndarray:
    f = np.asarray(frame, dtype=np.float64)
    return f.mean(axis=2) if f.ndim == 3 else f


@lru_cache(maxsize=4)
def _brief_pattern(bits: int, patch: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    half = patch // 2
    pairs = np.clip(rng.normal(0.0, patch / 5.0, size=(bits, 2, 2)), -half, half)
    return pairs[:, 0].round().astype(int), pairs[:, 1].round().astype(int)


def extract_features(frame: np.ndarray, config: FeatureConfig = FeatureConfig()) -> FrameFeatures:
    """Detect corners and describe them; empty result on flat frames."""
    img = luminance(frame)
    h, w = img.shape
    margin = config.patch_size // 2 + 4
    empty = FrameFeatures(np.empty((0, 2)), np.empty((0, 32), dtype=np.uint8))
    if h <= 2 * margin or w <= 2 * margin:
        return empty

    t = config.fast_threshold
    shifted = np.stack([
        np.roll(np.roll(img, -dy, axis=0), -dx, axis=1) for dy, dx in _CIRCLE
    ])
    bright = shifted > img[None] + t
    dark = shifted < img[None] - t
    weights = (1 << np.arange(16, dtype=np.uint32))[:, None, None]
    bmask = (bright.astype(np.uint32) * weights).sum(axis=0)
    dmask = (dark.astype(np.uint32) * weights).sum(axis=0)
    lut = _arc_lut(config.fast_arc)
    corner = lut[bmask] | lut[dmask]
    corner[:margin] = corner[-margin:] = False
    corner[:, :margin] = corner[:, -margin:] = False
    if not corner.any():
        return empty

    diff = np.abs(shifted - img[None])
    score = np.where(bright | dark, diff, 0.0).sum(axis=0)
    score = np.where(corner, score, 0.0)
    peaks = corner & (score >= maximum_filter(score, size=3)) & (score > 0)
    ys, xs = np.nonzero(peaks)
    if len(ys) == 0:
        return empty
    order = np.argsort(score[ys, xs])[::-1][: config.max_keypoints]
    ys, xs = ys[order], xs[order]

    # subpixel peak of the score surface, clamped to half a pixel
    def _sub(axis_plus, axis_minus, center):
        denom = 2 * center - axis_plus - axis_minus
        with np.errstate(divide="ignore", invalid="ignore"):
            off = 0.5 * (axis_plus - axis_minus) / denom
        return np.clip(np.nan_to_num(off), -0.5, 0.5)

    dx = _sub(score[ys, xs + 1], score[ys, xs - 1], score[ys, xs])
    dy = _sub(score[ys + 1, xs], score[ys - 1, xs], score[ys, xs])
    keypoints = np.stack([xs + dx, ys + dy], axis=1)

    smoothed = gaussian_filter(img, config.smoothing_sigma)
    p1, p2 = _brief_pattern(config.descriptor_bits, config.patch_size, config.sampling_seed)
    y1 = ys[:, None] + p1[None, :, 1]
    x1 = xs[:, None] + p1[None, :, 0]
    y2 = ys[:, None] + p2[None, :, 1]
    x2 = xs[:, None] + p2[None, :, 0]
    bits = smoothed[y1, x1] < smoothed[y2, x2]
    descriptors = np.packbits(bits, axis=1)
    return FrameFeatures(keypoints=keypoints, descriptors=descriptors)


def hamming_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(Na, Nb) pairwise Hamming distances between packed descriptor sets."""
    x = np.bitwise_xor(a[:, None, :], b[None, :, :])
    return _POPCOUNT[x].sum(axis=2).astype(np.int32)


def match_features(
    fa: FrameFeatures, fb: FrameFeatures, config: FeatureConfig = FeatureConfig()
) -> np.ndarray:
    """Mutual-nearest matches within the Hamming gate; (M, 2) index pairs."""
    if len(fa) == 0 or len(fb) == 0:
        return np.empty((0, 2), dtype=int)
    d = hamming_matrix(fa.descriptors, fb.descriptors)
    ab = np.argmin(d, axis=1)
    ba = np.argmin(d, axis=0)
    ia = np.arange(len(fa))
    mutual = ba[ab] == ia
    good = mutual & (d[ia, ab] <= config.match_max_hamming)
    return np.stack([ia[good], ab[good]], axis=1)
