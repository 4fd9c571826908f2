"""Exam stream parsing: shots, incremental motion, key frames, frame quality.

A shot is a maximal run of informative frames with continuous matched
motion; the boundary rule (match count below threshold for two consecutive
pairs, or an uninformative run) is an interpretation isolated behind the
Shot type. Key frames always include shot endpoints and are densified by an
accumulated-motion budget.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .config import FeatureConfig, ParseConfig
from .errors import BronchoSyncError
from .exam_synth import ExamStream
from .features import FrameFeatures, extract_features, luminance, match_features
from .motion import MotionEntry, estimate_relative_motion, identity_motion


@dataclass(frozen=True)
class Shot:
    """Inclusive frame range; informative shots carry registrable content."""

    start_frame: int
    end_frame: int
    informative: bool

    def __post_init__(self):
        if self.start_frame > self.end_frame:
            raise BronchoSyncError("shot start after end")

    def __contains__(self, frame: int) -> bool:
        return self.start_frame <= frame <= self.end_frame

    def __len__(self) -> int:
        return self.end_frame - self.start_frame + 1


@dataclass(frozen=True)
class KeyFrame:
    frame: int
    shot_index: int
    is_endpoint: bool


@dataclass
class ParseResult:
    """Everything downstream registration needs about one stream."""

    frame_count: int
    shots: list[Shot]
    key_frames: list[KeyFrame]
    uninformative: np.ndarray            # (N,) bool
    motion: dict[int, MotionEntry]       # frame a -> motion a -> a+1
    match_counts: np.ndarray             # (N-1,) matches between consecutive frames
    features: list[FrameFeatures] | None = field(default=None, repr=False)

    @property
    def key_frame_indices(self) -> list[int]:
        return [k.frame for k in self.key_frames]

    def informative_shots(self) -> list[Shot]:
        return [s for s in self.shots if s.informative]

    def shot_of(self, frame: int) -> Shot:
        for s in self.shots:
            if frame in s:
                return s
        raise BronchoSyncError(f"frame {frame} outside all shots")


def flag_uninformative(
    frames_lum: list[np.ndarray],
    features: list[FrameFeatures],
    config: ParseConfig = ParseConfig(),
) -> np.ndarray:
    """A frame is uninformative when it is flat or nearly featureless."""
    flags = np.zeros(len(frames_lum), dtype=bool)
    for i, (lum, feat) in enumerate(zip(frames_lum, features)):
        if lum.std() < config.contrast_threshold or len(feat) < config.min_keypoints_informative:
            flags[i] = True
    return flags


def detect_shots(
    uninformative: np.ndarray,
    match_counts: np.ndarray,
    config: ParseConfig = ParseConfig(),
) -> list[Shot]:
    """Partition the full frame range into informative and junk shots."""
    n = len(uninformative)
    if n == 0:
        return []
    # cut points between i and i+1
    cut = np.zeros(max(n - 1, 0), dtype=bool)
    low = match_counts < config.shot_min_matches
    run = 0
    for i in range(len(low)):
        run = run + 1 if low[i] else 0
        if run == config.shot_persistence:
            cut[i - config.shot_persistence + 1] = True
    shots: list[Shot] = []
    start = 0
    for i in range(n):
        boundary = (
            i == n - 1
            or uninformative[i] != uninformative[i + 1]
            or (not uninformative[i] and cut[i])
        )
        if boundary:
            shots.append(Shot(start, i, informative=not uninformative[i]))
            start = i + 1
    return shots


def select_key_frames(
    shots: list[Shot],
    motion: dict[int, MotionEntry],
    config: ParseConfig = ParseConfig(),
    features: list[FrameFeatures] | None = None,
    frame_size: tuple[int, int] | None = None,
    feature_config: FeatureConfig = FeatureConfig(),
) -> list[KeyFrame]:
    """Shot endpoints plus frames where accumulated motion exceeds budget.

    Rotation since the last key frame is estimated directly against that key
    frame's features when they are available: a single wide-baseline estimate
    is far less noisy than composing many small per-pair rotations, whose
    errors random-walk past the budget on jittery footage. Without features
    the composed per-pair rotation is used as a fallback.
    """
    keys: list[KeyFrame] = []
    rot_budget = np.radians(config.key_rotation_deg)

    def _rotation_since(key: int, f: int) -> float | None:
        if features is None or frame_size is None:
            return None
        fk, ff = features[key], features[f]
        m = match_features(fk, ff, feature_config)
        if len(m) < config.min_motion_matches:
            return None
        w, h = frame_size
        entry = estimate_relative_motion(
            fk.keypoints, ff.keypoints, m, w, h, 80.0,
            frame_a=key, config=config,
        )
        return entry.rotation_angle if entry.confident else None

    for si, shot in enumerate(shots):
        if not shot.informative:
            continue
        keys.append(KeyFrame(shot.start_frame, si, True))
        last_key = shot.start_frame
        acc_rotation = Rotation.identity()
        acc_trans = 0.0
        rot_over = 0
        for f in range(shot.start_frame, shot.end_frame):
            m = motion.get(f)
            if m is not None:
                acc_rotation = Rotation.from_quat(m.quat) * acc_rotation
                acc_trans += m.flow_px / config.flow_unit_px
            if f <= last_key:
                continue
            direct = _rotation_since(last_key, f)
            acc_rot = acc_rotation.magnitude() if direct is None else direct
            # single over-budget estimates are indistinguishable from noise;
            # genuine turns stay over budget on consecutive frames
            rot_over = rot_over + 1 if acc_rot > rot_budget else 0
            if rot_over >= config.shot_persistence or acc_trans > config.key_translation_units:
                keys.append(KeyFrame(f, si, False))
                last_key = f
                acc_rotation = Rotation.identity()
                acc_trans = 0.0
                rot_over = 0
        if shot.end_frame > shot.start_frame:
            keys.append(KeyFrame(shot.end_frame, si, True))
    return keys


def parse_stream(
    stream: ExamStream,
    parse_config: ParseConfig = ParseConfig(),
    feature_config: FeatureConfig = FeatureConfig(),
    keep_features: bool = False,
) -> ParseResult:
    """Full parse: features, quality flags, shots, motion model, key frames."""
    n = stream.frame_count
    lums: list[np.ndarray] = []
    features: list[FrameFeatures] = []
    for _, frame in stream.store.iter_frames():
        lums.append(luminance(frame))
        features.append(extract_features(frame, feature_config))

    uninformative = flag_uninformative(lums, features, parse_config)

    match_counts = np.zeros(max(n - 1, 0), dtype=np.int64)
    matches: list[np.ndarray] = []
    for i in range(n - 1):
        m = match_features(features[i], features[i + 1], feature_config)
        matches.append(m)
        match_counts[i] = len(m)

    shots = detect_shots(uninformative, match_counts, parse_config)

    motion: dict[int, MotionEntry] = {}
    w, h = stream.store.width, stream.store.height
    fov = 80.0
    for shot in shots:
        if not shot.informative:
            continue
        for f in range(shot.start_frame, shot.end_frame):
            m = matches[f]
            if uninformative[f] or uninformative[f + 1]:
                motion[f] = identity_motion(f, inliers=len(m))
                continue
            motion[f] = estimate_relative_motion(
                features[f].keypoints, features[f + 1].keypoints, m,
                w, h, fov, frame_a=f, config=parse_config,
            )

    key_frames = select_key_frames(
        shots, motion, parse_config,
        features=features, frame_size=(w, h), feature_config=feature_config,
    )
    return ParseResult(
        frame_count=n,
        shots=shots,
        key_frames=key_frames,
        uninformative=uninformative,
        motion=motion,
        match_counts=match_counts,
        features=features if keep_features else None,
    )


# --- sidecar persistence --------------------------------------------------

_MAGIC = b"BPRS"


def save_parse(result: ParseResult, path: str | Path) -> None:
    parts = [_MAGIC, struct.pack("<HI", 1, result.frame_count)]
    parts.append(struct.pack("<I", len(result.shots)))
    for s in result.shots:
        parts.append(struct.pack("<IIB", s.start_frame, s.end_frame, int(s.informative)))
    parts.append(struct.pack("<I", len(result.key_frames)))
    for k in result.key_frames:
        parts.append(struct.pack("<IIB", k.frame, k.shot_index, int(k.is_endpoint)))
    parts.append(np.packbits(result.uninformative).tobytes())
    parts.append(struct.pack("<I", len(result.match_counts)))
    parts.append(result.match_counts.astype("<i8").tobytes())
    parts.append(struct.pack("<I", len(result.motion)))
    for f in sorted(result.motion):
        m = result.motion[f]
        parts.append(struct.pack(
            "<I4d3dIdB", f, *m.quat, *m.translation_dir, m.inliers, m.flow_px,
            int(m.confident),
        ))
    Path(path).write_bytes(b"".join(parts))


def load_parse(path: str | Path) -> ParseResult:
    buf = Path(path).read_bytes()
    if buf[:4] != _MAGIC:
        raise BronchoSyncError(f"{path}: bad parse sidecar magic")
    _, n = struct.unpack_from("<HI", buf, 4)
    off = 10
    (n_shots,) = struct.unpack_from("<I", buf, off); off += 4
    shots = []
    for _ in range(n_shots):
        a, b, inf = struct.unpack_from("<IIB", buf, off); off += 9
        shots.append(Shot(a, b, bool(inf)))
    (n_keys,) = struct.unpack_from("<I", buf, off); off += 4
    keys = []
    for _ in range(n_keys):
        f, si, ep = struct.unpack_from("<IIB", buf, off); off += 9
        keys.append(KeyFrame(f, si, bool(ep)))
    nbytes = (n + 7) // 8
    uninformative = np.unpackbits(
        np.frombuffer(buf, np.uint8, count=nbytes, offset=off)
    )[:n].astype(bool)
    off += nbytes
    (n_mc,) = struct.unpack_from("<I", buf, off); off += 4
    match_counts = np.frombuffer(buf, "<i8", count=n_mc, offset=off).copy()
    off += 8 * n_mc
    (n_motion,) = struct.unpack_from("<I", buf, off); off += 4
    motion: dict[int, MotionEntry] = {}
    row = struct.calcsize("<I4d3dIdB")
    for _ in range(n_motion):
        rec = struct.unpack_from("<I4d3dIdB", buf, off); off += row
        motion[rec[0]] = MotionEntry(
            frame_a=rec[0], quat=np.array(rec[1:5]),
            translation_dir=np.array(rec[5:8]),
            inliers=rec[8], flow_px=rec[9], confident=bool(rec[10]),
        )
    return ParseResult(frame_count=n, shots=shots, key_frames=keys,
                       uninformative=uninformative, motion=motion,
                       match_counts=match_counts)
