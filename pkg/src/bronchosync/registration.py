"""Registering video frames to the airway model.

Key frames are registered by anchor-initialized 6-DOF pattern search
maximizing normalized gradient correlation between a rendered endoluminal
view and the frame's luminance. Registration then propagates across whole
shots by arc-length interpolation between registered key frames, paced by
the accumulated motion model, with optional per-frame refinement.

Also hosts the timestamp machinery of the simpler synchronization method:
binding a few timestamps to view sites splits a stream into subsequences
that can be linearly retimed against a reference stream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation
from skimage.transform import resize

from . import geometry
from .centerline import CenterlineGraph, select_path
from .config import CameraConfig, RegistrationConfig
from .errors import RegistrationError
from .model_io import AirwayModel
from .motion import MotionEntry
from .render import LumenRenderer, shade_from_depth, vessel_field, wall_texture
from .video_parse import Shot


class AnchorSource(Enum):
    USER = "user"
    TRUTH_PERTURBED = "truth_perturbed"


class Provenance(Enum):
    KEYFRAME_REGISTERED = 1
    SEQUENCE_PROPAGATED = 2
    USER_CORRECTED = 3
    UNREGISTERED = 0


@dataclass(frozen=True)
class Anchor:
    """Initial pose guess for one frame's registration."""

    frame: int
    position: np.ndarray
    quat: np.ndarray
    source: AnchorSource = AnchorSource.USER


@dataclass(frozen=True)
class RegistrationRecord:
    """One frame's pose in model space, or an explicit non-registration."""

    frame: int
    provenance: Provenance
    position: np.ndarray | None = None
    quat: np.ndarray | None = None
    site_id: int | None = None
    residual: float = float("nan")
    # residuals per accepted move of the basin search; diagnostic, not persisted
    history: tuple[float, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.registered:
            if self.position is None or self.quat is None or self.site_id is None:
                raise RegistrationError(
                    f"frame {self.frame}: registered record needs pose and site"
                )
            if not np.isfinite(self.residual):
                raise RegistrationError(f"frame {self.frame}: non-finite residual")
        elif self.position is not None or self.quat is not None:
            raise RegistrationError(f"frame {self.frame}: unregistered record carries a pose")

    @property
    def registered(self) -> bool:
        return self.provenance is not Provenance.UNREGISTERED


def normalized_gradient_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of mean-removed image gradient fields, in [-1, 1]."""
    gay, gax = np.gradient(np.asarray(a, dtype=np.float64))
    gby, gbx = np.gradient(np.asarray(b, dtype=np.float64))
    ga = np.concatenate([gay.ravel(), gax.ravel()])
    gb = np.concatenate([gby.ravel(), gbx.ravel()])
    ga -= ga.mean()
    gb -= gb.mean()
    denom = np.linalg.norm(ga) * np.linalg.norm(gb)
    if denom < 1e-12:
        return 0.0
    return float(np.dot(ga, gb) / denom)


class Registrar:
    """Owns the renderer and similarity machinery for one airway model."""

    def __init__(
        self,
        model: AirwayModel,
        config: RegistrationConfig = RegistrationConfig(),
        camera: CameraConfig = CameraConfig(),
    ):
        self.graph: CenterlineGraph = model.graph
        self.config = config
        self.renderer = LumenRenderer(model.mask, camera)

    # -- similarity --------------------------------------------------------

    def _proxy(self, position: np.ndarray, quat: np.ndarray, size: int,
               vessels: bool = True) -> np.ndarray:
        """Rendered luminance stand-in: shading modulated by wall structure.

        The vessel term centers the similarity optimum on the true pose but
        adds high-frequency structure; the wide search phase therefore runs
        without it and only the polish phase uses the full proxy.
        """
        depth, hits = self.renderer.cast(position, quat, size, size)
        shade = shade_from_depth(depth, self.renderer.camera.fov_deg)
        p = shade * (0.55 + 0.45 * wall_texture(hits))
        if vessels:
            p = p * (1.0 - self.config.vessel_weight * vessel_field(hits))
        return p

    def residual(self, frame_small: np.ndarray, position, quat,
                 vessels: bool = True) -> float:
        """1 - NGC against a target already prepared by shrink().

        Both images pass through the same Gaussian before gradient
        correlation; without it the texture aliasing mismatch between a
        direct low-resolution render and a downsampled full-resolution
        frame riddles the similarity surface with local minima.
        """
        size = frame_small.shape[0]
        proxy = self._proxy(np.asarray(position, float), np.asarray(quat, float),
                            size, vessels)
        proxy = gaussian_filter(proxy, self.config.smooth_sigma)
        return 1.0 - normalized_gradient_correlation(proxy, frame_small)

    def shrink(self, frame_lum: np.ndarray, size: int | None = None) -> np.ndarray:
        size = size or self.config.render_size
        small = resize(np.asarray(frame_lum, dtype=np.float64), (size, size),
                       anti_aliasing=True)
        return gaussian_filter(small, self.config.smooth_sigma)

    # -- key-frame registration -------------------------------------------

    def _pattern_search(
        self, target: np.ndarray, pos: np.ndarray, rot: Rotation,
        step_mm: float, step_deg: float, max_evals: int, restarts: int,
        vessels: bool,
    ) -> tuple[np.ndarray, Rotation, float, list[float]]:
        """Greedy 6-DOF coordinate search with step halving.

        Steps halve whenever no axis improves; after the first convergence
        the steps optionally re-expand once to half their initial size,
        which escapes shallow axial slides.
        """
        cfg = self.config
        best = self.residual(target, pos, rot.as_quat(), vessels)
        history = [best]
        evals = 1
        t_step = step_mm
        r_step = np.radians(step_deg)
        axes = np.eye(3)
        while evals < max_evals:
            if t_step < cfg.tol_mm and r_step < np.radians(cfg.tol_deg):
                if restarts == 0:
                    break
                restarts -= 1
                t_step = 0.5 * step_mm
                r_step = 0.5 * np.radians(step_deg)
            improved = False
            for kind, axis in [("t", a) for a in axes] + [("r", a) for a in axes]:
                for sign in (1.0, -1.0):
                    if kind == "t":
                        cand_pos = pos + sign * t_step * axis
                        cand_rot = rot
                    else:
                        cand_pos = pos
                        cand_rot = Rotation.from_rotvec(sign * r_step * axis) * rot
                    if not self.renderer.inside(cand_pos):
                        continue
                    r = self.residual(target, cand_pos, cand_rot.as_quat(), vessels)
                    evals += 1
                    if r < best:
                        best, pos, rot = r, cand_pos, cand_rot
                        history.append(best)
                        improved = True
                    if evals >= max_evals:
                        break
                if evals >= max_evals:
                    break
            if not improved:
                t_step *= 0.5
                r_step *= 0.5
        return pos, rot, best, history

    def _polish(self, target: np.ndarray, pos: np.ndarray,
                rot: Rotation) -> tuple[np.ndarray, Rotation, float]:
        """Bounded local minimization of the vessel-aware residual.

        Powell moves along adapted (generally diagonal) directions, which a
        per-axis coordinate search cannot; near the optimum the residual
        valley is rarely axis-aligned in the rotation subspace.
        """
        cfg = self.config
        bt, br = cfg.polish_bound_mm, cfg.polish_bound_deg

        def objective(x: np.ndarray) -> float:
            p = pos + x[:3]
            if not self.renderer.inside(p):
                return 2.0
            r = Rotation.from_rotvec(np.radians(x[3:])) * rot
            return self.residual(target, p, r.as_quat(), vessels=True)

        res = minimize(
            objective, np.zeros(6), method="Powell",
            bounds=[(-bt, bt)] * 3 + [(-br, br)] * 3,
            options={"maxfev": cfg.polish_evals, "xtol": 5e-3, "ftol": 1e-4},
        )
        return (pos + res.x[:3],
                Rotation.from_rotvec(np.radians(res.x[3:])) * rot,
                float(res.fun))

    def register_key_frame(self, frame_lum: np.ndarray, anchor: Anchor) -> RegistrationRecord:
        """Two-phase pose search from the anchor.

        A wide geometry-only pattern search finds the basin (the smoothed
        texture-and-shading surface is broad but its optimum sits slightly
        off the true pose), then a short vessel-aware polish re-centers on
        the full-appearance optimum. If the fit is still poor the whole
        search reruns once from the anchor at reduced steps, which follows
        a different descent path out of occasional ruts. Bad final fits are
        rejected rather than returned.
        """
        cfg = self.config
        if not self.renderer.inside(anchor.position):
            raise RegistrationError(f"frame {anchor.frame}: anchor outside lumen")
        target = self.shrink(frame_lum)
        anchor_pos = np.asarray(anchor.position, dtype=float)
        anchor_rot = Rotation.from_quat(anchor.quat)

        # anchors already at the residual floor (re-registration, user pins)
        # skip the basin search entirely
        at_anchor = self.residual(target, anchor_pos, anchor_rot.as_quat(), vessels=True)
        if at_anchor <= cfg.skip_wide_residual:
            pos, rot, best = self._polish(target, anchor_pos.copy(), anchor_rot)
            if best <= at_anchor:
                return RegistrationRecord(
                    frame=anchor.frame,
                    provenance=Provenance.KEYFRAME_REGISTERED,
                    position=pos,
                    quat=rot.as_quat(),
                    site_id=self.graph.nearest_site_id(pos),
                    residual=best,
                    history=(at_anchor, best),
                )

        def attempt(scale: float):
            pos, rot, _, history = self._pattern_search(
                target, anchor_pos.copy(), anchor_rot,
                scale * cfg.step_mm, scale * cfg.step_deg,
                cfg.max_evals, cfg.restarts, vessels=False,
            )
            pos, rot, best = self._polish(target, pos, rot)
            return pos, rot, best, history

        pos, rot, best, history = attempt(1.0)
        if best > cfg.retry_residual:
            pos2, rot2, best2, hist2 = attempt(cfg.retry_scale)
            if best2 < best:
                pos, rot, best, history = pos2, rot2, best2, hist2
        if best > cfg.reject_residual:
            return RegistrationRecord(frame=anchor.frame, provenance=Provenance.UNREGISTERED,
                                      residual=best, history=tuple(history))
        return RegistrationRecord(
            frame=anchor.frame,
            provenance=Provenance.KEYFRAME_REGISTERED,
            position=pos,
            quat=rot.as_quat(),
            site_id=self.graph.nearest_site_id(pos),
            residual=best,
            history=tuple(history),
        )

    # -- sequence propagation ---------------------------------------------

    def _refine(self, target: np.ndarray, pos: np.ndarray, rot: Rotation):
        """A few cheap coordinate passes; used during propagation only."""
        cfg = self.config
        best = self.residual(target, pos, rot.as_quat())
        for _ in range(cfg.refine_iters):
            improved = False
            for axis in np.eye(3):
                for sign in (1.0, -1.0):
                    cand = pos + sign * cfg.refine_step_mm * axis
                    if not self.renderer.inside(cand):
                        continue
                    r = self.residual(target, cand, rot.as_quat())
                    if r < best:
                        best, pos = r, cand
                        improved = True
            if not improved:
                break
        return pos, rot, best

    def _chain_interp(self, rec_a: RegistrationRecord, rec_b: RegistrationRecord,
                      u: float) -> np.ndarray:
        """Position at fraction u of the centerline chain between two keys,
        carrying each key's off-axis offset linearly."""
        chain = select_path(self.graph, rec_a.site_id, rec_b.site_id)
        sites = [self.graph.sites[s] for s in chain.site_ids]
        if sites[0].id != rec_a.site_id:
            sites = sites[::-1]
        pts = np.array([s.position for s in sites])
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        total = seg.sum()
        if total == 0:
            base = pts[0]
        else:
            arc = np.concatenate([[0.0], np.cumsum(seg)])
            base = np.array([
                np.interp(u * total, arc, pts[:, k]) for k in range(3)
            ])
        off_a = rec_a.position - pts[0]
        off_b = rec_b.position - pts[-1]
        return base + (1.0 - u) * off_a + u * off_b

    def register_sequence(
        self,
        shot: Shot,
        key_records: dict[int, RegistrationRecord],
        motion: dict[int, MotionEntry],
        frames_lum: list[np.ndarray] | None = None,
        refine: bool = False,
    ) -> dict[int, RegistrationRecord]:
        """Propagate key poses to every frame of the shot."""
        keys = sorted(
            f for f, r in key_records.items() if r.registered and f in shot
        )
        out: dict[int, RegistrationRecord] = {}
        if not keys:
            for f in range(shot.start_frame, shot.end_frame + 1):
                out[f] = RegistrationRecord(frame=f, provenance=Provenance.UNREGISTERED)
            return out

        def flow(f: int) -> float:
            m = motion.get(f)
            return m.flow_px if m is not None else 0.0

        def propagated(f: int, pos, rot: Rotation, residual: float) -> RegistrationRecord:
            if refine and frames_lum is not None:
                target = self.shrink(frames_lum[f])
                pos, rot, residual = self._refine(target, pos, rot)
            return RegistrationRecord(
                frame=f, provenance=Provenance.SEQUENCE_PROPAGATED,
                position=np.asarray(pos, float), quat=rot.as_quat(),
                site_id=self.graph.nearest_site_id(pos),
                residual=residual if np.isfinite(residual) else 0.0,
            )

        for f in keys:
            out[f] = key_records[f]

        # between consecutive keys: arc interpolation paced by motion magnitude
        for fa, fb in zip(keys, keys[1:]):
            ra, rb = key_records[fa], key_records[fb]
            w = np.array([flow(f) for f in range(fa, fb)])
            cum = np.concatenate([[0.0], np.cumsum(w)])
            frac = (
                cum / cum[-1] if cum[-1] > 0
                else np.linspace(0.0, 1.0, fb - fa + 1)
            )
            for j, f in enumerate(range(fa + 1, fb), start=1):
                u = float(frac[j])
                pos = self._chain_interp(ra, rb, u)
                rot = Rotation.from_quat(geometry.slerp(ra.quat, rb.quat, u))
                out[f] = propagated(f, pos, rot, (1 - u) * ra.residual + u * rb.residual)

        # beyond the end keys: compose the motion model outward
        mm_per_flow = 0.0
        if len(keys) >= 2:
            arc_span = sum(
                np.linalg.norm(key_records[b].position - key_records[a].position)
                for a, b in zip(keys, keys[1:])
            )
            flow_span = sum(flow(f) for f in range(keys[0], keys[-1]))
            if flow_span > 0:
                mm_per_flow = arc_span / flow_span

        pos = np.asarray(key_records[keys[0]].position, float)
        rot = Rotation.from_quat(key_records[keys[0]].quat)
        for f in range(keys[0] - 1, shot.start_frame - 1, -1):
            m = motion.get(f)
            if m is not None:
                rot = rot * Rotation.from_quat(m.quat).inv()
                step = rot.apply(m.translation_dir) * m.flow_px * mm_per_flow
                cand = pos - step
                pos = cand if self.renderer.inside(cand) else pos
            out[f] = propagated(f, pos.copy(), rot, key_records[keys[0]].residual)

        pos = np.asarray(key_records[keys[-1]].position, float)
        rot = Rotation.from_quat(key_records[keys[-1]].quat)
        for f in range(keys[-1] + 1, shot.end_frame + 1):
            m = motion.get(f - 1)
            if m is not None:
                step = rot.apply(m.translation_dir) * m.flow_px * mm_per_flow
                cand = pos + step
                pos = cand if self.renderer.inside(cand) else pos
                rot = rot * Rotation.from_quat(m.quat)
            out[f] = propagated(f, pos.copy(), rot, key_records[keys[-1]].residual)
        return out


# --- stream-level registration set ---------------------------------------

def register_stream(
    registrar: Registrar,
    stream: str,
    frames_lum: list[np.ndarray],
    parse_result,
    anchors: list[Anchor],
    refine: bool = False,
) -> "RegistrationSet":
    """Full stream registration: anchored key frames, then propagation.

    Anchors outside informative shots are still registered; shots without
    any accepted key registration stay unregistered.
    """
    key_records: dict[int, RegistrationRecord] = {}
    for a in anchors:
        if not (0 <= a.frame < parse_result.frame_count):
            raise RegistrationError(f"anchor references unknown frame {a.frame}")
        key_records[a.frame] = registrar.register_key_frame(frames_lum[a.frame], a)
    records: dict[int, RegistrationRecord] = {}
    for shot in parse_result.shots:
        if not shot.informative:
            for f in range(shot.start_frame, shot.end_frame + 1):
                records[f] = RegistrationRecord(frame=f,
                                                provenance=Provenance.UNREGISTERED)
            continue
        keys = {f: r for f, r in key_records.items() if f in shot and r.registered}
        records.update(registrar.register_sequence(
            shot, keys, parse_result.motion,
            frames_lum=frames_lum if refine else None, refine=refine,
        ))
    return RegistrationSet(stream=stream, frame_count=parse_result.frame_count,
                           records=records)


@dataclass
class RegistrationSet:
    """All per-frame records for one stream."""

    stream: str
    frame_count: int
    records: dict[int, RegistrationRecord]

    def registered(self) -> list[RegistrationRecord]:
        return [self.records[f] for f in sorted(self.records)
                if self.records[f].registered]

    def count(self, provenance: Provenance) -> int:
        return sum(1 for r in self.records.values() if r.provenance is provenance)

    @property
    def registered_count(self) -> int:
        return sum(1 for r in self.records.values() if r.registered)


@dataclass(frozen=True)
class Correction:
    """One review action: re-pin a frame's pose or remove it."""

    frame: int
    delete: bool = False
    position: np.ndarray | None = None
    quat: np.ndarray | None = None


def review_corrections(
    regset: RegistrationSet,
    shots: list[Shot],
    motion: dict[int, MotionEntry],
    corrections: list[Correction],
    registrar: Registrar,
) -> RegistrationSet:
    """Apply user corrections and re-propagate the affected shots."""
    if not corrections:
        return regset
    records = dict(regset.records)
    touched: set[int] = set()
    deleted: set[int] = set()
    for c in corrections:
        if not (0 <= c.frame < regset.frame_count):
            raise RegistrationError(f"correction references unknown frame {c.frame}")
        if c.delete:
            records[c.frame] = RegistrationRecord(
                frame=c.frame, provenance=Provenance.UNREGISTERED)
            deleted.add(c.frame)
            continue
        if c.position is None or c.quat is None:
            raise RegistrationError(f"correction for frame {c.frame} needs a pose")
        if not registrar.renderer.inside(np.asarray(c.position, float)):
            raise RegistrationError(
                f"correction for frame {c.frame} rejected: pose outside lumen")
        records[c.frame] = RegistrationRecord(
            frame=c.frame, provenance=Provenance.USER_CORRECTED,
            position=np.asarray(c.position, float),
            quat=np.asarray(c.quat, float),
            site_id=registrar.graph.nearest_site_id(np.asarray(c.position, float)),
            residual=0.0,
        )
        touched.add(c.frame)

    for si, shot in enumerate(shots):
        if not shot.informative:
            continue
        if not any(f in shot for f in touched | deleted):
            continue
        keys = {
            f: r for f, r in records.items()
            if f in shot and r.provenance in
            (Provenance.KEYFRAME_REGISTERED, Provenance.USER_CORRECTED)
        }
        repropagated = registrar.register_sequence(shot, keys, motion)
        for f, r in repropagated.items():
            if f not in deleted:
                records[f] = r
    return RegistrationSet(stream=regset.stream, frame_count=regset.frame_count,
                           records=records)


# --- timestamps (basic method) --------------------------------------------

@dataclass(frozen=True)
class TimeStampSet:
    """Ordered (seconds, view-site id) bindings along the selected path."""

    stamps: tuple[tuple[float, int], ...]

    def __post_init__(self):
        times = [t for t, _ in self.stamps]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise RegistrationError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.stamps)


@dataclass(frozen=True)
class Subsequence:
    """Frames between two bound timestamps, mapped to a site range."""

    start_frame: int
    end_frame: int
    start_time: float
    end_time: float
    start_site: int
    end_site: int

    @property
    def duration(self) -> float:
        return self.end_time - self.start_time


def bind_timestamps(
    frames_lum: list[np.ndarray],
    fps: float,
    stamps: TimeStampSet,
    registrar: Registrar,
) -> tuple[list[Subsequence], dict[int, RegistrationRecord]]:
    """Register each stamped frame at its bound site; build the subsequence table."""
    n = len(frames_lum)
    duration = n / fps
    arcs = []
    for t, site in stamps.stamps:
        if not (0.0 <= t <= duration):
            raise RegistrationError(f"timestamp {t:.2f}s outside stream duration")
        arcs.append(registrar.graph.sites[site].arc_length)
    if any(b <= a for a, b in zip(arcs, arcs[1:])):
        raise RegistrationError("stamps out of path order")

    stamp_records: dict[int, RegistrationRecord] = {}
    stamp_frames: list[int] = []
    for t, site_id in stamps.stamps:
        f = min(n - 1, int(round(t * fps)))
        stamp_frames.append(f)
        site = registrar.graph.sites[site_id]
        anchor = Anchor(frame=f, position=site.position, quat=site.quat,
                        source=AnchorSource.USER)
        stamp_records[f] = registrar.register_key_frame(frames_lum[f], anchor)

    subsequences = [
        Subsequence(
            start_frame=stamp_frames[i], end_frame=stamp_frames[i + 1],
            start_time=stamps.stamps[i][0], end_time=stamps.stamps[i + 1][0],
            start_site=stamps.stamps[i][1], end_site=stamps.stamps[i + 1][1],
        )
        for i in range(len(stamps) - 1)
    ]
    return subsequences, stamp_records


@dataclass(frozen=True)
class TimeWarp:
    """Linear map of a subsequence's time interval onto a reference interval."""

    source: Subsequence
    reference: Subsequence
    dropped_frames: frozenset[int] = frozenset()

    @property
    def slope(self) -> float:
        if self.source.duration <= 0:
            raise RegistrationError("empty subsequence")
        return self.reference.duration / self.source.duration

    def map_time(self, t: float) -> float:
        return self.reference.start_time + (t - self.source.start_time) * self.slope

    def source_time(self, ref_t: float) -> float:
        return self.source.start_time + (ref_t - self.reference.start_time) / self.slope

    def frame_at(self, ref_t: float, fps: float) -> int:
        """Source frame to show at a reference-timeline instant."""
        f = int(round(self.source_time(ref_t) * fps))
        f = max(self.source.start_frame, min(self.source.end_frame, f))
        if f in self.dropped_frames:
            live = [g for g in range(self.source.start_frame, self.source.end_frame + 1)
                    if g not in self.dropped_frames]
            f = min(live, key=lambda g: abs(g - f))
        return f


def retime_subsequence(
    source: Subsequence,
    reference: Subsequence,
    redundant_frames: set[int] | frozenset[int] = frozenset(),
) -> TimeWarp:
    """Warp a subsequence onto a reference interval, dropping redundant frames."""
    if source.end_frame <= source.start_frame or source.duration <= 0:
        raise RegistrationError("empty subsequence")
    if (source.start_site, source.end_site) != (reference.start_site, reference.end_site):
        raise RegistrationError("subsequences bound to different site ranges")
    dropped = frozenset(
        f for f in redundant_frames
        if source.start_frame < f < source.end_frame
    )
    return TimeWarp(source=source, reference=reference, dropped_frames=dropped)


# --- sidecar persistence --------------------------------------------------

_MAGIC = b"BREG"
_ROW = "<IBi3d4dd"


def save_registration(regset: RegistrationSet, path: str | Path) -> None:
    name = regset.stream.encode()
    parts = [_MAGIC, struct.pack("<HIH", 1, regset.frame_count, len(name)), name]
    parts.append(struct.pack("<I", len(regset.records)))
    for f in sorted(regset.records):
        r = regset.records[f]
        if r.registered:
            parts.append(struct.pack(
                _ROW, r.frame, r.provenance.value, r.site_id,
                *r.position, *r.quat, r.residual,
            ))
        else:
            parts.append(struct.pack(_ROW, r.frame, 0, -1,
                                     *([0.0] * 7), float("nan")))
    Path(path).write_bytes(b"".join(parts))


def load_registration(path: str | Path) -> RegistrationSet:
    buf = Path(path).read_bytes()
    if buf[:4] != _MAGIC:
        raise RegistrationError(f"{path}: bad registration sidecar magic")
    _, frame_count, name_len = struct.unpack_from("<HIH", buf, 4)
    off = 12
    stream = buf[off:off + name_len].decode()
    off += name_len
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    row = struct.calcsize(_ROW)
    records: dict[int, RegistrationRecord] = {}
    for _ in range(count):
        rec = struct.unpack_from(_ROW, buf, off)
        off += row
        frame, prov, site = rec[0], rec[1], rec[2]
        if prov == 0:
            records[frame] = RegistrationRecord(frame=frame,
                                                provenance=Provenance.UNREGISTERED)
        else:
            records[frame] = RegistrationRecord(
                frame=frame, provenance=Provenance(prov),
                position=np.array(rec[3:6]), quat=np.array(rec[6:10]),
                site_id=site, residual=rec[10],
            )
    return RegistrationSet(stream=stream, frame_count=frame_count, records=records)
