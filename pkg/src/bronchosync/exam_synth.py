"""Ground-truthed synthetic multimodal exam generation.

A simulated bronchoscope advances along an airway path under a piecewise
speed profile with seeded nuisances (pose jitter, speed drift, reverse
excursions, uninformative runs). Each pose is rendered through a
modality-specific color transfer, so the four streams of one exam share
geometry but differ in look, timing, and frame count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
import json
import struct

import numpy as np
from scipy.spatial.transform import Rotation

from . import geometry
from .centerline import AirwayPath, CenterlineGraph
from .config import SynthConfig
from .errors import ExamSynthError
from .frame_store import FrameStore, encode_store
from .render import LumenRenderer, shade_from_depth, vessel_field, wall_texture

_LEGAL = {
    ("WLB", "NBI_SCOPE"): "nbi_wlb",
    ("NBI", "NBI_SCOPE"): "nbi",
    ("WLB", "AFB_SCOPE"): "afb_wlb",
    ("AFB", "AFB_SCOPE"): "afb",
}


@dataclass(frozen=True)
class Modality:
    """Imaging mode plus the scope that produced it."""

    tag: str       # WLB | NBI | AFB
    scope_id: str  # NBI_SCOPE | AFB_SCOPE

    def __post_init__(self):
        if (self.tag, self.scope_id) not in _LEGAL:
            raise ExamSynthError(f"illegal modality pair {(self.tag, self.scope_id)}")

    @property
    def name(self) -> str:
        return _LEGAL[(self.tag, self.scope_id)]

    @property
    def label(self) -> str:
        """Table-style label, e.g. NBI-WLB."""
        scope = "NBI" if self.scope_id == "NBI_SCOPE" else "AFB"
        return self.tag if self.tag != "WLB" else f"{scope}-WLB"


STANDARD_MODALITIES = (
    Modality("WLB", "NBI_SCOPE"),
    Modality("NBI", "NBI_SCOPE"),
    Modality("WLB", "AFB_SCOPE"),
    Modality("AFB", "AFB_SCOPE"),
)


@dataclass
class ExamSpec:
    """Controls one simulated pass along a path; nuisances dose independently."""

    path: AirwayPath
    fps: float = 30.0
    speed_profile: list[tuple[float, float]] = field(
        default_factory=lambda: [(0.0, 12.0)]
    )  # (arc mm from path start, speed mm/s), piecewise constant
    jitter_pos_mm: float = 0.0
    jitter_deg: float = 0.0
    speed_jitter: float = 0.0           # fractional AR(1) speed drift sigma
    redundancy_events: list[tuple[int, float]] = field(default_factory=list)
    # (path site index, back-and-forth depth mm)
    uninformative_runs: list[tuple[int, int]] = field(default_factory=list)
    # (frame index, run length)
    end_truncation_mm: float = 0.0      # stop short of the path end

    def __post_init__(self):
        if self.fps <= 0:
            raise ExamSynthError("fps must be positive")
        if not self.speed_profile or any(v <= 0 for _, v in self.speed_profile):
            raise ExamSynthError("speeds must be positive")
        if self.jitter_pos_mm < 0 or self.jitter_deg < 0 or self.speed_jitter < 0:
            raise ExamSynthError("jitter sigmas must be non-negative")

    def speed_at(self, arc: float) -> float:
        v = self.speed_profile[0][1]
        for a, s in self.speed_profile:
            if arc >= a:
                v = s
        return v


@dataclass
class Trajectory:
    """Per-frame ground truth produced by the simulator."""

    positions: np.ndarray   # (N, 3) mm, jittered true camera positions
    quats: np.ndarray       # (N, 4)
    arcs: np.ndarray        # (N,) mm along the path (non-monotone at excursions)
    site_ids: np.ndarray    # (N,) nearest centerline site to the true position
    timestamps: np.ndarray  # (N,) s, strictly increasing

    def __len__(self) -> int:
        return len(self.arcs)


def _path_geometry(graph: CenterlineGraph, path: AirwayPath):
    pos = np.stack([graph.site(s).position for s in path.site_ids])
    quats = np.stack([graph.site(s).quat for s in path.site_ids])
    seg = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    arcs = np.concatenate([[0.0], np.cumsum(seg)])
    return pos, quats, arcs


def _pose_at(arc, pos, quats, arcs):
    arc = float(np.clip(arc, arcs[0], arcs[-1]))
    i = int(np.searchsorted(arcs, arc, side="right")) - 1
    i = min(max(i, 0), len(arcs) - 2)
    span = arcs[i + 1] - arcs[i]
    t = 0.0 if span <= 0 else (arc - arcs[i]) / span
    p = (1 - t) * pos[i] + t * pos[i + 1]
    q = geometry.slerp(quats[i], quats[i + 1], t)
    return p, q


def simulate_trajectory(
    spec: ExamSpec,
    graph: CenterlineGraph,
    seed: int,
    renderer: LumenRenderer | None = None,
) -> Trajectory:
    """Advance the camera along the path; deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    pos, quats, arcs = _path_geometry(graph, spec.path)
    total = max(arcs[-1] - spec.end_truncation_mm, arcs[0])
    if any(not (0 <= i < len(spec.path.site_ids)) for i, _ in spec.redundancy_events):
        raise ExamSynthError("redundancy event site index outside path")
    events = sorted(
        [(float(arcs[i]), float(d)) for i, d in spec.redundancy_events]
    )

    arc_seq: list[float] = []
    a = 0.0
    drift = 1.0
    ev = 0
    guard = 0
    while True:
        arc_seq.append(a)
        if a >= total:
            break
        guard += 1
        if guard > 500_000:
            raise ExamSynthError("trajectory did not terminate")
        if spec.speed_jitter > 0:
            drift = float(np.clip(
                0.95 * drift + 0.05 + rng.normal(0.0, spec.speed_jitter), 0.5, 2.0
            ))
        step = spec.speed_at(a) / spec.fps * drift
        if ev < len(events) and a + step >= events[ev][0]:
            # reverse excursion: back off `depth` then return, same speed
            trigger, depth = events[ev]
            ev += 1
            a_target = max(0.0, trigger - depth)
            b = a
            while b > a_target:
                b = max(a_target, b - step)
                arc_seq.append(b)
            while b < min(trigger, total):
                b = min(trigger, b + step)
                arc_seq.append(b)
            a = b
            continue
        a = min(a + step, total)

    n = len(arc_seq)
    arcs_out = np.asarray(arc_seq)
    positions = np.empty((n, 3))
    out_quats = np.empty((n, 4))
    sigma_rad = np.radians(spec.jitter_deg)
    for k, arc in enumerate(arc_seq):
        p, q = _pose_at(arc, pos, quats, arcs)
        if spec.jitter_pos_mm > 0:
            delta = rng.normal(0.0, spec.jitter_pos_mm, size=3)
            if renderer is not None:
                limit = 0.8 * renderer.local_radius(p)
                norm = float(np.linalg.norm(delta))
                if norm > limit and norm > 0:
                    delta *= limit / norm
            p = p + delta
        if sigma_rad > 0:
            q = (geometry.random_small_rotation(rng, sigma_rad) * Rotation.from_quat(q)).as_quat()
        positions[k] = p
        out_quats[k] = q

    site_pos = graph.positions()
    d = np.linalg.norm(positions[:, None, :] - site_pos[None, :, :], axis=2)
    site_ids = np.argmin(d, axis=1).astype(np.int64)
    timestamps = np.arange(n) / spec.fps
    return Trajectory(positions=positions, quats=out_quats, arcs=arcs_out,
                      site_ids=site_ids, timestamps=timestamps)


def _color_transfer(tag: str, shade, tex, vess) -> np.ndarray:
    """Map geometry channels through a modality-specific transfer to RGB."""
    base = shade * (0.55 + 0.45 * tex)
    if tag == "WLB":
        body = base * (1.0 - 0.25 * vess)
        rgb = np.stack([body * 0.98, body * (0.64 + 0.08 * tex), body * 0.60], axis=-1)
    elif tag == "NBI":
        body = base * (1.0 - 0.75 * vess)  # vessel band strongly absorbed
        rgb = np.stack([
            body * 0.52,
            base * 0.78 * (1.0 - 0.45 * vess),
            base * 0.62 * (1.0 - 0.2 * vess),
        ], axis=-1)
    elif tag == "AFB":
        rgb = np.stack([
            base * (0.30 + 0.55 * vess),            # magenta where abnormal-ish
            base * 0.88 * (1.0 - 0.55 * vess),      # green background
            base * (0.28 + 0.45 * vess),
        ], axis=-1)
    else:
        raise ExamSynthError(f"unknown modality tag {tag}")
    return np.clip(rgb * 255.0 + 0.5, 0, 255).astype(np.uint8)


@dataclass
class ExamStream:
    """One rendered modality stream with per-frame ground truth."""

    modality: Modality
    store: FrameStore
    trajectory: Trajectory
    uninformative: np.ndarray  # (N,) bool ground truth for injected runs
    fps: float

    @property
    def frame_count(self) -> int:
        return self.store.frame_count


def render_exam(
    trajectory: Trajectory,
    renderer: LumenRenderer,
    modality: Modality,
    spec: ExamSpec,
    seed: int,
    config: SynthConfig = SynthConfig(),
) -> ExamStream:
    """Render every trajectory pose through the modality transfer."""
    rng = np.random.default_rng(seed ^ 0x5EED)
    n = len(trajectory)
    w, h = config.frame_width, config.frame_height
    uninformative = np.zeros(n, dtype=bool)
    for start, length in spec.uninformative_runs:
        uninformative[max(0, start):min(n, start + length)] = True

    frames: list[np.ndarray] = []
    chunk = 16
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        try:
            depths, hits = renderer.cast_batch(
                trajectory.positions[lo:hi], trajectory.quats[lo:hi], w, h
            )
        except Exception as e:
            raise ExamSynthError(f"render failed in frames [{lo}, {hi}): {e}") from e
        for k in range(hi - lo):
            idx = lo + k
            if uninformative[idx]:
                lum = rng.normal(110.0, config.noise_contrast, size=(h, w, 3))
                frames.append(np.clip(lum, 0, 255).astype(np.uint8))
                continue
            shade = shade_from_depth(depths[k], renderer.camera.fov_deg)
            tex = wall_texture(hits[k])
            vess = vessel_field(hits[k])
            frames.append(_color_transfer(modality.tag, shade, tex, vess))

    return ExamStream(
        modality=modality,
        store=encode_store(frames),
        trajectory=trajectory,
        uninformative=uninformative,
        fps=spec.fps,
    )


def synthesize_exam(
    spec: ExamSpec,
    graph: CenterlineGraph,
    renderer: LumenRenderer,
    base_seed: int,
    modalities: tuple[Modality, ...] = STANDARD_MODALITIES,
    config: SynthConfig = SynthConfig(),
) -> dict[str, ExamStream]:
    """One trajectory per modality (distinct seeds), all over the same path."""
    streams: dict[str, ExamStream] = {}
    for i, m in enumerate(modalities):
        seed = base_seed + 1000 * i
        traj = simulate_trajectory(spec, graph, seed, renderer)
        streams[m.name] = render_exam(traj, renderer, m, spec, seed, config)
    return streams


def exam_spec_from_dict(doc: dict, graph: CenterlineGraph) -> ExamSpec:
    """Build an ExamSpec from a parsed structured document.

    The path defaults to root (site 0) down to the deepest site when
    `path.end_site` is omitted.
    """
    from .centerline import select_path

    pd = doc.get("path", {})
    start = int(pd.get("start_site", 0))
    end = pd.get("end_site")
    if end is None:
        end = max(range(len(graph.sites)), key=lambda s: graph.sites[s].arc_length)
    path = select_path(graph, start, int(end))
    return ExamSpec(
        path=path,
        fps=float(doc.get("fps", 30.0)),
        speed_profile=[(float(a), float(v))
                       for a, v in doc.get("speed_profile", [(0.0, 12.0)])],
        jitter_pos_mm=float(doc.get("jitter_pos_mm", 0.0)),
        jitter_deg=float(doc.get("jitter_deg", 0.0)),
        speed_jitter=float(doc.get("speed_jitter", 0.0)),
        redundancy_events=[(int(i), float(d))
                           for i, d in doc.get("redundancy_events", [])],
        uninformative_runs=[(int(f), int(n))
                            for f, n in doc.get("uninformative_runs", [])],
        end_truncation_mm=float(doc.get("end_truncation_mm", 0.0)),
    )


# --- persistence ----------------------------------------------------------

_TRUTH_MAGIC = b"BTRU"


def save_stream(stream: ExamStream, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    name = stream.modality.name
    stream.store.save(directory / f"{name}.bfrs")
    t = stream.trajectory
    parts = [_TRUTH_MAGIC, struct.pack("<HI", 1, len(t))]
    for k in range(len(t)):
        parts.append(struct.pack(
            "<3d4dIddB",
            *t.positions[k], *t.quats[k], int(t.site_ids[k]),
            float(t.arcs[k]), float(t.timestamps[k]),
            int(stream.uninformative[k]),
        ))
    (directory / f"{name}.truth").write_bytes(b"".join(parts))
    meta = {"modality": {"tag": stream.modality.tag, "scope_id": stream.modality.scope_id},
            "fps": stream.fps, "frames": stream.frame_count}
    (directory / f"{name}.json").write_text(json.dumps(meta, indent=2))


def load_stream(directory: str | Path, name: str) -> ExamStream:
    directory = Path(directory)
    meta = json.loads((directory / f"{name}.json").read_text())
    store = FrameStore.load(directory / f"{name}.bfrs")
    buf = (directory / f"{name}.truth").read_bytes()
    if buf[:4] != _TRUTH_MAGIC:
        raise ExamSynthError(f"{name}.truth: bad magic")
    _, count = struct.unpack_from("<HI", buf, 4)
    row = struct.calcsize("<3d4dIddB")
    off = 10
    positions = np.empty((count, 3))
    quats = np.empty((count, 4))
    site_ids = np.empty(count, dtype=np.int64)
    arcs = np.empty(count)
    timestamps = np.empty(count)
    uninfo = np.empty(count, dtype=bool)
    for k in range(count):
        rec = struct.unpack_from("<3d4dIddB", buf, off)
        off += row
        positions[k] = rec[0:3]
        quats[k] = rec[3:7]
        site_ids[k] = rec[7]
        arcs[k] = rec[8]
        timestamps[k] = rec[9]
        uninfo[k] = bool(rec[10])
    traj = Trajectory(positions=positions, quats=quats, arcs=arcs,
                      site_ids=site_ids, timestamps=timestamps)
    modality = Modality(**meta["modality"])
    return ExamStream(modality=modality, store=store, trajectory=traj,
                      uninformative=uninfo, fps=meta["fps"])
