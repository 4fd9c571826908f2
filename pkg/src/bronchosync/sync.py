"""Multi-stream synchronization: association, playback, report.

The advanced method indexes the reference stream's registered poses in a
K-D tree, associates every other stream's registered frames to reference
frames under a combined position/orientation metric, and drives
bidirectional synchronized playback through per-stream prefetch
containers. The basic method replays timestamp-retimed subsequences on the
reference timeline, forward only.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .centerline import CenterlineGraph
from .config import AssociationConfig, CameraConfig
from .errors import SyncError, UnsupportedModeError
from .frame_store import BlockContainer, FrameStore
from .kdtree import PoseKDTree, PoseNode
from .model_io import AirwayModel
from .registration import Provenance, RegistrationSet, TimeWarp
from .render import DepthFrame, LumenRenderer, render_vb

REFERENCE_STREAM = "nbi_wlb"


class PlayMode(Enum):
    BASIC = "basic"
    ADVANCED = "advanced"


def _pose_nodes(regset: RegistrationSet) -> list[PoseNode]:
    return [
        PoseNode(frame=r.frame, position=np.asarray(r.position, float),
                 quat=np.asarray(r.quat, float), site_id=r.site_id)
        for r in regset.registered()
    ]


@dataclass
class ReferenceIndex:
    """K-D tree over the reference stream's registered frame poses."""

    stream: str
    frame_count: int
    tree: PoseKDTree

    @property
    def registered_frames(self) -> list[int]:
        return sorted(n.frame for n in self.tree.nodes)

    def __len__(self) -> int:
        return len(self.tree)


def build_reference_index(stream: str, regset: RegistrationSet) -> ReferenceIndex:
    nodes = _pose_nodes(regset)
    if not nodes:
        raise SyncError(f"reference stream {stream!r} has zero registered frames")
    return ReferenceIndex(stream=stream, frame_count=regset.frame_count,
                          tree=PoseKDTree(nodes))


@dataclass(frozen=True)
class Association:
    ref_frame: int
    stream_frame: int
    distance: float


@dataclass
class TargetList:
    """reference frame number -> associated stream frame (-1 = none)."""

    stream: str
    targets: np.ndarray

    def target(self, ref_frame: int) -> int | None:
        t = int(self.targets[ref_frame])
        return None if t < 0 else t


@dataclass
class AssociationTable:
    stream: str
    associations: list[Association]

    def __len__(self) -> int:
        return len(self.associations)

    def by_ref(self) -> dict[int, Association]:
        return {a.ref_frame: a for a in self.associations}


def associate_stream(
    stream: str,
    regset: RegistrationSet,
    index: ReferenceIndex,
    config: AssociationConfig = AssociationConfig(),
) -> tuple[TargetList, AssociationTable]:
    """Associate a stream's registered frames to every reference frame.

    For each registered reference frame the stream's metric-nearest
    registered frame is chosen; beyond the gate the reference frame keeps
    no association. Stream frames may serve several reference frames
    (repeated use). A stream with nothing registered yields an empty
    table, which is a signal, not a failure.
    """
    targets = np.full(index.frame_count, -1, dtype=np.int64)
    nodes = _pose_nodes(regset)
    if not nodes:
        return TargetList(stream, targets), AssociationTable(stream, [])
    tree = PoseKDTree(nodes)
    weight = config.orientation_weight_mm_per_rad
    associations: list[Association] = []
    for ref in index.tree.nodes:
        node, d = tree.nearest(ref.position, ref.quat, weight)
        if d <= config.gate:
            targets[ref.frame] = node.frame
            associations.append(Association(ref.frame, node.frame, d))
    associations.sort(key=lambda a: a.ref_frame)
    return TargetList(stream, targets), AssociationTable(stream, associations)


# --- playback --------------------------------------------------------------

@dataclass(frozen=True)
class SyncBundle:
    """One synchronized instant: reference frame + per-stream frames.

    Frames are indices into each stream's store; pixel data comes from the
    playback containers (or directly from the stores), and the endoluminal
    virtual view is rendered from the carried site id.
    """

    ref_frame: int
    site_id: int
    substituted: bool                    # ref_frame was not registered
    frames: dict[str, int | None]        # stream -> frame index, None = gap
    end_of_stream: bool = False


@dataclass
class PlaybackState:
    mode: PlayMode
    current: int                         # registered reference frame
    direction: int = 1
    rate: float = 30.0
    containers: dict[str, BlockContainer] = field(default_factory=dict)


class SyncEngine:
    """Owns the index, the association tables, and bundle assembly."""

    def __init__(
        self,
        model: AirwayModel,
        stores: dict[str, FrameStore],
        regsets: dict[str, RegistrationSet],
        reference: str = REFERENCE_STREAM,
        config: AssociationConfig = AssociationConfig(),
        camera: CameraConfig = CameraConfig(),
    ):
        if reference not in stores or reference not in regsets:
            raise SyncError(f"unknown reference stream {reference!r}")
        self.reference = reference
        self.stores = stores
        self.regsets = regsets
        self.graph: CenterlineGraph = model.graph
        self.renderer = LumenRenderer(model.mask, camera)
        self.config = config
        self.index = build_reference_index(reference, regsets[reference])
        self._registered = self.index.registered_frames
        self.targets: dict[str, TargetList] = {}
        self.tables: dict[str, AssociationTable] = {}
        for name in stores:
            if name == reference:
                continue
            tl, at = associate_stream(name, regsets[name], self.index, config)
            self.targets[name] = tl
            self.tables[name] = at

    # -- bundles -----------------------------------------------------------

    def nearest_registered(self, ref_frame: int) -> int:
        """Registered reference frame closest in frame index (lower wins ties)."""
        return min(self._registered, key=lambda f: (abs(f - ref_frame), f))

    def bundle(self, ref_frame: int) -> SyncBundle:
        if not (0 <= ref_frame < self.index.frame_count):
            raise SyncError(f"reference frame {ref_frame} out of range")
        rec = self.regsets[self.reference].records.get(ref_frame)
        substituted = rec is None or not rec.registered
        if substituted:
            ref_frame = self.nearest_registered(ref_frame)
            rec = self.regsets[self.reference].records[ref_frame]
        frames: dict[str, int | None] = {self.reference: ref_frame}
        for name, tl in self.targets.items():
            frames[name] = tl.target(ref_frame)
        return SyncBundle(ref_frame=ref_frame, site_id=rec.site_id,
                          substituted=substituted, frames=frames)

    @functools.lru_cache(maxsize=64)
    def virtual_view(self, site_id: int, width: int | None = None,
                     height: int | None = None) -> DepthFrame:
        """Endoluminal render at a view site (cached; sites repeat during play)."""
        return render_vb(self.renderer, self.graph.site(site_id),
                         width=width, height=height)

    # -- advanced playback -------------------------------------------------

    def start(self, mode: PlayMode = PlayMode.ADVANCED,
              ref_frame: int | None = None, rate: float = 30.0) -> PlaybackState:
        current = self._registered[0] if ref_frame is None else ref_frame
        if current not in set(self._registered):
            current = self.nearest_registered(current)
        state = PlaybackState(
            mode=mode, current=current, direction=1, rate=rate,
            containers={name: BlockContainer(store)
                        for name, store in self.stores.items()},
        )
        self._prefetch(state)
        return state

    def _prefetch(self, state: PlaybackState) -> None:
        b = self.bundle(state.current)
        for name, container in state.containers.items():
            f = b.frames.get(name)
            if f is not None:
                container.prefetch(f, state.direction)

    def step(self, state: PlaybackState, direction: int) -> tuple[PlaybackState, SyncBundle]:
        """Advance to the next registered reference frame in `direction`."""
        if direction not in (1, -1):
            raise SyncError("direction must be +1 or -1")
        if state.mode is PlayMode.BASIC and direction < 0:
            raise UnsupportedModeError(
                "reverse play is not available in basic mode")
        i = self._registered.index(state.current)
        j = i + direction
        if not (0 <= j < len(self._registered)):
            b = replace(self.bundle(state.current), end_of_stream=True)
            return state, b
        state.current = self._registered[j]
        state.direction = direction
        self._prefetch(state)
        return state, self.bundle(state.current)

    def frame_pixels(self, state: PlaybackState, stream: str, n: int) -> np.ndarray:
        """Decoded frame via the stream's container (resident or fetched)."""
        return state.containers[stream].get(n)

    # -- report ------------------------------------------------------------

    def report(self, keyframe_counts: dict[str, int],
               truth_positions: dict[str, np.ndarray] | None = None) -> "SyncReport":
        rows = []
        order = [self.reference] + sorted(n for n in self.stores if n != self.reference)
        for name in order:
            regset = self.regsets[name]
            interactive = (regset.count(Provenance.KEYFRAME_REGISTERED)
                           + regset.count(Provenance.USER_CORRECTED))
            associated = None if name == self.reference else len(self.tables[name])
            rows.append(ReportRow(
                stream=name,
                total=regset.frame_count,
                keyframes=keyframe_counts.get(name, 0),
                interactively_registered=interactive,
                sequence_registered=regset.registered_count,
                associated=associated,
                mean_error_mm=self._mean_error(name, truth_positions),
            ))
        return SyncReport(reference=self.reference, rows=rows)

    def _mean_error(self, name: str,
                    truth_positions: dict[str, np.ndarray] | None) -> float | None:
        if truth_positions is None or name not in truth_positions:
            return None
        truth = truth_positions[name]
        errs = [float(np.linalg.norm(r.position - truth[r.frame]))
                for r in self.regsets[name].registered()]
        return float(np.mean(errs)) if errs else None


@dataclass(frozen=True)
class ReportRow:
    stream: str
    total: int
    keyframes: int
    interactively_registered: int
    sequence_registered: int
    associated: int | None               # None on the reference stream
    mean_error_mm: float | None = None


@dataclass(frozen=True)
class SyncReport:
    reference: str
    rows: list[ReportRow]

    _COLUMNS = ("Stream", "Total", "Keyframes", "InteractivelyRegistered",
                "SequenceRegistered", "Associated", "MeanErrorMm")

    def to_dict(self) -> dict:
        return {
            "reference": self.reference,
            "columns": list(self._COLUMNS),
            "rows": [
                {
                    "stream": r.stream,
                    "total": r.total,
                    "keyframes": r.keyframes,
                    "interactively_registered": r.interactively_registered,
                    "sequence_registered": r.sequence_registered,
                    "associated": "N/A" if r.associated is None else r.associated,
                    "mean_error_mm": r.mean_error_mm,
                }
                for r in self.rows
            ],
        }

    def to_text(self) -> str:
        cells = [list(self._COLUMNS)]
        for r in self.rows:
            cells.append([
                r.stream, str(r.total), str(r.keyframes),
                str(r.interactively_registered), str(r.sequence_registered),
                "N/A" if r.associated is None else str(r.associated),
                "" if r.mean_error_mm is None else f"{r.mean_error_mm:.2f}",
            ])
        widths = [max(len(row[c]) for row in cells) for c in range(len(cells[0]))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
                 for row in cells]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines)


# --- basic playback --------------------------------------------------------

@dataclass(frozen=True)
class BasicBundle:
    """Per-stream frames at one instant of the reference timeline."""

    time: float
    frames: dict[str, int]


class BasicPlayer:
    """Forward-only replay of timestamp-retimed subsequences.

    Each stream contributes a list of time warps whose reference intervals
    tile the shared reference timeline; sampling walks the timeline at the
    reference frame rate and maps each instant through the warps.
    """

    def __init__(self, warps: dict[str, list[TimeWarp]], fps: float):
        if fps <= 0:
            raise SyncError("fps must be positive")
        if not warps:
            raise SyncError("no streams bound")
        self.warps = {
            name: sorted(ws, key=lambda w: w.reference.start_time)
            for name, ws in warps.items()
        }
        self.fps = fps

    def _warp_at(self, name: str, t: float) -> TimeWarp:
        for w in self.warps[name]:
            if w.reference.start_time <= t <= w.reference.end_time:
                return w
        raise SyncError(f"time {t:.3f}s outside bound subsequences of {name!r}")

    def bundle_at(self, t: float) -> BasicBundle:
        return BasicBundle(time=t, frames={
            name: self._warp_at(name, t).frame_at(t, self.fps)
            for name in self.warps
        })

    def play(self, t0: float, t1: float, direction: int = 1) -> list[BasicBundle]:
        if direction < 0:
            raise UnsupportedModeError(
                "reverse play is not available in basic mode")
        if t1 < t0:
            raise UnsupportedModeError(
                "reverse play is not available in basic mode")
        times = np.arange(t0, t1 + 0.5 / self.fps, 1.0 / self.fps)
        return [self.bundle_at(float(t)) for t in times]
