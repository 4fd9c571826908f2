"""Project manifests: one file tying model, streams, and sidecars together.

A project is a JSON manifest (suffix .bsp) with paths relative to its own
location and a SHA-256 per referenced artifact, so a stale or swapped file
is caught at load time rather than surfacing as silent mis-synchronization.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ProjectError

SCHEMA_VERSION = 1
DATA_DIR_ENV = "BRONCHOSYNC_DATA_DIR"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class StreamEntry:
    """Relative paths of one stream's artifacts (registration optional)."""

    store: str
    truth: str | None = None
    parse: str | None = None
    registration: str | None = None

    def paths(self) -> list[str]:
        return [p for p in (self.store, self.truth, self.parse, self.registration)
                if p is not None]


@dataclass
class Project:
    root: Path
    model_path: str
    reference: str
    mode: str
    streams: dict[str, StreamEntry]
    hashes: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.reference not in self.streams:
            raise ProjectError(
                f"reference stream {self.reference!r} is not among streams "
                f"{sorted(self.streams)}"
            )
        if self.mode not in ("basic", "advanced"):
            raise ProjectError(f"unknown mode {self.mode!r}")

    # -- paths -------------------------------------------------------------

    def path(self, rel: str) -> Path:
        return (self.root / rel).resolve()

    def artifact_paths(self) -> dict[str, Path]:
        rels = [self.model_path]
        for entry in self.streams.values():
            rels.extend(entry.paths())
        return {rel: self.path(rel) for rel in rels}

    # -- persistence -------------------------------------------------------

    def save(self, manifest_path: str | Path) -> None:
        manifest_path = Path(manifest_path)
        self.root = manifest_path.parent.resolve()
        self.hashes = {}
        for rel, p in self.artifact_paths().items():
            if not p.exists():
                raise ProjectError(f"missing artifact: {p}")
            self.hashes[rel] = _sha256(p)
        doc = {
            "schema_version": SCHEMA_VERSION,
            "model": self.model_path,
            "reference": self.reference,
            "mode": self.mode,
            "streams": {
                name: {k: v for k, v in vars(entry).items() if v is not None}
                for name, entry in self.streams.items()
            },
            "hashes": self.hashes,
        }
        manifest_path.write_text(json.dumps(doc, indent=2) + "\n")

    @classmethod
    def load(cls, manifest_path: str | Path, verify: bool = True) -> "Project":
        manifest_path = Path(manifest_path)
        if not manifest_path.exists():
            raise ProjectError(f"project file not found: {manifest_path}")
        try:
            doc = json.loads(manifest_path.read_text())
        except json.JSONDecodeError as e:
            raise ProjectError(f"{manifest_path}: invalid manifest: {e}") from e
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ProjectError(
                f"{manifest_path}: unsupported schema version "
                f"{doc.get('schema_version')!r}"
            )
        try:
            project = cls(
                root=manifest_path.parent.resolve(),
                model_path=doc["model"],
                reference=doc["reference"],
                mode=doc.get("mode", "advanced"),
                streams={name: StreamEntry(**entry)
                         for name, entry in doc["streams"].items()},
                hashes=doc.get("hashes", {}),
            )
        except (KeyError, TypeError) as e:
            raise ProjectError(f"{manifest_path}: malformed manifest: {e}") from e
        if verify:
            project.verify()
        return project

    def verify(self) -> None:
        for rel, p in self.artifact_paths().items():
            if not p.exists():
                raise ProjectError(f"missing artifact: {p}")
            digest = _sha256(p)
            expected = self.hashes.get(rel)
            if expected is None:
                raise ProjectError(f"artifact not in hash table: {rel}")
            if digest != expected:
                raise ProjectError(
                    f"artifact changed since the manifest was written: {rel}")


@dataclass
class ProjectRuntime:
    """A project's artifacts loaded into memory, ready for playback."""

    project: Project
    model: "object"
    streams: dict[str, "object"]          # name -> ExamStream
    parses: dict[str, "object"]           # name -> ParseResult
    regsets: dict[str, "object"]          # name -> RegistrationSet

    def engine(self):
        from .sync import SyncEngine
        stores = {name: s.store for name, s in self.streams.items()}
        missing = [n for n in stores if n not in self.regsets]
        if missing:
            raise ProjectError(f"streams without registration sidecars: {missing}")
        return SyncEngine(self.model, stores, self.regsets,
                          reference=self.project.reference)

    def keyframe_counts(self) -> dict[str, int]:
        return {name: len(p.key_frames) for name, p in self.parses.items()}

    def truth_positions(self) -> dict[str, "object"]:
        return {name: s.trajectory.positions for name, s in self.streams.items()
                if s.trajectory is not None}


def load_runtime(manifest_path: str | Path, verify: bool = True) -> ProjectRuntime:
    from .exam_synth import load_stream
    from .model_io import load_model
    from .registration import load_registration
    from .video_parse import load_parse

    project = Project.load(manifest_path, verify=verify)
    model = load_model(project.path(project.model_path))
    streams, parses, regsets = {}, {}, {}
    for name, entry in project.streams.items():
        store_path = project.path(entry.store)
        streams[name] = load_stream(store_path.parent, store_path.stem)
        if entry.parse:
            parses[name] = load_parse(project.path(entry.parse))
        if entry.registration:
            regsets[name] = load_registration(project.path(entry.registration))
    return ProjectRuntime(project=project, model=model, streams=streams,
                          parses=parses, regsets=regsets)


def default_data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "."))


def resolve_project(path: str | Path) -> Path:
    """Interpret a project path against BRONCHOSYNC_DATA_DIR when relative."""
    p = Path(path)
    if not p.is_absolute() and not p.exists():
        candidate = default_data_dir() / p
        if candidate.exists():
            return candidate
    return p
