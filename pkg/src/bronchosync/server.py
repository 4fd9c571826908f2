"""HTTP service exposing a synchronized project to the browser viewer.

All read endpoints are pure views of project state; playback sessions own
their state behind a per-session lock, and a server-sent-event channel per
session pushes bundle updates at the playback rate.
"""

from __future__ import annotations

import io
import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response, StreamingResponse
from fastapi.staticfiles import StaticFiles

from .errors import SyncError, UnsupportedModeError
from .project import ProjectRuntime
from .sync import PlaybackState, PlayMode, SyncBundle, SyncEngine


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"error": {"code": code, "message": message}})


def _png(array: np.ndarray) -> Response:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG")
    return Response(content=buf.getvalue(), media_type="image/png")


@dataclass
class Session:
    id: str
    engine: SyncEngine
    state: PlaybackState
    playing: bool = False
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def snapshot(self) -> dict:
        return {
            "id": self.id,
            "mode": self.state.mode.value,
            "current": self.state.current,
            "direction": self.state.direction,
            "rate": self.state.rate,
            "playing": self.playing,
        }


def _bundle_body(engine: SyncEngine, bundle: SyncBundle) -> dict:
    rec = engine.regsets[engine.reference].records[bundle.ref_frame]
    site_ids = {}
    for name, f in bundle.frames.items():
        if f is None:
            site_ids[name] = None
        else:
            r = engine.regsets[name].records.get(f)
            site_ids[name] = r.site_id if r is not None and r.registered else None
    return {
        "ref_frame": bundle.ref_frame,
        "site_id": bundle.site_id,
        "substituted": bundle.substituted,
        "end_of_stream": bundle.end_of_stream,
        "pose": {"position_mm": list(map(float, rec.position)),
                 "quat": list(map(float, rec.quat))},
        "frames": bundle.frames,
        "site_ids": site_ids,
    }


def default_viewer_dir() -> Path:
    """Built browser viewer shipped alongside the package checkout."""
    return Path(__file__).resolve().parents[2] / "frontend" / "dist"


def create_app(runtime: ProjectRuntime,
               viewer_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="bronchosync workbench")
    engine = runtime.engine()
    project = runtime.project
    sessions: dict[str, Session] = {}

    @app.get("/api/project")
    def get_project():
        return {
            "reference": project.reference,
            "mode": project.mode,
            "streams": sorted(project.streams),
            "model": {"sites": len(engine.graph.sites),
                      "branches": engine.graph.branch_count()},
        }

    @app.get("/api/tree")
    def get_tree():
        return {
            "sites": [
                {
                    "id": s.id,
                    "position_mm": list(map(float, s.position)),
                    "quat": list(map(float, s.quat)),
                    "branch": s.branch_id,
                    "arc_length_mm": float(s.arc_length),
                }
                for s in engine.graph.sites
            ],
            "edges": [list(e) for e in engine.graph.edges],
        }

    @app.get("/api/streams")
    def get_streams():
        out = []
        for name in sorted(engine.stores):
            stream = runtime.streams[name]
            regset = engine.regsets[name]
            out.append({
                "name": name,
                "frames": stream.frame_count,
                "fps": stream.fps,
                "modality": stream.modality.tag,
                "reference": name == engine.reference,
                "registered": regset.registered_count,
            })
        return out

    @app.get("/api/frame/{stream}/{n}")
    def get_frame(stream: str, n: int):
        if stream not in engine.stores:
            return _error(404, "unknown_stream", f"no stream named {stream!r}")
        store = engine.stores[stream]
        if not (0 <= n < store.frame_count):
            return _error(404, "frame_out_of_range",
                          f"{stream} has {store.frame_count} frames")
        return _png(store.decode_frame(n))

    @app.get("/api/vb/{site}")
    def get_vb(site: int):
        if not (0 <= site < len(engine.graph.sites)):
            return _error(404, "unknown_site",
                          f"model has {len(engine.graph.sites)} sites")
        view = engine.virtual_view(site)
        return _png((np.clip(view.shade, 0.0, 1.0) * 255).astype(np.uint8))

    @app.get("/api/bundle/{ref_frame}")
    def get_bundle(ref_frame: int):
        try:
            bundle = engine.bundle(ref_frame)
        except SyncError as e:
            return _error(404, "frame_out_of_range", str(e))
        return _bundle_body(engine, bundle)

    @app.get("/api/associations/{stream}")
    def get_associations(stream: str):
        if stream not in engine.stores:
            return _error(404, "unknown_stream", f"no stream named {stream!r}")
        if stream == engine.reference:
            return {"stream": stream, "reference": True, "associations": []}
        table = engine.tables[stream]
        return {
            "stream": stream,
            "reference": False,
            "associations": [
                {"ref_frame": a.ref_frame, "stream_frame": a.stream_frame,
                 "distance_mm": a.distance}
                for a in table.associations
            ],
        }

    @app.get("/api/report")
    def get_report():
        report = engine.report(runtime.keyframe_counts(),
                               runtime.truth_positions())
        return report.to_dict()

    # -- sessions ----------------------------------------------------------

    @app.post("/api/session")
    async def create_session(request: Request):
        body = {}
        if await request.body():
            try:
                body = await request.json()
            except json.JSONDecodeError:
                return _error(400, "malformed_body", "body must be JSON")
        mode_name = body.get("mode", project.mode)
        try:
            mode = PlayMode(mode_name)
        except ValueError:
            return _error(400, "unknown_mode", f"unknown mode {mode_name!r}")
        sid = uuid.uuid4().hex[:12]
        session = Session(id=sid, engine=engine, state=engine.start(mode))
        sessions[sid] = session
        return session.snapshot()

    @app.post("/api/session/{sid}/transport")
    async def transport(sid: str, request: Request):
        session = sessions.get(sid)
        if session is None:
            return _error(404, "unknown_session", f"no session {sid!r}")
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return _error(400, "malformed_body", "body must be JSON")
        command = body.get("command")
        with session.lock:
            try:
                if command == "play":
                    session.playing = True
                elif command == "pause":
                    session.playing = False
                elif command == "reverse":
                    if session.state.mode is PlayMode.BASIC:
                        raise UnsupportedModeError(
                            "reverse play is not available in basic mode")
                    session.state.direction = -1
                elif command == "forward":
                    session.state.direction = 1
                elif command == "seek":
                    if not isinstance(body.get("frame"), int):
                        return _error(400, "malformed_command",
                                      "seek requires integer 'frame'")
                    frame = body["frame"]
                    if not (0 <= frame < engine.index.frame_count):
                        return _error(400, "malformed_command",
                                      "seek frame out of range")
                    session.state.current = engine.nearest_registered(frame)
                elif command == "rate":
                    rate = body.get("rate")
                    if not isinstance(rate, (int, float)) or rate <= 0:
                        return _error(400, "malformed_command",
                                      "rate requires positive 'rate'")
                    session.state.rate = float(rate)
                else:
                    return _error(400, "malformed_command",
                                  f"unknown command {command!r}")
            except UnsupportedModeError as e:
                return _error(409, "unsupported_mode", str(e))
            bundle = engine.bundle(session.state.current)
            return {"session": session.snapshot(),
                    "bundle": _bundle_body(engine, bundle)}

    @app.get("/api/session/{sid}/events")
    def events(sid: str):
        session = sessions.get(sid)
        if session is None:
            return _error(404, "unknown_session", f"no session {sid!r}")

        def generate():
            # initial snapshot so subscribers can paint immediately
            with session.lock:
                bundle = engine.bundle(session.state.current)
            yield _sse(engine, session, bundle)
            idle = 0.02
            while True:
                if not session.playing:
                    time.sleep(idle)
                    continue
                with session.lock:
                    if not session.playing:
                        continue
                    session.state, bundle = engine.step(
                        session.state, session.state.direction)
                    if bundle.end_of_stream:
                        session.playing = False
                    rate = session.state.rate
                yield _sse(engine, session, bundle)
                time.sleep(1.0 / rate)

        return StreamingResponse(generate(), media_type="text/event-stream")

    def _sse(engine: SyncEngine, session: Session, bundle: SyncBundle) -> str:
        payload = {"session": session.snapshot(),
                   "bundle": _bundle_body(engine, bundle)}
        return f"event: bundle\ndata: {json.dumps(payload)}\n\n"

    # the built viewer, when present, is served from the root path; API
    # routes above take precedence over the static mount
    if viewer_dir is not None and Path(viewer_dir).is_dir():
        app.mount("/", StaticFiles(directory=viewer_dir, html=True),
                  name="viewer")

    return app
