"""HTTP API: read endpoints, playback sessions, and the event stream."""

import io
import json
import socket
import threading
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from bronchosync.centerline import select_path
from bronchosync.exam_synth import (
    ExamSpec,
    ExamStream,
    Modality,
    save_stream,
    simulate_trajectory,
)
from bronchosync.frame_store import encode_store
from bronchosync.model_io import save_model
from bronchosync.project import Project, StreamEntry, load_runtime
from bronchosync.registration import save_registration
from bronchosync.server import create_app
from bronchosync.video_parse import save_parse

from conftest import deepest_site, truth_regset


@pytest.fixture(scope="module")
def runtime(tmp_path_factory, tube_model, short_exam, short_parse):
    """Two-stream project: the rendered reference plus a synthetic target."""
    root = tmp_path_factory.mktemp("server")
    save_model(tube_model, root / "model.awmd")
    exam = root / "exam"
    save_stream(short_exam, exam)
    save_parse(short_parse, exam / "nbi_wlb.bprs")
    save_registration(truth_regset("nbi_wlb", short_exam.trajectory),
                      exam / "nbi_wlb.breg")

    g = tube_model.graph
    path = select_path(g, 0, deepest_site(g))
    spec = ExamSpec(path=path, fps=30.0, speed_profile=[(0.0, 14.0)],
                    jitter_pos_mm=0.3, jitter_deg=1.0)
    traj = simulate_trajectory(spec, g, seed=77)
    rng = np.random.default_rng(5)
    frames = [rng.integers(0, 256, size=(16, 16), dtype=np.uint8)
              for _ in range(len(traj))]
    target = ExamStream(modality=Modality("NBI", "NBI_SCOPE"),
                        store=encode_store(frames), trajectory=traj,
                        uninformative=np.zeros(len(traj), dtype=bool),
                        fps=30.0)
    save_stream(target, exam)
    save_registration(truth_regset("nbi", traj), exam / "nbi.breg")

    project = Project(
        root=root, model_path="model.awmd", reference="nbi_wlb",
        mode="advanced",
        streams={
            "nbi_wlb": StreamEntry(store="exam/nbi_wlb.bfrs",
                                   truth="exam/nbi_wlb.truth",
                                   parse="exam/nbi_wlb.bprs",
                                   registration="exam/nbi_wlb.breg"),
            "nbi": StreamEntry(store="exam/nbi.bfrs", truth="exam/nbi.truth",
                               registration="exam/nbi.breg"),
        },
    )
    project.save(root / "project.bsp")
    return load_runtime(root / "project.bsp")


@pytest.fixture(scope="module")
def client(runtime):
    return TestClient(create_app(runtime))


class TestReadEndpoints:
    def test_project(self, client, runtime):
        body = client.get("/api/project").json()
        assert body["reference"] == "nbi_wlb"
        assert body["mode"] == "advanced"
        assert body["streams"] == ["nbi", "nbi_wlb"]
        assert body["model"]["sites"] == len(runtime.model.graph.sites)

    def test_tree(self, client, runtime):
        body = client.get("/api/tree").json()
        assert len(body["sites"]) == len(runtime.model.graph.sites)
        first = body["sites"][0]
        assert set(first) == {"id", "position_mm", "quat", "branch",
                              "arc_length_mm"}
        assert all(len(e) == 2 for e in body["edges"])

    def test_streams(self, client, runtime):
        body = client.get("/api/streams").json()
        rows = {r["name"]: r for r in body}
        assert set(rows) == {"nbi_wlb", "nbi"}
        assert rows["nbi_wlb"]["reference"] and not rows["nbi"]["reference"]
        assert rows["nbi_wlb"]["modality"] == "WLB"
        assert rows["nbi"]["frames"] == runtime.streams["nbi"].frame_count
        assert all(r["registered"] > 0 for r in body)

    def test_frame_png_bit_exact(self, client, runtime):
        r = client.get("/api/frame/nbi/3")
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        px = np.asarray(Image.open(io.BytesIO(r.content)))
        assert np.array_equal(px, runtime.streams["nbi"].store.decode_frame(3))

    def test_frame_errors(self, client):
        r = client.get("/api/frame/ghost/0")
        assert r.status_code == 404
        assert r.json()["error"]["code"] == "unknown_stream"
        r = client.get("/api/frame/nbi/99999")
        assert r.status_code == 404
        assert r.json()["error"]["code"] == "frame_out_of_range"

    def test_virtual_view(self, client):
        r = client.get("/api/vb/0")
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        assert client.get("/api/vb/99999").status_code == 404

    def test_bundle(self, client):
        body = client.get("/api/bundle/10").json()
        assert body["ref_frame"] == 10
        assert set(body["frames"]) == {"nbi_wlb", "nbi"}
        assert set(body["site_ids"]) == {"nbi_wlb", "nbi"}
        assert len(body["pose"]["position_mm"]) == 3
        assert len(body["pose"]["quat"]) == 4

    def test_bundle_out_of_range(self, client):
        r = client.get("/api/bundle/99999")
        assert r.status_code == 404
        assert set(r.json()["error"]) == {"code", "message"}

    def test_associations(self, client):
        body = client.get("/api/associations/nbi").json()
        assert not body["reference"]
        assert len(body["associations"]) > 0
        a = body["associations"][0]
        assert set(a) == {"ref_frame", "stream_frame", "distance_mm"}
        ref = client.get("/api/associations/nbi_wlb").json()
        assert ref["reference"] and ref["associations"] == []
        assert client.get("/api/associations/ghost").status_code == 404

    def test_report(self, client):
        body = client.get("/api/report").json()
        assert body["columns"][0] == "Stream"
        names = [r["stream"] for r in body["rows"]]
        assert set(names) == {"nbi_wlb", "nbi"}


class TestStaticViewer:
    def test_viewer_served_from_root(self, runtime, tmp_path):
        (tmp_path / "index.html").write_text("<html><body>viewer</body></html>")
        (tmp_path / "app.js").write_text("console.log('hi');")
        client = TestClient(create_app(runtime, viewer_dir=tmp_path))
        r = client.get("/")
        assert r.status_code == 200
        assert "viewer" in r.text
        assert client.get("/app.js").status_code == 200
        # API routes still take precedence over the static mount
        assert client.get("/api/project").json()["reference"] == "nbi_wlb"

    def test_missing_viewer_dir_skips_mount(self, runtime, tmp_path):
        client = TestClient(create_app(runtime, viewer_dir=tmp_path / "nope"))
        assert client.get("/").status_code == 404
        assert client.get("/api/project").status_code == 200


class TestSessions:
    def test_create_default_mode(self, client):
        body = client.post("/api/session").json()
        assert body["mode"] == "advanced"
        assert body["direction"] == 1
        assert not body["playing"]

    def test_create_unknown_mode(self, client):
        r = client.post("/api/session", json={"mode": "turbo"})
        assert r.status_code == 400
        assert r.json()["error"]["code"] == "unknown_mode"

    def test_create_malformed_body(self, client):
        r = client.post("/api/session", content=b"{oops",
                        headers={"content-type": "application/json"})
        assert r.status_code == 400

    def test_transport_unknown_session(self, client):
        r = client.post("/api/session/nope/transport",
                        json={"command": "play"})
        assert r.status_code == 404

    def test_transport_commands(self, client):
        sid = client.post("/api/session").json()["id"]
        url = f"/api/session/{sid}/transport"

        body = client.post(url, json={"command": "play"}).json()
        assert body["session"]["playing"]
        assert "bundle" in body

        body = client.post(url, json={"command": "pause"}).json()
        assert not body["session"]["playing"]

        body = client.post(url, json={"command": "seek", "frame": 12}).json()
        assert body["bundle"]["ref_frame"] == body["session"]["current"]

        body = client.post(url, json={"command": "rate", "rate": 5.0}).json()
        assert body["session"]["rate"] == 5.0

        body = client.post(url, json={"command": "reverse"}).json()
        assert body["session"]["direction"] == -1
        body = client.post(url, json={"command": "forward"}).json()
        assert body["session"]["direction"] == 1

    def test_transport_bad_commands(self, client):
        sid = client.post("/api/session").json()["id"]
        url = f"/api/session/{sid}/transport"
        assert client.post(url, json={"command": "warp"}).status_code == 400
        assert client.post(
            url, json={"command": "seek", "frame": "x"}).status_code == 400
        assert client.post(
            url, json={"command": "seek", "frame": 10_000}).status_code == 400
        assert client.post(
            url, json={"command": "rate", "rate": -1}).status_code == 400

    def test_basic_mode_rejects_reverse(self, client):
        sid = client.post("/api/session", json={"mode": "basic"}).json()["id"]
        r = client.post(f"/api/session/{sid}/transport",
                        json={"command": "reverse"})
        assert r.status_code == 409
        assert r.json()["error"]["code"] == "unsupported_mode"


@pytest.fixture(scope="module")
def server_url(runtime):
    import uvicorn

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    config = uvicorn.Config(create_app(runtime), host="127.0.0.1",
                            port=port, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not server.started:
        assert time.monotonic() < deadline, "server failed to start"
        time.sleep(0.05)
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)


class TestEventStream:
    def test_unknown_session_rejected(self, server_url):
        import httpx

        r = httpx.get(f"{server_url}/api/session/nope/events")
        assert r.status_code == 404

    def test_stream_pushes_bundles(self, server_url):
        import httpx

        sid = httpx.post(f"{server_url}/api/session").json()["id"]
        httpx.post(f"{server_url}/api/session/{sid}/transport",
                   json={"command": "rate", "rate": 60.0})
        httpx.post(f"{server_url}/api/session/{sid}/transport",
                   json={"command": "play"})
        events = []
        with httpx.stream("GET", f"{server_url}/api/session/{sid}/events",
                          timeout=10.0) as r:
            assert r.headers["content-type"].startswith("text/event-stream")
            buf = ""
            for chunk in r.iter_text():
                buf += chunk
                while "\n\n" in buf:
                    block, buf = buf.split("\n\n", 1)
                    events.append(block)
                if len(events) >= 3:
                    break
        payloads = []
        for block in events[:3]:
            lines = dict(ln.split(": ", 1) for ln in block.splitlines())
            assert lines["event"] == "bundle"
            payloads.append(json.loads(lines["data"]))
        frames = [p["bundle"]["ref_frame"] for p in payloads]
        # first event is the initial snapshot; later ones advance playback
        assert frames[1] > frames[0] or frames[2] > frames[0]
        assert all("pose" in p["bundle"] for p in payloads)
