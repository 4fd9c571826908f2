"""Command-line entry points.

Exit codes: 0 success, 1 user error (bad input, missing files, usage),
2 internal error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .errors import BronchoSyncError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


def _read_toml(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


@click.group()
def cli():
    """Multimodal bronchoscopic video synchronization workbench."""


# --- model -----------------------------------------------------------------

@cli.group()
def model():
    """Airway model construction."""


@model.command("build")
@click.option("--phantom", "phantom_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--spacing", type=float, default=1.0, show_default=True,
              help="View-site arc-length spacing (mm).")
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
def model_build(phantom_path: str, spacing: float, output: str):
    """Rasterize a phantom spec and extract its centerline model."""
    from .centerline import extract_centerlines
    from .model_io import AirwayModel, save_model
    from .phantom import PhantomSpec, build_phantom

    spec = PhantomSpec.from_toml(phantom_path)
    _, mask = build_phantom(spec)
    graph = extract_centerlines(mask, spacing_mm=spacing)
    save_model(AirwayModel(mask=mask, graph=graph), output)
    click.echo(f"model: {len(graph.sites)} sites, "
               f"{graph.branch_count()} branches -> {output}")


# --- synth -----------------------------------------------------------------

@cli.command("synth")
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--spec", "spec_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("-o", "--output", required=True, type=click.Path(file_okay=False))
def synth(model_path: str, spec_path: str, seed: int, output: str):
    """Render a ground-truthed four-stream exam along the model."""
    from .exam_synth import exam_spec_from_dict, save_stream, synthesize_exam
    from .model_io import load_model
    from .render import LumenRenderer

    m = load_model(model_path)
    espec = exam_spec_from_dict(_read_toml(spec_path), m.graph)
    renderer = LumenRenderer(m.mask)
    streams = synthesize_exam(espec, m.graph, renderer, seed)
    for name, stream in streams.items():
        save_stream(stream, output)
        click.echo(f"{name}: {stream.frame_count} frames -> "
                   f"{Path(output) / (name + '.bfrs')}")


# --- store -----------------------------------------------------------------

@cli.group()
def store():
    """Frame container inspection and conversion."""


@store.command("encode")
@click.argument("frames_npy", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
def store_encode(frames_npy: str, output: str):
    """Encode a (N,H,W[,C]) uint8 .npy stack into a frame store."""
    from .frame_store import encode_store

    frames = np.load(frames_npy)
    fs = encode_store(list(frames))
    fs.save(output)
    click.echo(f"{fs.frame_count} frames, {fs.group_count} groups -> {output}")


@store.command("decode")
@click.argument("store_path", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@click.option("--frame", type=int, default=None,
              help="Decode a single frame instead of the full stack.")
def store_decode(store_path: str, output: str, frame: int | None):
    """Decode a frame store back to a .npy stack (lossless)."""
    from .frame_store import FrameStore

    fs = FrameStore.load(store_path)
    if frame is not None:
        np.save(output, fs.decode_frame(frame))
        click.echo(f"frame {frame} -> {output}")
    else:
        np.save(output, np.stack([f for _, f in fs.iter_frames()]))
        click.echo(f"{fs.frame_count} frames -> {output}")


@store.command("probe")
@click.argument("store_path", type=click.Path(exists=True, dir_okay=False))
def store_probe(store_path: str):
    """Print a frame store's header."""
    from .frame_store import FrameStore

    fs = FrameStore.load(store_path)
    click.echo(json.dumps({
        "width": fs.width, "height": fs.height, "channels": fs.channels,
        "gop_size": fs.gop_size, "frame_count": fs.frame_count,
        "groups": fs.group_count,
    }, indent=2))


# --- parse -----------------------------------------------------------------

@cli.command("parse")
@click.argument("exam_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--stream", "stream_name", required=True,
              help="Stream name inside the exam directory (e.g. nbi_wlb).")
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
def parse_cmd(exam_dir: str, stream_name: str, output: str):
    """Parse one exam stream into shots, motion, and key frames."""
    from .exam_synth import load_stream
    from .video_parse import parse_stream, save_parse

    stream = load_stream(exam_dir, stream_name)
    result = parse_stream(stream)
    save_parse(result, output)
    informative = sum(1 for s in result.shots if s.informative)
    click.echo(
        f"{stream_name}: {result.frame_count} frames, "
        f"{len(result.shots)} shots ({informative} informative), "
        f"{len(result.key_frames)} key frames -> {output}"
    )


# --- register --------------------------------------------------------------

def _anchors_from_toml(path: str, graph) -> list:
    from .registration import Anchor, AnchorSource

    doc = _read_toml(path)
    anchors = []
    for entry in doc.get("anchors", []):
        frame = int(entry["frame"])
        if "site" in entry:
            site = graph.site(int(entry["site"]))
            position, quat = site.position, site.quat
        else:
            position = np.asarray(entry["position_mm"], dtype=float)
            quat = np.asarray(entry["quat"], dtype=float)
        anchors.append(Anchor(frame=frame, position=position, quat=quat,
                              source=AnchorSource.USER))
    return anchors


def _anchors_from_truth(stream, parse_result, perturb_mm: float,
                        perturb_deg: float, seed: int) -> list:
    from scipy.spatial.transform import Rotation

    from .registration import Anchor, AnchorSource

    rng = np.random.default_rng(seed)
    t = stream.trajectory
    anchors = []
    for f in parse_result.key_frame_indices:
        p = t.positions[f].copy()
        q = t.quats[f].copy()
        if perturb_mm > 0:
            d = rng.normal(size=3)
            p = p + d / np.linalg.norm(d) * rng.uniform(0, perturb_mm)
        if perturb_deg > 0:
            ax = rng.normal(size=3)
            ax = ax / np.linalg.norm(ax) * np.radians(rng.uniform(0, perturb_deg))
            q = (Rotation.from_rotvec(ax) * Rotation.from_quat(q)).as_quat()
        anchors.append(Anchor(frame=int(f), position=p, quat=q,
                              source=AnchorSource.TRUTH_PERTURBED))
    return anchors


@cli.command("register")
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--stream", "stream_path", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="Exam directory; combined with --name.")
@click.option("--name", "stream_name", required=True)
@click.option("--parse", "parse_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--anchors", "anchors_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Structured anchors file (frame + pose or site).")
@click.option("--truth-anchors", is_flag=True,
              help="Anchor every key frame at its simulator ground-truth "
                   "pose (synthetic data only).")
@click.option("--perturb-mm", type=float, default=0.0, show_default=True)
@click.option("--perturb-deg", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
def register_cmd(model_path, stream_path, stream_name, parse_path, anchors_path,
                 truth_anchors, perturb_mm, perturb_deg, seed, output):
    """Register a stream: anchored key frames + sequence propagation."""
    from .exam_synth import load_stream
    from .features import luminance
    from .model_io import load_model
    from .registration import Registrar, register_stream, save_registration
    from .video_parse import load_parse

    if (anchors_path is None) == (not truth_anchors):
        raise click.UsageError("provide exactly one of --anchors / --truth-anchors")
    m = load_model(model_path)
    stream = load_stream(stream_path, stream_name)
    parse_result = load_parse(parse_path)
    frames_lum = [luminance(f) for _, f in stream.store.iter_frames()]
    if truth_anchors:
        anchors = _anchors_from_truth(stream, parse_result, perturb_mm,
                                      perturb_deg, seed)
    else:
        anchors = _anchors_from_toml(anchors_path, m.graph)
    registrar = Registrar(m)
    regset = register_stream(registrar, stream_name, frames_lum, parse_result,
                             anchors)
    save_registration(regset, output)
    click.echo(
        f"{stream_name}: {regset.registered_count}/{regset.frame_count} "
        f"registered ({len(anchors)} anchors) -> {output}"
    )


# --- project assembly / sync ----------------------------------------------

STREAM_NAMES = ("nbi_wlb", "nbi", "afb_wlb", "afb")


def _normalize_stream(name: str) -> str:
    return name.replace("-", "_").lower()


@cli.command("sync")
@click.option("--project", "project_path", required=True,
              type=click.Path(dir_okay=False))
@click.option("--reference", default="nbi-wlb", show_default=True)
@click.option("--create", is_flag=True,
              help="Assemble the manifest from --model and --exam first.")
@click.option("--model", "model_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--exam", "exam_dir", default=None,
              type=click.Path(exists=True, file_okay=False),
              help="Directory holding <stream>.bfrs/.truth/.parse/.breg files.")
@click.option("--mode", type=click.Choice(["basic", "advanced"]),
              default="advanced", show_default=True)
def sync_cmd(project_path, reference, create, model_path, exam_dir, mode):
    """Build associations for a project (optionally assembling it first)."""
    import os

    from .project import Project, StreamEntry, load_runtime

    reference = _normalize_stream(reference)
    if create:
        if not (model_path and exam_dir):
            raise click.UsageError("--create requires --model and --exam")
        root = Path(project_path).resolve().parent
        exam = Path(exam_dir).resolve()
        streams = {}
        for name in STREAM_NAMES:
            if not (exam / f"{name}.bfrs").exists():
                continue
            def rel(suffix):
                p = exam / f"{name}{suffix}"
                return os.path.relpath(p, root) if p.exists() else None
            streams[name] = StreamEntry(
                store=os.path.relpath(exam / f"{name}.bfrs", root),
                truth=rel(".truth"), parse=rel(".parse"),
                registration=rel(".breg"),
            )
        project = Project(root=root,
                          model_path=os.path.relpath(Path(model_path).resolve(), root),
                          reference=reference, mode=mode, streams=streams)
        project.save(project_path)
        click.echo(f"manifest: {len(streams)} streams -> {project_path}")
    runtime = load_runtime(project_path)
    engine = runtime.engine()
    click.echo(f"reference {engine.reference}: {len(engine.index)} indexed poses")
    for name, table in sorted(engine.tables.items()):
        click.echo(f"{name}: {len(table)} associations")


@cli.command("report")
@click.option("--project", "project_path", required=True,
              type=click.Path(dir_okay=False))
def report_cmd(project_path):
    """Print the per-stream synchronization table."""
    from .project import load_runtime

    runtime = load_runtime(project_path)
    engine = runtime.engine()
    report = engine.report(runtime.keyframe_counts(), runtime.truth_positions())
    click.echo(report.to_text())


@cli.command("play")
@click.option("--project", "project_path", required=True,
              type=click.Path(dir_okay=False))
@click.option("--mode", type=click.Choice(["basic", "advanced"]), default=None,
              help="Override the project mode.")
@click.option("--steps", type=int, default=60, show_default=True)
@click.option("--direction", type=click.Choice(["forward", "backward"]),
              default="forward", show_default=True)
def play_cmd(project_path, mode, steps, direction):
    """Headless playback: step the engine and print bundle lines."""
    from .project import load_runtime
    from .sync import PlayMode

    runtime = load_runtime(project_path)
    engine = runtime.engine()
    play_mode = PlayMode(mode or runtime.project.mode)
    state = engine.start(play_mode)
    d = 1 if direction == "forward" else -1
    for _ in range(steps):
        state, bundle = engine.step(state, d)
        frames = " ".join(
            f"{k}={'-' if v is None else v}" for k, v in sorted(bundle.frames.items())
        )
        click.echo(f"ref={bundle.ref_frame} site={bundle.site_id} {frames}")
        if bundle.end_of_stream:
            click.echo("end of stream")
            break


@cli.command("serve")
@click.option("--project", "project_path", required=True,
              type=click.Path(dir_okay=False))
@click.option("--bind", default="127.0.0.1:8000", show_default=True)
@click.option("--viewer", "viewer_dir", type=click.Path(file_okay=False),
              default=None,
              help="Directory with the built browser viewer "
                   "[default: bundled frontend/dist when present].")
def serve_cmd(project_path, bind, viewer_dir):
    """Serve the project API and the browser viewer."""
    import uvicorn

    from .project import load_runtime
    from .server import create_app, default_viewer_dir

    runtime = load_runtime(project_path)
    app = create_app(runtime, viewer_dir or default_viewer_dir())
    host, _, port = bind.partition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000))


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as e:
        return int(e.exit_code)
    except click.ClickException as e:
        e.show()
        return 1
    except click.Abort:
        return 1
    except BronchoSyncError as e:
        click.echo(f"error: {e}", err=True)
        return 1
    except Exception as e:  # noqa: BLE001 - CLI boundary
        click.echo(f"internal error: {type(e).__name__}: {e}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
