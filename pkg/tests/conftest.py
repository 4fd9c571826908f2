"""Shared fixtures: small phantoms, models, and one rendered exam.

Session-scoped fixtures are deliberately tiny; the heavyweight synthetic
exams used by the acceptance suite live in test_acceptance.py.
"""

from __future__ import annotations

import numpy as np
import pytest

from bronchosync.centerline import extract_centerlines, select_path
from bronchosync.exam_synth import (
    ExamSpec,
    STANDARD_MODALITIES,
    render_exam,
    simulate_trajectory,
)
from bronchosync.model_io import AirwayModel
from bronchosync.phantom import PhantomSpec, build_phantom
from bronchosync.render import LumenRenderer

_acceptance_lines: list[str] = []


def record_criterion(line: str) -> None:
    """Collect one pass/fail line per acceptance criterion for the summary."""
    _acceptance_lines.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


def tube_spec(length_mm: float, radius_mm: float, spacing: float = 0.8) -> PhantomSpec:
    return PhantomSpec.from_dict({
        "grid": {"spacing_mm": spacing},
        "branches": [{
            "name": "tube",
            "start_mm": [10.0, 10.0, 4.0],
            "dir": [0.0, 0.0, 1.0],
            "length_mm": length_mm,
            "radius_mm": radius_mm,
        }],
    })


def build_tube_model(length_mm: float, radius_mm: float) -> AirwayModel:
    _, mask = build_phantom(tube_spec(length_mm, radius_mm))
    graph = extract_centerlines(mask)
    return AirwayModel(mask=mask, graph=graph)


def deepest_site(graph) -> int:
    return max(range(len(graph.sites)), key=lambda s: graph.sites[s].arc_length)


@pytest.fixture(scope="session")
def tube_model() -> AirwayModel:
    """Short straight tube: fast to build and render."""
    return build_tube_model(60.0, 5.0)


@pytest.fixture(scope="session")
def long_model() -> AirwayModel:
    """Long straight tube used wherever many distinct sites are needed."""
    return build_tube_model(160.0, 6.0)


@pytest.fixture(scope="session")
def tube_renderer(tube_model) -> LumenRenderer:
    return LumenRenderer(tube_model.mask)


@pytest.fixture(scope="session")
def short_exam(tube_model, tube_renderer):
    """One jittered modality stream with an injected uninformative run."""
    graph = tube_model.graph
    path = select_path(graph, 0, deepest_site(graph))
    spec = ExamSpec(
        path=path,
        fps=30.0,
        speed_profile=[(0.0, 14.0)],
        jitter_pos_mm=0.5,
        jitter_deg=1.0,
        uninformative_runs=[(40, 6)],
        end_truncation_mm=6.0,
    )
    traj = simulate_trajectory(spec, graph, seed=42, renderer=tube_renderer)
    stream = render_exam(traj, tube_renderer, STANDARD_MODALITIES[0], spec, seed=42)
    return stream


@pytest.fixture(scope="session")
def short_parse(short_exam):
    from bronchosync.video_parse import parse_stream

    return parse_stream(short_exam)


@pytest.fixture(scope="session")
def short_lums(short_exam):
    from bronchosync.features import luminance

    return [luminance(f) for _, f in short_exam.store.iter_frames()]


def truth_regset(name: str, trajectory, frame_count: int | None = None):
    """Registration set placing every frame at its simulator ground truth."""
    from bronchosync.registration import (
        Provenance,
        RegistrationRecord,
        RegistrationSet,
    )

    n = len(trajectory) if frame_count is None else frame_count
    records = {
        f: RegistrationRecord(
            frame=f,
            provenance=Provenance.SEQUENCE_PROPAGATED,
            position=np.asarray(trajectory.positions[f], float),
            quat=np.asarray(trajectory.quats[f], float),
            site_id=int(trajectory.site_ids[f]),
            residual=0.0,
        )
        for f in range(n)
    }
    return RegistrationSet(stream=name, frame_count=n, records=records)
