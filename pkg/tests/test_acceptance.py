"""Acceptance suite: one test per system-level guarantee.

Each test exercises a full-scale scenario (thousands of frames or poses),
asserts the guarantee, and records a one-line pass/fail summary that the
terminal reporter prints after the run.
"""

import time

import numpy as np
import pytest
from click.testing import CliRunner
from scipy.spatial.transform import Rotation

from bronchosync.centerline import select_path
from bronchosync.cli import cli
from bronchosync.errors import UnsupportedModeError
from bronchosync.exam_synth import (
    ExamSpec,
    STANDARD_MODALITIES,
    render_exam,
    simulate_trajectory,
)
from bronchosync.features import luminance
from bronchosync.frame_store import encode_store
from bronchosync.kdtree import PoseKDTree, PoseNode, brute_force_nearest
from bronchosync.project import load_runtime
from bronchosync.registration import (
    Anchor,
    Provenance,
    Registrar,
    RegistrationRecord,
    Subsequence,
    retime_subsequence,
)
from bronchosync.render import LumenRenderer
from bronchosync.sync import BasicPlayer, PlayMode, SyncEngine
from bronchosync.video_parse import parse_stream

from conftest import deepest_site, record_criterion, truth_regset

STREAMS = ("nbi_wlb", "nbi", "afb_wlb", "afb")


def _record(name: str, ok: bool, detail: str) -> None:
    record_criterion(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


def _tiny_frames(count: int, seed: int) -> list:
    rng = np.random.default_rng(seed)
    return [rng.integers(0, 256, size=(16, 16), dtype=np.uint8)
            for _ in range(count)]


# --- shared full-scale scenarios -------------------------------------------


@pytest.fixture(scope="module")
def long_path(long_model):
    g = long_model.graph
    return select_path(g, 0, deepest_site(g))


@pytest.fixture(scope="module")
def noise_free_exam(long_model, long_path):
    """1,000+ noise-free frames down the long tube."""
    spec = ExamSpec(path=long_path, fps=30.0, speed_profile=[(0.0, 4.0)],
                    end_truncation_mm=6.0)
    traj = simulate_trajectory(spec, long_model.graph, seed=21)
    renderer = LumenRenderer(long_model.mask)
    stream = render_exam(traj, renderer, STANDARD_MODALITIES[0], spec, seed=21)
    assert stream.frame_count >= 1000
    return stream


@pytest.fixture(scope="module")
def noise_free_lums(noise_free_exam):
    return [luminance(f) for _, f in noise_free_exam.store.iter_frames()]


@pytest.fixture(scope="module")
def noise_free_parse(noise_free_exam):
    return parse_stream(noise_free_exam)


@pytest.fixture(scope="module")
def long_registrar(long_model):
    return Registrar(long_model)


@pytest.fixture(scope="module")
def jittered_streams(long_model, long_path):
    """Four 1,000+-frame streams, distinct seeds, jitter 0.5 mm / 1 deg."""
    renderer = LumenRenderer(long_model.mask)
    out = {}
    for i, name in enumerate(STREAMS):
        spec = ExamSpec(path=long_path, fps=30.0, speed_profile=[(0.0, 4.0)],
                        jitter_pos_mm=0.5, jitter_deg=1.0,
                        end_truncation_mm=6.0)
        out[name] = simulate_trajectory(spec, long_model.graph,
                                        seed=1000 + 31 * i, renderer=renderer)
    assert all(len(t) >= 1000 for t in out.values())
    return out


@pytest.fixture(scope="module")
def four_stream_engine(long_model, jittered_streams):
    stores = {name: encode_store(_tiny_frames(len(t), seed=i))
              for i, (name, t) in enumerate(jittered_streams.items())}
    regsets = {name: truth_regset(name, t)
               for name, t in jittered_streams.items()}
    return SyncEngine(long_model, stores, regsets)


@pytest.fixture(scope="module")
def demo_project(tmp_path_factory):
    """Timed end-to-end pipeline on the demo phantom, via the CLI."""
    root = tmp_path_factory.mktemp("demo")
    runner = CliRunner()
    exam = root / "exam"
    t0 = time.perf_counter()

    r = runner.invoke(cli, ["model", "build",
                            "--phantom", "scripts/phantom_y.toml",
                            "--spacing", "1.0", "-o", str(root / "model.awmd")])
    assert r.exit_code == 0, r.output
    r = runner.invoke(cli, ["synth", "--model", str(root / "model.awmd"),
                            "--spec", "scripts/exam_demo.toml",
                            "--seed", "7", "-o", str(exam)])
    assert r.exit_code == 0, r.output
    for s in STREAMS:
        r = runner.invoke(cli, ["parse", str(exam), "--stream", s,
                                "-o", str(exam / f"{s}.parse")])
        assert r.exit_code == 0, r.output
        r = runner.invoke(cli, ["register", "--model", str(root / "model.awmd"),
                                "--stream", str(exam), "--name", s,
                                "--parse", str(exam / f"{s}.parse"),
                                "--truth-anchors", "--perturb-mm", "2.0",
                                "--perturb-deg", "3.0", "--seed", "3",
                                "-o", str(exam / f"{s}.breg")])
        assert r.exit_code == 0, r.output
    r = runner.invoke(cli, ["sync", "--create", "--model",
                            str(root / "model.awmd"), "--exam", str(exam),
                            "--mode", "advanced",
                            "--project", str(root / "project.bsp")])
    assert r.exit_code == 0, r.output
    r = runner.invoke(cli, ["report", "--project", str(root / "project.bsp")])
    assert r.exit_code == 0, r.output
    report_text = r.output
    r = runner.invoke(cli, ["play", "--project", str(root / "project.bsp"),
                            "--steps", "10", "--direction", "forward"])
    assert r.exit_code == 0, r.output

    elapsed = time.perf_counter() - t0
    return {"root": root, "elapsed": elapsed, "report_text": report_text}


# --- criteria ---------------------------------------------------------------


class TestIndexAndStore:
    def test_kdtree_oracle_equivalence(self):
        rng = np.random.default_rng(0)
        n_nodes, n_queries, weight = 5000, 1000, 10.0
        quats = rng.normal(size=(n_nodes, 4))
        quats /= np.linalg.norm(quats, axis=1, keepdims=True)
        nodes = [PoseNode(frame=i, position=rng.uniform(0, 200, 3),
                          quat=quats[i], site_id=0) for i in range(n_nodes)]
        tree = PoseKDTree(nodes)
        queries = []
        for _ in range(n_queries):
            q = rng.normal(size=4)
            queries.append((rng.uniform(0, 200, 3), q / np.linalg.norm(q)))

        t0 = time.perf_counter()
        got = [tree.nearest(p, q, weight) for p, q in queries]
        elapsed = time.perf_counter() - t0
        matches = 0
        for (p, q), (node, dist) in zip(queries, got):
            oracle, odist = brute_force_nearest(nodes, p, q, weight)
            if node.frame == oracle.frame and dist == odist:
                matches += 1
        ok = matches == n_queries and elapsed < 1.0
        _record("K-D tree oracle equivalence", ok,
                f"{matches}/{n_queries} nearest matches, "
                f"{elapsed:.3f}s query time (< 1 s)")
        assert matches == n_queries
        assert elapsed < 1.0

    def test_frame_store_losslessness(self, short_exam):
        t0 = time.perf_counter()
        exam_frames = [f for _, f in short_exam.store.iter_frames()]
        rng = np.random.default_rng(3)
        n_random = 10_000 - len(exam_frames)
        random_frames = [rng.integers(0, 256, size=(32, 32), dtype=np.uint8)
                         for _ in range(n_random)]
        total = len(exam_frames) + len(random_frames)
        assert total >= 10_000

        exact = 0
        budget_ok = True
        backward_ok = True
        for frames in (exam_frames, random_frames):
            store = encode_store(frames)
            fwd = [f for _, f in store.iter_frames()]
            exact += sum(np.array_equal(a, b) for a, b in zip(fwd, frames))
            # random access touches at most one group (<= 12 frames)
            for n in rng.integers(0, len(frames), size=100):
                before = store.group_decodes
                store.decode_frame(int(n))
                if store.group_decodes - before > 1:
                    budget_ok = False
            bwd = [f for _, f in store.iter_frames(len(frames) - 1, -1, -1)]
            backward_ok &= len(bwd) == len(fwd) and all(
                np.array_equal(a, b) for a, b in zip(bwd, reversed(fwd)))
        elapsed = time.perf_counter() - t0
        ok = (exact == total and budget_ok and backward_ok and elapsed < 30.0)
        _record("Frame store losslessness", ok,
                f"{exact}/{total} frames bit-exact, random access <= 1 group "
                f"(12 frames)/query, backward == reversed forward, "
                f"{elapsed:.1f}s (< 30 s)")
        assert exact == total
        assert budget_ok
        assert backward_ok
        assert elapsed < 30.0

    def test_container_bound(self, four_stream_engine):
        engine = four_stream_engine
        state = engine.start()
        registered = engine.index.registered_frames
        legs = [(+1, len(registered) - 1), (-1, 500), (+1, 500)]
        samples = 0
        max_occ = 0
        violations = 0
        for direction, steps in legs:
            for _ in range(steps):
                state, bundle = engine.step(state, direction)
                for name, container in state.containers.items():
                    samples += 1
                    occ = container.occupancy
                    max_occ = max(max_occ, occ)
                    if occ > 10:
                        violations += 1
                    f = bundle.frames.get(name)
                    if f is not None:
                        engine.frame_pixels(state, name, f)
        torn = sum(c.torn_reads for c in state.containers.values())
        ok = violations == 0 and torn == 0
        _record("Container bound", ok,
                f"4 streams x {len(registered)} frames, 2 reversals, "
                f"{samples} samples, max occupancy {max_occ} (<= 10), "
                f"{torn} partial decodes")
        assert violations == 0
        assert torn == 0


class TestRegistration:
    def test_key_frame_registration(self, long_registrar, noise_free_exam,
                                    noise_free_lums):
        traj = noise_free_exam.trajectory
        n = noise_free_exam.frame_count
        frames = np.linspace(40, n - 60, 100).astype(int)
        rng = np.random.default_rng(11)
        t0 = time.perf_counter()

        recovered = 0
        for f in frames:
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            pos = traj.positions[f] + d * rng.uniform(0.0, 3.0)
            ax = rng.normal(size=3)
            ax /= np.linalg.norm(ax)
            rot = Rotation.from_rotvec(ax * np.radians(rng.uniform(0.0, 5.0)))
            quat = (rot * Rotation.from_quat(traj.quats[f])).as_quat()
            rec = long_registrar.register_key_frame(
                noise_free_lums[f], Anchor(frame=int(f), position=pos, quat=quat))
            if not rec.registered:
                continue
            perr = np.linalg.norm(rec.position - traj.positions[f])
            aerr = 2.0 * np.arccos(min(1.0, abs(float(
                np.dot(rec.quat, traj.quats[f])))))
            if perr <= 1.0 and np.degrees(aerr) <= 2.0:
                recovered += 1

        fixed = 0
        for f in frames:
            rec = long_registrar.register_key_frame(
                noise_free_lums[f],
                Anchor(frame=int(f), position=traj.positions[f],
                       quat=traj.quats[f]))
            if not rec.registered:
                continue
            perr = np.linalg.norm(rec.position - traj.positions[f])
            aerr = 2.0 * np.arccos(min(1.0, abs(float(
                np.dot(rec.quat, traj.quats[f])))))
            if perr <= 1.0 and np.degrees(aerr) <= 2.0:
                fixed += 1

        elapsed = time.perf_counter() - t0
        ok = recovered >= 90 and fixed == 100 and elapsed < 120.0
        _record("Key-frame registration", ok,
                f"{recovered}/100 perturbed anchors (<= 3 mm/5 deg) recovered "
                f"within 1 mm/2 deg (>= 90), {fixed}/100 truth anchors fixed, "
                f"{elapsed:.0f}s (< 2 min)")
        assert recovered >= 90
        assert fixed == 100
        assert elapsed < 120.0

    def test_sequence_registration(self, long_registrar, noise_free_exam,
                                   noise_free_parse):
        traj = noise_free_exam.trajectory
        total = 0
        within = 0
        for shot in noise_free_parse.informative_shots():
            keys = {
                f: RegistrationRecord(
                    frame=f, provenance=Provenance.KEYFRAME_REGISTERED,
                    position=traj.positions[f], quat=traj.quats[f],
                    site_id=int(traj.site_ids[f]), residual=0.0)
                for f in range(shot.start_frame, shot.end_frame + 1, 10)
            }
            out = long_registrar.register_sequence(shot, keys,
                                                   noise_free_parse.motion)
            for f, rec in out.items():
                total += 1
                if rec.registered and \
                        abs(rec.site_id - int(traj.site_ids[f])) <= 2:
                    within += 1
        frac = within / total
        ok = total >= 1000 and frac >= 0.95
        _record("Sequence registration", ok,
                f"{within}/{total} frames within 2 view sites of ground truth "
                f"({100 * frac:.1f}% >= 95%), keys every 10 frames")
        assert total >= 1000
        assert frac >= 0.95


class TestSynchronization:
    def test_association_accuracy(self, four_stream_engine, jittered_streams):
        engine = four_stream_engine
        ref_sites = jittered_streams["nbi_wlb"].site_ids
        ref_registered = len(engine.index.registered_frames)
        details = []
        ok = True
        for name in STREAMS[1:]:
            tgt_sites = jittered_streams[name].site_ids
            table = engine.tables[name]
            within = sum(
                1 for a in table.associations
                if abs(int(ref_sites[a.ref_frame]) -
                       int(tgt_sites[a.stream_frame])) <= 2)
            accuracy = within / len(table)
            completeness = len(table) / ref_registered
            ok &= accuracy >= 0.9 and completeness >= 0.8
            details.append(f"{name} {100 * accuracy:.1f}%/"
                           f"{100 * completeness:.0f}%")
        _record("Association accuracy", ok,
                "accuracy/completeness per stream (>= 90%/>= 80%): "
                + ", ".join(details))
        assert ok

    def test_basic_vs_advanced_contrast(self, long_model, long_path):
        g = long_model.graph
        fps = 30.0
        specs = {
            "nbi_wlb": ExamSpec(path=long_path, fps=fps,
                                speed_profile=[(0.0, 12.0)],
                                end_truncation_mm=6.0),
            "nbi": ExamSpec(path=long_path, fps=fps,
                            speed_profile=[(0.0, 8.0), (70.0, 18.0)],
                            end_truncation_mm=6.0),
        }
        trajs = {n: simulate_trajectory(s, g, seed=5 + i)
                 for i, (n, s) in enumerate(specs.items())}
        site_arcs = np.array([s.arc_length for s in g.sites])
        s0 = int(np.argmin(np.abs(site_arcs - 15.0)))
        s1 = int(np.argmin(np.abs(site_arcs - 130.0)))

        def bound_frame(traj, site):
            return int(np.argmin(np.abs(traj.arcs - site_arcs[site])))

        subs = {}
        for name, t in trajs.items():
            f0, f1 = bound_frame(t, s0), bound_frame(t, s1)
            subs[name] = Subsequence(
                start_frame=f0, end_frame=f1,
                start_time=float(t.timestamps[f0]),
                end_time=float(t.timestamps[f1]),
                start_site=s0, end_site=s1)
        warps = {n: [retime_subsequence(subs[n], subs["nbi_wlb"])]
                 for n in trajs}
        player = BasicPlayer(warps, fps=fps)

        stores = {n: encode_store(_tiny_frames(len(t), seed=9))
                  for n, t in trajs.items()}
        regsets = {n: truth_regset(n, t) for n, t in trajs.items()}
        engine = SyncEngine(long_model, stores, regsets)
        targets = engine.targets["nbi"]
        ref_t = trajs["nbi_wlb"].timestamps
        ref_sites = trajs["nbi_wlb"].site_ids
        tgt_sites = trajs["nbi"].site_ids

        # at the bound timestamps both modes pick the same view site
        bounds_agree = True
        for t in (subs["nbi_wlb"].start_time, subs["nbi_wlb"].end_time):
            r = int(np.argmin(np.abs(ref_t - t)))
            f_basic = player.bundle_at(t).frames["nbi"]
            f_adv = targets.target(r)
            bounds_agree &= \
                int(tgt_sites[f_basic]) == int(tgt_sites[f_adv])

        # between them, advanced tracks ground truth strictly better
        times = np.linspace(subs["nbi_wlb"].start_time,
                            subs["nbi_wlb"].end_time, 42)[1:-1]
        basic_err, adv_err = [], []
        for t in times:
            r = int(np.argmin(np.abs(ref_t - t)))
            f_basic = player.bundle_at(float(t)).frames["nbi"]
            f_adv = targets.target(r)
            ref_site = int(ref_sites[r])
            basic_err.append(abs(int(tgt_sites[f_basic]) - ref_site))
            adv_err.append(abs(int(tgt_sites[f_adv]) - ref_site))
        mean_basic = float(np.mean(basic_err))
        mean_adv = float(np.mean(adv_err))
        ok = bounds_agree and mean_adv < mean_basic
        _record("Basic-vs-advanced contrast", ok,
                f"bound timestamps agree: {bounds_agree}; mean site "
                f"disagreement advanced {mean_adv:.2f} < basic "
                f"{mean_basic:.2f}")
        assert bounds_agree
        assert mean_adv < mean_basic

    def test_mode_contract(self, four_stream_engine):
        engine = four_stream_engine
        basic_rejects = False
        state = engine.start(mode=PlayMode.BASIC)
        try:
            engine.step(state, -1)
        except UnsupportedModeError:
            basic_rejects = True

        start = engine.index.registered_frames[200]
        state = engine.start(ref_frame=start)
        fwd = [engine.bundle(start)]
        for _ in range(40):
            state, b = engine.step(state, +1)
            fwd.append(b)
        bwd = []
        for _ in range(40):
            state, b = engine.step(state, -1)
            bwd.append(b)
        exact = (
            [b.ref_frame for b in bwd] ==
            [b.ref_frame for b in reversed(fwd[:-1])]
            and [b.frames for b in bwd] ==
            [b.frames for b in reversed(fwd[:-1])]
        )
        ok = basic_rejects and exact
        _record("Mode contract", ok,
                f"basic rejects reverse: {basic_rejects}; advanced reverse "
                f"exactly reverses forward over 40 steps: {exact}")
        assert basic_rejects
        assert exact


class TestPipeline:
    def test_end_to_end_under_five_minutes(self, demo_project):
        elapsed = demo_project["elapsed"]
        ok = elapsed < 300.0
        _record("End-to-end pipeline", ok,
                f"phantom -> synth -> parse -> register -> sync -> report in "
                f"{elapsed:.0f}s (< 5 min)")
        assert (demo_project["root"] / "project.bsp").exists()
        assert elapsed < 300.0

    def test_report_shape(self, demo_project):
        rt = load_runtime(demo_project["root"] / "project.bsp")
        engine = rt.engine()
        kf = rt.keyframe_counts()
        report = engine.report(kf, rt.truth_positions()).to_dict()

        schema_ok = report["columns"] == [
            "Stream", "Total", "Keyframes", "InteractivelyRegistered",
            "SequenceRegistered", "Associated", "MeanErrorMm"]
        rows = {r["stream"]: r for r in report["rows"]}
        ref_registered = rows["nbi_wlb"]["sequence_registered"]
        bounds_ok = rows["nbi_wlb"]["associated"] == "N/A"
        densities = []
        for name in STREAMS:
            r = rows[name]
            bounds_ok &= r["sequence_registered"] <= r["total"]
            if name != "nbi_wlb":
                bounds_ok &= r["associated"] <= ref_registered
            densities.append(r["total"] / kf[name])
        density_ok = all(8.0 <= d <= 15.0 for d in densities)
        ok = schema_ok and bounds_ok and density_ok
        _record("Report shape", ok,
                f"schema: {schema_ok}; row bounds: {bounds_ok}; key density "
                f"1:{min(densities):.1f}-1:{max(densities):.1f} "
                f"(band 1:8-1:15)")
        assert schema_ok
        assert bounds_ok
        assert density_ok
