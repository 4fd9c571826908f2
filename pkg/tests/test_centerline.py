"""Centerline extraction, graph structure, and path selection."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bronchosync.centerline import AirwayPath, extract_centerlines, select_path
from bronchosync.errors import CenterlineError
from bronchosync.phantom import AirwayMask, PhantomSpec, build_phantom

from conftest import build_tube_model, deepest_site, tube_spec


@pytest.fixture(scope="module")
def y_graph():
    doc = {
        "grid": {"spacing_mm": 0.8},
        "branches": [
            {"name": "trachea", "start_mm": [40, 30, 6], "dir": [0, 0, 1],
             "length_mm": 60, "radius_mm": 7, "children": ["left", "right"]},
            {"name": "left", "dir": [0.55, 0, 0.835], "length_mm": 45,
             "radius_mm": 5},
            {"name": "right", "dir": [-0.5, 0.25, 0.83], "length_mm": 40,
             "radius_mm": 4.5},
        ],
    }
    _, mask = build_phantom(PhantomSpec.from_dict(doc))
    return extract_centerlines(mask)


class TestTubeGraph:
    def test_single_branch(self, tube_model):
        assert tube_model.graph.branch_count() == 1

    def test_site_spacing_near_nominal(self, tube_model):
        g = tube_model.graph
        for child, parent in g.parent.items():
            if parent is None:
                continue
            d = np.linalg.norm(g.site(child).position - g.site(parent).position)
            assert 0.25 <= d <= 2.0

    def test_arc_lengths_monotone_down_the_chain(self, tube_model):
        g = tube_model.graph
        for child, parent in g.parent.items():
            if parent is not None:
                assert g.site(child).arc_length > g.site(parent).arc_length

    def test_forward_aligned_with_tube_axis(self, tube_model):
        # interior sites of a z-aligned tube should look along +/- z
        g = tube_model.graph
        interior = [s for s in g.sites if 5.0 < s.arc_length < 45.0]
        assert interior
        for s in interior:
            assert abs(s.forward[2]) > 0.95

    def test_sites_inside_lumen(self, tube_model):
        occ = tube_model.mask.occupancy
        sp = np.asarray(tube_model.mask.spacing)
        for s in tube_model.graph.sites:
            idx = tuple(np.round(s.position / sp).astype(int))
            assert occ[idx]

    def test_up_vectors_orthonormal(self, tube_model):
        for s in tube_model.graph.sites:
            assert np.isclose(np.linalg.norm(s.up), 1.0, atol=1e-6)
            assert np.isclose(np.dot(s.up, s.forward), 0.0, atol=1e-6)


class TestBranchedGraph:
    def test_three_branches_two_leaves(self, y_graph):
        assert y_graph.branch_count() == 3
        leaves = [s for s in y_graph.children if not y_graph.children[s]]
        assert len(leaves) == 2

    def test_root_is_trachea_end(self, y_graph):
        # the trachea is the widest branch, so the root sits at its open end
        root = y_graph.sites[y_graph.root_id]
        assert root.position[2] < 30.0

    def test_edges_form_a_tree(self, y_graph):
        n = len(y_graph.sites)
        assert len(y_graph.edges) == n - 1
        roots = [s for s, p in y_graph.parent.items() if p is None]
        assert roots == [y_graph.root_id]

    def test_nearest_site_id(self, y_graph):
        for sid in (0, len(y_graph.sites) // 2, len(y_graph.sites) - 1):
            p = y_graph.sites[sid].position
            assert y_graph.nearest_site_id(p + 0.01) == sid


class TestSelectPath:
    def test_identity(self, y_graph):
        assert select_path(y_graph, 3, 3).site_ids == (3,)

    def test_leaf_to_leaf_passes_junction(self, y_graph):
        leaves = [s for s in y_graph.children if not y_graph.children[s]]
        path = select_path(y_graph, leaves[0], leaves[1])
        assert path.site_ids[0] in leaves and path.site_ids[-1] in leaves
        branches = {y_graph.sites[s].branch_id for s in path.site_ids}
        assert len(branches) >= 2

    def test_path_edges_are_adjacent(self, y_graph):
        path = select_path(y_graph, y_graph.root_id,
                           deepest_site(y_graph))
        for a, b in zip(path.site_ids, path.site_ids[1:]):
            assert y_graph.parent[b] == a or y_graph.parent[a] == b

    def test_unknown_site_rejected(self, y_graph):
        with pytest.raises(CenterlineError):
            select_path(y_graph, 0, 10_000)

    def test_duplicate_path_ids_rejected(self):
        with pytest.raises(CenterlineError):
            AirwayPath((1, 2, 1))


class TestDegenerateInputs:
    def test_empty_mask_rejected(self):
        mask = AirwayMask(dims=(8, 8, 8), spacing=(1.0, 1.0, 1.0),
                          occupancy=np.zeros((8, 8, 8), dtype=bool))
        with pytest.raises(CenterlineError):
            extract_centerlines(mask)

    def test_disconnected_mask_rejected(self):
        occ = np.zeros((20, 20, 20), dtype=bool)
        occ[2:6, 2:6, 2:6] = True
        occ[12:16, 12:16, 12:16] = True
        mask = AirwayMask(dims=occ.shape, spacing=(1.0, 1.0, 1.0), occupancy=occ)
        with pytest.raises(CenterlineError):
            extract_centerlines(mask)

    def test_symmetric_cross_section_not_annihilated(self):
        # this exact cross-section (radius 8.75 voxels, half-integer center)
        # makes parallel sub-iteration thinning erase the entire tube; the
        # sequential thinner must keep a skeleton spanning its full length
        x, y = np.mgrid[0:68, 0:55]
        disk = (x - 50.0) ** 2 + (y - 37.5) ** 2 <= 8.75**2
        occ = np.zeros((68, 55, 109), dtype=bool)
        occ[:, :, 8:83] = disk[:, :, None]
        mask = AirwayMask(dims=occ.shape, spacing=(0.8, 0.8, 0.8), occupancy=occ)
        graph = extract_centerlines(mask)
        zs = [s.position[2] for s in graph.sites]
        assert max(zs) - min(zs) > 30.0  # covers the tube, not a remnant


@settings(max_examples=6, deadline=None)
@given(
    length=st.floats(min_value=25.0, max_value=60.0),
    radius=st.floats(min_value=3.0, max_value=6.0),
)
def test_tube_extraction_properties(length, radius):
    _, mask = build_phantom(tube_spec(length, radius))
    graph = extract_centerlines(mask)
    assert graph.branch_count() == 1
    arcs = sorted(s.arc_length for s in graph.sites)
    # spur pruning trims roughly a radius from each capped end
    assert length - 4 * radius < arcs[-1] <= length
    assert abs(len(graph.sites) - (arcs[-1] + 1)) <= 3


def test_model_roundtrip(tmp_path, tube_model):
    from bronchosync.model_io import load_model, save_model

    p = tmp_path / "m.awmd"
    save_model(tube_model, p)
    loaded = load_model(p)
    assert np.array_equal(loaded.mask.occupancy, tube_model.mask.occupancy)
    assert loaded.mask.spacing == tube_model.mask.spacing
    assert len(loaded.graph.sites) == len(tube_model.graph.sites)
    for a, b in zip(loaded.graph.sites, tube_model.graph.sites):
        assert np.allclose(a.position, b.position)
        assert np.allclose(a.quat, b.quat)
        assert a.branch_id == b.branch_id
        assert np.isclose(a.arc_length, b.arc_length)
    assert loaded.graph.parent == tube_model.graph.parent


def test_model_bad_magic(tmp_path):
    from bronchosync.errors import BronchoSyncError
    from bronchosync.model_io import load_model

    p = tmp_path / "junk.awmd"
    p.write_bytes(b"NOPE" + b"\0" * 64)
    with pytest.raises(BronchoSyncError):
        load_model(p)
