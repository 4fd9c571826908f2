"""Pose index: exact nearest under the combined position+orientation metric."""

import numpy as np
import pytest

from bronchosync import geometry
from bronchosync.errors import SyncError
from bronchosync.kdtree import (
    PoseKDTree,
    PoseNode,
    brute_force_nearest,
    pose_distance,
    quat_angle,
)


def random_nodes(n, seed=0, extent=50.0):
    rng = np.random.default_rng(seed)
    nodes = []
    for i in range(n):
        f = geometry.unit(rng.normal(size=3))
        q = geometry.quat_from_forward_up(f, geometry.default_up_for(f))
        nodes.append(PoseNode(frame=i, position=rng.uniform(0, extent, 3),
                              quat=q, site_id=i))
    return nodes


def test_quat_angle_identity_and_known():
    q = geometry.quat_from_euler([0, 0, 0])
    assert quat_angle(q, q) == pytest.approx(0.0, abs=1e-6)
    q2 = geometry.rotate_quat(q, [1, 0, 0], np.radians(40))
    assert quat_angle(q, q2) == pytest.approx(np.radians(40), abs=1e-9)


def test_pose_distance_combines_terms():
    node = random_nodes(1)[0]
    p = node.position + [3.0, 0, 0]
    q = geometry.rotate_quat(node.quat, [0, 1, 0], np.radians(30))
    assert pose_distance(p, None, node, 1.0) == pytest.approx(3.0)
    assert pose_distance(p, q, node, 0.0) == pytest.approx(3.0)
    assert pose_distance(p, q, node, 2.0) == pytest.approx(
        3.0 + 2.0 * np.radians(30))


def test_empty_index_rejected():
    with pytest.raises(SyncError):
        PoseKDTree([])


def test_single_node():
    nodes = random_nodes(1, seed=3)
    tree = PoseKDTree(nodes)
    node, d = tree.nearest([0.0, 0.0, 0.0])
    assert node is nodes[0]
    assert d == pytest.approx(np.linalg.norm(nodes[0].position))


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_positional_nearest_matches_oracle(seed):
    nodes = random_nodes(300, seed=seed)
    tree = PoseKDTree(nodes)
    rng = np.random.default_rng(seed + 100)
    for _ in range(50):
        p = rng.uniform(-5, 55, 3)
        got, dg = tree.nearest(p)
        want, dw = brute_force_nearest(nodes, p)
        assert got.frame == want.frame
        assert dg == dw


@pytest.mark.parametrize("weight", [0.5, 5.0, 20.0])
def test_combined_nearest_matches_oracle(weight):
    nodes = random_nodes(300, seed=8)
    tree = PoseKDTree(nodes)
    rng = np.random.default_rng(9)
    for _ in range(50):
        p = rng.uniform(-5, 55, 3)
        f = geometry.unit(rng.normal(size=3))
        q = geometry.quat_from_forward_up(f, geometry.default_up_for(f))
        got, dg = tree.nearest(p, q, weight)
        want, dw = brute_force_nearest(nodes, p, q, weight)
        assert got.frame == want.frame
        assert dg == dw


def test_tie_breaks_to_lower_frame():
    q = geometry.quat_from_euler([0, 0, 0])
    pos = np.array([1.0, 2.0, 3.0])
    nodes = [PoseNode(frame=f, position=pos.copy(), quat=q, site_id=f)
             for f in (7, 2, 5)]
    tree = PoseKDTree(nodes)
    node, d = tree.nearest(pos, q, weight=1.0)
    assert node.frame == 2
    assert d == pytest.approx(0.0, abs=1e-12)


def test_k_nearest_sorted_positionally():
    nodes = random_nodes(100, seed=12)
    tree = PoseKDTree(nodes)
    p = np.array([25.0, 25.0, 25.0])
    got = tree.k_nearest(p, 10)
    assert len(got) == 10
    dists = [np.linalg.norm(n.position - p) for n in got]
    assert dists == sorted(dists)
    best, _ = brute_force_nearest(nodes, p)
    assert got[0].frame == best.frame


def test_collinear_positions():
    # degenerate spread along two axes exercises the depth-cycling fallback
    q = geometry.quat_from_euler([0, 0, 0])
    nodes = [PoseNode(frame=i, position=np.array([0.0, 0.0, float(i)]),
                      quat=q, site_id=i) for i in range(50)]
    tree = PoseKDTree(nodes)
    node, d = tree.nearest([0.0, 0.0, 17.2])
    assert node.frame == 17
    assert d == pytest.approx(0.2)
