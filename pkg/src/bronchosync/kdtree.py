"""Balanced K-D tree over registered frame poses.

Nodes are keyed by 3D position but queries minimize a combined metric
d = |Δposition| + weight · angle(Δorientation). Because the orientation
term is non-negative, |Δposition| lower-bounds d, so the usual positional
plane-distance pruning remains exact for the combined metric: a subtree
whose positional bound already exceeds the best combined distance can
never contain a better node. Queries therefore return the true metric
nearest neighbor, not a heuristic re-ranking.

Ties break toward the lower frame index so reports are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SyncError


@dataclass(frozen=True)
class PoseNode:
    """One registered frame: position keyed, full pose carried along."""

    frame: int
    position: np.ndarray
    quat: np.ndarray
    site_id: int


def quat_angle(qa: np.ndarray, qb: np.ndarray) -> float:
    """Rotation angle (radians) between two unit quaternions."""
    d = abs(float(np.dot(qa, qb)))
    return 2.0 * float(np.arccos(min(1.0, d)))


def pose_distance(
    position: np.ndarray, quat: np.ndarray | None, node: PoseNode, weight: float
) -> float:
    """Association metric: positional distance plus weighted angle."""
    d = float(np.linalg.norm(node.position - position))
    if quat is not None and weight > 0.0:
        d += weight * quat_angle(np.asarray(quat, float), node.quat)
    return d


@dataclass
class _TreeNode:
    index: int                 # into the node list
    axis: int
    left: "_TreeNode | None" = None
    right: "_TreeNode | None" = None


@dataclass
class PoseKDTree:
    """Median-split tree; build once, query many."""

    nodes: list[PoseNode]
    _root: _TreeNode | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.nodes:
            raise SyncError("cannot build an index over zero registered frames")
        self._points = np.array([n.position for n in self.nodes], dtype=float)
        self._quats = np.array([n.quat for n in self.nodes], dtype=float)
        self._frames = np.array([n.frame for n in self.nodes])
        order = np.arange(len(self.nodes))
        self._root = self._build(order, depth=0)

    def _build(self, order: np.ndarray, depth: int) -> _TreeNode | None:
        if order.size == 0:
            return None
        pts = self._points[order]
        # split along the widest axis of this subset; degenerate spreads
        # fall back to depth cycling
        spread = pts.max(axis=0) - pts.min(axis=0)
        axis = int(np.argmax(spread)) if spread.max() > 0 else depth % 3
        mid = order.size // 2
        part = order[np.argsort(pts[:, axis], kind="stable")]
        node = _TreeNode(index=int(part[mid]), axis=axis)
        node.left = self._build(part[:mid], depth + 1)
        node.right = self._build(part[mid + 1:], depth + 1)
        return node

    def __len__(self) -> int:
        return len(self.nodes)

    def nearest(
        self, position: np.ndarray, quat: np.ndarray | None = None,
        weight: float = 0.0,
    ) -> tuple[PoseNode, float]:
        """Exact nearest node under the combined metric.

        Tree descent finds the positional nearest; its combined distance
        upper-bounds the answer, and because |Δposition| lower-bounds the
        metric every possible winner lies inside that positional radius.
        The (usually small) candidate set is then scanned exactly.
        """
        position = np.asarray(position, dtype=float)
        best: tuple[float, int] = (float("inf"), -1)  # (distance, frame)
        best_node: PoseNode | None = None
        stack = [self._root]
        while stack:
            tn = stack.pop()
            if tn is None:
                continue
            node = self.nodes[tn.index]
            d = float(np.linalg.norm(node.position - position))
            key = (d, node.frame)
            if key < best:
                best, best_node = key, node
            delta = position[tn.axis] - node.position[tn.axis]
            near, far = (tn.left, tn.right) if delta < 0 else (tn.right, tn.left)
            if abs(delta) <= best[0]:
                stack.append(far)
            stack.append(near)
        assert best_node is not None
        if quat is None or weight == 0.0:
            return best_node, best[0]

        quat = np.asarray(quat, dtype=float)
        bound = pose_distance(position, quat, best_node, weight)
        dpos = np.linalg.norm(self._points - position, axis=1)
        cand = np.nonzero(dpos <= bound)[0]
        ang = 2.0 * np.arccos(np.minimum(1.0, np.abs(self._quats[cand] @ quat)))
        d = dpos[cand] + weight * ang
        # the vectorized metric can differ from the scalar one in the last
        # ulp; re-score the near-minimal candidates scalar-exactly so the
        # result is bit-identical to an exhaustive scan
        close = cand[d <= d.min() + 1e-9]
        win = min(
            close,
            key=lambda j: (pose_distance(position, quat, self.nodes[j], weight),
                           self._frames[j]),
        )
        node = self.nodes[win]
        return node, pose_distance(position, quat, node, weight)

    def k_nearest(self, position: np.ndarray, k: int) -> list[PoseNode]:
        """k positionally nearest nodes, closest first."""
        position = np.asarray(position, dtype=float)
        d = np.linalg.norm(self._points - position, axis=1)
        order = np.lexsort((np.array([n.frame for n in self.nodes]), d))
        return [self.nodes[i] for i in order[:k]]


def brute_force_nearest(
    nodes: list[PoseNode], position: np.ndarray,
    quat: np.ndarray | None = None, weight: float = 0.0,
) -> tuple[PoseNode, float]:
    """Exhaustive-scan oracle for the tree's nearest query."""
    best_node = min(
        nodes, key=lambda n: (pose_distance(position, quat, n, weight), n.frame)
    )
    return best_node, pose_distance(position, quat, best_node, weight)
