"""Cluster trees over collocation points and far/close block partitions.

A cluster tree is a binary hierarchy of contiguous index ranges into a
permutation of the point indices; each node carries the axis-aligned
bounding box of its points.  Trees are built by median bisection along the
longest box axis, so the two children split the parent's range exactly and
the depth stays close to ``log2(N / leaf_size)``.

A dual traversal of two cluster trees classifies blocks of the row/column
index product as *far* (admissible, compressible later) or *close* (kept
dense).  Every matrix entry is covered by exactly one emitted pair.

Trees and partitions are immutable after construction and safe to share
across threads for reading.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

__all__ = [
    "PointSet",
    "TreeNode",
    "ClusterTree",
    "BlockPartition",
    "build_cluster_tree",
    "build_partition",
    "coverage_counts",
]


@dataclass(frozen=True)
class PointSet:
    """Collocation points in 3-space with positive weights (panel areas).

    Parameters
    ----------
    coords : (N, 3) array_like
        Point coordinates in model units.
    weights : (N,) array_like
        Strictly positive quadrature weights, one per point.
    """

    coords: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        coords = np.ascontiguousarray(self.coords, dtype=np.float64)
        weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise ValueError("coords must have shape (N, 3)")
        if weights.shape != (coords.shape[0],):
            raise ValueError("weights must have shape (N,)")
        if coords.shape[0] < 1:
            raise ValueError("point set must contain at least one point")
        if not np.all(weights > 0.0):
            raise ValueError("all weights must be strictly positive")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class TreeNode:
    """One node of a :class:`ClusterTree`: a contiguous permuted index span."""

    start: int
    stop: int
    level: int
    parent: int                # -1 for the root
    children: tuple[int, ...]  # () for leaves, otherwise exactly two ids
    bbox_min: np.ndarray
    bbox_max: np.ndarray

    @property
    def size(self) -> int:
        return self.stop - self.start

    @property
    def is_leaf(self) -> bool:
        return not self.children


class ClusterTree:
    """Binary cluster tree over a :class:`PointSet`.

    Node ids are assigned breadth-first, so ids within a level increase
    left to right and levels occupy contiguous id ranges.  ``permutation``
    maps permuted position to original point index; a node owns the
    original indices ``permutation[start:stop]``.
    """

    def __init__(self, points: PointSet, nodes: list[TreeNode],
                 permutation: np.ndarray, leaf_size: int):
        self.points = points
        self.nodes = nodes
        self.permutation = np.asarray(permutation, dtype=np.int64)
        self.leaf_size = int(leaf_size)
        inv = np.empty_like(self.permutation)
        inv[self.permutation] = np.arange(len(self.permutation))
        self.inverse_permutation = inv
        self._levels: list[list[int]] = [[] for _ in range(self.depth)]
        for i, node in enumerate(nodes):
            self._levels[node.level].append(i)

    @property
    def n_points(self) -> int:
        return len(self.permutation)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def depth(self) -> int:
        """Number of levels (a one-node tree has depth 1)."""
        return 1 + max(node.level for node in self.nodes)

    def is_leaf(self, i: int) -> bool:
        return self.nodes[i].is_leaf

    def children(self, i: int) -> tuple[int, ...]:
        return self.nodes[i].children

    def parent(self, i: int) -> int:
        return self.nodes[i].parent

    def indices(self, i: int) -> np.ndarray:
        """Original point indices owned by node ``i``."""
        node = self.nodes[i]
        return self.permutation[node.start:node.stop]

    def leaves(self) -> list[int]:
        return [i for i in range(self.n_nodes) if self.nodes[i].is_leaf]

    def level_ids(self, level: int) -> list[int]:
        return self._levels[level]

    def bottom_up(self) -> Iterator[int]:
        """Node ids level by level from the deepest level to the root."""
        for level in range(self.depth - 1, -1, -1):
            yield from self._levels[level]

    def top_down(self) -> Iterator[int]:
        for level in range(self.depth):
            yield from self._levels[level]

    def diameter(self, i: int) -> float:
        node = self.nodes[i]
        return float(np.linalg.norm(node.bbox_max - node.bbox_min))

    def box_distance(self, i: int, other: "ClusterTree", j: int) -> float:
        """Euclidean distance between the bounding boxes of two nodes."""
        a, b = self.nodes[i], other.nodes[j]
        gap = np.maximum(0.0, np.maximum(a.bbox_min - b.bbox_max,
                                         b.bbox_min - a.bbox_max))
        return float(np.linalg.norm(gap))


def build_cluster_tree(points: PointSet, leaf_size: int = 25) -> ClusterTree:
    """Build a binary cluster tree by longest-axis median bisection.

    Splitting is by point count at the median position of the coordinate
    along the widest bounding-box axis; when the count is odd the lower
    half receives the extra point.  Splitting by count (not by coordinate
    value) guarantees termination even for duplicated points.

    Parameters
    ----------
    points : PointSet
    leaf_size : int
        Nodes with at most this many points become leaves.

    Returns
    -------
    ClusterTree
    """
    if leaf_size < 1:
        raise ValueError("leaf_size must be >= 1")
    n = len(points)
    if n < 1:
        raise ValueError("cannot build a tree over an empty point set")
    coords = points.coords
    perm = np.arange(n, dtype=np.int64)

    nodes: list[TreeNode] = []
    # queue of (start, stop, level, parent); ids assigned breadth-first
    queue: list[tuple[int, int, int, int]] = [(0, n, 0, -1)]
    head = 0
    while head < len(queue):
        start, stop, level, parent = queue[head]
        node_id = head
        head += 1
        pts = coords[perm[start:stop]]
        bbox_min = pts.min(axis=0)
        bbox_max = pts.max(axis=0)
        size = stop - start
        if size <= leaf_size:
            children: tuple[int, ...] = ()
        else:
            axis = int(np.argmax(bbox_max - bbox_min))
            order = np.argsort(pts[:, axis], kind="stable")
            perm[start:stop] = perm[start:stop][order]
            mid = start + (size + 1) // 2
            left_id = len(queue)
            queue.append((start, mid, level + 1, node_id))
            queue.append((mid, stop, level + 1, node_id))
            children = (left_id, left_id + 1)
        nodes.append(TreeNode(start, stop, level, parent, children,
                              bbox_min, bbox_max))
    return ClusterTree(points, nodes, perm, leaf_size)


@dataclass(frozen=True)
class BlockPartition:
    """Far/close classification of blocks between two cluster trees.

    ``far`` and ``close`` hold (row_node, col_node) id pairs, each list
    sorted lexicographically so downstream traversals are deterministic.
    """

    far: tuple[tuple[int, int], ...]
    close: tuple[tuple[int, int], ...]
    eta: float

    def __post_init__(self):
        pairs = set(self.far) & set(self.close)
        if pairs:
            raise ValueError(f"pairs listed as both far and close: {sorted(pairs)[:3]}")


def _admissible(rows: ClusterTree, r: int, cols: ClusterTree, c: int,
                eta: float) -> bool:
    dist = rows.box_distance(r, cols, c)
    if dist <= 0.0:
        return False
    return max(rows.diameter(r), cols.diameter(c)) <= eta * dist


def build_partition(rows: ClusterTree, cols: ClusterTree,
                    eta: float = 1.0) -> BlockPartition:
    """Classify blocks of two cluster trees into far and close pairs.

    A pair is admissible (far) when ``max(diam_r, diam_c) <= eta * dist``
    with strictly positive box distance.  Non-admissible pairs of two
    leaves are close; otherwise the traversal descends into the children
    of the node with the larger diameter (the other node if that one is a
    leaf; the row node on ties).

    Returns
    -------
    BlockPartition
        Every (i, j) matrix entry is covered by exactly one emitted pair.
    """
    if eta <= 0.0:
        raise ValueError("eta must be positive")
    far: list[tuple[int, int]] = []
    close: list[tuple[int, int]] = []
    stack: list[tuple[int, int]] = [(0, 0)]
    while stack:
        r, c = stack.pop()
        if _admissible(rows, r, cols, c, eta):
            far.append((r, c))
            continue
        r_leaf = rows.is_leaf(r)
        c_leaf = cols.is_leaf(c)
        if r_leaf and c_leaf:
            close.append((r, c))
            continue
        descend_row = not r_leaf and (c_leaf or
                                      rows.diameter(r) >= cols.diameter(c))
        if descend_row:
            for child in rows.children(r):
                stack.append((child, c))
        else:
            for child in cols.children(c):
                stack.append((r, child))
    far.sort()
    close.sort()
    return BlockPartition(tuple(far), tuple(close), float(eta))


def coverage_counts(rows: ClusterTree, cols: ClusterTree,
                    partition: BlockPartition) -> np.ndarray:
    """Count how many partition pairs cover each (row, col) matrix entry.

    Brute-force verification helper: a valid partition yields the all-ones
    matrix.  Intended for small problems only.
    """
    counts = np.zeros((rows.n_points, cols.n_points), dtype=np.int64)
    for r, c in list(partition.far) + list(partition.close):
        counts[np.ix_(rows.indices(r), cols.indices(c))] += 1
    return counts
