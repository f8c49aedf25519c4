"""Hierarchical (H2) representation with nested bases and its matvec.

An operator ``A`` is stored as a sum of far-field blocks in factored form
plus verbatim close blocks:

    A = sum_far  U_i * S_p * V_j^T  +  sum_close  C_p,

where the row/column bases ``U`` and ``V`` are *nested*: only leaf basis
blocks are stored explicitly, and each non-root node carries a small
transfer matrix expressing the parent basis through its children.

The matvec runs in five phases: project the input at column-tree leaves,
sweep coefficients up the column tree through transfers, apply the
coupling blocks across far pairs, sweep down the row tree, and expand at
row-tree leaves; close blocks act on the raw vectors.  Far and close
pairs are traversed in their stored (sorted) order, so repeated calls are
bit-reproducible.  Built objects are immutable; matvec is re-entrant.

Construction here is a bottom-up dense-SVD sweep over far-block strips:
exact at small scale and therefore usable as an oracle for everything
downstream, at O(N^2 * rank) cost.

Serialized container format (``save_h2`` / ``load_h2``)
-------------------------------------------------------
Single binary file, integers little-endian int64, floats IEEE-754
binary64, dense blocks row-major:

    magic           4 bytes, ``b"H2SE"``
    version         int64 (currently 1)
    m, n            int64, operator shape
    row tree, then column tree, each as:
        n_points, leaf_size, n_nodes        int64
        coords                              n_points * 3 float64
        weights                             n_points float64
        permutation                         n_points int64
        per node: start, stop, level, parent, n_children (0 or 2),
                  then n_children child ids                 int64
        bboxes                              n_nodes * 6 float64
    eta             float64
    n_far           int64, then 2 int64 per pair (row id, col id)
    n_close         int64, then 2 int64 per pair
    row basis, then column basis, each as:
        ranks                               n_nodes int64
        per leaf id ascending:     rows, cols int64, then data
        per non-root id ascending: rows, cols int64, then data (transfer)
    coupling blocks in stored far order:    rows, cols int64, then data
    close blocks in stored close order:     rows, cols int64, then data
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .geometry import BlockPartition, ClusterTree, PointSet, TreeNode

__all__ = [
    "ClusterBasis",
    "H2Matrix",
    "build_h2_dense",
    "matvec",
    "matvec_transpose",
    "matvec_with_coefficients",
    "reconstruct",
    "recompress",
    "save_h2",
    "load_h2",
]

_MAGIC = b"H2SE"
_VERSION = 1


class ClusterBasis:
    """Nested cluster basis: leaf blocks plus per-node transfer matrices.

    ``leaf_blocks[i]`` is (cluster size, rank) for every leaf ``i``;
    ``transfers[i]`` is (rank_i, rank_parent) for every non-root ``i``.
    Rank zero is legal and marks nodes without far interaction.
    """

    def __init__(self, tree: ClusterTree, leaf_blocks: dict[int, np.ndarray],
                 transfers: dict[int, np.ndarray], ranks: np.ndarray):
        self.tree = tree
        self.leaf_blocks = leaf_blocks
        self.transfers = transfers
        self.ranks = np.asarray(ranks, dtype=np.int64)

    def rank(self, i: int) -> int:
        return int(self.ranks[i])

    def expand(self, i: int) -> np.ndarray:
        """Dense (cluster size, rank) basis of node ``i`` via the transfers."""
        if self.tree.is_leaf(i):
            return self.leaf_blocks[i]
        parts = [self.expand(c) @ self.transfers[c]
                 for c in self.tree.children(i)]
        return np.vstack(parts)

    def storage_bytes(self) -> int:
        total = sum(b.nbytes for b in self.leaf_blocks.values())
        total += sum(t.nbytes for t in self.transfers.values())
        return total


@dataclass(frozen=True)
class H2Matrix:
    """Factored hierarchical operator (see module docstring)."""

    row_tree: ClusterTree
    col_tree: ClusterTree
    partition: BlockPartition
    row_basis: ClusterBasis
    col_basis: ClusterBasis
    coupling: dict[tuple[int, int], np.ndarray]
    close: dict[tuple[int, int], np.ndarray]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.row_tree.n_points, self.col_tree.n_points)

    def storage_report(self) -> dict[str, int]:
        """Bytes held by coupling blocks, bases, and close blocks."""
        return {
            "coupling": sum(s.nbytes for s in self.coupling.values()),
            "basis": (self.row_basis.storage_bytes()
                      + self.col_basis.storage_bytes()),
            "close": sum(c.nbytes for c in self.close.values()),
        }

    def far_ranks(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-node rank distributions (row side, column side)."""
        return self.row_basis.ranks.copy(), self.col_basis.ranks.copy()


def _truncated_rank(singular_values: np.ndarray, tol: float) -> int:
    if singular_values.size == 0 or singular_values[0] <= 0.0:
        return 0
    return int(np.count_nonzero(singular_values >= tol * singular_values[0]))


def _right_basis(block: np.ndarray, tol: float) -> np.ndarray:
    """Orthonormal basis of the dominant row space of ``block``."""
    if block.size == 0:
        return np.zeros((block.shape[1], 0))
    _, s, vt = np.linalg.svd(block, full_matrices=False)
    return vt[:_truncated_rank(s, tol)].T.copy()

def _left_basis(block: np.ndarray, tol: float) -> np.ndarray:
    """Orthonormal basis of the dominant column space of ``block``."""
    if block.size == 0:
        return np.zeros((block.shape[0], 0))
    u, s, _ = np.linalg.svd(block, full_matrices=False)
    return u[:, :_truncated_rank(s, tol)].copy()


def _strip_indices(tree: ClusterTree, other: ClusterTree,
                   partners: dict[int, list[int]]) -> dict[int, np.ndarray]:
    """Per-node index set of all far partners of the node and its ancestors.

    Partner clusters along an ancestor chain are disjoint (the partition
    covers each entry once), so plain concatenation is enough.
    """
    strips: dict[int, np.ndarray] = {}
    empty = np.empty(0, dtype=np.int64)
    for i in tree.top_down():
        parts = [other.indices(p) for p in partners.get(i, [])]
        parent = tree.parent(i)
        if parent >= 0 and strips[parent].size:
            parts.append(strips[parent])
        strips[i] = np.concatenate(parts) if parts else empty
    return strips


def build_h2_dense(dense: np.ndarray, row_tree: ClusterTree,
                   col_tree: ClusterTree, partition: BlockPartition,
                   tol: float) -> H2Matrix:
    """Compress a dense matrix into H2 form by bottom-up strip SVDs.

    For each column-tree leaf the basis is the dominant right singular
    block of the strip formed by all far-block rows of the leaf and its
    ancestors; parent bases are computed from the children's projected
    strips, which yields the transfer matrices and preserves nestedness
    exactly.  The row side is mirrored with left singular blocks.
    Singular values below ``tol`` times the per-strip maximum are dropped.

    Coupling blocks are two-sided projections of the far blocks; close
    blocks are copied verbatim.
    """
    dense = np.asarray(dense, dtype=np.float64)
    if dense.shape != (row_tree.n_points, col_tree.n_points):
        raise ValueError("dense matrix shape does not match the trees")
    if not 0.0 < tol < 1.0:
        raise ValueError("tol must lie in (0, 1)")

    far_by_row: dict[int, list[int]] = {}
    far_by_col: dict[int, list[int]] = {}
    for i, j in partition.far:
        far_by_row.setdefault(i, []).append(j)
        far_by_col.setdefault(j, []).append(i)

    col_strips = _strip_indices(col_tree, row_tree, far_by_col)
    row_strips = _strip_indices(row_tree, col_tree, far_by_row)

    def col_leaf_basis(cols, strip_rows):
        return _right_basis(dense[np.ix_(strip_rows, cols)], tol)

    def col_project(children, expanded, strip_rows):
        parts = [dense[np.ix_(strip_rows, col_tree.indices(c))] @ expanded[c]
                 for c in children]
        return np.hstack(parts)

    def row_leaf_basis(rows, strip_cols):
        return _left_basis(dense[np.ix_(rows, strip_cols)], tol)

    def row_project(children, expanded, strip_cols):
        parts = [expanded[c].T @ dense[np.ix_(row_tree.indices(c), strip_cols)]
                 for c in children]
        return _left_basis(np.vstack(parts), tol)

    # The two sides differ in orientation; keep them explicit rather than
    # forcing one code path through transposes of large strips.
    col_basis, col_expanded = _build_basis_side(
        col_tree, col_strips, col_leaf_basis, col_project, tol)
    row_basis, row_expanded = _build_basis_side(
        row_tree, row_strips, row_leaf_basis, row_project, tol,
        projected_is_basis=True)

    coupling = {}
    for i, j in partition.far:
        block = dense[np.ix_(row_tree.indices(i), col_tree.indices(j))]
        coupling[(i, j)] = row_expanded[i].T @ block @ col_expanded[j]
    close = {}
    for i, j in partition.close:
        close[(i, j)] = dense[np.ix_(row_tree.indices(i),
                                     col_tree.indices(j))].copy()

    return H2Matrix(row_tree, col_tree, partition,
                    row_basis, col_basis, coupling, close)


def _build_basis_side(tree, strips, leaf_basis, project, tol,
                      projected_is_basis=False):
    """Bottom-up construction of one nested basis side.

    ``leaf_basis(own_indices, strip_indices)`` returns the orthonormal
    leaf block; ``project(children, expanded, strip_indices)`` returns
    either the projected parent strip (column side; its dominant right
    basis is taken here) or directly the stacked orthonormal basis of the
    projected strip (row side, ``projected_is_basis=True``).
    """
    leaf_blocks: dict[int, np.ndarray] = {}
    transfers: dict[int, np.ndarray] = {}
    ranks = np.zeros(tree.n_nodes, dtype=np.int64)
    expanded: dict[int, np.ndarray] = {}
    for i in tree.bottom_up():
        size = tree.nodes[i].size
        idx = strips[i]
        if tree.is_leaf(i):
            basis = leaf_basis(tree.indices(i), idx) if idx.size \
                else np.zeros((size, 0))
            leaf_blocks[i] = basis
            expanded[i] = basis
            ranks[i] = basis.shape[1]
            continue
        children = tree.children(i)
        child_rank_sum = int(sum(ranks[c] for c in children))
        if idx.size and child_rank_sum:
            proj = project(children, expanded, idx)
            w = proj if projected_is_basis else _right_basis(proj, tol)
        else:
            w = np.zeros((child_rank_sum, 0))
        offset = 0
        parts = []
        for c in children:
            transfers[c] = w[offset:offset + ranks[c]].copy()
            offset += ranks[c]
            parts.append(expanded[c] @ transfers[c])
        expanded[i] = np.vstack(parts)
        ranks[i] = w.shape[1]
    return ClusterBasis(tree, leaf_blocks, transfers, ranks), expanded


def matvec_with_coefficients(h2: H2Matrix, x: np.ndarray):
    """Matrix-vector product returning the per-node coefficient vectors.

    Returns ``(y, xhat, yhat)`` where ``xhat[j]`` holds the column-tree
    coefficients after the upward sweep and ``yhat[i]`` the row-tree
    coefficients after coupling and the downward sweep.  Only nodes with
    positive rank appear in the dictionaries.
    """
    x = np.asarray(x, dtype=np.float64)
    m, n = h2.shape
    if x.shape != (n,):
        raise ValueError(f"expected a vector of length {n}")
    col_tree, row_tree = h2.col_tree, h2.row_tree
    col_basis, row_basis = h2.col_basis, h2.row_basis

    xhat: dict[int, np.ndarray] = {}
    for j in col_tree.bottom_up():
        rank = col_basis.rank(j)
        if rank == 0:
            continue
        if col_tree.is_leaf(j):
            xhat[j] = col_basis.leaf_blocks[j].T @ x[col_tree.indices(j)]
        else:
            acc = np.zeros(rank)
            for c in col_tree.children(j):
                if col_basis.rank(c):
                    acc += col_basis.transfers[c].T @ xhat[c]
            xhat[j] = acc

    yhat: dict[int, np.ndarray] = {}
    for i in range(row_tree.n_nodes):
        if row_basis.rank(i):
            yhat[i] = np.zeros(row_basis.rank(i))
    for i, j in h2.partition.far:
        if row_basis.rank(i) and col_basis.rank(j):
            yhat[i] += h2.coupling[(i, j)] @ xhat[j]
    for i in row_tree.top_down():
        parent = row_tree.parent(i)
        if parent >= 0 and row_basis.rank(i) and row_basis.rank(parent):
            yhat[i] += row_basis.transfers[i] @ yhat[parent]

    y = np.zeros(m)
    for i in row_tree.leaves():
        if row_basis.rank(i):
            y[row_tree.indices(i)] += row_basis.leaf_blocks[i] @ yhat[i]
    for i, j in h2.partition.close:
        y[row_tree.indices(i)] += h2.close[(i, j)] @ x[col_tree.indices(j)]
    return y, xhat, yhat


def matvec(h2: H2Matrix, x: np.ndarray) -> np.ndarray:
    """Compute ``A @ x`` through the factored representation."""
    y, _, _ = matvec_with_coefficients(h2, x)
    return y


def matvec_transpose(h2: H2Matrix, v: np.ndarray) -> np.ndarray:
    """Compute ``A.T @ v`` by swapping the roles of the two bases."""
    v = np.asarray(v, dtype=np.float64)
    m, n = h2.shape
    if v.shape != (m,):
        raise ValueError(f"expected a vector of length {m}")
    col_tree, row_tree = h2.col_tree, h2.row_tree
    col_basis, row_basis = h2.col_basis, h2.row_basis

    what: dict[int, np.ndarray] = {}
    for i in row_tree.bottom_up():
        rank = row_basis.rank(i)
        if rank == 0:
            continue
        if row_tree.is_leaf(i):
            what[i] = row_basis.leaf_blocks[i].T @ v[row_tree.indices(i)]
        else:
            acc = np.zeros(rank)
            for c in row_tree.children(i):
                if row_basis.rank(c):
                    acc += row_basis.transfers[c].T @ what[c]
            what[i] = acc

    zhat: dict[int, np.ndarray] = {}
    for j in range(col_tree.n_nodes):
        if col_basis.rank(j):
            zhat[j] = np.zeros(col_basis.rank(j))
    for i, j in h2.partition.far:
        if row_basis.rank(i) and col_basis.rank(j):
            zhat[j] += h2.coupling[(i, j)].T @ what[i]
    for j in col_tree.top_down():
        parent = col_tree.parent(j)
        if parent >= 0 and col_basis.rank(j) and col_basis.rank(parent):
            zhat[j] += col_basis.transfers[j] @ zhat[parent]

    out = np.zeros(n)
    for j in col_tree.leaves():
        if col_basis.rank(j):
            out[col_tree.indices(j)] += col_basis.leaf_blocks[j] @ zhat[j]
    for i, j in h2.partition.close:
        out[col_tree.indices(j)] += h2.close[(i, j)].T @ v[row_tree.indices(i)]
    return out


def reconstruct(h2: H2Matrix) -> np.ndarray:
    """Densify the factored operator (testing oracle, small N only)."""
    m, n = h2.shape
    out = np.zeros((m, n))
    row_cache: dict[int, np.ndarray] = {}
    col_cache: dict[int, np.ndarray] = {}
    for i, j in h2.partition.far:
        u = row_cache.setdefault(i, h2.row_basis.expand(i))
        v = col_cache.setdefault(j, h2.col_basis.expand(j))
        out[np.ix_(h2.row_tree.indices(i), h2.col_tree.indices(j))] = \
            u @ h2.coupling[(i, j)] @ v.T
    for i, j in h2.partition.close:
        out[np.ix_(h2.row_tree.indices(i), h2.col_tree.indices(j))] = \
            h2.close[(i, j)]
    return out


def _orthogonalize_side(tree: ClusterTree, basis: ClusterBasis):
    """QR-orthonormalize a nested basis bottom-up.

    Returns (leaf blocks, transfers, ranks, weights) where ``weights[i]``
    maps old node coefficients to coefficients in the new orthonormal
    basis, so ``expand_old(i) = expand_new(i) @ weights[i]``.
    """
    leaf_blocks: dict[int, np.ndarray] = {}
    transfers: dict[int, np.ndarray] = {}
    ranks = np.zeros(tree.n_nodes, dtype=np.int64)
    weights: dict[int, np.ndarray] = {}
    for i in tree.bottom_up():
        old_rank = basis.rank(i)
        if tree.is_leaf(i):
            if old_rank == 0:
                leaf_blocks[i] = np.zeros((tree.nodes[i].size, 0))
                weights[i] = np.zeros((0, 0))
                continue
            q, r = np.linalg.qr(basis.leaf_blocks[i])
            leaf_blocks[i] = q
            weights[i] = r
            ranks[i] = q.shape[1]
        else:
            children = tree.children(i)
            if old_rank == 0 or not any(ranks[c] for c in children):
                for c in children:
                    transfers[c] = np.zeros((ranks[c], 0))
                weights[i] = np.zeros((0, old_rank))
                continue
            stacked = np.vstack([weights[c] @ basis.transfers[c]
                                 for c in children])
            q, r = np.linalg.qr(stacked)
            offset = 0
            for c in children:
                transfers[c] = q[offset:offset + ranks[c]].copy()
                offset += ranks[c]
            weights[i] = r
            ranks[i] = q.shape[1]
    return leaf_blocks, transfers, ranks, weights


def recompress(h2: H2Matrix, delta_svd: float) -> H2Matrix:
    """Reduce per-node ranks by SVD truncation at relative ``delta_svd``.

    Both bases are first orthonormalized bottom-up (folding the QR
    weights into the coupling blocks), total per-node coupling weights
    are accumulated top-down along the transfer chains, and each node is
    truncated by the SVD of its weight matrix; transfers and coupling
    blocks are rewritten in the reduced bases.  No node rank increases.
    """
    if not 0.0 < delta_svd < 1.0:
        raise ValueError("delta_svd must lie in (0, 1)")
    row_tree, col_tree = h2.row_tree, h2.col_tree

    r_leaf, r_trans, r_ranks, r_w = _orthogonalize_side(row_tree, h2.row_basis)
    c_leaf, c_trans, c_ranks, c_w = _orthogonalize_side(col_tree, h2.col_basis)

    coupling1: dict[tuple[int, int], np.ndarray] = {}
    for (i, j), s in h2.coupling.items():
        coupling1[(i, j)] = r_w[i] @ s @ c_w[j].T

    far_by_row: dict[int, list[tuple[int, int]]] = {}
    far_by_col: dict[int, list[tuple[int, int]]] = {}
    for p in h2.partition.far:
        far_by_row.setdefault(p[0], []).append(p)
        far_by_col.setdefault(p[1], []).append(p)

    def total_weights(tree, ranks, transfers, own_blocks):
        """Top-down accumulation: own coupling weights + inherited ones."""
        weights: dict[int, np.ndarray] = {}
        for i in tree.top_down():
            if ranks[i] == 0:
                weights[i] = np.zeros((0, 0))
                continue
            parts = own_blocks(i)
            parent = tree.parent(i)
            if parent >= 0 and ranks[parent]:
                parts.append(transfers[i] @ weights[parent])
            weights[i] = np.hstack(parts) if parts \
                else np.zeros((ranks[i], 0))
        return weights

    row_weights = total_weights(
        row_tree, r_ranks, r_trans,
        lambda i: [coupling1[p] for p in far_by_row.get(i, [])])
    col_weights = total_weights(
        col_tree, c_ranks, c_trans,
        lambda j: [coupling1[p].T for p in far_by_col.get(j, [])])

    def truncate_side(tree, ranks, leaf_blocks, transfers, weights):
        new_leaf: dict[int, np.ndarray] = {}
        new_trans: dict[int, np.ndarray] = {}
        new_ranks = np.zeros(tree.n_nodes, dtype=np.int64)
        proj: dict[int, np.ndarray] = {}
        for i in tree.bottom_up():
            size = tree.nodes[i].size
            if tree.is_leaf(i):
                if ranks[i] == 0 or weights[i].shape[1] == 0:
                    new_leaf[i] = np.zeros((size, 0))
                    proj[i] = np.zeros((0, ranks[i]))
                    continue
                u, s, _ = np.linalg.svd(weights[i], full_matrices=False)
                keep = min(_truncated_rank(s, delta_svd), ranks[i])
                new_leaf[i] = leaf_blocks[i] @ u[:, :keep]
                proj[i] = u[:, :keep].T.copy()
                new_ranks[i] = keep
            else:
                children = tree.children(i)
                stacked = [proj[c] @ transfers[c] for c in children]
                g = np.vstack(stacked)
                if (ranks[i] == 0 or weights[i].shape[1] == 0
                        or g.shape[0] == 0):
                    for c in children:
                        new_trans[c] = np.zeros((new_ranks[c], 0))
                    proj[i] = np.zeros((0, ranks[i]))
                    continue
                u, s, _ = np.linalg.svd(g @ weights[i], full_matrices=False)
                keep = min(_truncated_rank(s, delta_svd), ranks[i])
                offset = 0
                for c in children:
                    new_trans[c] = u[offset:offset + new_ranks[c],
                                     :keep].copy()
                    offset += new_ranks[c]
                proj[i] = u[:, :keep].T @ g
                new_ranks[i] = keep
        return new_leaf, new_trans, new_ranks, proj

    nr_leaf, nr_trans, nr_ranks, r_proj = truncate_side(
        row_tree, r_ranks, r_leaf, r_trans, row_weights)
    nc_leaf, nc_trans, nc_ranks, c_proj = truncate_side(
        col_tree, c_ranks, c_leaf, c_trans, col_weights)

    coupling2 = {}
    for (i, j), s in coupling1.items():
        coupling2[(i, j)] = r_proj[i] @ s @ c_proj[j].T

    return H2Matrix(
        row_tree, col_tree, h2.partition,
        ClusterBasis(row_tree, nr_leaf, nr_trans, nr_ranks),
        ClusterBasis(col_tree, nc_leaf, nc_trans, nc_ranks),
        coupling2, dict(h2.close))


# ---------------------------------------------------------------------------
# container serialization


def _pack_ints(*values) -> bytes:
    return np.asarray(values, dtype="<i8").tobytes()


def _pack_block(block: np.ndarray) -> bytes:
    return (_pack_ints(*block.shape)
            + np.ascontiguousarray(block, dtype="<f8").tobytes())


def _pack_tree(tree: ClusterTree) -> bytes:
    chunks = [_pack_ints(tree.n_points, tree.leaf_size, tree.n_nodes)]
    chunks.append(np.ascontiguousarray(tree.points.coords,
                                       dtype="<f8").tobytes())
    chunks.append(np.ascontiguousarray(tree.points.weights,
                                       dtype="<f8").tobytes())
    chunks.append(tree.permutation.astype("<i8").tobytes())
    for node in tree.nodes:
        chunks.append(_pack_ints(node.start, node.stop, node.level,
                                 node.parent, len(node.children),
                                 *node.children))
    bbox = np.vstack([np.concatenate([n.bbox_min, n.bbox_max])
                      for n in tree.nodes])
    chunks.append(np.ascontiguousarray(bbox, dtype="<f8").tobytes())
    return b"".join(chunks)


def _pack_basis(basis: ClusterBasis) -> bytes:
    tree = basis.tree
    chunks = [basis.ranks.astype("<i8").tobytes()]
    for i in tree.leaves():
        chunks.append(_pack_block(basis.leaf_blocks[i]))
    for i in range(tree.n_nodes):
        if tree.parent(i) >= 0:
            chunks.append(_pack_block(basis.transfers[i]))
    return b"".join(chunks)


def save_h2(h2: H2Matrix, path) -> None:
    """Serialize an :class:`H2Matrix` to the single-file container format."""
    chunks = [_MAGIC, _pack_ints(_VERSION), _pack_ints(*h2.shape)]
    chunks.append(_pack_tree(h2.row_tree))
    chunks.append(_pack_tree(h2.col_tree))
    chunks.append(struct.pack("<d", h2.partition.eta))
    chunks.append(_pack_ints(len(h2.partition.far)))
    for i, j in h2.partition.far:
        chunks.append(_pack_ints(i, j))
    chunks.append(_pack_ints(len(h2.partition.close)))
    for i, j in h2.partition.close:
        chunks.append(_pack_ints(i, j))
    chunks.append(_pack_basis(h2.row_basis))
    chunks.append(_pack_basis(h2.col_basis))
    for p in h2.partition.far:
        chunks.append(_pack_block(h2.coupling[p]))
    for p in h2.partition.close:
        chunks.append(_pack_block(h2.close[p]))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def ints(self, count: int) -> np.ndarray:
        out = np.frombuffer(self.buf, dtype="<i8", count=count,
                            offset=self.pos)
        self.pos += 8 * count
        return out

    def floats(self, count: int) -> np.ndarray:
        out = np.frombuffer(self.buf, dtype="<f8", count=count,
                            offset=self.pos)
        self.pos += 8 * count
        return out

    def block(self) -> np.ndarray:
        rows, cols = self.ints(2)
        return self.floats(int(rows * cols)).reshape(int(rows),
                                                     int(cols)).copy()


def _read_tree(reader: _Reader) -> ClusterTree:
    n_points, leaf_size, n_nodes = (int(v) for v in reader.ints(3))
    coords = reader.floats(3 * n_points).reshape(n_points, 3).copy()
    weights = reader.floats(n_points).copy()
    permutation = reader.ints(n_points).copy()
    raw_nodes = []
    for _ in range(n_nodes):
        start, stop, level, parent, n_children = (int(v)
                                                  for v in reader.ints(5))
        children = tuple(int(v) for v in reader.ints(n_children))
        raw_nodes.append((start, stop, level, parent, children))
    bbox = reader.floats(6 * n_nodes).reshape(n_nodes, 6)
    nodes = [TreeNode(start, stop, level, parent, children,
                      bbox[k, :3].copy(), bbox[k, 3:].copy())
             for k, (start, stop, level, parent, children)
             in enumerate(raw_nodes)]
    return ClusterTree(PointSet(coords, weights), nodes, permutation,
                       leaf_size)


def _read_basis(reader: _Reader, tree: ClusterTree) -> ClusterBasis:
    ranks = reader.ints(tree.n_nodes).copy()
    leaf_blocks = {i: reader.block() for i in tree.leaves()}
    transfers = {i: reader.block() for i in range(tree.n_nodes)
                 if tree.parent(i) >= 0}
    return ClusterBasis(tree, leaf_blocks, transfers, ranks)


def load_h2(path) -> H2Matrix:
    """Load an :class:`H2Matrix` written by :func:`save_h2`."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != _MAGIC:
        raise ValueError("not an H2 container file")
    reader = _Reader(buf)
    reader.pos = 4
    version = int(reader.ints(1)[0])
    if version != _VERSION:
        raise ValueError(f"unsupported container version {version}")
    reader.ints(2)  # shape, implied by the trees
    row_tree = _read_tree(reader)
    col_tree = _read_tree(reader)
    eta = struct.unpack_from("<d", reader.buf, reader.pos)[0]
    reader.pos += 8
    n_far = int(reader.ints(1)[0])
    far = tuple(tuple(int(v) for v in reader.ints(2)) for _ in range(n_far))
    n_close = int(reader.ints(1)[0])
    close_pairs = tuple(tuple(int(v) for v in reader.ints(2))
                        for _ in range(n_close))
    partition = BlockPartition(far, close_pairs, eta)
    row_basis = _read_basis(reader, row_tree)
    col_basis = _read_basis(reader, col_tree)
    coupling = {p: reader.block() for p in far}
    close = {p: reader.block() for p in close_pairs}
    return H2Matrix(row_tree, col_tree, partition, row_basis, col_basis,
                    coupling, close)
