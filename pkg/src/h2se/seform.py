"""Sparse extended form of an H2 operator.

The five-phase H2 matvec is a linear relation between the input/output
vectors and the per-node coefficient vectors, so it can be written as one
sparse system.  With unknowns ordered ``(x | xhat | yhat)`` and equations
ordered ``(y rows | yhat rows | xhat rows)``, the block equations are

    close blocks  C x + leaf expansion E yhat_leaf          = y
    coupling      S xhat + downward transfers L yhat_nonleaf = yhat
    upward        R xhat                                     = xhat_nonleaf
    projection    D x                                        = xhat_leaf

Moving the coefficient unknowns to the left adds two identity shifts, and
the resulting square sparse matrix ``H`` satisfies: solving
``H z = (y, 0, 0)`` and reading the first N entries of ``z`` solves the
(compressed) original system.  ``H`` is nonsingular whenever the operator
is, and its size is below ``(2k + 1) N`` for trees of depth at most k.

Unknown and equation ordering
-----------------------------
Unknowns are ``(x | xhat | yhat)``.  The ``xhat`` segment lists leaf
nodes first and then non-leaf nodes, each class sorted by level from the
deepest level up to the root (ties broken by tree node id), so the
column of every node precedes its parent's.  The ``yhat`` segment lists
non-leaf nodes from the root level downwards and leaf nodes last, so
every parent's column precedes its children's.  Only nodes with positive
rank occupy slots (zero-rank nodes are squeezed out).

Equation rows are ``(y | xhat equations | yhat equations)`` with each
coefficient equation in the same position as its unknown.  Both identity
shifts then sit on the main diagonal, and all transfer/coupling entries
fall strictly below it: the trailing coefficient sub-block of ``H`` is
lower triangular with unit-magnitude diagonal, which keeps pivot-free
factorizations of ``H`` well posed.  The x block and the y equations
stay in original (unpermuted) index order; leaf projection and close
blocks scatter through the tree permutations internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import ClusterTree
from .h2core import H2Matrix

__all__ = [
    "SparseMatrix",
    "SELayout",
    "SEForm",
    "assemble_se",
    "extend_rhs",
    "extract_solution",
    "se_matvec",
    "write_matrix_market",
]


@dataclass(frozen=True)
class SparseMatrix:
    """Compressed-sparse-row matrix (offsets, column indices, values)."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    shape: tuple[int, int]

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1] - self.indptr[0])

    @classmethod
    def from_scipy(cls, mat) -> "SparseMatrix":
        csr = sp.csr_matrix(mat)
        csr.sort_indices()
        return cls(csr.indptr.astype(np.int64),
                   csr.indices.astype(np.int64),
                   csr.data.astype(np.float64), csr.shape)

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr),
                             shape=self.shape)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.to_scipy() @ v

    def toarray(self) -> np.ndarray:
        return self.to_scipy().toarray()

    @property
    def nbytes(self) -> int:
        return self.indptr.nbytes + self.indices.nbytes + self.data.nbytes

    def validate(self) -> None:
        """Check CSR structure invariants; raises on violation."""
        rows, _ = self.shape
        if len(self.indptr) != rows + 1:
            raise ValueError("indptr length must be rows + 1")
        if self.nnz != len(self.indices) or self.nnz != len(self.data):
            raise ValueError("nnz inconsistent with index/value arrays")
        for r in range(rows):
            cols = self.indices[self.indptr[r]:self.indptr[r + 1]]
            if cols.size and np.any(np.diff(cols) <= 0):
                raise ValueError(f"column indices not increasing in row {r}")


def _ordered_nodes(tree: ClusterTree, ranks: np.ndarray, upward: bool):
    """Positive-rank node ids in the segment order (see module docstring).

    ``upward=True`` (xhat side): leaves first, then non-leaves, both from
    the deepest level towards the root, so children precede parents.
    ``upward=False`` (yhat side): non-leaves from the root level down,
    then leaves, so parents precede children.
    """
    nonleaf = [i for i in range(tree.n_nodes)
               if ranks[i] > 0 and not tree.is_leaf(i)]
    leaf = [i for i in range(tree.n_nodes)
            if ranks[i] > 0 and tree.is_leaf(i)]
    if upward:
        key = lambda i: (-tree.nodes[i].level, i)
        return sorted(leaf, key=key) + sorted(nonleaf, key=key)
    key = lambda i: (tree.nodes[i].level, i)
    return sorted(nonleaf, key=key) + sorted(leaf, key=key)


class _Segment:
    """Slot assignment for one coefficient segment (xhat or yhat)."""

    def __init__(self, tree: ClusterTree, ranks: np.ndarray, upward: bool):
        self.nodes = _ordered_nodes(tree, ranks, upward)
        self.spans: dict[int, tuple[int, int]] = {}
        offset = 0
        self.n_leaf_slots = 0
        for i in self.nodes:
            r = int(ranks[i])
            self.spans[i] = (offset, offset + r)
            offset += r
            if tree.is_leaf(i):
                self.n_leaf_slots += r
        self.size = offset
        self.n_nonleaf_slots = offset - self.n_leaf_slots


class SELayout:
    """Index bookkeeping for the extended vector ``(x | xhat | yhat)``."""

    def __init__(self, h2: H2Matrix):
        m, n = h2.shape
        if m != n:
            raise ValueError("the extended form is defined for square "
                             "operators")
        self.n = n
        self._xhat = _Segment(h2.col_tree, h2.col_basis.ranks, upward=True)
        self._yhat = _Segment(h2.row_tree, h2.row_basis.ranks, upward=False)
        self.n_xhat = self._xhat.size
        self.n_yhat = self._yhat.size
        self.n_extended = n + self.n_xhat + self.n_yhat

    # column (unknown) spans; equation rows coincide with them ---------------
    def xhat_col_span(self, node: int) -> tuple[int, int]:
        lo, hi = self._xhat.spans[node]
        return (self.n + lo, self.n + hi)

    def yhat_col_span(self, node: int) -> tuple[int, int]:
        lo, hi = self._yhat.spans[node]
        base = self.n + self.n_xhat
        return (base + lo, base + hi)

    def xhat_eq_span(self, node: int) -> tuple[int, int]:
        return self.xhat_col_span(node)

    def yhat_eq_span(self, node: int) -> tuple[int, int]:
        return self.yhat_col_span(node)

    @property
    def xhat_nodes(self) -> list[int]:
        return list(self._xhat.nodes)

    @property
    def yhat_nodes(self) -> list[int]:
        return list(self._yhat.nodes)

    def block_spans(self) -> dict[str, tuple[int, int]]:
        """Global column spans of the five unknown blocks."""
        n, nx = self.n, self.n_xhat
        xl = self._xhat.n_leaf_slots
        yn = self._yhat.n_nonleaf_slots
        return {
            "x": (0, n),
            "xhat_leaf": (n, n + xl),
            "xhat_nonleaf": (n + xl, n + nx),
            "yhat_nonleaf": (n + nx, n + nx + yn),
            "yhat_leaf": (n + nx + yn, self.n_extended),
        }

    def pack_xhat(self, coeffs: dict[int, np.ndarray]) -> np.ndarray:
        out = np.zeros(self.n_xhat)
        for i in self._xhat.nodes:
            lo, hi = self._xhat.spans[i]
            out[lo:hi] = coeffs[i]
        return out

    def pack_yhat(self, coeffs: dict[int, np.ndarray]) -> np.ndarray:
        out = np.zeros(self.n_yhat)
        for i in self._yhat.nodes:
            lo, hi = self._yhat.spans[i]
            out[lo:hi] = coeffs[i]
        return out

    def extended_vector(self, x: np.ndarray, xhat: dict[int, np.ndarray],
                        yhat: dict[int, np.ndarray]) -> np.ndarray:
        return np.concatenate([x, self.pack_xhat(xhat),
                               self.pack_yhat(yhat)])


@dataclass(frozen=True)
class SEForm:
    """Assembled sparse extended system (identity shifts included)."""

    matrix: SparseMatrix
    layout: SELayout
    k_row: int
    k_col: int

    @property
    def n(self) -> int:
        return self.layout.n

    @property
    def n_extended(self) -> int:
        return self.layout.n_extended

    def size_bound(self) -> tuple[int, int]:
        """``(N_H, (2k + 1) N)`` with k the larger tree depth."""
        k = max(self.k_row, self.k_col)
        return self.n_extended, (2 * k + 1) * self.n

    def h0_matrix(self) -> SparseMatrix:
        """The unshifted relation matrix (identity shifts removed).

        Each coefficient equation carries a ``-1`` at its own unknown, so
        removing the shifts adds the identity on the coefficient slots.
        """
        lay = self.layout
        size = lay.n_extended
        idx = np.arange(lay.n, size)
        shift = sp.coo_matrix((np.ones(idx.size), (idx, idx)),
                              shape=(size, size))
        return SparseMatrix.from_scipy(self.matrix.to_scipy() + shift)

    def manifest_text(self) -> str:
        """Plain-text layout manifest: one line per block span."""
        lay = self.layout
        lines = [f"n {lay.n}", f"n_extended {lay.n_extended}",
                 f"k_row {self.k_row}", f"k_col {self.k_col}"]
        for name, (lo, hi) in lay.block_spans().items():
            lines.append(f"block {name} {lo} {hi}")
        for i in lay.xhat_nodes:
            lo, hi = lay.xhat_col_span(i)
            lines.append(f"xhat node {i} {lo} {hi}")
        for i in lay.yhat_nodes:
            lo, hi = lay.yhat_col_span(i)
            lines.append(f"yhat node {i} {lo} {hi}")
        return "\n".join(lines) + "\n"

    def write_manifest(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.manifest_text())


class _CooBuilder:
    def __init__(self):
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self.entries = 0

    def add_block(self, row_idx: np.ndarray, col_idx: np.ndarray,
                  block: np.ndarray) -> None:
        if block.size == 0:
            return
        self.rows.append(np.repeat(row_idx, len(col_idx)))
        self.cols.append(np.tile(col_idx, len(row_idx)))
        self.vals.append(np.ascontiguousarray(block, dtype=np.float64).ravel())
        self.entries += block.size

    def add_diagonal(self, row_idx: np.ndarray, col_idx: np.ndarray,
                     value: float) -> None:
        if row_idx.size == 0:
            return
        self.rows.append(row_idx)
        self.cols.append(col_idx)
        self.vals.append(np.full(row_idx.size, value))
        self.entries += row_idx.size

    def build(self, size: int) -> SparseMatrix:
        coo = sp.coo_matrix(
            (np.concatenate(self.vals),
             (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=(size, size))
        csr = coo.tocsr()
        csr.sort_indices()
        if csr.nnz != self.entries:
            raise AssertionError("overlapping blocks in the extended form")
        return SparseMatrix.from_scipy(csr)


def _span_arange(span: tuple[int, int]) -> np.ndarray:
    return np.arange(span[0], span[1], dtype=np.int64)


def assemble_se(h2: H2Matrix) -> SEForm:
    """Assemble the sparse extended system of an H2 operator.

    Four families of equations are stacked: the y rows (close blocks
    against x and leaf expansion against the leaf yhat), one equation per
    xhat slot (leaf projection against x for leaves, transposed upward
    transfers against the children for non-leaves, minus the unknown
    itself), and one equation per yhat slot (coupling blocks against
    xhat, the downward transfer against the parent yhat, minus the
    unknown itself).  Rows are placed per the layout in the module
    docstring.

    Raises on non-square operators or inconsistent block dimensions.
    """
    layout = SELayout(h2)
    row_tree, col_tree = h2.row_tree, h2.col_tree
    row_basis, col_basis = h2.row_basis, h2.col_basis
    far = h2.partition.far
    close_pairs = h2.partition.close
    assert len(set(far)) == len(far), "duplicate far pairs"
    assert len(set(close_pairs)) == len(close_pairs), "duplicate close pairs"
    builder = _CooBuilder()

    # y rows: close blocks and leaf expansion
    for i, j in close_pairs:
        builder.add_block(row_tree.indices(i), col_tree.indices(j),
                          h2.close[(i, j)])
    for i in row_tree.leaves():
        if row_basis.rank(i):
            builder.add_block(row_tree.indices(i),
                              _span_arange(layout.yhat_col_span(i)),
                              row_basis.leaf_blocks[i])

    # yhat rows: coupling, downward transfers, identity shift
    for i, j in far:
        s = h2.coupling[(i, j)]
        if s.shape != (row_basis.rank(i), col_basis.rank(j)):
            raise ValueError(f"coupling block {(i, j)} has shape {s.shape}, "
                             "inconsistent with the basis ranks")
        builder.add_block(_span_arange(layout.yhat_eq_span(i)),
                          _span_arange(layout.xhat_col_span(j)), s)
    for i in layout.yhat_nodes:
        parent = row_tree.parent(i)
        if parent >= 0 and row_basis.rank(parent):
            builder.add_block(_span_arange(layout.yhat_eq_span(i)),
                              _span_arange(layout.yhat_col_span(parent)),
                              row_basis.transfers[i])
        eq = _span_arange(layout.yhat_eq_span(i))
        col = _span_arange(layout.yhat_col_span(i))
        builder.add_diagonal(eq, col, -1.0)

    # xhat rows: upward transfers for non-leaves, projection for leaves
    for j in layout.xhat_nodes:
        eq = _span_arange(layout.xhat_eq_span(j))
        if col_tree.is_leaf(j):
            builder.add_block(eq, col_tree.indices(j),
                              col_basis.leaf_blocks[j].T)
        else:
            for c in col_tree.children(j):
                if col_basis.rank(c):
                    builder.add_block(eq,
                                      _span_arange(layout.xhat_col_span(c)),
                                      col_basis.transfers[c].T)
        builder.add_diagonal(eq, _span_arange(layout.xhat_col_span(j)), -1.0)

    matrix = builder.build(layout.n_extended)
    return SEForm(matrix, layout, row_tree.depth, col_tree.depth)


def extend_rhs(se: SEForm, y: np.ndarray) -> np.ndarray:
    """Embed a right-hand side as ``(y, 0, 0)`` in the extended layout."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (se.n,):
        raise ValueError(f"expected a vector of length {se.n}")
    out = np.zeros(se.n_extended)
    out[:se.n] = y
    return out


def extract_solution(se: SEForm, z: np.ndarray) -> np.ndarray:
    """Read the x block (first N entries) of an extended solution."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (se.n_extended,):
        raise ValueError(f"expected a vector of length {se.n_extended}")
    return z[:se.n].copy()


def se_matvec(se: SEForm, v: np.ndarray) -> np.ndarray:
    """Sparse product with the (shifted) extended matrix."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (se.n_extended,):
        raise ValueError(f"expected a vector of length {se.n_extended}")
    return se.matrix.matvec(v)


def write_matrix_market(matrix: SparseMatrix, path) -> None:
    """Write a matrix in Matrix Market coordinate format (1-based ASCII)."""
    coo = matrix.to_scipy().tocoo()
    with open(path, "w", encoding="ascii") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{matrix.shape[0]} {matrix.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")
