import numpy as np
import pytest

from h2se.geometry import build_cluster_tree, build_partition
from h2se.h2core import (ClusterBasis, H2Matrix, build_h2_dense, load_h2,
                         matvec, matvec_transpose, matvec_with_coefficients,
                         reconstruct, recompress, save_h2)
from h2se.kernels import kernel_matrix, SINGLE_LAYER

from _problems import built_problem, random_points


def rank_one_setup(count=128, leaf_size=4, seed=0):
    rng = np.random.default_rng(seed)
    pts = random_points(count, seed)
    dense = np.outer(rng.standard_normal(count), rng.standard_normal(count))
    tree = build_cluster_tree(pts, leaf_size)
    part = build_partition(tree, tree, 1.0)
    return dense, tree, part


def far_rank_nodes(h2):
    """Node ids that directly back at least one far pair, per side."""
    rows = {i for i, _ in h2.partition.far}
    cols = {j for _, j in h2.partition.far}
    return rows, cols


class TestBuild:
    def test_all_close_single_leaf_is_exact(self):
        pts = random_points(40, 1)
        dense = kernel_matrix(pts, SINGLE_LAYER)
        tree = build_cluster_tree(pts, leaf_size=40)
        part = build_partition(tree, tree, 1.0)
        assert part.far == ()
        h2 = build_h2_dense(dense, tree, tree, part, 1e-6)
        x = np.random.default_rng(2).standard_normal(40)
        assert np.array_equal(matvec(h2, x), dense @ x)

    def test_all_close_multi_leaf(self):
        pts = random_points(60, 2)
        dense = kernel_matrix(pts, SINGLE_LAYER)
        tree = build_cluster_tree(pts, leaf_size=8)
        part = build_partition(tree, tree, eta=1e-6)
        assert part.far == ()
        h2 = build_h2_dense(dense, tree, tree, part, 1e-6)
        assert h2.row_basis.ranks.max() == 0
        x = np.random.default_rng(3).standard_normal(60)
        ref = dense @ x
        assert np.linalg.norm(matvec(h2, x) - ref) <= 1e-14 * np.linalg.norm(ref)

    def test_rank_one_far_field_detected(self):
        dense, tree, part = rank_one_setup()
        assert len(part.far) > 0
        h2 = build_h2_dense(dense, tree, tree, part, 1e-8)
        rows, cols = far_rank_nodes(h2)
        assert all(h2.row_basis.rank(i) == 1 for i in rows)
        assert all(h2.col_basis.rank(j) == 1 for j in cols)
        assert h2.row_basis.ranks.max() == 1
        err = np.linalg.norm(reconstruct(h2) - dense)
        assert err <= 1e-10 * np.linalg.norm(dense)

    def test_reconstruction_error_unit_square(self):
        prob = built_problem("electrostatic", 16, 1e-6)
        rel = (np.linalg.norm(prob.dense - reconstruct(prob.h2))
               / np.linalg.norm(prob.dense))
        assert rel <= 1e-5

    def test_leaf_blocks_have_full_column_rank(self):
        prob = built_problem("electrostatic", 16, 1e-6)
        for basis in (prob.h2.row_basis, prob.h2.col_basis):
            for i, block in basis.leaf_blocks.items():
                if block.shape[1]:
                    s = np.linalg.svd(block, compute_uv=False)
                    assert s[-1] > 1e-12 * s[0]

    def test_rejects_bad_tol(self):
        dense, tree, part = rank_one_setup(16, 4)
        for tol in (0.0, 1.0, -1e-3):
            with pytest.raises(ValueError):
                build_h2_dense(dense, tree, tree, part, tol)

    def test_rejects_shape_mismatch(self):
        dense, tree, part = rank_one_setup(16, 4)
        with pytest.raises(ValueError):
            build_h2_dense(dense[:-1], tree, tree, part, 1e-6)


class TestNestedness:
    def test_stacked_children_reproduce_parent_exactly(self):
        prob = built_problem("electrostatic", 12, 1e-6)
        basis, tree = prob.h2.col_basis, prob.h2.col_tree
        for i in range(tree.n_nodes):
            if tree.is_leaf(i) or basis.rank(i) == 0:
                continue
            stacked = np.vstack([basis.expand(c) @ basis.transfers[c]
                                 for c in tree.children(i)])
            assert np.array_equal(stacked, basis.expand(i))

    def test_factored_basis_spans_independent_strip_basis(self):
        # on an exactly low-rank far field the nested basis must agree with
        # a basis computed independently from each node's full far strip
        rng = np.random.default_rng(4)
        count = 96
        pts = random_points(count, 5)
        u = rng.standard_normal((count, 3))
        v = rng.standard_normal((count, 3))
        dense = u @ v.T
        tree = build_cluster_tree(pts, 8)
        part = build_partition(tree, tree, 1.0)
        h2 = build_h2_dense(dense, tree, tree, part, 1e-12)

        strips = {j: [] for j in range(tree.n_nodes)}
        for i, j in part.far:
            strips[j].append(tree.indices(i))
        for j in tree.top_down():
            parent = tree.parent(j)
            if parent >= 0:
                strips[j] = strips[j] + strips[parent]
        for j in range(tree.n_nodes):
            if h2.col_basis.rank(j) == 0 or tree.is_leaf(j):
                continue
            rows = np.concatenate(strips[j])
            strip = dense[np.ix_(rows, tree.indices(j))]
            q, _ = np.linalg.qr(strip.T)
            expanded = h2.col_basis.expand(j)
            resid = expanded - q @ (q.T @ expanded)
            assert np.linalg.norm(resid) <= 1e-10 * np.linalg.norm(expanded)


class TestMatvec:
    def test_zero_vector(self):
        prob = built_problem("electrostatic", 8, 1e-6)
        assert np.array_equal(matvec(prob.h2, np.zeros(prob.n_points)),
                              np.zeros(prob.n_points))

    def test_against_dense(self):
        prob = built_problem("electrostatic", 16, 1e-6)
        x = np.random.default_rng(0).standard_normal(prob.n_points)
        ref = prob.dense @ x
        rel = np.linalg.norm(matvec(prob.h2, x) - ref) / np.linalg.norm(ref)
        assert rel <= 10 * 1e-6

    def test_linearity(self):
        prob = built_problem("electrostatic", 12, 1e-6)
        rng = np.random.default_rng(1)
        x, z = rng.standard_normal((2, prob.n_points))
        lhs = matvec(prob.h2, 2.5 * x - 0.7 * z)
        rhs = 2.5 * matvec(prob.h2, x) - 0.7 * matvec(prob.h2, z)
        assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(rhs)

    def test_dimension_mismatch(self):
        prob = built_problem("electrostatic", 8, 1e-6)
        with pytest.raises(ValueError):
            matvec(prob.h2, np.zeros(prob.n_points + 1))

    def test_repeat_calls_bit_identical(self):
        prob = built_problem("electrostatic", 12, 1e-6)
        x = np.random.default_rng(2).standard_normal(prob.n_points)
        assert np.array_equal(matvec(prob.h2, x), matvec(prob.h2, x))

    def test_coefficients_cover_positive_rank_nodes(self):
        prob = built_problem("electrostatic", 12, 1e-6)
        x = np.random.default_rng(3).standard_normal(prob.n_points)
        _, xhat, yhat = matvec_with_coefficients(prob.h2, x)
        for j, rank in enumerate(prob.h2.col_basis.ranks):
            assert (j in xhat) == (rank > 0)
        for i, rank in enumerate(prob.h2.row_basis.ranks):
            assert (i in yhat) == (rank > 0)


class TestMatvecTranspose:
    def test_zero_vector(self):
        prob = built_problem("electrostatic", 8, 1e-6)
        assert np.array_equal(matvec_transpose(prob.h2,
                                               np.zeros(prob.n_points)),
                              np.zeros(prob.n_points))

    def test_adjoint_identity(self):
        prob = built_problem("electrostatic", 12, 1e-6)
        rng = np.random.default_rng(4)
        x, y = rng.standard_normal((2, prob.n_points))
        lhs = np.dot(y, matvec(prob.h2, x))
        rhs = np.dot(matvec_transpose(prob.h2, y), x)
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)

    def test_matches_matvec_on_symmetric_source(self):
        prob = built_problem("electrostatic", 12, 1e-6)
        x = np.random.default_rng(5).standard_normal(prob.n_points)
        diff = matvec(prob.h2, x) - matvec_transpose(prob.h2, x)
        ref = np.linalg.norm(prob.dense @ x)
        assert np.linalg.norm(diff) <= 20 * 1e-6 * ref


def inflate_ranks(h2: H2Matrix, extra: int, seed: int = 0) -> H2Matrix:
    """Pad every positive-rank node with ``extra`` junk basis vectors.

    The coupling blocks are zero-padded, so the represented operator is
    unchanged while every stored rank is inflated.
    """
    rng = np.random.default_rng(seed)

    def inflate_side(tree, basis):
        ranks = basis.ranks.copy()
        grown = ranks > 0
        leaf_blocks = {}
        for i, block in basis.leaf_blocks.items():
            if grown[i]:
                pad = rng.standard_normal((block.shape[0], extra))
                leaf_blocks[i] = np.hstack([block, pad])
            else:
                leaf_blocks[i] = block
        transfers = {}
        for i, t in basis.transfers.items():
            parent = tree.parent(i)
            rows = t.shape[0] + (extra if grown[i] else 0)
            cols = t.shape[1] + (extra if grown[parent] else 0)
            new = np.zeros((rows, cols))
            new[:t.shape[0], :t.shape[1]] = t
            if grown[i] and grown[parent]:
                new[t.shape[0]:, t.shape[1]:] = rng.standard_normal(
                    (extra, extra))
            transfers[i] = new
        ranks[grown] += extra
        return ClusterBasis(tree, leaf_blocks, transfers, ranks), grown

    row_basis, row_grown = inflate_side(h2.row_tree, h2.row_basis)
    col_basis, col_grown = inflate_side(h2.col_tree, h2.col_basis)
    coupling = {}
    for (i, j), s in h2.coupling.items():
        rows = s.shape[0] + (extra if row_grown[i] else 0)
        cols = s.shape[1] + (extra if col_grown[j] else 0)
        new = np.zeros((rows, cols))
        new[:s.shape[0], :s.shape[1]] = s
        coupling[(i, j)] = new
    return H2Matrix(h2.row_tree, h2.col_tree, h2.partition, row_basis,
                    col_basis, coupling, dict(h2.close))


class TestRecompress:
    def test_tiny_tolerance_is_noop(self):
        prob = built_problem("electrostatic", 12, 1e-6)
        b = recompress(prob.h2, 1e-15)
        assert np.all(b.row_basis.ranks <= prob.h2.row_basis.ranks)
        x = np.random.default_rng(6).standard_normal(prob.n_points)
        ya, yb = matvec(prob.h2, x), matvec(b, x)
        assert np.linalg.norm(ya - yb) <= 1e-12 * np.linalg.norm(ya)

    def test_planted_rank_recovered(self):
        dense, tree, part = rank_one_setup()
        h2 = build_h2_dense(dense, tree, tree, part, 1e-8)
        bloated = inflate_ranks(h2, extra=4)
        assert bloated.row_basis.ranks.max() == 5
        x = np.random.default_rng(7).standard_normal(dense.shape[1])
        ref = matvec(h2, x)
        assert np.allclose(matvec(bloated, x), ref)  # operator unchanged
        slim = recompress(bloated, 1e-8)
        rows, cols = far_rank_nodes(slim)
        assert all(slim.row_basis.rank(i) == 1 for i in rows)
        assert all(slim.col_basis.rank(j) == 1 for j in cols)
        assert np.linalg.norm(matvec(slim, x) - ref) \
            <= 1e-6 * np.linalg.norm(ref)

    def test_storage_shrinks_and_error_bounded(self):
        prob = built_problem("electrostatic", 16, 1e-6)
        b = recompress(prob.h2, 1e-2)
        before = prob.h2.storage_report()
        after = b.storage_report()
        assert (after["coupling"] + after["basis"]
                < before["coupling"] + before["basis"])
        rng = np.random.default_rng(8)
        worst = 0.0
        for _ in range(100):
            x = rng.standard_normal(prob.n_points)
            ref = matvec(prob.h2, x)
            err = np.linalg.norm(matvec(b, x) - ref) / np.linalg.norm(ref)
            worst = max(worst, err)
        assert worst <= 0.1

    def test_rank_monotone(self):
        prob = built_problem("electrostatic", 16, 1e-6)
        for delta in (1e-1, 1e-2, 1e-4):
            b = recompress(prob.h2, delta)
            assert np.all(b.row_basis.ranks <= prob.h2.row_basis.ranks)
            assert np.all(b.col_basis.ranks <= prob.h2.col_basis.ranks)

    def test_rejects_bad_delta(self):
        prob = built_problem("electrostatic", 8, 1e-6)
        with pytest.raises(ValueError):
            recompress(prob.h2, 0.0)


class TestSerialization:
    def test_round_trip_matvec_bit_exact(self, tmp_path):
        prob = built_problem("electrostatic", 12, 1e-6)
        path = tmp_path / "operator.h2"
        save_h2(prob.h2, path)
        back = load_h2(path)
        x = np.random.default_rng(9).standard_normal(prob.n_points)
        assert np.array_equal(matvec(back, x), matvec(prob.h2, x))
        assert np.array_equal(back.row_basis.ranks, prob.h2.row_basis.ranks)
        assert back.partition.far == prob.h2.partition.far
        assert back.partition.close == prob.h2.partition.close
        assert np.array_equal(back.row_tree.permutation,
                              prob.h2.row_tree.permutation)

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "bogus.h2"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError):
            load_h2(path)
