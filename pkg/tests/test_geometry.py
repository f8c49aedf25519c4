import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from h2se.geometry import (BlockPartition, PointSet, build_cluster_tree,
                           build_partition, coverage_counts)

from _problems import built_problem, random_points


def single_point_set(xyz):
    return PointSet(np.asarray([xyz]), np.asarray([1.0]))


class TestPointSet:
    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            PointSet(np.zeros((0, 3)), np.zeros(0))

    def test_rejects_nonpositive_weights(self):
        with pytest.raises(ValueError):
            PointSet(np.zeros((2, 3)), np.array([1.0, 0.0]))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            PointSet(np.zeros((2, 3)), np.ones(3))
        with pytest.raises(ValueError):
            PointSet(np.zeros((2, 2)), np.ones(2))


class TestBuildClusterTree:
    def test_single_point_degenerate(self):
        tree = build_cluster_tree(single_point_set([0.0, 0.0, 0.0]), 1)
        assert tree.n_nodes == 1
        assert tree.depth == 1
        assert tree.is_leaf(0)

    def test_four_collinear_points(self):
        # hand trace: 4 -> 2+2 -> 1+1+1+1, so 7 nodes over 3 levels
        pts = PointSet(np.column_stack([np.arange(4.0), np.zeros(4),
                                        np.zeros(4)]), np.ones(4))
        tree = build_cluster_tree(pts, 1)
        assert tree.depth == 3
        assert tree.n_nodes == 7
        assert all(tree.nodes[i].size == 1 for i in tree.leaves())

    def test_paper_scale_partition_property(self):
        pts = random_points(3928, seed=3)
        tree = build_cluster_tree(pts, 25)
        spans = sorted((tree.nodes[i].start, tree.nodes[i].stop)
                       for i in tree.leaves())
        assert spans[0][0] == 0 and spans[-1][1] == 3928
        assert all(a[1] == b[0] for a, b in zip(spans, spans[1:]))
        assert all(stop - start <= 25 for start, stop in spans)
        assert np.array_equal(np.sort(tree.permutation), np.arange(3928))

    def test_odd_split_gives_lower_half_the_extra_point(self):
        pts = PointSet(np.column_stack([np.arange(5.0), np.zeros(5),
                                        np.zeros(5)]), np.ones(5))
        tree = build_cluster_tree(pts, 2)
        left, right = tree.children(0)
        assert tree.nodes[left].size == 3
        assert tree.nodes[right].size == 2

    def test_duplicate_points_terminate(self):
        pts = PointSet(np.zeros((9, 3)), np.ones(9))
        tree = build_cluster_tree(pts, 2)
        assert all(tree.nodes[i].size <= 2 for i in tree.leaves())

    def test_rejects_bad_leaf_size(self):
        with pytest.raises(ValueError):
            build_cluster_tree(random_points(4, 0), 0)

    @pytest.mark.parametrize("count,leaf_size", [(30, 1), (100, 8),
                                                 (512, 25), (777, 25)])
    def test_depth_bound(self, count, leaf_size):
        tree = build_cluster_tree(random_points(count, seed=count), leaf_size)
        bound = int(np.ceil(np.log2(max(count / leaf_size, 1.0)))) + 2
        assert tree.depth <= bound

    @settings(max_examples=25, deadline=None)
    @given(count=st.integers(1, 200), leaf_size=st.integers(1, 30),
           seed=st.integers(0, 10))
    def test_permutation_round_trip(self, count, leaf_size, seed):
        tree = build_cluster_tree(random_points(count, seed), leaf_size)
        assert np.array_equal(tree.permutation[tree.inverse_permutation],
                              np.arange(count))
        assert np.array_equal(tree.inverse_permutation[tree.permutation],
                              np.arange(count))

    def test_deterministic_rebuild(self):
        pts = random_points(200, seed=5)
        t1 = build_cluster_tree(pts, 8)
        t2 = build_cluster_tree(pts, 8)
        assert np.array_equal(t1.permutation, t2.permutation)
        assert [n.children for n in t1.nodes] == [n.children for n in t2.nodes]


class TestBuildPartition:
    def test_two_distant_single_points_are_far(self):
        rows = build_cluster_tree(single_point_set([0.0, 0.0, 0.0]), 1)
        cols = build_cluster_tree(single_point_set([10.0, 0.0, 0.0]), 1)
        part = build_partition(rows, cols, eta=0.01)
        assert part.far == ((0, 0),)
        assert part.close == ()

    def test_self_block_is_never_admissible(self):
        tree = build_cluster_tree(single_point_set([1.0, 2.0, 3.0]), 1)
        part = build_partition(tree, tree, eta=1.0)
        assert part.far == ()
        assert part.close == ((0, 0),)

    def test_unit_square_coverage(self):
        prob = built_problem("electrostatic", 16, 1e-6)
        counts = coverage_counts(prob.tree, prob.tree, prob.partition)
        assert np.all(counts == 1)

    @pytest.mark.parametrize("count,eta,leaf_size,seed", [
        (1, 1.0, 1, 0), (2, 1.0, 1, 1), (17, 0.5, 1, 2), (40, 2.0, 4, 3),
        (64, 1.0, 8, 4), (200, 1.0, 25, 5), (333, 0.8, 16, 6),
    ])
    def test_random_cloud_coverage(self, count, eta, leaf_size, seed):
        pts = random_points(count, seed)
        tree = build_cluster_tree(pts, leaf_size)
        part = build_partition(tree, tree, eta)
        assert np.all(coverage_counts(tree, tree, part) == 1)
        assert len(set(part.far)) == len(part.far)
        assert len(set(part.close)) == len(part.close)

    def test_coverage_with_duplicates(self):
        coords = np.vstack([np.zeros((5, 3)), random_points(20, 7).coords])
        pts = PointSet(coords, np.ones(25))
        tree = build_cluster_tree(pts, 2)
        part = build_partition(tree, tree, 1.0)
        assert np.all(coverage_counts(tree, tree, part) == 1)

    def test_rejects_bad_eta(self):
        tree = build_cluster_tree(random_points(4, 0), 2)
        with pytest.raises(ValueError):
            build_partition(tree, tree, 0.0)

    def test_pair_in_both_lists_rejected(self):
        with pytest.raises(ValueError):
            BlockPartition(((0, 0),), ((0, 0),), 1.0)

    def test_deterministic_pair_order(self):
        prob = built_problem("electrostatic", 8, 1e-6)
        part2 = build_partition(prob.tree, prob.tree, 1.0)
        assert part2.far == prob.partition.far
        assert part2.close == prob.partition.close
        assert list(part2.far) == sorted(part2.far)
