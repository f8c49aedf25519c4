"""Compress a boundary-integral matrix and check the fast matvec.

Walks the first half of the pipeline on the electrostatic model problem:
mesh the unit square, assemble the dense single-layer matrix, build the
cluster tree and far/close partition, compress into nested-basis form,
and compare the factored matvec against the dense one.  Finishes with an
SVD recompression pass to show the rank/accuracy trade-off.

Run with: python demos/01_compress_and_multiply.py
"""

import numpy as np

from h2se import (SINGLE_LAYER, assemble_dense, build_cluster_tree,
                  build_h2_dense, build_partition, make_unit_square_mesh,
                  matvec, reconstruct, recompress)

# Mesh the unit square: an n x n grid of cells, two triangles each.
n_grid = 16
mesh = make_unit_square_mesh(n_grid)
print(f"panels: {mesh.n_triangles}, total area: {mesh.areas.sum():.3f}")

# The dense matrix is the ground truth everything is checked against.
dense = assemble_dense(mesh, SINGLE_LAYER)

# Cluster the panel centroids and split the blocks into far and close.
points = mesh.point_set()
tree = build_cluster_tree(points, leaf_size=25)
partition = build_partition(tree, tree, eta=1.0)
print(f"tree depth: {tree.depth}, far blocks: {len(partition.far)}, "
      f"close blocks: {len(partition.close)}")

# Compress. The tolerance controls the per-node singular-value cutoff.
tol = 1e-6
h2 = build_h2_dense(dense, tree, tree, partition, tol=tol)
row_ranks, col_ranks = h2.far_ranks()
print(f"max basis rank: {int(row_ranks.max())}")

err = np.linalg.norm(dense - reconstruct(h2)) / np.linalg.norm(dense)
print(f"reconstruction error: {err:.2e} (built at tol {tol:.0e})")

rng = np.random.default_rng(0)
x = rng.standard_normal(mesh.n_triangles)
rel = (np.linalg.norm(matvec(h2, x) - dense @ x)
       / np.linalg.norm(dense @ x))
print(f"matvec error vs dense: {rel:.2e}")

# Recompression trims the ranks once a coarser accuracy is acceptable.
coarse = recompress(h2, delta_svd=1e-2)
rel = (np.linalg.norm(matvec(coarse, x) - dense @ x)
       / np.linalg.norm(dense @ x))
before = h2.storage_report()
after = coarse.storage_report()
print(f"recompressed max rank: {int(coarse.row_basis.ranks.max())}, "
      f"matvec error: {rel:.2e}")
print(f"coupling+basis bytes: {before['coupling'] + before['basis']} -> "
      f"{after['coupling'] + after['basis']}")
