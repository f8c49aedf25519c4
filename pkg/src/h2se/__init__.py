"""Hierarchical compression of boundary-integral matrices, their sparse
extended form, and solvers built on it.

The pipeline: build cluster trees and a far/close block partition over
panel centroids (:mod:`h2se.geometry`), assemble the dense kernel matrix
for one of the two model problems (:mod:`h2se.kernels`), compress it into
nested-basis form (:mod:`h2se.h2core`), rewrite the compressed matvec as
one sparse square system (:mod:`h2se.seform`), and solve the original
system directly or iteratively through that sparse form
(:mod:`h2se.solvers`).  :mod:`h2se.cli` wraps the pipeline for
command-line experiments.
"""

from .geometry import (BlockPartition, ClusterTree, PointSet,
                       build_cluster_tree, build_partition)
from .h2core import (H2Matrix, build_h2_dense, load_h2, matvec,
                     matvec_transpose, reconstruct, recompress, save_h2)
from .kernels import (HYPERSINGULAR, SINGLE_LAYER, Kernel, TriangleMesh,
                      assemble_dense, make_open_surface_mesh,
                      make_unit_square_mesh, manufactured_rhs)
from .seform import (SEForm, SparseMatrix, assemble_se, extend_rhs,
                     extract_solution, se_matvec)
from .solvers import (IterationReport, SolverConfig, estimate_condition,
                      gmres, ilut, solve_direct_se, solve_method2,
                      solve_method3)

__version__ = "0.1.0"

__all__ = [
    "BlockPartition", "ClusterTree", "PointSet", "build_cluster_tree",
    "build_partition", "H2Matrix", "build_h2_dense", "load_h2", "matvec",
    "matvec_transpose", "reconstruct", "recompress", "save_h2",
    "HYPERSINGULAR", "SINGLE_LAYER", "Kernel", "TriangleMesh",
    "assemble_dense", "make_open_surface_mesh", "make_unit_square_mesh",
    "manufactured_rhs", "SEForm", "SparseMatrix", "assemble_se",
    "extend_rhs", "extract_solution", "se_matvec", "IterationReport",
    "SolverConfig", "estimate_condition", "gmres", "ilut",
    "solve_direct_se", "solve_method2", "solve_method3",
]
