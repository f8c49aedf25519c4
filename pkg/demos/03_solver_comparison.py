"""Compare the solver families on both model problems.

Five ways to solve the same system, all built on the sparse extended
form: a complete sparse factorization of the extended matrix, GMRES on
the extended system with either the cheap block preconditioner or a full
ILUT, and flexible GMRES on the compressed operator preconditioned by a
few inner extended-system iterations (with and without SVD
recompression of the operator copy that backs the preconditioner).

The memory-friendly winner is the recompressed reverse-Schur variant:
the inner system shrinks with the ranks while the outer iteration still
converges against the full-accuracy operator.

Run with: python demos/03_solver_comparison.py
"""

import numpy as np

from h2se import (SolverConfig, assemble_dense, assemble_se,
                  build_cluster_tree, build_h2_dense, build_partition,
                  solve_direct_se, solve_method2, solve_method3)
from h2se.cli import make_rhs, problem_kernel, problem_mesh
from h2se.cli import ExperimentSpec

for problem in ("electrostatic", "hypersingular"):
    print(f"== {problem} ==")
    mesh = problem_mesh(problem, 16)
    dense = assemble_dense(mesh, problem_kernel(problem))
    tree = build_cluster_tree(mesh.point_set(), leaf_size=25)
    partition = build_partition(tree, tree, eta=1.0)
    h2 = build_h2_dense(dense, tree, tree, partition, tol=1e-6)
    se = assemble_se(h2)
    n = se.n
    y = make_rhs(ExperimentSpec(problem=problem, seed=0), n)
    x_ref = np.linalg.solve(dense, y)

    def show(name, x, report):
        err = np.linalg.norm(x - x_ref) / np.linalg.norm(x_ref)
        total = report.setup_seconds + report.solve_seconds
        print(f"  {name:15s} iters={report.iterations:4d} "
              f"time={total:6.2f}s prec_mem={report.peak_extra_bytes/1e6:6.2f}MB "
              f"err={err:.2e}")

    x, rep = solve_direct_se(se, y)
    show("direct_se", x, rep)
    for method in ("se_block", "se_ilut"):
        cfg = SolverConfig(method=method, eps=1e-8, restart=200, maxit=500)
        x, rep = solve_method2(se, y, cfg)
        show(method, x, rep)
    for method in ("revschur_ilut", "revschur_svdse"):
        cfg = SolverConfig(method=method, eps=1e-8, restart=200, maxit=500,
                           k_schur=5, delta_svd=1e-2)
        x, rep = solve_method3(h2, y, cfg)
        show(method, x, rep)
