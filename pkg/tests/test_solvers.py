import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from h2se.seform import extend_rhs
from h2se.solvers import (BlockPreconditioner, ILUTFactors, InfeasibleError,
                          SingularMatrixError, SolverConfig, SparseLU,
                          estimate_condition, factorize_sparse, gmres, ilut,
                          solve_direct_se, solve_method2, solve_method3)

from _problems import built_cloud, built_problem


def ilut_factors_dense(factors: ILUTFactors):
    n = factors.n
    lower = np.eye(n)
    upper = np.diag(factors.diag)
    for i in range(n):
        lower[i, factors.l_cols[i]] = factors.l_vals[i]
        upper[i, factors.u_cols[i]] = factors.u_vals[i]
    return lower, upper


class TestGmres:
    def test_identity_converges_immediately(self):
        b = np.arange(1.0, 6.0)
        x, rep = gmres(np.eye(5), b, eps=1e-12)
        assert rep.iterations == 1
        assert rep.converged
        assert np.allclose(x, b)

    def test_diagonal_closed_form(self):
        d = np.arange(1.0, 11.0)
        x, rep = gmres(np.diag(d), np.ones(10), eps=1e-12)
        assert rep.iterations <= 10
        assert np.allclose(x, 1.0 / d)

    def test_zero_rhs(self):
        x, rep = gmres(np.eye(4), np.zeros(4), eps=1e-10)
        assert np.array_equal(x, np.zeros(4))
        assert rep.residual_history == [0.0]
        assert rep.converged

    def test_history_monotone_across_restarts(self):
        prob = built_problem("electrostatic", 16, 1e-6, with_se=True)
        y = np.random.default_rng(0).standard_normal(prob.n_points)
        x, rep = gmres(prob.dense, y, eps=1e-8, restart=25, maxit=150)
        hist = np.asarray(rep.residual_history)
        assert len(rep.cycle_starts) > 1  # several cycles actually ran
        assert np.all(hist[1:] <= hist[:-1] * (1.0 + 1e-10) + 1e-15)
        assert hist[0] == 1.0

    def test_estimates_track_true_residual(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((40, 40)) + 6.0 * np.eye(40)
        b = rng.standard_normal(40)
        x, rep = gmres(a, b, eps=1e-10, restart=40, maxit=40)
        true_rel = np.linalg.norm(b - a @ x) / np.linalg.norm(b)
        assert rep.converged
        assert abs(true_rel - rep.residual_history[-1]) <= 1e-9

    def test_fixed_step_mode_runs_exact_count(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((30, 30)) + 6.0 * np.eye(30)
        b = rng.standard_normal(30)
        _, rep = gmres(a, b, eps=0.0, restart=7, maxit=7)
        assert rep.iterations == 7

    def test_flexible_with_varying_preconditioner(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((50, 50)) + 8.0 * np.eye(50)
        b = rng.standard_normal(50)
        state = {"flip": False}

        def wobbly(v):
            state["flip"] = not state["flip"]
            return v / (2.0 if state["flip"] else 3.0)

        x, rep = gmres(a, b, eps=1e-10, restart=50, maxit=200, prec=wobbly,
                       flexible=True)
        assert rep.converged
        assert np.linalg.norm(a @ x - b) <= 1e-9 * np.linalg.norm(b)

    def test_callable_operator(self):
        a = np.diag(np.arange(1.0, 6.0))
        x, rep = gmres(lambda v: a @ v, np.ones(5), eps=1e-12)
        assert np.allclose(x, 1.0 / np.arange(1.0, 6.0))


class TestIlut:
    def test_diagonal_matrix_exact(self):
        f = ilut(np.diag([2.0, 4.0, 8.0]), 0.0)
        assert np.allclose(f.solve(np.array([2.0, 4.0, 8.0])), 1.0)
        assert f.zero_pivots == 0

    def test_tridiagonal_complete_factorization_matches_recurrence(self):
        n = 100
        m = (np.diag(2.0 * np.ones(n)) + np.diag(-np.ones(n - 1), 1)
             + np.diag(-np.ones(n - 1), -1))
        f = ilut(m, 0.0)
        lower, upper = ilut_factors_dense(f)
        assert np.linalg.norm(lower @ upper - m) <= 1e-12
        # the exact elimination recurrence for this stencil
        d = np.empty(n)
        d[0] = 2.0
        for i in range(1, n):
            d[i] = 2.0 - 1.0 / d[i - 1]
        assert np.allclose(f.diag, d)

    def test_complete_limit_on_extended_form(self):
        prob = built_problem("electrostatic", 12, 1e-8, with_se=True)
        f = ilut(prob.se.matrix, 0.0, None)
        assert f.zero_pivots == 0
        y = np.random.default_rng(4).standard_normal(prob.n_points)
        b = extend_rhs(prob.se, y)
        _, rep = gmres(prob.se.matrix, b, eps=1e-8, restart=50, maxit=50,
                       prec=f)
        assert rep.converged
        assert rep.iterations == 1

    def test_threshold_drops_entries(self):
        prob = built_cloud(220, seed=5, tol=1e-6, leaf_size=8)
        full = ilut(prob.se.matrix, 0.0)
        dropped = ilut(prob.se.matrix, 1e-1)
        assert dropped.nnz < full.nnz

    def test_fill_cap_respected(self):
        prob = built_cloud(220, seed=5, tol=1e-6, leaf_size=8)
        csr = prob.se.matrix.to_scipy()
        fill_max = 3
        f = ilut(prob.se.matrix, 0.0, fill_max=fill_max)
        for i in range(csr.shape[0]):
            row_cols = csr.indices[csr.indptr[i]:csr.indptr[i + 1]]
            orig_lower = int(np.sum(row_cols < i))
            orig_upper = int(np.sum(row_cols > i))
            assert f.l_cols[i].size <= orig_lower + fill_max
            assert f.u_cols[i].size <= orig_upper + fill_max

    def test_zero_pivot_perturbed_and_counted(self):
        m = np.array([[0.0, 1.0], [1.0, 0.0]])
        f = ilut(m, 1e-2)
        assert f.zero_pivots >= 1
        assert np.all(np.isfinite(f.solve(np.ones(2))))

    def test_application_linear(self):
        prob = built_cloud(128, seed=4, tol=1e-6, leaf_size=8)
        f = ilut(prob.se.matrix, 1e-2)
        rng = np.random.default_rng(5)
        u, v = rng.standard_normal((2, prob.se.n_extended))
        lhs = f.solve(1.5 * u - 2.0 * v)
        rhs = 1.5 * f.solve(u) - 2.0 * f.solve(v)
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(rhs)

    def test_empty_row_rejected(self):
        m = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
        with pytest.raises(SingularMatrixError):
            ilut(m, 0.0)


class TestSparseLU:
    def test_requires_pivoting(self):
        lu = SparseLU(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert np.allclose(lu.solve(np.array([3.0, 7.0])), [7.0, 3.0])

    def test_matches_dense_solver(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal((80, 80))
        a[np.abs(a) < 1.0] = 0.0
        a += np.diag(rng.uniform(0.1, 0.2, 80))
        b = rng.standard_normal(80)
        ref = sla.solve(a, b)
        got = SparseLU(a).solve(b)
        assert np.linalg.norm(got - ref) <= 1e-11 * np.linalg.norm(ref)

    def test_singular_reported(self):
        with pytest.raises(SingularMatrixError):
            SparseLU(np.array([[1.0, 2.0], [2.0, 4.0]]))

    def test_scipy_backend_equivalent(self):
        prob = built_cloud(128, seed=4, tol=1e-6, leaf_size=8)
        b = np.random.default_rng(7).standard_normal(prob.se.n_extended)
        internal = factorize_sparse(prob.se.matrix, "internal").solve(b)
        external = factorize_sparse(prob.se.matrix, "scipy").solve(b)
        assert np.linalg.norm(internal - external) \
            <= 1e-8 * np.linalg.norm(internal)
        with pytest.raises(ValueError):
            factorize_sparse(prob.se.matrix, "other")

    def test_reports_fill(self):
        prob = built_cloud(128, seed=4, tol=1e-6, leaf_size=8)
        lu = SparseLU(prob.se.matrix)
        assert lu.nnz >= prob.se.matrix.nnz / 2
        assert lu.nbytes > 0


class TestBlockPreconditioner:
    def test_identity_outside_coupling_square(self):
        prob = built_cloud(220, seed=5, tol=1e-6, leaf_size=8)
        bp = BlockPreconditioner(prob.se, 1e-2)
        v = np.zeros(prob.se.n_extended)
        v[:prob.se.n] = np.random.default_rng(8).standard_normal(prob.se.n)
        assert np.array_equal(bp.solve(v), v)

    def test_application_linear(self):
        prob = built_cloud(220, seed=5, tol=1e-6, leaf_size=8)
        bp = BlockPreconditioner(prob.se, 1e-2)
        rng = np.random.default_rng(9)
        u, v = rng.standard_normal((2, prob.se.n_extended))
        lhs = bp.solve(0.5 * u + 3.0 * v)
        rhs = 0.5 * bp.solve(u) + 3.0 * bp.solve(v)
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(rhs)


class TestDirectSolve:
    def test_matches_dense_oracle(self):
        prob = built_cloud(256, seed=6, tol=1e-10, leaf_size=25)
        y = np.random.default_rng(10).standard_normal(prob.n_points)
        x, rep = solve_direct_se(prob.se, y)
        ref = sla.solve(prob.dense, y)
        assert np.linalg.norm(x - ref) <= 1e-8 * np.linalg.norm(ref)
        assert rep.residual_history[-1] <= 1e-10

    def test_degenerate_far_empty(self):
        prob = built_cloud(60, seed=0, tol=1e-6, leaf_size=60)
        assert prob.se.n_extended == prob.se.n
        y = np.random.default_rng(11).standard_normal(prob.n_points)
        x, _ = solve_direct_se(prob.se, y)
        assert np.allclose(x, sla.solve(prob.dense, y), rtol=1e-9)

    def test_cap_refusal(self):
        prob = built_cloud(128, seed=4, tol=1e-6, leaf_size=8)
        with pytest.raises(InfeasibleError):
            solve_direct_se(prob.se, np.zeros(prob.n_points), cap=10)

    def test_memory_far_above_iterative(self):
        prob = built_problem("electrostatic", 16, 1e-6, with_se=True)
        y = np.random.default_rng(12).standard_normal(prob.n_points)
        _, direct_rep = solve_direct_se(prob.se, y)
        cfg = SolverConfig(method="se_ilut", eps=1e-8, restart=200)
        _, ilut_rep = solve_method2(prob.se, y, cfg)
        assert direct_rep.peak_extra_bytes > 2 * ilut_rep.peak_extra_bytes


class TestMethodFamilies:
    def test_method2_rejects_wrong_method(self):
        prob = built_cloud(128, seed=4, tol=1e-6, leaf_size=8)
        with pytest.raises(ValueError):
            solve_method2(prob.se, np.zeros(prob.n_points),
                          SolverConfig(method="direct_se"))

    def test_method3_rejects_wrong_method(self):
        prob = built_cloud(128, seed=4, tol=1e-6, leaf_size=8)
        with pytest.raises(ValueError):
            solve_method3(prob.h2, np.zeros(prob.n_points),
                          SolverConfig(method="se_ilut"))

    def test_se_ilut_exact_limit_one_iteration(self):
        prob = built_problem("electrostatic", 12, 1e-8, with_se=True)
        y = np.random.default_rng(13).standard_normal(prob.n_points)
        cfg = SolverConfig(method="se_ilut", eps=1e-8, delta_ilut=0.0,
                           fill_max=None, restart=50)
        _, rep = solve_method2(prob.se, y, cfg)
        assert rep.converged
        assert rep.iterations == 1

    def test_revschur_exact_inner_converges_fast(self):
        prob = built_problem("electrostatic", 8, 1e-8, with_se=True)
        y = np.random.default_rng(14).standard_normal(prob.n_points)
        cfg = SolverConfig(method="revschur_ilut", eps=1e-8, delta_ilut=0.0,
                           k_schur=60, restart=50)
        x, rep = solve_method3(prob.h2, y, cfg)
        assert rep.converged
        assert rep.iterations <= 2

    def test_all_methods_agree_with_dense(self):
        prob = built_problem("electrostatic", 16, 1e-10, with_se=True)
        y = np.random.default_rng(15).standard_normal(prob.n_points)
        ref = sla.solve(prob.dense, y)
        eps = 1e-8
        solutions = {}
        solutions["direct_se"], _ = solve_direct_se(prob.se, y)
        for method in ("se_block", "se_ilut"):
            cfg = SolverConfig(method=method, eps=eps, restart=500,
                               maxit=500)
            solutions[method], rep = solve_method2(prob.se, y, cfg)
            assert rep.converged
        for method in ("revschur_ilut", "revschur_svdse"):
            cfg = SolverConfig(method=method, eps=eps, restart=500,
                               maxit=500, k_schur=5)
            solutions[method], rep = solve_method3(prob.h2, y, cfg)
            assert rep.converged
        for method, x in solutions.items():
            rel = np.linalg.norm(x - ref) / np.linalg.norm(ref)
            assert rel <= 100 * eps, (method, rel)

    def test_report_csv_round_trip(self, tmp_path):
        prob = built_cloud(128, seed=4, tol=1e-6, leaf_size=8)
        y = np.random.default_rng(16).standard_normal(prob.n_points)
        cfg = SolverConfig(method="se_ilut", eps=1e-8)
        _, rep = solve_method2(prob.se, y, cfg)
        path = tmp_path / "history.csv"
        rep.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "iteration,relative_residual"
        assert lines[1].startswith("0,1")
        assert any(line.startswith("method,se_ilut") for line in lines)
        assert any(line.startswith("preconditioner_bytes,") for line in lines)


class TestSolverConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(eps=0.0)
        with pytest.raises(ValueError):
            SolverConfig(delta_ilut=-0.1)
        with pytest.raises(ValueError):
            SolverConfig(delta_svd=1.0)
        with pytest.raises(ValueError):
            SolverConfig(k_schur=0)
        with pytest.raises(ValueError):
            SolverConfig(restart=0)
        with pytest.raises(ValueError):
            SolverConfig(method="magic")
        SolverConfig(delta_ilut=0.0)  # complete-factorization limit is legal


class TestConditionEstimate:
    def test_identity(self):
        assert estimate_condition(np.eye(7), 7) == 1.0

    def test_diagonal(self):
        assert np.isclose(estimate_condition(np.diag([1.0, 10.0]), 2), 10.0)

    def test_singular_gives_infinity(self):
        assert estimate_condition(np.zeros((3, 3)), 3) == np.inf

    def test_iterative_mode_close_to_exact(self):
        rng = np.random.default_rng(17)
        a = rng.standard_normal((60, 60))
        a = a @ a.T + 5.0 * np.eye(60)
        exact = estimate_condition(a, 60)
        lu = sla.lu_factor(a)
        approx = estimate_condition(a, 60, dense_cap=10,
                                    solve=lambda v: sla.lu_solve(lu, v),
                                    iterations=200)
        assert 0.5 * exact <= approx <= 2.0 * exact

    def test_iterative_mode_requires_solver(self):
        with pytest.raises(ValueError):
            estimate_condition(np.eye(8), 8, dense_cap=4)
