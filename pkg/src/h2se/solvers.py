"""Solvers and preconditioners built around the sparse extended form.

Three families:

1. ``solve_direct_se``: factor the extended matrix with a sparse LU
   (partial pivoting, dynamic fill) and back-substitute; memory-hungry
   but trivial to use.
2. ``solve_method2``: restarted GMRES on the extended system, either with
   an ILUT factorization of the whole matrix (``se_ilut``) or with a
   block preconditioner that applies ILUT only inside the smallest square
   block containing the coupling entries and acts as identity elsewhere
   (``se_block``).
3. ``solve_method3``: flexible GMRES on the original compressed operator,
   preconditioned by a few inner steps of ILUT-preconditioned GMRES on
   the extended form of either the operator itself (``revschur_ilut``) or
   an SVD-recompressed, lower-rank copy (``revschur_svdse``).

The outer solver of family 3 must be flexible because its preconditioner
is itself an iterative solve and therefore not a fixed linear operator.
All residual histories are relative to ``||b||`` and, thanks to right
preconditioning, refer to the unpreconditioned system being iterated.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .h2core import H2Matrix, matvec as h2_matvec, recompress
from .seform import SEForm, SparseMatrix, assemble_se, extend_rhs, \
    extract_solution

__all__ = [
    "SolverConfig",
    "IterationReport",
    "InfeasibleError",
    "SingularMatrixError",
    "gmres",
    "ilut",
    "ILUTFactors",
    "SparseLU",
    "factorize_sparse",
    "BlockPreconditioner",
    "solve_direct_se",
    "solve_method2",
    "solve_method3",
    "estimate_condition",
    "METHODS",
]

METHODS = ("direct_se", "se_block", "se_ilut", "revschur_ilut",
           "revschur_svdse")

# Relative magnitude used to replace an exactly zero ILUT pivot when the
# drop tolerance itself is zero.
_PIVOT_FLOOR = 1e-14


class InfeasibleError(RuntimeError):
    """A solve was refused up front (for example, a size cap)."""


class SingularMatrixError(RuntimeError):
    """Factorization met a structurally or numerically singular matrix."""


@dataclass
class SolverConfig:
    """Tunable parameters shared by the solver families.

    ``delta_ilut`` may be zero (no threshold dropping); combined with
    unbounded fill that makes ILUT a complete factorization.
    """

    eps: float = 1e-8
    delta_ilut: float = 1e-2
    fill_max: int | None = None
    delta_svd: float = 1e-2
    k_schur: int = 5
    restart: int = 50
    maxit: int = 500
    method: str = "revschur_svdse"

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise ValueError("eps must lie in (0, 1)")
        if not 0.0 <= self.delta_ilut < 1.0:
            raise ValueError("delta_ilut must lie in [0, 1)")
        if not 0.0 < self.delta_svd < 1.0:
            raise ValueError("delta_svd must lie in (0, 1)")
        if self.k_schur < 1:
            raise ValueError("k_schur must be >= 1")
        if self.restart < 1:
            raise ValueError("restart must be >= 1")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")

    def echo(self) -> dict:
        return {
            "method": self.method, "eps": self.eps,
            "delta_ilut": self.delta_ilut, "fill_max": self.fill_max,
            "delta_svd": self.delta_svd, "k_schur": self.k_schur,
            "restart": self.restart, "maxit": self.maxit,
        }


@dataclass
class IterationReport:
    """Convergence history plus cost counters for one solve."""

    method: str
    residual_history: list[float]
    iterations: int
    converged: bool
    setup_seconds: float = 0.0
    solve_seconds: float = 0.0
    peak_extra_bytes: int = 0
    zero_pivots: int = 0
    cycle_starts: list[int] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    notes: str = ""

    def to_csv(self, path) -> None:
        """One row per iteration, then a footer block of scalars."""
        with open(path, "w", encoding="ascii") as fh:
            fh.write("iteration,relative_residual\n")
            for k, res in enumerate(self.residual_history):
                fh.write(f"{k},{res:.17g}\n")
            fh.write("scalar,value\n")
            fh.write(f"setup_seconds,{self.setup_seconds:.6f}\n")
            fh.write(f"solve_seconds,{self.solve_seconds:.6f}\n")
            fh.write(f"preconditioner_bytes,{self.peak_extra_bytes}\n")
            fh.write(f"iterations,{self.iterations}\n")
            fh.write(f"converged,{int(self.converged)}\n")
            fh.write(f"zero_pivots,{self.zero_pivots}\n")
            fh.write(f"method,{self.method}\n")
            echo = ";".join(f"{k}={v}" for k, v in self.config.items())
            fh.write(f"config,{echo}\n")


def _as_matvec(op):
    if callable(op):
        return op
    if isinstance(op, SparseMatrix):
        csr = op.to_scipy()
        return lambda v: csr @ v
    if sp.issparse(op):
        csr = op.tocsr()
        return lambda v: csr @ v
    mat = np.asarray(op)
    return lambda v: mat @ v


def _as_prec(prec):
    if prec is None:
        return None
    if callable(prec):
        return prec
    if hasattr(prec, "solve"):
        return prec.solve
    raise TypeError("preconditioner must be callable or expose .solve")


def gmres(op, b, *, eps: float = 1e-8, restart: int = 50, maxit: int = 500,
          prec=None, flexible: bool = False, config: SolverConfig = None):
    """Restarted GMRES with right preconditioning.

    ``op`` may be a dense array, a sparse matrix, a :class:`SparseMatrix`
    or a callable.  With ``flexible=True`` the preconditioner may change
    between iterations (it is applied once per step and the preconditioned
    directions are stored), which is what an inner iterative solve needs;
    for a fixed linear preconditioner the two modes produce the same
    iterates.  Setting ``eps=0`` disables early convergence checks, so
    exactly ``maxit`` steps run unless the Krylov space becomes exact.

    Returns ``(x, IterationReport)``.  Residuals are relative to
    ``||b||`` and refer to the unpreconditioned system.
    """
    if config is not None:
        eps, restart, maxit = config.eps, config.restart, config.maxit
    apply_op = _as_matvec(op)
    apply_prec = _as_prec(prec)
    b = np.asarray(b, dtype=np.float64)
    n = b.size
    t0 = time.perf_counter()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        report = IterationReport("gmres", [0.0], 0, True,
                                 solve_seconds=time.perf_counter() - t0)
        return np.zeros(n), report

    x = np.zeros(n)
    r = b.copy()
    history = [1.0]
    cycle_starts: list[int] = []
    iterations = 0
    converged = False
    stagnated = False

    while not converged and not stagnated and iterations < maxit:
        beta = float(np.linalg.norm(r))
        if beta / bnorm <= eps and eps > 0.0:
            converged = True
            break
        cycle_starts.append(iterations)
        dim = min(restart, maxit - iterations)
        v_list = np.empty((dim + 1, n))
        z_list = np.empty((dim, n))
        hess = np.zeros((dim + 1, dim))
        cs = np.zeros(dim)
        sn = np.zeros(dim)
        g = np.zeros(dim + 1)
        v_list[0] = r / beta
        g[0] = beta
        used = 0
        breakdown = False
        for j in range(dim):
            z = apply_prec(v_list[j]) if apply_prec else v_list[j]
            z_list[j] = z
            w = apply_op(z)
            for i in range(j + 1):
                hij = float(v_list[i] @ w)
                w -= hij * v_list[i]
                hess[i, j] = hij
            hnext = float(np.linalg.norm(w))
            hess[j + 1, j] = hnext
            col_scale = float(np.linalg.norm(hess[:j + 2, j]))
            if hnext > 1e-14 * max(col_scale, 1e-300):
                v_list[j + 1] = w / hnext
            else:
                breakdown = True
            for i in range(j):
                t = cs[i] * hess[i, j] + sn[i] * hess[i + 1, j]
                hess[i + 1, j] = -sn[i] * hess[i, j] + cs[i] * hess[i + 1, j]
                hess[i, j] = t
            denom = float(np.hypot(hess[j, j], hess[j + 1, j]))
            if denom == 0.0:
                # the new direction added nothing; drop it and stop the cycle
                breakdown = True
                used = j
                iterations += 1
                history.append(history[-1])
                break
            cs[j] = hess[j, j] / denom
            sn[j] = hess[j + 1, j] / denom
            hess[j, j] = denom
            hess[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            used = j + 1
            iterations += 1
            rel = abs(g[j + 1]) / bnorm
            history.append(rel)
            if (eps > 0.0 and rel <= eps) or breakdown:
                break
        if used:
            y = np.linalg.solve(np.triu(hess[:used, :used]), g[:used])
            x = x + z_list[:used].T @ y
        r = b - apply_op(x)
        true_rel = float(np.linalg.norm(r)) / bnorm
        if eps > 0.0 and true_rel <= eps:
            converged = True
            history[-1] = true_rel
        elif breakdown:
            # invariant Krylov space but residual above the target
            stagnated = True
        elif used < dim and eps > 0.0:
            # estimate claimed convergence but the true residual disagrees;
            # continue with a fresh cycle from the recomputed residual
            continue

    t1 = time.perf_counter()
    if eps == 0.0:
        converged = True  # fixed-step mode: the iterate itself is the result
    report = IterationReport("gmres", history, iterations, converged,
                             solve_seconds=t1 - t0,
                             cycle_starts=cycle_starts)
    if stagnated:
        report.notes = "breakdown before reaching the target residual"
    return x, report


# ---------------------------------------------------------------------------
# ILUT


class ILUTFactors:
    """Incomplete LU factors; ``solve`` applies both triangular sweeps."""

    def __init__(self, n, l_cols, l_vals, u_cols, u_vals, diag, zero_pivots):
        self.n = n
        self.l_cols = l_cols
        self.l_vals = l_vals
        self.u_cols = u_cols
        self.u_vals = u_vals
        self.diag = diag
        self.zero_pivots = zero_pivots

    def solve(self, v: np.ndarray) -> np.ndarray:
        y = np.asarray(v, dtype=np.float64).copy()
        l_cols, l_vals = self.l_cols, self.l_vals
        for i in range(self.n):
            cols = l_cols[i]
            if cols.size:
                y[i] -= l_vals[i] @ y[cols]
        u_cols, u_vals, diag = self.u_cols, self.u_vals, self.diag
        for i in range(self.n - 1, -1, -1):
            cols = u_cols[i]
            if cols.size:
                y[i] = (y[i] - u_vals[i] @ y[cols]) / diag[i]
            else:
                y[i] /= diag[i]
        return y

    @property
    def nnz(self) -> int:
        return (self.n + sum(c.size for c in self.l_cols)
                + sum(c.size for c in self.u_cols))

    @property
    def nbytes(self) -> int:
        per_entry = 16  # index + value
        return self.nnz * per_entry


def ilut(matrix, delta_ilut: float = 1e-2,
         fill_max: int | None = None) -> ILUTFactors:
    """Row-wise incomplete LU with dual dropping.

    Entries (and elimination factors) smaller than ``delta_ilut`` times
    the 2-norm of their original row are dropped; ``fill_max`` bounds the
    number of *new* entries kept per row in each triangular part beyond
    the original pattern.  ``delta_ilut=0`` with unbounded fill performs
    the complete factorization without pivoting.

    Exactly zero pivots are replaced by a perturbation of magnitude
    ``delta_ilut * rownorm`` (an eps-scale floor is used when the drop
    tolerance is zero) and counted in ``zero_pivots``.
    """
    if isinstance(matrix, SparseMatrix):
        csr = matrix.to_scipy()
    elif sp.issparse(matrix):
        csr = matrix.tocsr()
    else:
        csr = sp.csr_matrix(np.asarray(matrix))
    n = csr.shape[0]
    if csr.shape[0] != csr.shape[1]:
        raise ValueError("ILUT requires a square matrix")
    csr.sort_indices()
    indptr, indices, data = csr.indptr, csr.indices, csr.data

    w = np.zeros(n)
    in_pattern = np.zeros(n, dtype=bool)
    l_cols: list[np.ndarray] = []
    l_vals: list[np.ndarray] = []
    u_cols: list[np.ndarray] = []
    u_vals: list[np.ndarray] = []
    diag = np.empty(n)
    zero_pivots = 0

    for i in range(n):
        lo, hi = indptr[i], indptr[i + 1]
        cols = indices[lo:hi]
        vals = data[lo:hi]
        rownorm = float(np.linalg.norm(vals))
        if rownorm == 0.0:
            raise SingularMatrixError(f"row {i} is structurally empty")
        tau = delta_ilut * rownorm
        w[cols] = vals
        in_pattern[cols] = True
        heap = [int(c) for c in cols if c < i]
        heapq.heapify(heap)
        upper = [int(c) for c in cols if c >= i]
        n_lower0 = len(heap)
        n_upper0 = int(np.sum(cols > i))  # diagonal kept separately
        lc: list[int] = []
        lv: list[float] = []
        while heap:
            k = heapq.heappop(heap)
            f = w[k] / diag[k]
            w[k] = 0.0
            in_pattern[k] = False
            if abs(f) <= tau:
                continue
            ucols = u_cols[k]
            if ucols.size:
                fresh = ucols[~in_pattern[ucols]]
                if fresh.size:
                    in_pattern[fresh] = True
                    for c in fresh:
                        c = int(c)
                        if c < i:
                            heapq.heappush(heap, c)
                        else:
                            upper.append(c)
                w[ucols] -= f * u_vals[k]
            lc.append(k)
            lv.append(f)

        l_idx = np.asarray(lc, dtype=np.int64)
        l_val = np.asarray(lv, dtype=np.float64)
        if fill_max is not None and l_idx.size > n_lower0 + fill_max:
            keep = np.argsort(np.abs(l_val))[-(n_lower0 + fill_max):]
            keep.sort()
            l_idx, l_val = l_idx[keep], l_val[keep]
        l_cols.append(l_idx)
        l_vals.append(l_val)

        upper_arr = np.asarray(sorted(upper), dtype=np.int64)
        upper_val = w[upper_arr]
        w[upper_arr] = 0.0
        in_pattern[upper_arr] = False
        if upper_arr.size and upper_arr[0] == i:
            piv = float(upper_val[0])
            upper_arr, upper_val = upper_arr[1:], upper_val[1:]
        else:
            piv = 0.0
        mask = np.abs(upper_val) > tau
        upper_arr, upper_val = upper_arr[mask], upper_val[mask]
        if fill_max is not None and upper_arr.size > n_upper0 + fill_max:
            keep = np.argsort(np.abs(upper_val))[-(n_upper0 + fill_max):]
            keep.sort()
            upper_arr, upper_val = upper_arr[keep], upper_val[keep]
        if piv == 0.0:
            zero_pivots += 1
            mag = tau if tau > 0.0 else _PIVOT_FLOOR * rownorm
            piv = mag
        diag[i] = piv
        u_cols.append(upper_arr)
        u_vals.append(upper_val)

    return ILUTFactors(n, l_cols, l_vals, u_cols, u_vals, diag, zero_pivots)


# ---------------------------------------------------------------------------
# sparse direct factorization


class SparseLU:
    """Left-looking sparse LU with partial pivoting and dynamic fill.

    Column-by-column Gilbert-Peierls elimination.  Because ``L`` is lower
    triangular in pivot order, processing the already-pivotal entries of
    each column in ascending pivot order is a valid topological order;
    the pattern is discovered on the fly through a heap while the updates
    stay vectorized.  The pivot is the largest remaining entry of the
    column, and fill-in is kept in full, so the factorization is exact.
    """

    def __init__(self, matrix):
        if isinstance(matrix, SparseMatrix):
            csc = matrix.to_scipy().tocsc()
        elif sp.issparse(matrix):
            csc = matrix.tocsc()
        else:
            csc = sp.csc_matrix(np.asarray(matrix))
        if csc.shape[0] != csc.shape[1]:
            raise ValueError("LU factorization requires a square matrix")
        csc.sort_indices()
        n = csc.shape[0]
        self.n = n
        indptr, indices, data = csc.indptr, csc.indices, csc.data

        pinv = np.full(n, -1, dtype=np.int64)   # original row -> pivot index
        prow = np.empty(n, dtype=np.int64)      # pivot index -> original row
        l_rows: list[np.ndarray] = []           # original row ids, per column
        l_vals: list[np.ndarray] = []
        u_rows: list[np.ndarray] = []           # pivot indices, per column
        u_vals: list[np.ndarray] = []
        udiag = np.empty(n)

        x = np.zeros(n)
        seen = np.full(n, -1, dtype=np.int64)   # stamp per original row

        for j in range(n):
            col_rows = indices[indptr[j]:indptr[j + 1]]
            col_vals = data[indptr[j]:indptr[j + 1]]
            x[col_rows] = col_vals
            seen[col_rows] = j
            heap: list[int] = []
            nonpivot: list[int] = []
            for r in col_rows:
                k = pinv[r]
                if k >= 0:
                    heap.append(int(k))
                else:
                    nonpivot.append(int(r))
            heapq.heapify(heap)

            ucols: list[int] = []
            uvals: list[float] = []
            while heap:
                k = heapq.heappop(heap)
                pr = prow[k]
                xk = x[pr]
                x[pr] = 0.0
                if xk != 0.0:
                    ucols.append(k)
                    uvals.append(xk)
                    rows_k = l_rows[k]
                    if rows_k.size:
                        fresh = rows_k[seen[rows_k] != j]
                        if fresh.size:
                            seen[fresh] = j
                            for r in fresh:
                                kk = pinv[r]
                                if kk >= 0:
                                    heapq.heappush(heap, int(kk))
                                else:
                                    nonpivot.append(int(r))
                        x[rows_k] -= xk * l_vals[k]

            u_rows.append(np.asarray(ucols, dtype=np.int64))
            u_vals.append(np.asarray(uvals, dtype=np.float64))

            if not nonpivot:
                raise SingularMatrixError(
                    f"column {j} has no eligible pivot row")
            np_rows = np.asarray(nonpivot, dtype=np.int64)
            np_vals = x[np_rows]
            x[np_rows] = 0.0
            best = int(np.argmax(np.abs(np_vals)))
            piv = float(np_vals[best])
            if piv == 0.0:
                raise SingularMatrixError(
                    f"numerically singular at column {j}")
            prow[j] = np_rows[best]
            pinv[np_rows[best]] = j
            mask = np.ones(np_rows.size, dtype=bool)
            mask[best] = False
            keep = np_vals[mask] != 0.0
            l_rows.append(np_rows[mask][keep])
            l_vals.append(np_vals[mask][keep] / piv)
            udiag[j] = piv

        self._pinv = pinv
        self._prow = prow
        self._l_rows = l_rows
        self._l_vals = l_vals
        self._u_rows = u_rows
        self._u_vals = u_vals
        self._udiag = udiag

    def solve(self, b: np.ndarray) -> np.ndarray:
        c = np.asarray(b, dtype=np.float64).copy()
        n = self.n
        y = np.empty(n)
        prow = self._prow
        for j in range(n):
            yj = c[prow[j]]
            y[j] = yj
            if yj != 0.0:
                rows = self._l_rows[j]
                if rows.size:
                    c[rows] -= yj * self._l_vals[j]
        xp = y
        for j in range(n - 1, -1, -1):
            xj = xp[j] / self._udiag[j]
            xp[j] = xj
            if xj != 0.0:
                rows = self._u_rows[j]
                if rows.size:
                    xp[rows] -= xj * self._u_vals[j]
        return xp

    @property
    def nnz(self) -> int:
        return (self.n + sum(r.size for r in self._l_rows)
                + sum(r.size for r in self._u_rows))

    @property
    def nbytes(self) -> int:
        return self.nnz * 16


class _ScipyLU:
    """SuperLU backend behind the same factor interface."""

    def __init__(self, matrix):
        if isinstance(matrix, SparseMatrix):
            matrix = matrix.to_scipy()
        self._lu = spla.splu(sp.csc_matrix(matrix))

    def solve(self, b):
        return self._lu.solve(np.asarray(b, dtype=np.float64))

    @property
    def nnz(self) -> int:
        return int(self._lu.L.nnz + self._lu.U.nnz)

    @property
    def nbytes(self) -> int:
        return self.nnz * 16


def factorize_sparse(matrix, backend: str = "internal"):
    """Complete sparse LU behind a backend-agnostic interface."""
    if backend == "internal":
        return SparseLU(matrix)
    if backend == "scipy":
        return _ScipyLU(matrix)
    raise ValueError(f"unknown direct-solver backend {backend!r}")


# ---------------------------------------------------------------------------
# preconditioners and the three method families


class BlockPreconditioner:
    """Identity everywhere except an ILUT solve on the coupling square.

    The coupling entries occupy the rows of the coefficient equations and
    the columns of the coefficient unknowns; the preconditioner factors
    the smallest square index range containing that rectangle and leaves
    every component outside the range untouched.
    """

    def __init__(self, se: SEForm, delta_ilut: float = 1e-2,
                 fill_max: int | None = None):
        lay = se.layout
        # coupling entries span rows of the yhat equations and columns of
        # the xhat unknowns; the smallest enclosing square index range is
        # the whole coefficient block
        lo = lay.n
        hi = lay.n_extended
        self.span = (lo, hi)
        sub = se.matrix.to_scipy()[lo:hi, lo:hi].tocsr()
        self.factors = ilut(sub, delta_ilut, fill_max)

    def solve(self, v: np.ndarray) -> np.ndarray:
        lo, hi = self.span
        out = np.asarray(v, dtype=np.float64).copy()
        out[lo:hi] = self.factors.solve(v[lo:hi])
        return out

    @property
    def nbytes(self) -> int:
        return self.factors.nbytes

    @property
    def zero_pivots(self) -> int:
        return self.factors.zero_pivots


def solve_direct_se(se: SEForm, y: np.ndarray, cap: int = 50000,
                    backend: str = "internal"):
    """Method 1: complete sparse factorization of the extended matrix.

    Refuses systems with more than ``cap`` extended unknowns.  Reports the
    factor storage, which grows far beyond any of the iterative methods.
    """
    if se.n_extended > cap:
        raise InfeasibleError(
            f"extended size {se.n_extended} exceeds the direct-solve cap "
            f"{cap}")
    t0 = time.perf_counter()
    factors = factorize_sparse(se.matrix, backend=backend)
    t1 = time.perf_counter()
    b = extend_rhs(se, y)
    z = factors.solve(b)
    x = extract_solution(se, z)
    t2 = time.perf_counter()
    bnorm = float(np.linalg.norm(b))
    res = float(np.linalg.norm(se.matrix.matvec(z) - b))
    rel = res / bnorm if bnorm > 0.0 else 0.0
    report = IterationReport("direct_se", [rel], 0, True,
                             setup_seconds=t1 - t0, solve_seconds=t2 - t1,
                             peak_extra_bytes=factors.nbytes)
    return x, report


def solve_method2(se: SEForm, y: np.ndarray, config: SolverConfig):
    """Method 2: preconditioned GMRES on the extended system.

    ``se_ilut`` factors the whole extended matrix with ILUT; ``se_block``
    uses the coupling-square block preconditioner, cheaper to set up but
    slower to converge.  The solution is extracted from the converged
    extended vector.
    """
    if config.method not in ("se_block", "se_ilut"):
        raise ValueError("method2 requires method se_block or se_ilut")
    t0 = time.perf_counter()
    if config.method == "se_block":
        prec = BlockPreconditioner(se, config.delta_ilut, config.fill_max)
        zero_pivots = prec.zero_pivots
        extra = prec.nbytes
    else:
        prec = ilut(se.matrix, config.delta_ilut, config.fill_max)
        zero_pivots = prec.zero_pivots
        extra = prec.nbytes
    t1 = time.perf_counter()
    b = extend_rhs(se, y)
    z, run = gmres(se.matrix, b, eps=config.eps, restart=config.restart,
                   maxit=config.maxit, prec=prec)
    x = extract_solution(se, z)
    report = IterationReport(config.method, run.residual_history,
                             run.iterations, run.converged,
                             setup_seconds=t1 - t0,
                             solve_seconds=run.solve_seconds,
                             peak_extra_bytes=extra,
                             zero_pivots=zero_pivots,
                             cycle_starts=run.cycle_starts,
                             config=config.echo(), notes=run.notes)
    return x, report


def solve_method3(h2: H2Matrix, y: np.ndarray, config: SolverConfig):
    """Method 3: reverse-Schur preconditioning of the original operator.

    Outer flexible GMRES iterates the compressed operator itself; each
    preconditioner application embeds the residual into the extended
    layout, runs ``k_schur`` steps of ILUT-preconditioned GMRES on the
    extended form of ``B`` (the operator for ``revschur_ilut``, its
    recompressed copy for ``revschur_svdse``), and extracts the leading N
    components.  The extended form and its ILUT factors are built once.
    """
    if config.method not in ("revschur_ilut", "revschur_svdse"):
        raise ValueError("method3 requires method revschur_ilut or "
                         "revschur_svdse")
    t0 = time.perf_counter()
    if config.method == "revschur_svdse":
        b_op = recompress(h2, config.delta_svd)
    else:
        b_op = h2
    se_b = assemble_se(b_op)
    factors = ilut(se_b.matrix, config.delta_ilut, config.fill_max)
    t1 = time.perf_counter()
    h_csr = se_b.matrix.to_scipy()
    n = se_b.n
    k_schur = config.k_schur

    def rev_schur(r: np.ndarray) -> np.ndarray:
        rhat = np.zeros(se_b.n_extended)
        rhat[:n] = r
        z, _ = gmres(h_csr, rhat, eps=0.0, restart=k_schur, maxit=k_schur,
                     prec=factors)
        return z[:n]

    x, run = gmres(lambda v: h2_matvec(h2, v), y, eps=config.eps,
                   restart=config.restart, maxit=config.maxit,
                   prec=rev_schur, flexible=True)
    extra = factors.nbytes + se_b.matrix.nbytes
    report = IterationReport(config.method, run.residual_history,
                             run.iterations, run.converged,
                             setup_seconds=t1 - t0,
                             solve_seconds=run.solve_seconds,
                             peak_extra_bytes=extra,
                             zero_pivots=factors.zero_pivots,
                             cycle_starts=run.cycle_starts,
                             config=config.echo(), notes=run.notes)
    return x, report


def estimate_condition(op, n: int, dense_cap: int = 4096, op_t=None,
                       solve=None, solve_t=None, iterations: int = 60,
                       seed: int = 0) -> float:
    """Spectral condition number of a square operator.

    Below ``dense_cap`` the operator is densified and the exact ratio of
    extreme singular values is returned (infinity for singular input).
    Above the cap a power iteration on ``op^T op`` estimates the largest
    singular value and an inverse power iteration through the supplied
    ``solve`` / ``solve_t`` callables estimates the smallest.
    """
    if n <= dense_cap:
        if callable(op):
            cols = [op(col) for col in np.eye(n)]
            dense = np.column_stack(cols)
        elif sp.issparse(op):
            dense = op.toarray()
        elif isinstance(op, SparseMatrix):
            dense = op.toarray()
        else:
            dense = np.asarray(op, dtype=np.float64)
        s = np.linalg.svd(dense, compute_uv=False)
        if s[-1] == 0.0:
            return np.inf
        return float(s[0] / s[-1])

    apply_op = _as_matvec(op)
    apply_op_t = _as_matvec(op_t) if op_t is not None else apply_op
    if solve is None:
        raise ValueError("iterative mode needs a solve callable")
    solve_t = solve_t or solve
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    sigma_max = 0.0
    for _ in range(iterations):
        w = apply_op_t(apply_op(v))
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return np.inf
        sigma_max = np.sqrt(norm)
        v = w / norm
    u = rng.standard_normal(n)
    u /= np.linalg.norm(u)
    inv_norm = 1.0
    for _ in range(iterations):
        w = solve_t(solve(u))
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return np.inf
        inv_norm = np.sqrt(norm)
        u = w / norm
    return float(sigma_max * inv_norm)
