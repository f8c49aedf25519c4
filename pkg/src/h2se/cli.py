"""Command-line harness for the compression and solver experiments.

Subcommands
-----------
generate   write a mesh file for one of the two model problems
assemble   compress a problem and write the binary operator container
solve      run one solver end to end; writes the solution vector, the
           residual-history CSV, and a one-line summary CSV
benchmark  run a (sizes x methods) grid; writes a comparison CSV plus
           per-cell residual histories, continuing past infeasible cells
inspect    print the extended-form layout manifest and the size-bound
           check

Options may come from a plain-text ``key=value`` config file
(``--config``); explicit command-line flags override file values.  Every
run echoes its resolved configuration into the output directory.

Right-hand sides are drawn from a named seedable generator (numpy's
PCG64, wrapped in ``numpy.random.Generator``), so runs with equal specs
reproduce identical solution files and iteration counts; the wall-clock
columns of the summary files are the only non-deterministic outputs.

Exit codes: 0 on full success, 2 on partial grid failure, 1 on invalid
input (including size-cap refusals).
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import build_cluster_tree, build_partition
from .h2core import build_h2_dense, load_h2, save_h2
from .kernels import (HYPERSINGULAR, SINGLE_LAYER, assemble_dense, load_mesh,
                      make_open_surface_mesh, make_unit_square_mesh,
                      save_mesh)
from .seform import assemble_se
from .solvers import (METHODS, InfeasibleError, SolverConfig,
                      solve_direct_se, solve_method2, solve_method3)

__all__ = ["ExperimentSpec", "main"]

PROBLEMS = ("electrostatic", "hypersingular")


@dataclass
class ExperimentSpec:
    """Everything that determines one experiment cell."""

    problem: str = "electrostatic"
    n: int = 16
    h2_tol: float = 1e-6
    leaf_size: int = 25
    eta: float = 1.0
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0
    rhs: str = "random"
    output_dir: str = "."
    dense_cap: int = 20000
    direct_cap: int = 50000

    def resolved_items(self) -> list[tuple[str, object]]:
        items = [("problem", self.problem), ("n", self.n),
                 ("h2_tol", self.h2_tol), ("leaf_size", self.leaf_size),
                 ("eta", self.eta), ("seed", self.seed), ("rhs", self.rhs),
                 ("output_dir", self.output_dir),
                 ("dense_cap", self.dense_cap),
                 ("direct_cap", self.direct_cap)]
        items.extend(sorted(self.solver.echo().items()))
        return items


def problem_mesh(problem: str, n: int):
    if problem == "electrostatic":
        return make_unit_square_mesh(n)
    if problem == "hypersingular":
        return make_open_surface_mesh(n)
    raise ValueError(f"unknown problem {problem!r}")


def problem_kernel(problem: str):
    if problem == "electrostatic":
        return SINGLE_LAYER
    if problem == "hypersingular":
        return HYPERSINGULAR
    raise ValueError(f"unknown problem {problem!r}")


def nearest_mesh_parameter(n_target: int) -> int:
    """Grid parameter whose 2*n*n panel count is closest to the target."""
    n = max(1, round(math.sqrt(n_target / 2.0)))
    candidates = [m for m in (n - 1, n, n + 1) if m >= 1]
    return min(candidates, key=lambda m: abs(2 * m * m - n_target))


def build_operator(spec: ExperimentSpec, mesh=None):
    """Assemble the dense oracle and its compression for a spec."""
    if mesh is None:
        mesh = problem_mesh(spec.problem, spec.n)
    kernel = problem_kernel(spec.problem)
    points = mesh.point_set()
    tree = build_cluster_tree(points, spec.leaf_size)
    partition = build_partition(tree, tree, spec.eta)
    dense = assemble_dense(mesh, kernel, dense_cap=spec.dense_cap)
    h2 = build_h2_dense(dense, tree, tree, partition, spec.h2_tol)
    return mesh, h2


def make_rhs(spec: ExperimentSpec, n: int) -> np.ndarray:
    if spec.rhs == "zero":
        return np.zeros(n)
    if spec.rhs == "ones":
        return np.ones(n)
    if spec.rhs == "random":
        rng = np.random.Generator(np.random.PCG64(spec.seed))
        return rng.standard_normal(n)
    raise ValueError(f"unknown rhs kind {spec.rhs!r}")


def run_method(h2, se, y, spec: ExperimentSpec):
    """Dispatch one solve; raises InfeasibleError on cap refusal."""
    method = spec.solver.method
    if method == "direct_se":
        return solve_direct_se(se, y, cap=spec.direct_cap)
    if method in ("se_block", "se_ilut"):
        return solve_method2(se, y, spec.solver)
    return solve_method3(h2, y, spec.solver)


def _write_resolved_config(spec: ExperimentSpec, out_dir: Path) -> None:
    with open(out_dir / "resolved_config.txt", "w", encoding="ascii") as fh:
        for key, value in spec.resolved_items():
            fh.write(f"{key}={value}\n")


def _write_solution(path: Path, x: np.ndarray) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for v in x:
            fh.write(f"{v:.17g}\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(spec: ExperimentSpec, args) -> int:
    mesh = problem_mesh(spec.problem, spec.n)
    out = Path(args.output) if args.output else \
        Path(spec.output_dir) / f"{spec.problem}_n{spec.n}.mesh"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_mesh(mesh, out)
    print(f"wrote {mesh.n_triangles} panels to {out}")
    return 0


def cmd_assemble(spec: ExperimentSpec, args) -> int:
    mesh = load_mesh(args.mesh_file) if args.mesh_file else None
    mesh, h2 = build_operator(spec, mesh=mesh)
    out = Path(args.output) if args.output else \
        Path(spec.output_dir) / f"{spec.problem}_n{spec.n}.h2"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_h2(h2, out)
    row_ranks, _ = h2.far_ranks()
    print(f"wrote compressed operator for N={mesh.n_triangles} "
          f"(max rank {int(row_ranks.max()) if row_ranks.size else 0}) "
          f"to {out}")
    return 0


def cmd_solve(spec: ExperimentSpec, args) -> int:
    out_dir = Path(spec.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_resolved_config(spec, out_dir)
    if args.h2_file:
        h2 = load_h2(args.h2_file)
    else:
        mesh = load_mesh(args.mesh_file) if args.mesh_file else None
        _, h2 = build_operator(spec, mesh=mesh)
    se = assemble_se(h2)
    n = se.n
    y = make_rhs(spec, n)
    try:
        x, report = run_method(h2, se, y, spec)
    except InfeasibleError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 1
    report.config = dict(spec.solver.echo())
    _write_solution(out_dir / "solution.txt", x)
    report.to_csv(out_dir / "residuals.csv")
    with open(out_dir / "summary.csv", "w", newline="",
              encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["N", "method", "setup_seconds", "solve_seconds",
                         "iterations", "preconditioner_bytes", "converged"])
        writer.writerow([n, spec.solver.method, f"{report.setup_seconds:.6f}",
                         f"{report.solve_seconds:.6f}", report.iterations,
                         report.peak_extra_bytes, int(report.converged)])
    print(f"method {spec.solver.method}: N={n} iterations="
          f"{report.iterations} converged={report.converged}")
    return 0 if report.converged else 2


def cmd_benchmark(spec: ExperimentSpec, args) -> int:
    out_dir = Path(spec.output_dir)
    hist_dir = out_dir / "histories"
    out_dir.mkdir(parents=True, exist_ok=True)
    hist_dir.mkdir(parents=True, exist_ok=True)
    _write_resolved_config(spec, out_dir)
    sizes = [int(tok) for tok in args.sizes.split(",") if tok.strip()] \
        if args.sizes else []
    methods = [tok.strip() for tok in args.methods.split(",")
               if tok.strip()] if args.methods else []
    for method in methods:
        if method not in METHODS:
            print(f"unknown method {method!r}", file=sys.stderr)
            return 1

    rows = []
    any_failed = False
    for n_target in sizes:
        grid_n = nearest_mesh_parameter(n_target)
        cell_spec = ExperimentSpec(**{**spec.__dict__, "n": grid_n})
        _, h2 = build_operator(cell_spec)
        se = assemble_se(h2)
        n_actual = se.n
        y = make_rhs(cell_spec, n_actual)
        for method in methods:
            cell_spec.solver = SolverConfig(
                **{**spec.solver.echo(), "method": method})
            try:
                x, report = run_method(h2, se, y, cell_spec)
                status = "ok" if report.converged else "no_convergence"
                if not report.converged:
                    any_failed = True
                report.config = dict(cell_spec.solver.echo())
                report.to_csv(hist_dir / f"N{n_actual}_{method}.csv")
                rows.append([n_target, n_actual, method,
                             f"{report.setup_seconds:.6f}",
                             f"{report.solve_seconds:.6f}",
                             f"{report.setup_seconds + report.solve_seconds:.6f}",
                             report.iterations, report.peak_extra_bytes,
                             status])
            except InfeasibleError as exc:
                any_failed = True
                rows.append([n_target, n_actual, method, "", "", "", "", "",
                             f"refused: {exc}"])
    with open(out_dir / "benchmark.csv", "w", newline="",
              encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["N_target", "N", "method", "setup_seconds",
                         "solve_seconds", "total_seconds", "iterations",
                         "preconditioner_bytes", "status"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} benchmark rows to {out_dir / 'benchmark.csv'}")
    return 2 if any_failed else 0


def cmd_inspect(spec: ExperimentSpec, args) -> int:
    _, h2 = build_operator(spec)
    se = assemble_se(h2)
    sys.stdout.write(se.manifest_text())
    n_ext, bound = se.size_bound()
    verdict = "OK" if n_ext < bound else "VIOLATED"
    print(f"size_bound {n_ext} < {bound}: {verdict}")
    return 0 if n_ext < bound else 1


# ---------------------------------------------------------------------------
# argument handling


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"bad config line {line!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


_SPEC_FIELDS = {
    "problem": str, "n": int, "h2_tol": float, "leaf_size": int,
    "eta": float, "seed": int, "rhs": str, "output_dir": str,
    "dense_cap": int, "direct_cap": int,
}
_SOLVER_FIELDS = {
    "method": str, "eps": float, "delta_ilut": float, "fill_max": int,
    "delta_svd": float, "k_schur": int, "restart": int, "maxit": int,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="h2se",
        description="hierarchical compression and extended-form solvers "
                    "for the two model boundary problems")
    parser.add_argument("--config", help="key=value config file")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--problem", choices=PROBLEMS)
        p.add_argument("--n", type=int, help="grid parameter (N = 2*n*n)")
        p.add_argument("--h2-tol", dest="h2_tol", type=float)
        p.add_argument("--leaf-size", dest="leaf_size", type=int)
        p.add_argument("--eta", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--rhs", choices=("random", "ones", "zero"))
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--dense-cap", dest="dense_cap", type=int)
        p.add_argument("--direct-cap", dest="direct_cap", type=int)
        p.add_argument("--method", choices=METHODS)
        p.add_argument("--eps", type=float)
        p.add_argument("--delta-ilut", dest="delta_ilut", type=float)
        p.add_argument("--fill-max", dest="fill_max", type=int)
        p.add_argument("--delta-svd", dest="delta_svd", type=float)
        p.add_argument("--k-schur", dest="k_schur", type=int)
        p.add_argument("--restart", type=int)
        p.add_argument("--maxit", type=int)

    p_gen = sub.add_parser("generate", help="write a mesh file")
    add_common(p_gen)
    p_gen.add_argument("--output")

    p_asm = sub.add_parser("assemble", help="write the operator container")
    add_common(p_asm)
    p_asm.add_argument("--output")
    p_asm.add_argument("--mesh-file", dest="mesh_file")

    p_solve = sub.add_parser("solve", help="run one solver end to end")
    add_common(p_solve)
    p_solve.add_argument("--mesh-file", dest="mesh_file")
    p_solve.add_argument("--h2-file", dest="h2_file")

    p_bench = sub.add_parser("benchmark", help="run a sizes x methods grid")
    add_common(p_bench)
    p_bench.add_argument("--sizes", help="comma-separated target N values")
    p_bench.add_argument("--methods", help="comma-separated method names")

    p_inspect = sub.add_parser("inspect",
                               help="print layout manifest and bound check")
    add_common(p_inspect)
    return parser


def _spec_from_args(args) -> ExperimentSpec:
    file_values = _read_config_file(args.config) if args.config else {}
    spec_kwargs: dict = {}
    solver_kwargs: dict = {}
    for key, conv in _SPEC_FIELDS.items():
        if getattr(args, key, None) is not None:
            spec_kwargs[key] = getattr(args, key)
        elif key in file_values:
            spec_kwargs[key] = conv(file_values[key])
    for key, conv in _SOLVER_FIELDS.items():
        if getattr(args, key, None) is not None:
            solver_kwargs[key] = getattr(args, key)
        elif key in file_values:
            raw = file_values[key]
            solver_kwargs[key] = None if raw.lower() == "none" else conv(raw)
    return ExperimentSpec(solver=SolverConfig(**solver_kwargs),
                          **spec_kwargs)


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; report those as invalid
        # input (exit 2 is reserved for partial grid failures)
        return 0 if exc.code in (0, None) else 1
    try:
        spec = _spec_from_args(args)
    except (ValueError, OSError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 1
    handlers = {
        "generate": cmd_generate,
        "assemble": cmd_assemble,
        "solve": cmd_solve,
        "benchmark": cmd_benchmark,
        "inspect": cmd_inspect,
    }
    try:
        return handlers[args.command](spec, args)
    except (ValueError, OSError, MemoryError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
