"""Test-problem meshes and dense kernel matrices.

Two surface problems are generated here: a flat unit square (electrostatic
single-layer kernel ``1/r``) and a curved open surface (hypersingular
kernel ``1/r^3``).  Both are discretized by collocation at panel
centroids with piecewise-constant densities and a one-point quadrature
rule, so the dense matrix is ``A[i, j] = area_j * kernel(c_i, c_j)`` off
the diagonal.

Self terms use the integral of the kernel over the disk of equal area
centered at the collocation point: ``2*sqrt(pi*w)`` for ``1/r`` and the
finite-part value ``-2*pi/sqrt(w/pi)`` for ``1/r^3``.  This keeps the
diagonal scaling of the underlying operators without panel-exact
integration.

The dense assembly is the ground-truth oracle for hierarchical
compression; row blocks are independent, so results do not depend on any
row scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .geometry import PointSet

__all__ = [
    "TriangleMesh",
    "Kernel",
    "SINGLE_LAYER",
    "HYPERSINGULAR",
    "kernel_by_name",
    "make_unit_square_mesh",
    "make_open_surface_mesh",
    "assemble_dense",
    "kernel_matrix",
    "manufactured_rhs",
    "save_mesh",
    "load_mesh",
]

DEFAULT_DENSE_CAP = 20000


@dataclass(frozen=True)
class TriangleMesh:
    """Triangle surface mesh with derived centroids and areas."""

    vertices: np.ndarray   # (V, 3)
    triangles: np.ndarray  # (T, 3) vertex indices
    centroids: np.ndarray = None
    areas: np.ndarray = None

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        corners = vertices[triangles]                      # (T, 3, 3)
        centroids = corners.mean(axis=1)
        cross = np.cross(corners[:, 1] - corners[:, 0],
                         corners[:, 2] - corners[:, 0])
        areas = 0.5 * np.linalg.norm(cross, axis=1)
        if not np.all(areas > 0.0):
            raise ValueError("mesh contains degenerate triangles")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)
        object.__setattr__(self, "centroids", centroids)
        object.__setattr__(self, "areas", areas)

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def point_set(self) -> PointSet:
        """Panel centroids weighted by panel areas."""
        return PointSet(self.centroids, self.areas)


@dataclass(frozen=True)
class Kernel:
    """Radial interaction kernel with a documented self-term rule.

    ``single_layer`` is ``1/r``; ``hypersingular`` is ``1/r^3``.  Both are
    symmetric in their arguments.  The self term is the (finite-part)
    integral of the kernel over the equal-area disk around the point.
    """

    variant: str

    def __post_init__(self):
        if self.variant not in ("single_layer", "hypersingular"):
            raise ValueError(f"unknown kernel variant {self.variant!r}")

    def evaluate_distances(self, r: np.ndarray) -> np.ndarray:
        """Kernel value for an array of positive distances."""
        inv = 1.0 / r
        if self.variant == "single_layer":
            return inv
        return inv * inv * inv

    def self_term(self, area) -> np.ndarray:
        """Diagonal value for a panel of the given area.

        Equal-area disk of radius ``a = sqrt(w/pi)``: the ``1/r`` integral
        is ``2*pi*a``; the finite part of the ``1/r^3`` integral is
        ``-2*pi/a``.
        """
        a = np.sqrt(np.asarray(area) / math.pi)
        if self.variant == "single_layer":
            return 2.0 * math.pi * a
        return -2.0 * math.pi / a


SINGLE_LAYER = Kernel("single_layer")
HYPERSINGULAR = Kernel("hypersingular")


def kernel_by_name(name: str) -> Kernel:
    return Kernel(name)


def make_unit_square_mesh(n: int) -> TriangleMesh:
    """Regular triangulation of the unit square with ``2*n*n`` triangles.

    Each cell of the n-by-n grid is split along its diagonal; all panel
    areas equal ``1 / (2 n^2)`` and the total area is exactly one.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    grid = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(grid, grid, indexing="ij")
    vertices = np.column_stack([xx.ravel(), yy.ravel(),
                                np.zeros((n + 1) * (n + 1))])
    triangles = _grid_triangles(n)
    return TriangleMesh(vertices, triangles)


def make_open_surface_mesh(n: int) -> TriangleMesh:
    """Curved open surface: graph of ``z = 0.2 sin(pi x) sin(pi y)``.

    Same grid connectivity as the unit-square mesh (``2*n*n`` triangles)
    but with vertices lifted onto the surface, so total area exceeds one
    once the grid resolves the bump (``n >= 2``; at ``n = 1`` only the
    corner vertices are sampled and those sit at ``z = 0``).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    grid = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(grid, grid, indexing="ij")
    zz = 0.2 * np.sin(math.pi * xx) * np.sin(math.pi * yy)
    vertices = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
    triangles = _grid_triangles(n)
    return TriangleMesh(vertices, triangles)


def _grid_triangles(n: int) -> np.ndarray:
    """Two triangles per cell of an (n+1)x(n+1) vertex grid."""
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    v00 = (ii * (n + 1) + jj).ravel()
    v01 = v00 + 1
    v10 = v00 + (n + 1)
    v11 = v10 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    return np.vstack([lower, upper])


def kernel_matrix(points: PointSet, kernel: Kernel,
                  dense_cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    """Dense collocation matrix for a weighted point set.

    ``A[i, j] = w_j * kernel(x_i, x_j)`` for ``i != j`` and the self-term
    rule on the diagonal.  Refuses point sets larger than ``dense_cap``.
    """
    n = len(points)
    if n > dense_cap:
        raise MemoryError(
            f"dense assembly of size {n} exceeds the cap {dense_cap}")
    r = cdist(points.coords, points.coords)
    np.fill_diagonal(r, 1.0)  # placeholder, diagonal overwritten below
    a = kernel.evaluate_distances(r)
    a *= points.weights[np.newaxis, :]
    np.fill_diagonal(a, kernel.self_term(points.weights))
    return a


def assemble_dense(mesh: TriangleMesh, kernel: Kernel,
                   dense_cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    """Dense kernel matrix of the mesh (N = triangle count)."""
    return kernel_matrix(mesh.point_set(), kernel, dense_cap=dense_cap)


def manufactured_rhs(mesh: TriangleMesh, kernel: Kernel, q_exact,
                     operator=None, dense_cap: int = DEFAULT_DENSE_CAP):
    """Right-hand side whose discrete solution is a prescribed density.

    ``q_exact`` is evaluated at the panel centroids (it receives the
    (N, 3) centroid array and returns N values); the returned vector is
    the matrix-vector product with either the supplied ``operator`` (a
    dense matrix or a callable) or a freshly assembled dense matrix.
    """
    q = np.asarray(q_exact(mesh.centroids), dtype=np.float64)
    if q.shape != (mesh.n_triangles,):
        raise ValueError("q_exact must return one value per panel")
    if operator is None:
        operator = assemble_dense(mesh, kernel, dense_cap=dense_cap)
    if callable(operator):
        return operator(q)
    return operator @ q


def save_mesh(mesh: TriangleMesh, path) -> None:
    """Write a mesh in the plain-text exchange format.

    First line ``V T`` (vertex and triangle counts), then V vertex lines
    ``x y z`` at 17 significant digits, then T triangle lines ``i j k``
    with zero-based vertex indices.
    """
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{mesh.vertices.shape[0]} {mesh.triangles.shape[0]}\n")
        for x, y, z in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")


def load_mesh(path) -> TriangleMesh:
    """Read a mesh written by :func:`save_mesh`."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError("mesh file must start with a 'V T' count line")
        n_vert, n_tri = int(header[0]), int(header[1])
        vertices = np.empty((n_vert, 3))
        for i in range(n_vert):
            vertices[i] = [float(tok) for tok in fh.readline().split()]
        triangles = np.empty((n_tri, 3), dtype=np.int64)
        for i in range(n_tri):
            triangles[i] = [int(tok) for tok in fh.readline().split()]
    return TriangleMesh(vertices, triangles)
