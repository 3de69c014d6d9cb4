"""Structured triangulations of the unit square and actuator/sensor patches.

Meshes are built on a uniform grid with every grid square split along its
SW-NE diagonal.  Red refinement (each triangle into four via edge midpoints)
keeps the coarse vertices verbatim at the front of the vertex array, so a
chain of refinements gives nested P1 spaces.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import InvalidParameter

_GEOM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Conforming triangulation of [0,1]^2.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counter-clockwise
    level : refinement depth relative to the structured base mesh
    parent_map : (nt,) int array, parent triangle in ``coarser`` (empty at level 0)
    vertex_parents : (nv, 2) int array of coarse vertex pairs whose midpoint
        is the vertex; both entries equal for inherited vertices
    coarser : the mesh this one was refined from, or None
    """

    vertices: np.ndarray
    triangles: np.ndarray
    level: int = 0
    parent_map: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    vertex_parents: np.ndarray | None = None
    coarser: TriMesh | None = None

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas())

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique edges and, per triangle, the index of each local edge.

        Local edge k joins local vertices k and (k+1) % 3.
        """
        t = self.triangles
        all_edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        all_edges.sort(axis=1)
        uniq, inverse = np.unique(all_edges, axis=0, return_inverse=True)
        tri_edges = inverse.reshape(3, -1).T
        return uniq, tri_edges

    def is_conforming(self) -> bool:
        """Every edge is shared by one (boundary) or two (interior) triangles,
        and single-use edges lie exactly on the boundary of the square."""
        uniq, tri_edges = self.edges()
        counts = np.bincount(tri_edges.ravel(), minlength=len(uniq))
        if np.any(counts > 2) or np.any(counts == 0):
            return False
        boundary = uniq[counts == 1]
        a = self.vertices[boundary[:, 0]]
        b = self.vertices[boundary[:, 1]]
        on_side = np.zeros(len(boundary), dtype=bool)
        for axis in (0, 1):
            for side in (0.0, 1.0):
                on_side |= (np.abs(a[:, axis] - side) < _GEOM_TOL) & (
                    np.abs(b[:, axis] - side) < _GEOM_TOL
                )
        return bool(np.all(on_side))

    def is_descendant_of(self, other: TriMesh) -> bool:
        mesh = self
        while mesh is not None:
            if mesh is other:
                return True
            mesh = mesh.coarser
        return False

    def to_text(self) -> str:
        """Debug export: vertex count, vertices, triangle count, triangles."""
        lines = [f"{self.n_vertices}"]
        lines += [f"{x!r} {y!r}" for x, y in self.vertices]
        lines.append(f"{self.n_triangles}")
        lines += [f"{a} {b} {c}" for a, b, c in self.triangles]
        return "\n".join(lines) + "\n"


def build_structured_mesh(n: int) -> TriMesh:
    """Uniform n x n grid on the unit square, squares cut SW to NE."""
    if int(n) != n or n < 1:
        raise InvalidParameter(f"cells per side must be a positive integer, got {n!r}")
    n = int(n)
    x = np.arange(n + 1) / n
    X, Y = np.meshgrid(x, x)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    vp = np.repeat(np.arange(len(vertices))[:, None], 2, axis=1)
    return TriMesh(vertices, triangles, level=0, vertex_parents=vp)


def refine(mesh: TriMesh) -> TriMesh:
    """Red refinement: every triangle split into four congruent children."""
    uniq, tri_edges = mesh.edges()
    nv = mesh.n_vertices
    mid = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])
    vertices = np.vstack([mesh.vertices, mid])
    a, b, c = mesh.triangles.T
    ab, bc, ca = (tri_edges + nv).T
    children = np.stack(
        [
            np.column_stack([a, ab, ca]),
            np.column_stack([ab, b, bc]),
            np.column_stack([ca, bc, c]),
            np.column_stack([ab, bc, ca]),
        ],
        axis=1,
    ).reshape(-1, 3)
    parent_map = np.repeat(np.arange(mesh.n_triangles), 4)
    own = np.repeat(np.arange(nv)[:, None], 2, axis=1)
    vertex_parents = np.vstack([own, uniq])
    return TriMesh(
        vertices,
        children,
        level=mesh.level + 1,
        parent_map=parent_map,
        vertex_parents=vertex_parents,
        coarser=mesh,
    )


def refine_times(mesh: TriMesh, k: int) -> TriMesh:
    for _ in range(k):
        mesh = refine(mesh)
    return mesh


def prolongation_matrix(coarse: TriMesh, fine: TriMesh) -> sp.csr_matrix:
    """Sparse map taking coarse P1 nodal values to fine P1 nodal values."""
    if not fine.is_descendant_of(coarse):
        raise InvalidParameter("fine mesh is not a refinement of the coarse mesh")
    P = sp.identity(fine.n_vertices, format="csr")
    mesh = fine
    while mesh is not coarse:
        vp = mesh.vertex_parents
        rows = np.repeat(np.arange(mesh.n_vertices), 2)
        step = sp.csr_matrix(
            (np.full(rows.size, 0.5), (rows, vp.ravel())),
            shape=(mesh.n_vertices, mesh.coarser.n_vertices),
        )
        P = P @ step
        mesh = mesh.coarser
    return P.tocsr()


# --------------------------------------------------------------------------
# actuator / sensor patches

@dataclass(frozen=True)
class RegionFamily:
    """Axis-aligned boxes ``(x_lo, x_hi, y_lo, y_hi)`` with a role tag."""

    rectangles: tuple[tuple[float, float, float, float], ...]
    role: str
    order: int

    def __len__(self) -> int:
        return len(self.rectangles)

    def areas(self) -> np.ndarray:
        r = np.asarray(self.rectangles)
        return (r[:, 1] - r[:, 0]) * (r[:, 3] - r[:, 2])

    def pairwise_disjoint(self) -> bool:
        r = self.rectangles
        for i in range(len(r)):
            for j in range(i + 1, len(r)):
                ox = min(r[i][1], r[j][1]) - max(r[i][0], r[j][0])
                oy = min(r[i][3], r[j][3]) - max(r[i][2], r[j][2])
                if ox > _GEOM_TOL and oy > _GEOM_TOL:
                    return False
        return True


def _patch_family(order: int, centers: tuple[tuple[float, float], ...], role: str) -> RegionFamily:
    if int(order) != order or order < 1:
        raise InvalidParameter(f"{role} order must be a positive integer, got {order!r}")
    order = int(order)
    cell = 1.0 / order
    half = cell / 8.0
    rects = []
    for j in range(order):
        for i in range(order):
            for cx, cy in centers:
                x = (i + cx) * cell
                y = (j + cy) * cell
                rects.append((x - half, x + half, y - half, y + half))
    return RegionFamily(tuple(rects), role, order)


def build_regions(M: int, S: int) -> tuple[RegionFamily, RegionFamily]:
    """Actuator and sensor patches: two squares of side 1/(4K) per cell of a
    K x K partition; actuators on the cell diagonal, sensors on the
    anti-diagonal."""
    actuators = _patch_family(M, ((0.25, 0.25), (0.75, 0.75)), "actuator")
    sensors = _patch_family(S, ((0.75, 0.25), (0.25, 0.75)), "sensor")
    return actuators, sensors


def inside_mask(mesh: TriMesh, rect: tuple[float, float, float, float]) -> np.ndarray:
    """Triangles whose three vertices lie in the closed rectangle."""
    x0, x1, y0, y1 = rect
    p = mesh.vertices[mesh.triangles]
    ok = (
        (p[..., 0] >= x0 - _GEOM_TOL)
        & (p[..., 0] <= x1 + _GEOM_TOL)
        & (p[..., 1] >= y0 - _GEOM_TOL)
        & (p[..., 1] <= y1 + _GEOM_TOL)
    )
    return ok.all(axis=1)


def check_alignment(mesh: TriMesh, regions: RegionFamily) -> bool:
    """True iff every rectangle is an exact union of mesh triangles."""
    areas = mesh.areas()
    for rect, area in zip(regions.rectangles, regions.areas()):
        covered = areas[inside_mask(mesh, rect)].sum()
        if abs(covered - area) > 1e-12:
            return False
    return True
