"""P1 finite elements for  y' + (-nu*Lap + 1) y + a y + b.grad y = f  (Neumann).

Fields live in two discrete forms:

* P1 nodal vectors (length ``n_vertices``) for states;
* P0 cell vectors (length ``n_triangles``) for piecewise-constant data such
  as actuator/sensor indicator combinations.

:func:`load_vector` and :func:`inner` dispatch on the vector length.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidParameter, NumericalFailure
from .mesh import TriMesh, prolongation_matrix

# Degree-4 symmetric 6-point rule on the reference triangle (barycentric).
_A1, _W1 = 0.445948490915965, 0.223381589678011
_A2, _W2 = 0.091576213509771, 0.109951743655322
_QUAD_BARY = np.array(
    [
        [1 - 2 * _A1, _A1, _A1],
        [_A1, 1 - 2 * _A1, _A1],
        [_A1, _A1, 1 - 2 * _A1],
        [1 - 2 * _A2, _A2, _A2],
        [_A2, 1 - 2 * _A2, _A2],
        [_A2, _A2, 1 - 2 * _A2],
    ]
)
_QUAD_W = np.array([_W1, _W1, _W1, _W2, _W2, _W2])

_MASS_REF = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


@dataclass(frozen=True)
class CoefficientField:
    """Reaction a(x1,x2,t), convection b(x1,x2,t) -> (b1, b2), diffusion nu."""

    reaction: Callable
    convection: Callable
    nu: float = 0.1
    name: str = "custom"


def _paper_reaction(x1, x2, t):
    return -1.5 + x1 - np.abs(np.sin(6.0 * t + x1))


def _paper_convection(x1, x2, t):
    return x1 + x2, np.abs(np.cos(6.0 * t) * x1 * x2)


def _zero_reaction(x1, x2, t):
    return np.zeros_like(x1)


def _zero_convection(x1, x2, t):
    z = np.zeros_like(x1)
    return z, z


def default_coefficients(nu: float = 0.1) -> CoefficientField:
    """Unstable reaction-convection data of the reference experiment."""
    return CoefficientField(_paper_reaction, _paper_convection, nu, "default")


def zero_coefficients(nu: float = 0.1) -> CoefficientField:
    """a = 0, b = 0: pure shifted diffusion."""
    return CoefficientField(_zero_reaction, _zero_convection, nu, "heat")


COEFFICIENT_FIELDS = {"default": default_coefficients, "heat": zero_coefficients}


def coefficient_field(name: str, nu: float) -> CoefficientField:
    try:
        return COEFFICIENT_FIELDS[name](nu)
    except KeyError:
        raise InvalidParameter(
            f"unknown coefficient field {name!r}; choose from {sorted(COEFFICIENT_FIELDS)}"
        ) from None


class _Pattern:
    """CSC sparsity pattern of the P1 element graph with a scatter map, so that
    every matrix on a mesh shares ``indices``/``indptr`` and sums of matrices
    reduce to sums of ``data`` arrays."""

    def __init__(self, mesh: TriMesh):
        t = mesh.triangles
        rows = np.repeat(t, 3, axis=1).ravel()
        cols = np.tile(t, (1, 3)).ravel()
        n = mesh.n_vertices
        key = cols * n + rows
        uniq, self.scatter = np.unique(key, return_inverse=True)
        self.indices = (uniq % n).astype(np.int32)
        col_of = uniq // n
        self.indptr = np.searchsorted(col_of, np.arange(n + 1)).astype(np.int32)
        self.nnz = uniq.size
        self.n = n

    def data(self, elem: np.ndarray) -> np.ndarray:
        """Sum (nt, 3, 3) element matrices, ``elem[e, i, j]`` = (row i, col j)."""
        return np.bincount(self.scatter, weights=elem.reshape(-1), minlength=self.nnz)

    def matrix(self, data: np.ndarray) -> sp.csc_matrix:
        return sp.csc_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


class SemidiscreteOperators:
    """Mass, shifted stiffness and time-dependent reaction-convection matrices
    on one mesh.  Geometric quadrature data are cached per instance."""

    def __init__(self, mesh: TriMesh, nu: float):
        if not nu > 0:
            raise InvalidParameter(f"diffusion nu must be positive, got {nu!r}")
        self.mesh = mesh
        self.nu = float(nu)
        self.dof_count = mesh.n_vertices
        self.pattern = _Pattern(mesh)
        p = mesh.vertices[mesh.triangles]
        self.areas = mesh.areas()
        # gradients of barycentric coordinates, (nt, 3, 2)
        x, y = p[..., 0], p[..., 1]
        two_area = 2.0 * mesh.signed_areas()
        gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        self.grads = np.stack([gx, gy], axis=2) / two_area[:, None, None]
        self.qpoints = np.einsum("qk,ekd->eqd", _QUAD_BARY, p)
        # phi_i * phi_j * w_q * area at each quadrature node, (nt, q, 3, 3)
        self._qmass = (
            np.einsum("qi,qj,q->qij", _QUAD_BARY, _QUAD_BARY, _QUAD_W)[None]
            * self.areas[:, None, None, None]
        )
        # phi_i * w_q * area, (nt, q, 3)
        self._qload = (_QUAD_BARY * _QUAD_W[:, None])[None] * self.areas[:, None, None]

        self.mass_data = self.pattern.data(self.areas[:, None, None] * _MASS_REF)
        lap = self.areas[:, None, None] * np.einsum("eid,ejd->eij", self.grads, self.grads)
        self.stiffA_data = self.nu * self.pattern.data(lap) + self.mass_data
        self.mass = self.pattern.matrix(self.mass_data)
        self.stiffA = self.pattern.matrix(self.stiffA_data)
        # P1 test functions against P0 data: Q[i, e] = int_e phi_i = area_e / 3
        t = mesh.triangles
        self.cell_load = sp.csr_matrix(
            (np.repeat(self.areas / 3.0, 3), (t.ravel(), np.repeat(np.arange(len(t)), 3))),
            shape=(self.dof_count, len(t)),
        )

    def rc_data(self, coeff: CoefficientField, t: float) -> np.ndarray:
        qx, qy = self.qpoints[..., 0], self.qpoints[..., 1]
        a = coeff.reaction(qx, qy, t)
        b1, b2 = coeff.convection(qx, qy, t)
        elem = np.einsum("eq,eqij->eij", np.broadcast_to(a, qx.shape), self._qmass)
        # (b . grad phi_j) phi_i
        bg = np.einsum("eq,ej->eqj", np.broadcast_to(b1, qx.shape), self.grads[..., 0])
        bg += np.einsum("eq,ej->eqj", np.broadcast_to(b2, qx.shape), self.grads[..., 1])
        elem += np.einsum("eqi,eqj->eij", self._qload, bg)
        return self.pattern.data(elem)

    def assemble_rc(self, coeff: CoefficientField, t: float) -> sp.csc_matrix:
        return self.pattern.matrix(self.rc_data(coeff, t))

    def step_matrix(self, coeff: CoefficientField, t: float, dt: float) -> sp.csc_matrix:
        """M + dt (A + A_rc(t))."""
        data = self.mass_data + dt * (self.stiffA_data + self.rc_data(coeff, t))
        return self.pattern.matrix(data)

    def load(self, f: np.ndarray) -> np.ndarray:
        return load_vector(self, f)

    def norm(self, y: np.ndarray) -> float:
        return l2_norm(y, self.mass)


def assemble_mass(mesh: TriMesh) -> sp.csc_matrix:
    return SemidiscreteOperators(mesh, 1.0).mass


def assemble_stiffA(mesh: TriMesh, nu: float) -> sp.csc_matrix:
    return SemidiscreteOperators(mesh, nu).stiffA


def assemble_rc(mesh: TriMesh, coeff: CoefficientField, t: float) -> sp.csc_matrix:
    return SemidiscreteOperators(mesh, coeff.nu).assemble_rc(coeff, t)


def load_vector(ops: SemidiscreteOperators, f: np.ndarray) -> np.ndarray:
    """(f, phi_i) for a P1 nodal or P0 cell field."""
    f = np.asarray(f, dtype=float)
    if f.shape[0] == ops.dof_count:
        return ops.mass @ f
    if f.shape[0] == ops.mesh.n_triangles:
        return ops.cell_load @ f
    raise InvalidParameter(
        f"field of length {f.shape[0]} matches neither {ops.dof_count} nodes "
        f"nor {ops.mesh.n_triangles} cells"
    )


def inner(ops: SemidiscreteOperators, f: np.ndarray, g: np.ndarray) -> float:
    """L2 inner product of two P1/P0 fields, integrated exactly."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape[0] == ops.mesh.n_triangles and g.shape[0] == ops.mesh.n_triangles:
        return float(np.dot(ops.areas * f, g))
    if g.shape[0] == ops.dof_count:
        return float(np.dot(load_vector(ops, f), g))
    return float(np.dot(f, load_vector(ops, g)))


def l2_norm(y: np.ndarray, mass: sp.spmatrix) -> float:
    y = np.asarray(y, dtype=float)
    return math.sqrt(max(float(y @ (mass @ y)), 0.0))


def step_implicit(
    ops: SemidiscreteOperators,
    rc_next: sp.spmatrix,
    y: np.ndarray,
    dt: float,
    forcing: np.ndarray | None = None,
) -> np.ndarray:
    """One backward-Euler step

        (M + dt (A + A_rc)) y+ = M y + dt (forcing, phi)

    with ``rc_next`` the reaction-convection matrix at the end of the step.
    """
    if not dt > 0:
        raise InvalidParameter(f"time step must be positive, got {dt!r}")
    rhs = ops.mass @ y
    if forcing is not None:
        rhs = rhs + dt * load_vector(ops, forcing)
    system = (ops.mass + dt * (ops.stiffA + rc_next)).tocsc()
    out = spla.spsolve(system, rhs)
    if not np.all(np.isfinite(out)):
        raise NumericalFailure("backward-Euler step produced non-finite values")
    return out


def interpolate(mesh: TriMesh, func: Callable) -> np.ndarray:
    """Nodal P1 interpolant of ``func(x1, x2)``."""
    x1, x2 = mesh.vertices.T
    return np.broadcast_to(np.asarray(func(x1, x2), dtype=float), x1.shape).copy()


def prolong(y_coarse: np.ndarray, coarse: TriMesh, fine: TriMesh) -> np.ndarray:
    """Exact embedding of a coarse P1 function into a nested fine P1 space."""
    return prolongation_matrix(coarse, fine) @ np.asarray(y_coarse, dtype=float)
