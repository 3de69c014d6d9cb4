"""Indicator-patch actuators and sensors, their Gram matrices, the orthogonal
projections onto their spans, and the explicit gains

    K = -lam_K * V1^{-1} U_vee,        L = -lam_L * W_diamond V2^{-1},

so that  B K = -lam_K P_U  and  L W = -lam_L P_W.

Indicators are kept as P0 cell data; all pairings with P1 fields are exact on
meshes aligned with the patches.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidParameter
from .fem import SemidiscreteOperators, inner
from .mesh import RegionFamily, check_alignment, inside_mask


class PatchArray:
    """Family of indicator functions of disjoint rectangles on one mesh.

    Attributes
    ----------
    cells : (nt, k) array, cells[e, j] = 1 if triangle e lies in patch j
    loads : (nv, k) array, loads[i, j] = int_{omega_j} phi_i
    gram, gram_inverse : (k, k) arrays
    gain : the scalar lambda of the associated feedback / injection operator
    """

    def __init__(self, ops: SemidiscreteOperators, regions: RegionFamily, gain: float = 0.0):
        if gain < 0:
            raise InvalidParameter(f"gain must be nonnegative, got {gain!r}")
        if not check_alignment(ops.mesh, regions):
            raise InvalidParameter(
                f"{regions.role} patches are not unions of mesh triangles"
            )
        self.ops = ops
        self.regions = regions
        self.gain = float(gain)
        self.cells = np.column_stack(
            [inside_mask(ops.mesh, r).astype(float) for r in regions.rectangles]
        )
        self.loads = np.asarray(ops.cell_load @ self.cells)
        self.gram = self.cells.T @ (ops.areas[:, None] * self.cells)
        self.gram_inverse = np.linalg.inv(self.gram)

    @property
    def size(self) -> int:
        return self.cells.shape[1]

    def _check_coeffs(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.size,):
            raise InvalidParameter(f"expected {self.size} coefficients, got shape {v.shape}")
        return v

    def diamond(self, v) -> np.ndarray:
        """sum_j v_j 1_{omega_j}, returned as a P0 cell field."""
        return self.cells @ self._check_coeffs(v)

    def vee(self, y) -> np.ndarray:
        """(int_{omega_1} y, ..., int_{omega_k} y) for a P1 or P0 field."""
        y = np.asarray(y, dtype=float)
        if y.shape == (self.ops.dof_count,):
            return self.loads.T @ y
        if y.shape == (self.ops.mesh.n_triangles,):
            return self.cells.T @ (self.ops.areas * y)
        raise InvalidParameter(f"field of shape {y.shape} does not live on this mesh")

    def projection(self, y) -> np.ndarray:
        """L2-orthogonal projection onto the span of the indicators (P0 field)."""
        return self.diamond(self.gram_inverse @ self.vee(y))

    def projection_matrix(self) -> np.ndarray:
        """(nt, nv) matrix of the projection acting on P1 nodal vectors."""
        return self.cells @ (self.gram_inverse @ self.loads.T)


class ActuatorArray(PatchArray):
    """Control operator B = U_diamond with feedback gain K."""

    def feedback(self, h) -> np.ndarray:
        """K h = -lam_K V^{-1} U_vee h."""
        return -self.gain * (self.gram_inverse @ self.vee(h))

    def feedback_matrix(self) -> np.ndarray:
        """(m, nv) matrix of K acting on P1 nodal vectors."""
        return -self.gain * (self.gram_inverse @ self.loads.T)

    def control_load(self, u) -> np.ndarray:
        """(B u, phi_i) without forming the P0 field."""
        return self.loads @ self._check_coeffs(u)


class SensorArray(PatchArray):
    """Output operator W = W_vee with output injection L."""

    def measure(self, y) -> np.ndarray:
        return self.vee(y)

    def injection(self, v) -> np.ndarray:
        """L v = -lam_L W_diamond V^{-1} v, as a P0 cell field."""
        return -self.gain * self.diamond(self.gram_inverse @ self._check_coeffs(v))

    def injection_load(self, v) -> np.ndarray:
        """(L v, phi_i)."""
        return -self.gain * (self.loads @ (self.gram_inverse @ self._check_coeffs(v)))


# Functional aliases mirroring the operator names.

def u_diamond(arr: ActuatorArray, u) -> np.ndarray:
    return arr.diamond(u)


def u_vee(arr: ActuatorArray, y) -> np.ndarray:
    return arr.vee(y)


def w_vee(arr: SensorArray, y) -> np.ndarray:
    return arr.vee(y)


def w_diamond(arr: SensorArray, v) -> np.ndarray:
    return arr.diamond(v)


def feedback_K(arr: ActuatorArray, h) -> np.ndarray:
    return arr.feedback(h)


def injection_L(arr: SensorArray, v) -> np.ndarray:
    return arr.injection(v)


def projection_U(arr: ActuatorArray, y) -> np.ndarray:
    return arr.projection(y)


def projection_W(arr: SensorArray, y) -> np.ndarray:
    return arr.projection(y)


def identity_report(actuators: ActuatorArray, sensors: SensorArray, n_random: int = 20,
                    seed: int = 0) -> dict[str, float]:
    """Worst-case residuals of the projection and factorization identities.

    Keys map to maximal absolute deviations; each should be at roundoff level.
    """
    ops = actuators.ops
    rng = np.random.default_rng(seed)
    out: dict[str, float] = {}
    for tag, arr in (("U", actuators), ("W", sensors)):
        idem = sym = 0.0
        for _ in range(n_random):
            y = rng.standard_normal(ops.dof_count)
            z = rng.standard_normal(ops.dof_count)
            py = arr.projection(y)
            idem = max(idem, np.max(np.abs(arr.projection(py) - py)))
            sym = max(sym, abs(inner(ops, py, z) - inner(ops, y, arr.projection(z))))
        out[f"idempotence_{tag}"] = idem
        out[f"self_adjoint_{tag}"] = sym
        off = arr.gram - np.diag(np.diag(arr.gram))
        out[f"gram_offdiag_{tag}"] = float(np.max(np.abs(off))) if arr.size > 1 else 0.0
        out[f"gram_diag_vs_area_{tag}"] = float(
            np.max(np.abs(np.diag(arr.gram) - arr.regions.areas()))
        )
        out[f"gram_inverse_{tag}"] = float(
            np.max(np.abs(arr.gram @ arr.gram_inverse - np.eye(arr.size)))
        )
    P_U = actuators.projection_matrix()
    BK = np.column_stack(
        [actuators.diamond(actuators.feedback(e)) for e in np.eye(ops.dof_count)]
    )
    out["BK_plus_lamP_U"] = float(np.max(np.abs(BK + actuators.gain * P_U)))
    P_W = sensors.projection_matrix()
    LW = np.column_stack(
        [sensors.injection(sensors.measure(e)) for e in np.eye(ops.dof_count)]
    )
    out["LW_plus_lamP_W"] = float(np.max(np.abs(LW + sensors.gain * P_W)))
    return out
