import math

import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st

from parastab.errors import InvalidParameter
from parastab.fem import (
    CoefficientField,
    SemidiscreteOperators,
    assemble_mass,
    assemble_rc,
    assemble_stiffA,
    default_coefficients,
    interpolate,
    l2_norm,
    load_vector,
    prolong,
    step_implicit,
    zero_coefficients,
)
from parastab.mesh import TriMesh, build_structured_mesh, refine_times


def _const(value):
    return CoefficientField(
        reaction=lambda x1, x2, t: np.full_like(x1, value),
        convection=lambda x1, x2, t: (np.zeros_like(x1), np.zeros_like(x1)),
        name=f"const{value}",
    )


# ---------------------------------------------------------------- oracles

def _collapsed_gauss(order):
    """Tensor Gauss-Legendre on the square pulled back to the reference
    triangle through (u, v) -> (u, v (1 - u)); returns barycentrics, weights."""
    g, w = np.polynomial.legendre.leggauss(order)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    U, V = np.meshgrid(g, g, indexing="ij")
    WU, WV = np.meshgrid(w, w, indexing="ij")
    xi = U.ravel()
    eta = (V * (1.0 - U)).ravel()
    weight = (WU * WV * (1.0 - U)).ravel()
    bary = np.column_stack([1.0 - xi - eta, xi, eta])
    return bary, weight


def _rc_oracle(mesh, coeff, t, order=12):
    """Dense reaction-convection matrix by brute-force per-element loops."""
    bary, weight = _collapsed_gauss(order)
    n = mesh.n_vertices
    R = np.zeros((n, n))
    for tri in mesh.triangles:
        p = mesh.vertices[tri]
        jac = np.column_stack([p[1] - p[0], p[2] - p[0]])
        det = np.linalg.det(jac)
        ref_grads = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        grads = ref_grads @ np.linalg.inv(jac)
        x = bary @ p
        a = coeff.reaction(x[:, 0], x[:, 1], t)
        b1, b2 = coeff.convection(x[:, 0], x[:, 1], t)
        for i in range(3):
            for j in range(3):
                integrand = a * bary[:, i] * bary[:, j]
                integrand = integrand + (b1 * grads[j, 0] + b2 * grads[j, 1]) * bary[:, i]
                R[tri[i], tri[j]] += abs(det) * np.dot(weight, integrand)
    return R


def test_collapsed_gauss_integrates_monomials():
    bary, w = _collapsed_gauss(8)
    # int_T xi^a eta^b = a! b! / (a + b + 2)!
    for a, b in [(0, 0), (1, 0), (2, 3), (5, 4)]:
        exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
        assert abs(np.dot(w, bary[:, 1] ** a * bary[:, 2] ** b) - exact) < 1e-15


# ---------------------------------------------------------------- mass

def test_mass_n1_hand_values():
    M = assemble_mass(build_structured_mesh(1)).toarray()
    expected = np.array(
        [[4, 1, 1, 2], [1, 2, 0, 1], [1, 0, 2, 1], [2, 1, 1, 4]], dtype=float
    ) / 24.0
    np.testing.assert_allclose(M, expected, atol=1e-15)


def test_mass_reference_triangle():
    mesh = TriMesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
    M = assemble_mass(mesh).toarray()
    np.testing.assert_allclose(M, 0.5 / 12 * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]),
                               atol=1e-16)


@pytest.mark.parametrize("n", [1, 4, 16])
def test_mass_sum_and_symmetry(n):
    M = assemble_mass(build_structured_mesh(n))
    assert abs(M.sum() - 1.0) < 1e-12
    assert abs(M - M.T).max() == 0.0


# ---------------------------------------------------------------- stiffness

def test_stiffA_n1_hand_values():
    K = np.array(
        [[1, -0.5, -0.5, 0], [-0.5, 1, 0, -0.5], [-0.5, 0, 1, -0.5], [0, -0.5, -0.5, 1]]
    )
    mesh = build_structured_mesh(1)
    S = assemble_stiffA(mesh, 0.1).toarray()
    np.testing.assert_allclose(S, 0.1 * K + assemble_mass(mesh).toarray(), atol=1e-15)


def test_stiffA_constants_and_definiteness():
    mesh = build_structured_mesh(4)
    ops = SemidiscreteOperators(mesh, 0.1)
    one = np.ones(mesh.n_vertices)
    np.testing.assert_allclose(ops.stiffA @ one, ops.mass @ one, atol=1e-12)
    S = ops.stiffA.toarray()
    assert np.abs(S - S.T).max() < 1e-15
    assert np.linalg.eigvalsh(S).min() > 0
    assert np.linalg.eigvalsh(ops.mass.toarray()).min() > 0


def test_nonpositive_diffusion_rejected():
    with pytest.raises(InvalidParameter):
        SemidiscreteOperators(build_structured_mesh(2), 0.0)


# ---------------------------------------------------------------- reaction-convection

def test_rc_zero_and_unit_reaction():
    mesh = build_structured_mesh(4)
    assert abs(assemble_rc(mesh, zero_coefficients(), 0.3)).max() == 0.0
    R = assemble_rc(mesh, _const(1.0), 0.0)
    np.testing.assert_allclose(R.toarray(), assemble_mass(mesh).toarray(), atol=1e-15)


def test_rc_against_high_order_oracle_n4():
    mesh = build_structured_mesh(4)
    coeff = default_coefficients()
    R = assemble_rc(mesh, coeff, 0.0).toarray()
    np.testing.assert_allclose(R, _rc_oracle(mesh, coeff, 0.0), rtol=0, atol=1e-6)


@pytest.mark.parametrize("n, t", [(2, 0.0), (8, 0.0), (8, 0.05)])
def test_rc_oracle_other_meshes(n, t):
    # at t=0.05 sin(6t + x1) stays positive on [0, 1], so the data are smooth
    mesh = build_structured_mesh(n)
    coeff = default_coefficients()
    R = assemble_rc(mesh, coeff, t).toarray()
    np.testing.assert_allclose(R, _rc_oracle(mesh, coeff, t), rtol=0, atol=1e-6)


def test_rc_convection_of_linear_field():
    # b = (1, 0), y = x1: (b . grad y, phi_i) = int phi_i
    mesh = build_structured_mesh(4)
    coeff = CoefficientField(
        reaction=lambda x1, x2, t: np.zeros_like(x1),
        convection=lambda x1, x2, t: (np.ones_like(x1), np.zeros_like(x1)),
    )
    R = assemble_rc(mesh, coeff, 0.0)
    y = mesh.vertices[:, 0]
    expected = assemble_mass(mesh) @ np.ones(mesh.n_vertices)
    np.testing.assert_allclose(R @ y, expected, atol=1e-14)


# ---------------------------------------------------------------- stepping

def test_step_constant_decays_like_exp_minus_one():
    mesh = build_structured_mesh(4)
    ops = SemidiscreteOperators(mesh, 0.1)
    dt = 0.01
    rc = assemble_rc(mesh, zero_coefficients(), dt)
    y = np.full(mesh.n_vertices, 3.0)
    np.testing.assert_allclose(step_implicit(ops, rc, y, dt), 3.0 / (1 + dt), atol=1e-12)


def test_step_linearity():
    mesh = build_structured_mesh(4)
    ops = SemidiscreteOperators(mesh, 0.1)
    coeff = default_coefficients()
    rc = ops.assemble_rc(coeff, 0.1)
    rng = np.random.default_rng(3)
    y1, y2 = rng.standard_normal((2, mesh.n_vertices))
    lhs = step_implicit(ops, rc, 2.0 * y1 - 0.5 * y2, 0.01)
    rhs = 2.0 * step_implicit(ops, rc, y1, 0.01) - 0.5 * step_implicit(ops, rc, y2, 0.01)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_step_rejects_bad_dt():
    mesh = build_structured_mesh(2)
    ops = SemidiscreteOperators(mesh, 0.1)
    with pytest.raises(InvalidParameter):
        step_implicit(ops, ops.assemble_rc(zero_coefficients(), 0), np.ones(9), 0.0)


def test_step_first_order_consistency():
    """The one-step increment converges to the semidiscrete derivative
    with error O(dt): halving dt halves the error."""
    mesh = build_structured_mesh(8)
    ops = SemidiscreteOperators(mesh, 0.1)
    coeff = default_coefficients()
    y = interpolate(mesh, lambda x1, x2: np.cos(np.pi * x1) * (1 + x2 * x2))
    f = interpolate(mesh, lambda x1, x2: x1 - x2)
    rc0 = ops.assemble_rc(coeff, 0.0)
    deriv = spla.spsolve(ops.mass.tocsc(), ops.mass @ f - (ops.stiffA + rc0) @ y)
    errs = []
    for dt in (4e-4, 2e-4, 1e-4):
        rc = ops.assemble_rc(coeff, dt)
        inc = (step_implicit(ops, rc, y, dt, forcing=f) - y) / dt
        errs.append(l2_norm(inc - deriv, ops.mass))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    for r in ratios:
        assert 1.8 < r < 2.2


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), dt=st.floats(1e-4, 1.0))
def test_heat_step_is_dissipative(seed, dt):
    mesh = build_structured_mesh(4)
    ops = SemidiscreteOperators(mesh, 0.1)
    rc = ops.assemble_rc(zero_coefficients(), dt)
    y = np.random.default_rng(seed).standard_normal(mesh.n_vertices)
    assert l2_norm(step_implicit(ops, rc, y, dt), ops.mass) <= l2_norm(y, ops.mass) * (1 + 1e-14)


# ---------------------------------------------------------------- norms, loads, prolongation

def test_l2_norm_examples():
    mesh = build_structured_mesh(16)
    M = assemble_mass(mesh)
    assert abs(l2_norm(np.ones(mesh.n_vertices), M) - 1.0) < 1e-12
    assert l2_norm(np.zeros(mesh.n_vertices), M) == 0.0
    assert abs(l2_norm(mesh.vertices[:, 0], M) - math.sqrt(1 / 3)) < 2e-3


def test_load_vector_dispatch():
    mesh = build_structured_mesh(4)
    ops = SemidiscreteOperators(mesh, 0.1)
    np.testing.assert_allclose(load_vector(ops, np.ones(mesh.n_vertices)),
                               load_vector(ops, np.ones(mesh.n_triangles)), atol=1e-15)
    with pytest.raises(InvalidParameter):
        load_vector(ops, np.ones(7))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), k=st.integers(1, 2))
def test_prolongation_preserves_norm(seed, k):
    coarse = build_structured_mesh(4)
    fine = refine_times(coarse, k)
    y = np.random.default_rng(seed).standard_normal(coarse.n_vertices)
    yf = prolong(y, coarse, fine)
    assert abs(l2_norm(yf, assemble_mass(fine)) - l2_norm(y, assemble_mass(coarse))) < 1e-12


def test_prolong_constant_and_linear():
    coarse = build_structured_mesh(2)
    fine = refine_times(coarse, 2)
    np.testing.assert_allclose(prolong(np.full(9, 2.5), coarse, fine), 2.5, atol=1e-15)
    y = coarse.vertices.sum(axis=1)
    np.testing.assert_allclose(prolong(y, coarse, fine), fine.vertices.sum(axis=1), atol=1e-15)
