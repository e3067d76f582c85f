import math

import numpy as np
import pytest

from bipcalc.errors import BranchPoint, HypothesisViolation, ValidationError
from bipcalc.matrix_core import eigvals, hermitian_eig, op_norm_2
from bipcalc.operators import (
    ModelParams, MuShift, assemble_fourth_order_direct, build_B_xi, build_M_L,
    d_B_xi_alpha_d_xi, dirichlet_laplacian_1d, finite_difference_B_xi_alpha,
    poincare_constant, principal_sqrt,
)

PI2 = math.pi ** 2


def test_laplacian_single_node():
    A = dirichlet_laplacian_1d(1, math.pi)
    assert A.matrix[0, 0].real == pytest.approx(-8 / PI2, rel=1e-15)


def test_laplacian_three_nodes_spectrum():
    L = 2.5
    A = dirichlet_laplacian_1d(3, L)
    h = L / 4
    expect = sorted(-(4 / h ** 2) * math.sin(j * math.pi / 8) ** 2 for j in (1, 2, 3))
    assert np.allclose(hermitian_eig(A.matrix).values, expect, rtol=1e-13)
    assert A.claimed_angle == 0.0


def test_laplacian_extreme_eigenvalue():
    A = dirichlet_laplacian_1d(64, 1.0)
    h = 1 / 65
    lo = hermitian_eig(A.matrix).values[0]
    assert abs(lo / (-4 / h ** 2) - 1) < 1e-3


def test_poincare_examples():
    assert poincare_constant(np.diag([-1.0, -4.0])) == pytest.approx(1.0)
    h = 1.0 / 4
    assert poincare_constant(dirichlet_laplacian_1d(3, 1.0)) == \
        pytest.approx(4 / h ** 2 * math.sin(math.pi / 8) ** 2, rel=1e-13)
    assert abs(poincare_constant(dirichlet_laplacian_1d(128, math.pi)) - 1) < 0.02


def test_params_invariants():
    with pytest.raises(ValidationError):
        ModelParams(a=1.0, b=0.0)
    with pytest.raises(ValidationError, match="k > -C_omega"):
        ModelParams(k=-10.0)
    assert ModelParams(k=-0.5).k == -0.5


def test_mu_shift():
    p = ModelParams(k=2.0, r_prime=0.5)
    s = MuShift.from_lambda(3 + 1j, p)
    assert s.mu == (3 + 1j) - 1.0 - 0.5


def test_B_xi_scalar_examples():
    A = np.array([[-1.0]])
    assert build_B_xi(A, ModelParams(k=0.0, r_prime=1.0), 0.0).matrix[0, 0] == pytest.approx(2.0)
    assert build_B_xi(A, ModelParams(k=2.0, r_prime=1.0), 0.0).matrix[0, 0] == pytest.approx(5.0)


def test_B_xi_lower_bound():
    p = ModelParams(m=16, k=1.0, r_prime=0.7)
    B = build_B_xi(p.laplacian(), p, 0.5)
    w = hermitian_eig(B.matrix).values
    assert B.hermitian
    assert np.min(w) >= p.r_prime + (p.k / 2 + PI2) ** 2 - 1e-9


def test_B_xi_rejects_spectrum_in_k_ray():
    with pytest.raises(HypothesisViolation):
        build_B_xi(np.array([[2.0]]), ModelParams(k=1.0), 0.1)


def test_derivative_scalar_alpha_one():
    p = ModelParams(k=0.0, r_prime=1.0)
    xi = 0.37
    d = d_B_xi_alpha_d_xi(np.array([[-1.0]]), p, xi, 1.0)[0, 0]
    assert d == pytest.approx(16 * PI2 * xi * (1 + 4 * PI2 * xi ** 2), rel=1e-8)


def test_derivative_vanishes_at_zero():
    p = ModelParams(m=4)
    d = d_B_xi_alpha_d_xi(p.laplacian(), p, 0.0, 0.5j)
    assert op_norm_2(d) == 0.0


@pytest.mark.parametrize("order", [1, 2])
def test_derivative_vs_finite_difference(order):
    p = ModelParams(m=8)
    A = p.laplacian()
    ex = d_B_xi_alpha_d_xi(A, p, 0.3, 1j, order)
    fd = finite_difference_B_xi_alpha(A, p, 0.3, 1j, order)
    assert op_norm_2(ex - fd) <= 1e-6 * op_norm_2(ex)


def test_M_L_scalar():
    p = ModelParams(k=0.0, r_prime=1.0)
    M, L = build_M_L(np.array([[-1.0]]), p, -1.0)
    assert M[0, 0] ** 2 == pytest.approx(1 - 1j, abs=1e-14)
    assert L[0, 0] ** 2 == pytest.approx(1 + 1j, abs=1e-14)
    assert (M @ M + L @ L)[0, 0] == pytest.approx(2.0, abs=1e-14)
    assert (M @ M @ L @ L)[0, 0] == pytest.approx(2.0, abs=1e-14)


def test_M_L_identities_and_half_plane():
    p = ModelParams(m=8, k=0.8, r_prime=0.6)
    A = p.laplacian().matrix
    I = np.eye(8)
    for lam in (5 * np.exp(2.3j), 40 * np.exp(-2.3j), -3.0 + 0.2j):
        mu = MuShift.from_lambda(lam, p).mu
        M, L = build_M_L(A, p, mu)
        assert np.max(eigvals(M).real) < 0 and np.max(eigvals(L).real) < 0
        S = M @ M + L @ L
        assert op_norm_2(S - (-2 * A + p.k * I)) <= 1e-8 * op_norm_2(S)
        P = M @ M @ L @ L
        ref = A @ A - p.k * A + (p.k ** 2 / 4 + p.r_prime - lam) * I
        assert op_norm_2(P - ref) <= 1e-8 * op_norm_2(ref)
        assert op_norm_2(M @ L - L @ M) <= 1e-9 * op_norm_2(M @ L)


def test_M_L_branch_point():
    p = ModelParams(k=2.0)
    with pytest.raises(BranchPoint):
        build_M_L(np.array([[-1.0]]), p, -1.0)


def test_principal_sqrt_nonnormal():
    X = np.array([[4.0, 1.0], [0.0, 9.0]])
    R = principal_sqrt(X)
    assert op_norm_2(R @ R - X) < 1e-8


def test_direct_bc4_constant_mode():
    p = ModelParams(m=6, n=16, bc=4, k=0.5)
    A = p.laplacian().matrix
    w, V = np.linalg.eigh(A.real)
    D = assemble_fourth_order_direct(A, p)
    for j in (0, 3):
        phi = V[:, j]
        u = np.tile(phi, p.n)
        assert np.allclose(D @ u, -(w[j] ** 2 - p.k * w[j]) * u, atol=1e-8)


def test_direct_bc1_scalar_eigenvalues():
    p = ModelParams(n=201, bc=1, k=0.0)
    D = assemble_fourth_order_direct(np.array([[-1.0]]), p)
    ev = np.sort(np.linalg.eigvals(D).real)[::-1][:3]
    expect = [-((math.pi * j) ** 2 + 1) ** 2 for j in (1, 2, 3)]
    assert np.allclose(ev, expect, rtol=1e-3)
