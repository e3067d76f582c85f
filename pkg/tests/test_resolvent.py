import math

import numpy as np
import pytest

from bipcalc.errors import GridMismatch, NeumannSeriesDivergence
from bipcalc.operators import ModelParams
from bipcalc.resolvent import (
    F0_and_traces, boundary_coefficients, boundary_defects, direct_resolvent,
    grid_function, interior_residual, kernel_J, kernel_K, mu_data, resolvent_apply,
)

SCALAR = np.array([[-1.0]])


def grid(n, a=0.0, b=1.0):
    return np.linspace(a, b, n)


def levels(base=33):
    return [base, 2 * base - 1, 4 * base - 3]


def order_from(errs):
    return [math.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]


def smooth_f(params, seed=0):
    rng = np.random.default_rng(seed)
    x = params.x_nodes()[:, None]
    c = rng.standard_normal((3, params.m)) + 1j * rng.standard_normal((3, params.m))
    return np.sin(math.pi * x) * c[0] + np.cos(2 * x) * c[1] + x ** 2 * c[2]


def test_kernel_J_zero():
    x = grid(17)
    J = kernel_J([[-1.0]], np.zeros((17, 1)), x)
    assert np.all(J.values == 0)


def test_kernel_J_constant_at_left_end():
    errs = []
    for n in levels():
        J = kernel_J([[-1.0]], np.ones((n, 1)), grid(n))
        errs.append(abs(J.values[0, 0] - (-0.5 * (1 - math.exp(-1)))))
    assert errs[-1] < 1e-5
    assert all(1.8 < o < 2.2 for o in order_from(errs))


def test_kernel_J_exponential_closed_form():
    def exact(x):
        return -0.25 * ((np.exp(x) - np.exp(-2 * x)) / 3 + np.exp(x) - np.exp(2 * x - 1))
    errs = []
    for n in levels():
        x = grid(n)
        J = kernel_J([[-2.0]], np.exp(x)[:, None], x)
        errs.append(np.max(np.abs(J.values[:, 0] - exact(x))) / np.max(np.abs(exact(x))))
    assert all(1.8 < o < 2.2 for o in order_from(errs))


def test_kernel_K_zero_and_boundary_identity():
    for n in (17, 65):
        x = grid(n)
        assert np.all(kernel_K([[-1.0]], np.zeros((n, 1)), x).values == 0)
    rng = np.random.default_rng(3)
    T = -np.diag([1.0, 2.5, 4.0]) + 0.1 * rng.standard_normal((3, 3))
    x = grid(41)
    phi = rng.standard_normal((41, 3)) + 0j
    S = kernel_J(T, phi, x).values + kernel_K(T, phi, x).values
    assert np.max(np.abs(S[0])) < 1e-8 and np.max(np.abs(S[-1])) < 1e-8


def test_kernel_KJ_solves_two_point_problem():
    # K + J for T = -1, phi = 1 solves w'' - w = 1 with w(0) = w(1) = 0
    errs = []
    for n in levels():
        x = grid(n)
        w = kernel_J([[-1.0]], np.ones((n, 1)), x).values + kernel_K(
            [[-1.0]], np.ones((n, 1)), x).values
        exact = -1 + np.cosh(x - 0.5) / np.cosh(0.5)
        errs.append(np.max(np.abs(w[:, 0] - exact)))
    assert all(1.8 < o < 2.2 for o in order_from(errs))


def test_kernel_K_neumann_divergence():
    with pytest.raises(NeumannSeriesDivergence):
        kernel_K([[-1e-8]], np.ones((9, 1)), grid(9))


def test_F0_zero_data():
    p = ModelParams(m=3, n=17)
    F0, da, db = F0_and_traces(p.laplacian(), p, -5.0, np.zeros((17, 3)))
    assert np.all(F0.values == 0) and np.all(da == 0) and np.all(db == 0)


def test_F0_traces_vs_one_sided_differences():
    gaps = []
    for n in (65, 129):
        p = ModelParams(m=3, n=n)
        F0, da, db = F0_and_traces(p.laplacian(), p, -5.0, smooth_f(p))
        v, h = F0.values, p.h
        fa = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * h)
        fb = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * h)
        gaps.append(max(np.max(np.abs(fa - da)), np.max(np.abs(fb - db)))
                    / np.max(np.abs(da)))
    assert gaps[1] < 1e-2
    assert gaps[1] < 0.6 * gaps[0]


def test_bc1_coefficients_vanish():
    p = ModelParams(m=3, n=17)
    al = boundary_coefficients(1, p.laplacian(), p, -5.0, np.ones(3), np.ones(3))
    assert all(np.all(a == 0) for a in al)


@pytest.mark.parametrize("bc", [1, 2, 3, 4])
def test_homogeneous_traces_give_zero_coefficients(bc):
    p = ModelParams(m=3, n=17, bc=bc)
    al = boundary_coefficients(bc, p.laplacian(), p, -5.0, np.zeros(3), np.zeros(3))
    assert all(np.max(np.abs(a)) == 0 for a in al)


def test_bc2_two_term_rule_scalar():
    p = ModelParams(n=17, bc=2, k=0.0, r_prime=1.0)
    lam = -4.0 + 1j
    d = mu_data(SCALAR, p, lam)
    Fa, Fb = np.array([0.3 - 0.1j]), np.array([-0.7 + 0.2j])
    a1, a2, a3, a4 = boundary_coefficients(2, SCALAR, p, lam, Fa, Fb, data=d,
                                           bc2_rule="u_prime_only")
    M = d.M[0, 0]
    e = np.exp(p.c * M)
    assert a1[0] == pytest.approx(-0.5 / (1 + e) / M * (Fa[0] + Fb[0]), rel=1e-10)
    assert a3[0] == pytest.approx(-0.5 / (1 - e) / M * (Fa[0] - Fb[0]), rel=1e-10)
    assert a2[0] == 0 and a4[0] == 0


def test_bc2_two_term_rule_only_enforces_u_prime():
    # pins the documented behaviour of the displayed two-term rule
    u_prime, second = [], []
    for n in (65, 129):
        p = ModelParams(m=3, n=n, bc=2)
        A = p.laplacian()
        R = resolvent_apply(2, A, p, -5.0, smooth_f(p), bc2_rule="u_prime_only")
        dfx = boundary_defects(2, A, p, R.total)
        scale = np.max(np.abs(R.total.values))
        u_prime.append(max(np.max(np.abs(dfx[s][0])) for s in "ab") / scale)
        second.append(max(np.max(np.abs(dfx[s][1])) for s in "ab") / scale)
    assert u_prime[1] < 1e-3
    assert second[1] > 1e-2 and second[1] > 0.5 * second[0]


def test_resolvent_zero_forcing():
    for bc in (1, 2, 3, 4):
        p = ModelParams(m=3, n=17, bc=bc)
        R = resolvent_apply(bc, p.laplacian(), p, -5.0, np.zeros((17, 3)))
        assert np.all(np.abs(R.total.values) == 0)


def test_resolvent_grid_mismatch():
    p = ModelParams(m=3, n=17)
    with pytest.raises(GridMismatch):
        resolvent_apply(1, p.laplacian(), p, -5.0, np.zeros((16, 3)))


def test_bc1_total_is_F0():
    p = ModelParams(m=3, n=33, bc=1)
    R = resolvent_apply(1, p.laplacian(), p, -5.0, smooth_f(p))
    assert np.array_equal(R.total.values, R.F0.values)


def test_recompose_matches_total():
    p = ModelParams(m=3, n=33, bc=3)
    A = p.laplacian()
    d = mu_data(A, p, -5.0)
    R = resolvent_apply(3, A, p, -5.0, smooth_f(p), data=d)
    assert np.max(np.abs(R.recompose(d) - R.total.values)) <= 1e-10 * np.max(
        np.abs(R.total.values))


def test_bc1_sine_mode_closed_form():
    lam, j = -10.0, 2
    errs = []
    for n in levels():
        p = ModelParams(n=n, bc=1, k=0.0, r_prime=1.0)
        x = p.x_nodes()
        f = np.sin(math.pi * j * x)[:, None] + 0j
        eig = ((math.pi * j) ** 2 + 1) ** 2 + p.r_prime
        R = resolvent_apply(1, SCALAR, p, lam, f)
        errs.append(np.max(np.abs(R.total.values - f / (eig - lam))) / np.max(np.abs(f / (eig - lam))))
    assert errs[-1] < 1e-3
    assert all(1.8 < o < 2.2 for o in order_from(errs))


@pytest.mark.parametrize("bc", [1, 2, 3, 4])
def test_residual_second_order_and_direct_agreement(bc):
    res, gap = [], []
    for n in levels():
        p = ModelParams(m=3, n=n, bc=bc)
        A = p.laplacian()
        f = smooth_f(p, seed=bc)
        R = resolvent_apply(bc, A, p, -10.0, f)
        res.append(interior_residual(A, p, -10.0, R.total, f))
        U = direct_resolvent(A, p, -10.0, f)
        gap.append((R.total - U).l2() / U.l2())
    assert all(1.6 <= o <= 2.4 for o in order_from(res))
    assert gap[-1] < 1e-3 and gap[-1] < gap[0]


def test_grid_function_validation():
    p = ModelParams(m=2, n=9)
    with pytest.raises(GridMismatch):
        grid_function(p, np.zeros((8, 2)))
    g = grid_function(p, np.ones((9, 2)))
    assert g.l2() == pytest.approx(math.sqrt(2.0))
