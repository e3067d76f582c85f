import math

import numpy as np
import pytest

from bipcalc.errors import GridMismatch, NoConvergence
from bipcalc.evolution import (
    SpaceTimeFunction, direct_generator, equation_residual, lactate_F, matrix_generator,
    max_regularity_ratio, mild_solution, picard_semilinear, sample_space_time,
    semilinear_reference, shift_constant, spacetime_lp, time_grid, trace_diagnostic,
    trace_norm,
)
from bipcalc.operators import ModelParams, unknowns_to_grid
from bipcalc.resolvent import GridFunction


def slowest_mode(gen):
    lam, V = np.linalg.eig(gen.matrix)
    j = int(np.argmax(lam.real))
    v = V[:, j] / gen.norm(V[:, j])
    return lam[j], v


def test_shift_constant_examples():
    assert shift_constant(1, ModelParams(k=2.0)) == 1.0
    assert shift_constant(3, ModelParams(k=0.0, r_prime=1.0)) == 1.0
    assert shift_constant(2, ModelParams(k=0.0)) == 0.0
    assert shift_constant(4, ModelParams(k=2.0, r_prime=0.5)) == 1.5


def test_space_time_validation():
    with pytest.raises(GridMismatch):
        SpaceTimeFunction(np.linspace(0, 1, 5), np.zeros((4, 2)))
    with pytest.raises(GridMismatch):
        SpaceTimeFunction(np.array([0.0, 0.1, 0.5]), np.zeros((3, 2)))


@pytest.mark.parametrize("bc", [1, 3])
def test_eigenmode_evolution(bc):
    p = ModelParams(m=3, n=12, bc=bc)
    gen = direct_generator(bc, p)
    a, v = slowest_mode(gen)
    t = time_grid(1.0, 20)
    u = mild_solution(bc, p, unknowns_to_grid(v, p, p.m), None, t=t, generator=gen)
    for tj, fr in zip(t, u.values):
        expect = unknowns_to_grid(np.exp(a * tj) * v, p, p.m)
        assert np.max(np.abs(fr - expect)) <= 1e-8


def test_scalar_closed_form():
    gen = matrix_generator([[-1.0]])
    for quad, nt, tol in (("linear", 10, 1e-13), ("trapezoid", 16384, 1e-8)):
        t = time_grid(1.0, nt)
        f = SpaceTimeFunction(t, np.ones((nt + 1, 1)))
        u = mild_solution(None, None, np.zeros(1), f, generator=gen, quadrature=quad)
        assert np.max(np.abs(u.values[:, 0] - (1 - np.exp(-t)))) <= tol


def test_shift_equivalence_and_linearity():
    p = ModelParams(m=3, n=12, bc=3)
    gen = direct_generator(3, p)
    rng = np.random.default_rng(0)
    t = time_grid(0.5, 40)
    u0 = rng.standard_normal((p.n, p.m))
    f1 = SpaceTimeFunction(t, rng.standard_normal((41, p.n, p.m)), p.x_nodes())
    f2 = SpaceTimeFunction(t, rng.standard_normal((41, p.n, p.m)), p.x_nodes())
    a = mild_solution(3, p, u0, f1, generator=gen, shifted=True)
    b = mild_solution(3, p, u0, f1, generator=gen, shifted=False)
    scale = np.max(np.abs(a.values))
    assert np.max(np.abs(a.values - b.values)) <= 1e-9 * scale
    s = mild_solution(3, p, u0, f1 + f2, generator=gen)
    z = mild_solution(3, p, np.zeros_like(u0), f2, generator=gen)
    assert np.max(np.abs(s.values - a.values - z.values)) <= 1e-9 * np.max(np.abs(s.values))


def test_unknown_quadrature():
    with pytest.raises(ValueError):
        mild_solution(None, None, np.zeros(1), None, t=time_grid(1, 4),
                      generator=matrix_generator([[-1.0]]), quadrature="simpson")


def test_residual_first_order():
    p = ModelParams(m=3, n=12, bc=1)
    gen = direct_generator(1, p)
    rng = np.random.default_rng(1)
    g = rng.standard_normal((p.n, p.m))
    res = []
    for nt in (400, 800):
        t = time_grid(1.0, nt)
        F = SpaceTimeFunction(t, np.sin(3 * t)[:, None, None] * g[None], p.x_nodes())
        u = mild_solution(1, p, np.zeros_like(g), F, generator=gen)
        res.append(equation_residual(u, F, gen))
    assert 1.7 <= res[0] / res[1] <= 2.3


def test_max_regularity_zero_forcing():
    p = ModelParams(m=3, n=12)
    rep = max_regularity_ratio(1, p, [lambda T, X: np.zeros(T.shape + (3,))], nt=20)
    assert rep.values == [0.0] and rep.verdict


def test_max_regularity_eigenmode_closed_form():
    p = ModelParams(m=3, n=12, bc=3)
    gen = direct_generator(3, p)
    a, v = slowest_mode(gen)
    a = a.real
    frame = unknowns_to_grid(v.real.astype(complex), p, p.m)
    rep = max_regularity_ratio(3, p, [lambda T, X: np.broadcast_to(frame, T.shape + frame.shape[1:])],
                               nt=400, refine=False)
    du = math.sqrt((math.exp(2 * a) - 1) / (2 * a))
    au = math.sqrt(1 - 2 * (math.exp(a) - 1) / a + (math.exp(2 * a) - 1) / (2 * a))
    assert rep.values[0] == pytest.approx(du + au, rel=0.05)


def test_max_regularity_stable():
    p = ModelParams(m=3, n=12, bc=2)
    rng = np.random.default_rng(2)
    samples = []
    for _ in range(3):
        c = rng.standard_normal(3)
        w = rng.uniform(1, 6)
        samples.append(lambda T, X, c=c, w=w: np.sin(w * T)[..., None] * np.cos(X)[..., None] * c)
    rep = max_regularity_ratio(2, p, samples, nt=50)
    assert rep.verdict


def test_lactate_examples_and_lipschitz():
    p = ModelParams(k1=0.7, k2=1.3)
    x = p.x_nodes()
    z = GridFunction(x, np.zeros((p.n, p.m), complex))
    assert np.all(lactate_F(p, 0.0, z, 2.0).values == 0)
    u = np.random.default_rng(3).standard_normal((p.n, p.m))
    assert np.allclose(lactate_F(p, 0.0, u, 0.0), 0.7 / 1.3 * u)
    rng = np.random.default_rng(4)
    for _ in range(50):
        u, ub = rng.standard_normal((2, 10))
        N, Nb = rng.uniform(0, 5, 2)
        lhs = np.linalg.norm(lactate_F(p, 0, u, N) - lactate_F(p, 0, ub, Nb))
        rhs = p.k1 / p.k2 * np.linalg.norm(u - ub) + p.k1 * np.linalg.norm(ub) * abs(N - Nb) / p.k2 ** 2
        assert lhs <= rhs + 1e-14
    with pytest.raises(ValueError):
        lactate_F(p, 0.0, u, -1.0)


def test_spacetime_lp_constant():
    p = ModelParams(m=2, n=9, p=3.0)
    t = time_grid(2.0, 4)
    u = SpaceTimeFunction(t, np.ones((5, 9, 2)), p.x_nodes())
    vol = 2.0 * 1.0 * 2 * p.omega_length / 3
    assert spacetime_lp(p, u) == pytest.approx(vol ** (1 / 3), rel=1e-14)


def small(bc, k1=0.5, k2=1.0):
    return ModelParams(m=4, n=12, bc=bc, k1=k1, k2=k2)


def bump_u0(p):
    x = p.x_nodes()[:, None]
    y = np.arange(1, p.m + 1)[None, :]
    return np.sin(math.pi * x) * np.exp(-y)


def test_picard_tiny_coupling_is_linear():
    p = small(1, k1=1e-14)
    u, tr = picard_semilinear(1, p, bump_u0(p), nt=50)
    lin = mild_solution(1, p, bump_u0(p), None, t=time_grid(1.0, 50))
    assert tr.converged and len(tr.differences) <= 2
    assert np.max(np.abs(u.values - lin.values)) <= 1e-10


def test_picard_vs_reference():
    p = small(3)
    u, tr = picard_semilinear(3, p, bump_u0(p), nt=100)
    ref = semilinear_reference(3, p, bump_u0(p), nt=100)
    assert spacetime_lp(p, u - ref) <= 1e-4 * spacetime_lp(p, ref)
    assert all(r <= 0.9 for r in tr.ratios[3:])


def test_picard_fixed_point():
    p = small(2)
    tol = 1e-10
    u, _ = picard_semilinear(2, p, bump_u0(p), nt=60, tol=tol)
    kappa = p.k1 / (p.k2 + spacetime_lp(p, u))
    again = mild_solution(2, p, bump_u0(p), u.scaled(kappa))
    gen = direct_generator(2, p)
    d = max(gen.norm(gen.to_vec(a) - gen.to_vec(b)) for a, b in zip(again.values, u.values))
    assert d <= 2 * tol


def test_picard_no_convergence_carries_trace():
    p = small(1)
    with pytest.raises(NoConvergence) as ei:
        picard_semilinear(1, p, bump_u0(p), nt=40, max_iter=2, tol=1e-30)
    assert len(ei.value.trace.differences) == 2


def test_picard_block_split_agrees():
    p = small(4)
    u1, t1 = picard_semilinear(4, p, bump_u0(p), nt=40)
    u2, t2 = picard_semilinear(4, p, bump_u0(p), nt=40, split_threshold=0.05)
    assert t1.blocks == 1 and t2.blocks > 1
    assert np.max(np.abs(u1.values - u2.values)) <= 1e-8 * np.max(np.abs(u1.values))


def test_trace_norm_eigenmode_and_zero():
    p = ModelParams(m=3, n=12, bc=3)
    gen = direct_generator(3, p)
    lam, V = np.linalg.eig(gen.matrix - gen.shift * np.eye(gen.dim))
    j = int(np.argmax(lam.real))
    a = lam[j].real
    v = V[:, j] / gen.norm(V[:, j])
    for pp in (2.0, 3.0):
        expect = (abs(a) ** pp * (1 - math.exp(pp * a)) / (pp * abs(a))) ** (1 / pp)
        assert trace_norm(gen, unknowns_to_grid(v, p, p.m), pp) == pytest.approx(expect, rel=1e-8)
    assert trace_norm(gen, np.zeros((p.n, p.m)), 2.0) == 0.0


def test_trace_diagnostic_step_vs_bump():
    p = ModelParams(m=2, n=16, bc=1)

    def step(x):
        return np.where(x < 0.5, 1.0, 0.0)[:, None] * np.ones(2)

    def bump(x):
        return np.sin(math.pi * x)[:, None] * np.ones(2)

    rs = trace_diagnostic(1, p, step)
    rb = trace_diagnostic(1, p, bump)
    assert not rs.verdict and rs.metadata["growth"][-1] > 2
    assert rb.verdict


def test_sample_space_time_shape():
    p = ModelParams(m=2, n=9)
    F = sample_space_time(p, time_grid(1, 3), lambda T, X: np.stack([T, X], axis=-1))
    assert F.values.shape == (4, 9, 2)
    assert F.values[2, 4, 0] == pytest.approx(2 / 3) and F.values[2, 4, 1] == pytest.approx(0.5)
