import math

import numpy as np
import pytest

from bipcalc.errors import AngleConflict, BadGeometry, ContourTooTight, UnstableGenerator
from bipcalc.contour import (
    build_sector_contour, dunford_integral, fractional_power, imaginary_power,
    make_handle, semigroup_exp,
)
from bipcalc.matrix_core import op_norm_2, random_hermitian_negdef, spectral_apply


def hpd(rng, n):
    return -random_hermitian_negdef(rng, n)


def test_arc_only_contour():
    G = build_sector_contour(math.pi / 2, 1.0, 1.0)
    assert np.allclose(np.abs(G.nodes), 1.0, atol=1e-12)
    assert np.all(np.abs(np.angle(G.nodes)) <= math.pi / 2 + 1e-12)


def test_nodes_on_boundary():
    nu = math.pi / 3
    G = build_sector_contour(nu, 0.5, 50.0)
    on_ray = np.isclose(np.abs(np.angle(G.nodes)), nu, rtol=1e-12)
    on_arc = np.isclose(np.abs(G.nodes), 0.5, rtol=1e-12)
    assert np.all(on_ray | on_arc)


def test_closed_curve_cauchy_inside_and_outside():
    G = build_sector_contour(math.pi / 4, 1.0, 100.0, closed=True)
    assert abs(G.integrate(lambda z: 1 / (z - 2)) - 2j * math.pi) < 1e-8
    assert abs(G.integrate(lambda z: 1 / (z + 5))) < 1e-8


@pytest.mark.parametrize("args", [(0.0, 1, 2), (math.pi, 1, 2), (1.0, 0, 2), (1.0, 2, 1)])
def test_bad_geometry(args):
    with pytest.raises(BadGeometry):
        build_sector_contour(*args)


def test_dunford_inverse():
    X = dunford_integral(np.diag([1.0, 2.0]), lambda z: 1 / z, decay_order=1)
    assert np.allclose(X, np.diag([1, 0.5]), atol=1e-8)


def test_dunford_scalar_powers():
    assert dunford_integral([[4.0]], lambda z: z ** -0.5, decay_order=0.5)[0, 0] == \
        pytest.approx(0.5, abs=1e-8)
    assert dunford_integral([[2.0]], lambda z: z ** -2.0, decay_order=2)[0, 0] == \
        pytest.approx(0.25, abs=1e-8)


def test_dunford_geometry_errors():
    T = make_handle(np.diag([1.0, 2.0]))
    with pytest.raises(ContourTooTight):
        dunford_integral(T, lambda z: 1 / z, build_sector_contour(0.5, 1.5, 100.0))
    T2 = make_handle(np.diag([1.0, 1j + 1]))
    with pytest.raises(AngleConflict):
        dunford_integral(T2, lambda z: 1 / z, build_sector_contour(0.5, 0.5, 100.0))


def test_make_handle_rejects_false_claims():
    with pytest.raises(BadGeometry):
        make_handle(np.diag([1.0, 1j + 1]), claimed_angle=0.1)
    with pytest.raises(BadGeometry):
        make_handle(np.diag([1.0, 2.0]), zero_resolvent_radius=1.5)


def test_fractional_power_examples():
    assert np.allclose(fractional_power(np.diag([4.0, 9.0]), 0.5), np.diag([2, 3]), atol=1e-9)
    assert fractional_power([[5.0]], -1)[0, 0] == pytest.approx(0.2, abs=1e-10)


def test_fractional_power_complex_exponent_vs_oracle():
    T = hpd(np.random.default_rng(10), 16)
    a = 0.3 + 0.7j
    X = fractional_power(T, a)
    Y = spectral_apply(T, lambda z: z ** a)
    assert op_norm_2(X - Y) <= 1e-7 * op_norm_2(Y)


def test_fractional_power_range():
    with pytest.raises(BadGeometry):
        fractional_power(np.eye(2), 1.5)


def test_imaginary_power_examples():
    assert np.array_equal(imaginary_power(np.diag([1.0, 3.0]), 0.0), np.eye(2))
    assert imaginary_power([[math.e]], 2 * math.pi)[0, 0] == pytest.approx(1.0, abs=1e-9)


def test_imaginary_power_unitary():
    T = hpd(np.random.default_rng(11), 32)
    assert abs(op_norm_2(imaginary_power(T, 3.0)) - 1) <= 1e-8


def test_regularized_family_extrapolates():
    T = hpd(np.random.default_rng(12), 8)
    rp = imaginary_power(T, 1.5, regularized=True)
    assert set(rp.regularized) == {1e-2, 1e-3, 1e-4}
    assert rp.discrepancy < 1e-6


def test_semigroup_examples():
    assert np.array_equal(semigroup_exp(np.diag([-1.0, 2.0]), 0.0), np.eye(2))
    assert semigroup_exp([[-1.0]], 1.0)[0, 0] == pytest.approx(math.exp(-1), rel=1e-14)


def test_semigroup_vs_oracle_and_contour():
    T = random_hermitian_negdef(np.random.default_rng(13), 16)
    E, C, d = semigroup_exp(T, 0.37, cross_check=True)
    S = spectral_apply(T, lambda z: np.exp(0.37 * z))
    assert op_norm_2(E - S) <= 1e-9 * op_norm_2(S)
    assert d <= 1e-9


def test_semigroup_unstable():
    with pytest.raises(UnstableGenerator):
        semigroup_exp(np.diag([-1.0, 0.5]), 1.0)
