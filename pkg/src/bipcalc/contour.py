"""Sector contours and Dunford-Riesz quadrature for sectorial matrices.

The contour is the boundary of ``S_nu minus B(0, eps0)`` cut off at radius
``R``: the ray ``arg = +nu`` walked inward, the small arc through angle 0,
then the ray ``arg = -nu`` walked outward. With this orientation the
integral of ``1/(lam - z)`` is ``2*pi*i`` for ``z`` between the rays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .errors import (AngleConflict, BadGeometry, ContourTooTight,
                     UnstableGenerator)
from .matrix_core import as_matrix, eigvals, is_hermitian, op_norm_2

# Default angular margin above the claimed sector angle when the caller does
# not choose one. Kept well inside (omega, pi) so rays stay away from both
# the spectrum and the branch cut.
DEFAULT_THETA0 = 0.05
ARG_SLACK = 1e-12


@lru_cache(maxsize=64)
def _gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


@dataclass(frozen=True)
class SectorContour:
    angle: float
    inner_radius: float
    truncation_radius: float
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)  # dlam at each node, orientation included
    closed: bool = False

    def __len__(self):
        return self.nodes.size

    def integrate(self, g: Callable) -> complex:
        """Quadrature of a scalar function along the contour."""
        return complex(np.sum(g(self.nodes) * self.weights))


@dataclass(frozen=True)
class OperatorHandle:
    matrix: np.ndarray = field(repr=False)
    claimed_angle: float
    zero_resolvent_radius: float
    hermitian: bool
    spectrum: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def norm(self) -> float:
        return op_norm_2(self.matrix)


def make_handle(T, claimed_angle: float | None = None,
                zero_resolvent_radius: float | None = None) -> OperatorHandle:
    """Wrap a matrix as a sectorial operator.

    Missing metadata is filled from the eigenvalues: the angle becomes the
    largest ``|arg|`` and the radius the smallest modulus. Supplied values
    are checked against the eigenvalues and rejected with ``BadGeometry``.
    """
    M = as_matrix(T)
    herm = is_hermitian(M)
    ev = eigvals(M)
    mods = np.abs(ev)
    if np.min(mods) == 0.0:
        raise BadGeometry("0 is an eigenvalue; the operator is not invertible")
    args = np.abs(np.angle(ev))
    if claimed_angle is None:
        claimed_angle = float(np.max(args))
    if zero_resolvent_radius is None:
        zero_resolvent_radius = float(np.min(mods))
    if not 0.0 <= claimed_angle < math.pi:
        raise BadGeometry("claimed angle must lie in [0, pi)")
    if zero_resolvent_radius <= 0:
        raise BadGeometry("zero_resolvent_radius must be positive")
    if np.any(args > claimed_angle + 1e-9 * (1 + claimed_angle)):
        raise BadGeometry("spectrum leaves the claimed sector")
    if np.any(mods < zero_resolvent_radius * (1 - 1e-9)):
        raise BadGeometry("spectrum meets the ball B(0, zero_resolvent_radius)")
    return OperatorHandle(M, float(claimed_angle), float(zero_resolvent_radius), herm, ev)


def _as_handle(T) -> OperatorHandle:
    return T if isinstance(T, OperatorHandle) else make_handle(T)


def _ray_breaks(eps0: float, R: float, panels: int, max_len: float | None):
    q = (R / eps0) ** (1.0 / panels)
    br = [eps0]
    while br[-1] < R * (1 - 1e-14):
        step = br[-1] * (q - 1)
        if max_len is not None:
            step = min(step, max_len)
        br.append(min(br[-1] + step, R))
    br[-1] = R
    return np.asarray(br)


def build_sector_contour(angle: float, inner_radius: float, truncation_radius: float,
                         panels: int = 24, nodes_per_panel: int = 16,
                         arc_panels: int | None = None, closed: bool = False,
                         max_panel_length: float | None = None) -> SectorContour:
    """Discretize the truncated boundary of ``S_angle minus B(0, inner_radius)``.

    Parameters
    ----------
    angle : float
        Half-opening ``nu`` of the sector, in ``(0, pi)``.
    inner_radius, truncation_radius : float
        ``eps0`` and ``R``. ``R == eps0`` gives the arc alone.
    panels : int
        Gauss-Legendre panels per ray, geometrically graded so consecutive
        panel lengths grow by ``(R/eps0)**(1/panels)``.
    nodes_per_panel : int
        Gauss-Legendre order on every panel.
    closed : bool
        Append the outer arc ``|lam| = R`` so the curve is closed.
    max_panel_length : float, optional
        Cap on ray panel length (used for oscillatory integrands).
    """
    nu, eps0, R = float(angle), float(inner_radius), float(truncation_radius)
    if not (0.0 < nu < math.pi):
        raise BadGeometry("angle must lie in (0, pi)")
    if not (0.0 < eps0 <= R) or not math.isfinite(R):
        raise BadGeometry("need 0 < inner_radius <= truncation_radius < inf")
    if panels < 1 or nodes_per_panel < 2:
        raise BadGeometry("need panels >= 1 and nodes_per_panel >= 2")
    x, w = _gauss_legendre(nodes_per_panel)
    if arc_panels is None:
        arc_panels = max(2, math.ceil(2 * nu / (math.pi / 4)))

    lam_parts, wt_parts = [], []
    up, down = np.exp(1j * nu), np.exp(-1j * nu)
    if R > eps0:
        br = _ray_breaks(eps0, R, panels, max_panel_length)
        lo, hi = br[:-1, None], br[1:, None]
        rho = (0.5 * (lo + hi) + 0.5 * (hi - lo) * x).ravel()
        drho = (0.5 * (hi - lo) * w).ravel()
        # inward along arg=+nu: reverse order so traversal is R -> eps0
        lam_parts.append((rho * up)[::-1])
        wt_parts.append((-drho * up)[::-1])
    # arc from +nu down to -nu through angle 0
    edges = np.linspace(nu, -nu, arc_panels + 1)
    a0, a1 = edges[:-1, None], edges[1:, None]
    phi = (0.5 * (a0 + a1) + 0.5 * (a1 - a0) * x).ravel()
    dphi = (0.5 * (a1 - a0) * w).ravel()
    lam_arc = eps0 * np.exp(1j * phi)
    lam_parts.append(lam_arc)
    wt_parts.append(1j * lam_arc * dphi)
    if R > eps0:
        lam_parts.append(rho * down)
        wt_parts.append(drho * down)
        if closed:
            edges = np.linspace(-nu, nu, arc_panels + 1)
            a0, a1 = edges[:-1, None], edges[1:, None]
            phi = (0.5 * (a0 + a1) + 0.5 * (a1 - a0) * x).ravel()
            dphi = (0.5 * (a1 - a0) * w).ravel()
            lam_out = R * np.exp(1j * phi)
            lam_parts.append(lam_out)
            wt_parts.append(1j * lam_out * dphi)
    return SectorContour(nu, eps0, R, np.concatenate(lam_parts),
                         np.concatenate(wt_parts), bool(closed and R > eps0))


def default_angle(omega: float) -> float:
    """Contour angle a quarter of the way from ``omega`` to ``pi``.

    Never closer than ``DEFAULT_THETA0`` to ``omega``.
    """
    return omega + max(DEFAULT_THETA0, 0.25 * (math.pi - omega))


def tail_bound(decay_order: float, decay_const: float, R: float, T_norm: float) -> float:
    """Bound on the two ray tails beyond ``R``.

    Uses ``||(lam - T)^{-1}|| <= 1/(|lam| - ||T||)`` for ``|lam| > ||T||``.
    """
    if R <= T_norm:
        return math.inf
    d = decay_order
    return decay_const * R ** (-d) / (math.pi * d * (1.0 - T_norm / R))


def auto_radius(T: OperatorHandle, decay_order: float, decay_const: float,
                tol_abs: float) -> float:
    """Smallest ``R >= 2||T||`` whose tail bound is below ``0.1 * tol_abs``."""
    d = decay_order
    R = (decay_const * 2.0 / (math.pi * d * 0.1 * tol_abs)) ** (1.0 / d)
    return max(R, 2.0 * T.norm, 4.0 * T.zero_resolvent_radius)


def auto_contour(T: OperatorHandle, decay_order: float, decay_const: float = 1.0,
                 tol_abs: float = 1e-10, angle: float | None = None,
                 inner_radius: float | None = None, nodes_per_panel: int = 16,
                 panel_ratio: float = 2.0) -> SectorContour:
    nu = default_angle(T.claimed_angle) if angle is None else angle
    eps0 = 0.5 * T.zero_resolvent_radius if inner_radius is None else inner_radius
    R = auto_radius(T, decay_order, decay_const, tol_abs)
    # tighter grading when the rays hug the spectrum
    gap = math.sin(min(nu - T.claimed_angle, math.pi / 2))
    ratio = min(panel_ratio, 1.0 + 1.4 * gap)
    panels = max(1, math.ceil(math.log(R / eps0) / math.log(ratio)))
    return build_sector_contour(nu, eps0, R, panels, nodes_per_panel)


def _check_geometry(T: OperatorHandle, G: SectorContour):
    if G.inner_radius >= T.zero_resolvent_radius:
        raise ContourTooTight("inner radius must stay below zero_resolvent_radius")
    if G.angle <= T.claimed_angle:
        raise AngleConflict("contour angle must exceed the sector angle of T")


class ResolventBundle:
    """Resolvents ``(lam_j I - T)^{-1}`` at every contour node.

    Computing them once lets several scalar functions share the solves.
    """

    def __init__(self, T, contour: SectorContour, chunk: int = 256):
        self.T = _as_handle(T)
        _check_geometry(self.T, contour)
        self.contour = contour
        n = self.T.dim
        eye = np.eye(n, dtype=np.complex128)
        out = np.empty((contour.nodes.size, n, n), dtype=np.complex128)
        for s in range(0, contour.nodes.size, chunk):
            lam = contour.nodes[s:s + chunk]
            A = lam[:, None, None] * eye - self.T.matrix
            out[s:s + chunk] = np.linalg.solve(A, np.broadcast_to(eye, A.shape))
        self.resolvents = out

    def apply(self, f: Callable) -> np.ndarray:
        c = np.asarray(f(self.contour.nodes), dtype=np.complex128) * self.contour.weights
        return np.tensordot(c, self.resolvents, axes=(0, 0)) / (2j * math.pi)


def dunford_integral(T, f: Callable, contour: SectorContour | None = None,
                     decay_order: float = 1.0, decay_const: float = 1.0,
                     return_bound: bool = False, bundle: ResolventBundle | None = None):
    """Dunford-Riesz quadrature ``(1/2 pi i) sum f(lam_j) (lam_j - T)^{-1} w_j``.

    ``f`` must be holomorphic on the closed sector and obey
    ``|f(lam)| <= decay_const * |lam|**(-decay_order)`` beyond the contour's
    truncation radius. With ``return_bound`` the tail estimate is returned too.
    """
    H = _as_handle(T) if bundle is None else bundle.T
    if bundle is None:
        if contour is None:
            contour = auto_contour(H, decay_order, decay_const)
        bundle = ResolventBundle(H, contour)
    out = bundle.apply(f)
    if return_bound:
        G = bundle.contour
        tb = 0.0 if G.closed else tail_bound(decay_order, decay_const,
                                               G.truncation_radius, H.norm)
        return out, tb
    return out


def principal_power(lam, beta):
    lam = np.asarray(lam, dtype=np.complex128)
    return np.exp(beta * np.log(lam))


def _power_decay(alpha: complex, nu: float):
    d = 2.0 - alpha.real
    return d, math.exp(abs(alpha.imag) * nu)


def _check_alpha(alpha: complex):
    if not (-2.0 < alpha.real < 1.0):
        raise BadGeometry("fractional_power needs Re(alpha) in (-2, 1)")


def power_contour(T: OperatorHandle, alpha: complex, tol: float = 1e-9,
                  inner_radius: float | None = None, nodes_per_panel: int = 16) -> SectorContour:
    """Contour with tail below ``0.1 * tol * ||T^alpha||`` after the T^2 factor.

    The angular margin shrinks like ``1/|Im alpha|`` so the factor
    ``e^{|Im alpha| nu}`` carried by the integrand stays of order ``e``.
    """
    om = T.claimed_angle
    nu = om + max(DEFAULT_THETA0, min(0.25 * (math.pi - om), 1.0 / max(1.0, abs(alpha.imag))))
    d, c = _power_decay(alpha, nu)
    mods = np.abs(T.spectrum)
    scale = max(np.max(mods ** alpha.real), np.min(mods ** alpha.real))
    scale *= math.exp(-abs(alpha.imag) * T.claimed_angle)
    tol_abs = tol * scale / max(T.norm ** 2, 1e-300)
    return auto_contour(T, d, c, tol_abs, angle=nu, inner_radius=inner_radius,
                        nodes_per_panel=nodes_per_panel)


def fractional_power(T, alpha: complex, contour: SectorContour | None = None,
                     bundle: ResolventBundle | None = None) -> np.ndarray:
    """Principal ``T**alpha`` for ``Re(alpha)`` in ``(-2, 1)``.

    Evaluated as ``T^2 * (contour integral of lam**(alpha-2))`` so the integrand
    decays like ``|lam|**(Re(alpha)-3)``.
    """
    alpha = complex(alpha)
    _check_alpha(alpha)
    H = _as_handle(T) if bundle is None else bundle.T
    if bundle is None:
        if contour is None:
            contour = power_contour(H, alpha)
        bundle = ResolventBundle(H, contour)
    X = bundle.apply(lambda z: principal_power(z, alpha - 2))
    return H.matrix @ (H.matrix @ X)


REG_EPS = (1e-2, 1e-3, 1e-4)


@dataclass(frozen=True)
class RegularizedPower:
    value: np.ndarray
    regularized: dict
    extrapolated: np.ndarray
    discrepancy: float


def _neville_at_zero(xs, ys):
    xs = list(xs)
    p = [np.asarray(y) for y in ys]
    n = len(xs)
    for k in range(1, n):
        for i in range(n - k):
            p[i] = (xs[i + k] * p[i] - xs[i] * p[i + 1]) / (xs[i + k] - xs[i])
    return p[0]


def imaginary_power(T, r: float, contour: SectorContour | None = None,
                    regularized: bool = False, bundle: ResolventBundle | None = None):
    """``T**(i r)``; with ``regularized`` also the ``T**(-eps + i r)`` family.

    The regularized values are extrapolated to ``eps = 0`` by the quadratic
    Richardson polynomial through the three ``eps`` levels, and the distance
    to the direct value is reported as ``discrepancy``.
    """
    r = float(r)
    H = _as_handle(T) if bundle is None else bundle.T
    if r == 0.0 and not regularized:
        return np.eye(H.dim, dtype=np.complex128)
    if bundle is None:
        if contour is None:
            contour = power_contour(H, complex(-max(REG_EPS), r) if regularized
                                    else complex(0.0, r))
        bundle = ResolventBundle(H, contour)
    val = (np.eye(H.dim, dtype=np.complex128) if r == 0.0
           else fractional_power(H, 1j * r, bundle=bundle))
    if not regularized:
        return val
    regs = {e: fractional_power(H, complex(-e, r), bundle=bundle) for e in REG_EPS}
    ext = _neville_at_zero(REG_EPS, [regs[e] for e in REG_EPS])
    disc = op_norm_2(ext - val) / max(op_norm_2(val), 1e-300)
    return RegularizedPower(val, regs, ext, disc)


def spectral_abscissa(G) -> float:
    return float(np.max(eigvals(G).real))


def semigroup_exp(G, t: float, cross_check: bool = False):
    """``exp(t G)`` by scaling and squaring (Pade).

    With ``cross_check`` returns ``(value, contour_value, rel_diff)`` where
    the second value comes from :func:`semigroup_exp_contour`.
    """
    M = as_matrix(G.matrix if isinstance(G, OperatorHandle) else G)
    t = float(t)
    if t < 0:
        raise BadGeometry("t must be non-negative")
    if t == 0.0:
        E = np.eye(M.shape[0], dtype=np.complex128)
        return (E, E.copy(), 0.0) if cross_check else E
    if spectral_abscissa(M) >= 0.0:
        raise UnstableGenerator("generator has spectrum in the closed right half-plane")
    E = sla.expm(t * M)
    if not cross_check:
        return E
    C = semigroup_exp_contour(M, t)
    return E, C, op_norm_2(E - C) / max(op_norm_2(E), 1e-300)


def semigroup_exp_contour(G, t: float, nodes_per_panel: int = 16) -> np.ndarray:
    """``exp(t G)`` from the contour integral of ``exp(-t z) (z + G)^{-1}``.

    Needs ``-G`` sectorial with angle below ``pi/2`` so the integrand decays
    exponentially along both rays.
    """
    M = as_matrix(G)
    t = float(t)
    if t == 0.0:
        return np.eye(M.shape[0], dtype=np.complex128)
    if spectral_abscissa(M) >= 0.0:
        raise UnstableGenerator("generator has spectrum in the closed right half-plane")
    H = make_handle(-M)
    if H.claimed_angle >= math.pi / 2 - 1e-6:
        raise AngleConflict("-G is not sectorial of angle < pi/2")
    nu = 0.5 * (H.claimed_angle + math.pi / 2)
    nu = min(nu, H.claimed_angle + 0.5)
    eps0 = 0.5 * H.zero_resolvent_radius
    decay = t * math.cos(nu)
    R = eps0 + 45.0 / decay + 2.0 * H.norm
    panels = max(1, math.ceil(math.log(R / eps0) / math.log(1.0 + 1.4 * math.sin(nu - H.claimed_angle))))
    Gc = build_sector_contour(nu, eps0, R, panels, nodes_per_panel,
                              max_panel_length=2.0 / (t * math.sin(nu) + 1e-300))
    return ResolventBundle(H, Gc).apply(lambda z: np.exp(-t * z))
