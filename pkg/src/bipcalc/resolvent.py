"""Explicit resolvent of the shifted fourth-order operator.

``u = (-A_i - lam)^{-1} f`` is built from the kernels ``J`` and ``K``, the
particular solution ``F0`` and four exponential profiles whose coefficients
enforce the boundary conditions.  Here ``-A_i = -(fourth-order operator) +
(k^2/4 + r') I``, so on the direct discretization ``D`` the same ``u`` solves

    (-D + (k^2/4 + r') I - lam I) u = f,

i.e. the direct matrix is compared at ``lam_tilde = lam - k^2/4 - r'``
through ``(D + lam_tilde I) u = -f``; :func:`direct_resolvent` does exactly
this and nothing else, so the sign lives in one place.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .contour import semigroup_exp
from .errors import GridMismatch, NeumannSeriesDivergence, SingularUV
from .matrix_core import op_norm_2
from .operators import (MuShift, ModelParams, _mat, assemble_fourth_order_direct,
                        beta_of_mu, build_M_L, direct_grid, grid_to_unknowns,
                        unknowns_to_grid)


@dataclass(frozen=True)
class GridFunction:
    x: np.ndarray       # (n,) uniform, endpoints included
    values: np.ndarray  # (n, m) complex

    def __post_init__(self):
        if self.values.shape[0] != self.x.shape[0]:
            raise GridMismatch("values and nodes differ in length")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function has non-finite values")

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    def l2(self) -> float:
        """Discrete ``L^2(a, b; C^m)`` norm (trapezoid weights)."""
        w = np.full(self.x.size, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return float(np.sqrt(np.sum(w * np.sum(np.abs(self.values) ** 2, axis=1))))

    def __add__(self, other):
        return GridFunction(self.x, self.values + other.values)

    def __sub__(self, other):
        return GridFunction(self.x, self.values - other.values)


def grid_function(params: ModelParams, values) -> GridFunction:
    v = np.asarray(values, dtype=np.complex128)
    if v.shape[0] != params.n:
        raise GridMismatch(f"expected {params.n} nodes, got {v.shape[0]}")
    return GridFunction(params.x_nodes(), v)


class Profiles:
    """``e^{(x_j - a) T}`` on the grid, built from one cached ``e^{hT}``."""

    def __init__(self, T: np.ndarray, x: np.ndarray):
        self.T = np.asarray(T, dtype=np.complex128)
        n = x.size
        h = float(x[1] - x[0])
        self.step = semigroup_exp(self.T, h)
        m = self.T.shape[0]
        P = np.empty((n, m, m), dtype=np.complex128)
        P[0] = np.eye(m)
        for j in range(1, n):
            P[j] = self.step @ P[j - 1]
        self.P = P
        self.h = h
        self.lu = sla.lu_factor(self.T)

    @property
    def full(self) -> np.ndarray:
        """``e^{cT}``."""
        return self.P[-1]

    def fwd(self) -> np.ndarray:
        """``e^{(x - a)T}`` at every node."""
        return self.P

    def bwd(self) -> np.ndarray:
        """``e^{(b - x)T}`` at every node."""
        return self.P[::-1]

    def tinv(self, v):
        return sla.lu_solve(self.lu, v)


def _sweeps(pr: Profiles, phi: np.ndarray):
    """Trapezoid partial integrals split at each node.

    ``left[j]  = int_a^{x_j} e^{(x_j - s)T} phi(s) ds``
    ``right[j] = int_{x_j}^b e^{(s - x_j)T} phi(s) ds``
    """
    n = phi.shape[0]
    E, h = pr.step, pr.h
    left = np.zeros_like(phi)
    right = np.zeros_like(phi)
    for j in range(1, n):
        left[j] = E @ (left[j - 1] + 0.5 * h * phi[j - 1]) + 0.5 * h * phi[j]
    for j in range(n - 2, -1, -1):
        right[j] = E @ (right[j + 1] + 0.5 * h * phi[j + 1]) + 0.5 * h * phi[j]
    return left, right


def _as_values(phi):
    return phi.values if isinstance(phi, GridFunction) else np.asarray(phi, dtype=np.complex128)


def kernel_J(T, phi, x=None, profiles: Profiles | None = None, derivative: bool = False):
    """``J(x) = 1/2 T^{-1} int_a^b e^{|x - s| T} phi(s) ds`` by split trapezoid.

    With ``derivative`` also returns ``J'(x) = 1/2 (left - right)``.
    """
    vals = _as_values(phi)
    if x is None:
        x = phi.x
    pr = profiles if profiles is not None else Profiles(_mat(T), x)
    left, right = _sweeps(pr, vals)
    J = 0.5 * pr.tinv((left + right).T).T
    out = GridFunction(x, J)
    if derivative:
        return out, GridFunction(x, 0.5 * (left - right))
    return out


def kernel_K(T, phi, x=None, profiles: Profiles | None = None, derivative: bool = False,
             _sweep=None):
    """Boundary correction ``K`` that makes ``K + J`` vanish at both ends.

    ``K(x) = 1/2 (e^{(b-x)T} e^{cT} - e^{(x-a)T}) W T^{-1} int e^{(s-a)T} phi
           + 1/2 (e^{(x-a)T} e^{cT} - e^{(b-x)T}) W T^{-1} int e^{(b-s)T} phi``
    with ``W = (I - e^{2cT})^{-1}``.
    """
    vals = _as_values(phi)
    if x is None:
        x = phi.x
    pr = profiles if profiles is not None else Profiles(_mat(T), x)
    Ec = pr.full
    E2 = Ec @ Ec
    if op_norm_2(E2) >= 1 - 1e-6:
        raise NeumannSeriesDivergence("||e^{2cT}|| too close to 1")
    left, right = _sweeps(pr, vals) if _sweep is None else _sweep
    Ia = right[0]    # int_a^b e^{(s-a)T} phi
    Ib = left[-1]    # int_a^b e^{(b-s)T} phi
    m = Ec.shape[0]
    W = np.linalg.inv(np.eye(m) - E2)
    ca = W @ pr.tinv(Ia)
    cb = W @ pr.tinv(Ib)
    F, B = pr.fwd(), pr.bwd()
    ca2, cb2 = Ec @ ca, Ec @ cb
    K = 0.5 * (B @ ca2 - F @ ca + F @ cb2 - B @ cb)
    out = GridFunction(x, K)
    if derivative:
        T_ = pr.T
        dK = 0.5 * (-(B @ (T_ @ ca2)) - F @ (T_ @ ca) + F @ (T_ @ cb2) + B @ (T_ @ cb))
        return out, GridFunction(x, dK)
    return out


def kernel_KJ(pr: Profiles, vals: np.ndarray, x: np.ndarray):
    """``K + J`` and its derivative sharing one pair of sweeps."""
    sw = _sweeps(pr, vals)
    left, right = sw
    J = 0.5 * pr.tinv((left + right).T).T
    dJ = 0.5 * (left - right)
    K, dK = kernel_K(pr.T, vals, x, profiles=pr, derivative=True, _sweep=sw)
    return J + K.values, dJ + dK.values


@dataclass
class MuData:
    """Per-``mu`` state: ``M``, ``L``, their grid profiles and ``B_mu``."""
    shift: MuShift
    M: np.ndarray
    L: np.ndarray
    PM: Profiles
    PL: Profiles
    beta: complex


def mu_data(A, params: ModelParams, lam: complex) -> MuData:
    sh = MuShift.from_lambda(lam, params)
    M, L = build_M_L(A, params, sh.mu)
    x = params.x_nodes()
    return MuData(sh, M, L, Profiles(M, x), Profiles(L, x), beta_of_mu(sh.mu, params.k))


def F0_and_traces(A, params: ModelParams, lam: complex, f, data: MuData | None = None):
    """``F0 = (K + J)_M`` applied to ``(K + J)_L f``, with ``F0'(a)``, ``F0'(b)``."""
    d = data if data is not None else mu_data(A, params, lam)
    x = params.x_nodes()
    vals = _as_values(f)
    psi, _ = kernel_KJ(d.PL, vals, x)
    F0, dF0 = kernel_KJ(d.PM, psi, x)
    return GridFunction(x, F0), dF0[0], dF0[-1]


def _cond(X):
    return np.linalg.cond(X)


def boundary_coefficients(bc: int, A, params: ModelParams, lam: complex,
                          dFa: np.ndarray, dFb: np.ndarray, data: MuData | None = None,
                          bc2_rule: str = "full"):
    """Coefficients ``(alpha1, ..., alpha4)`` of the four exponential profiles.

    ``bc2_rule="u_prime_only"`` uses the two-term BC2 formula
    ``alpha1 = -1/2 (I + e^{cM})^{-1} M^{-1} (F0'(a) + F0'(b))``,
    ``alpha3 = -1/2 (I - e^{cM})^{-1} M^{-1} (F0'(a) - F0'(b))``, which only
    enforces ``u' = 0``.  The default ``"full"`` rule also enforces
    ``u'' + A u = 0`` using both profiles.
    """
    m = np.asarray(dFa).shape[0]
    zero = np.zeros(m, dtype=np.complex128)
    if bc == 1:
        return zero, zero.copy(), zero.copy(), zero.copy()
    d = data if data is not None else mu_data(A, params, lam)
    I = np.eye(m)
    M, L = d.M, d.L
    EM, EL = d.PM.full, d.PL.full
    S = np.asarray(dFa) + np.asarray(dFb)
    Dm = np.asarray(dFa) - np.asarray(dFb)
    if bc == 2 and bc2_rule == "u_prime_only":
        a1 = -0.5 * np.linalg.solve(I + EM, d.PM.tinv(S))
        a3 = -0.5 * np.linalg.solve(I - EM, d.PM.tinv(Dm))
        return a1, zero.copy(), a3, zero.copy()
    if bc == 2:
        # (D^2 + A) maps the M- and L-profiles to pM, pL times themselves
        pM = params.k / 2 - 1j * d.beta
        pL = params.k / 2 + 1j * d.beta
        Wm = pL * M @ (I + EM) @ (I - EL) - pM * L @ (I + EL) @ (I - EM)
        Zm = pL * M @ (I - EM) @ (I + EL) - pM * L @ (I - EL) @ (I + EM)
        for X in (Wm, Zm):
            if _cond(X) > 1e10:
                raise SingularUV("even/odd BC2 system is ill-conditioned")
        y = -0.5 * np.linalg.solve(Wm, S)
        z = -0.5 * np.linalg.solve(Zm, Dm)
        return (pL * (I - EL) @ y, -pM * (I - EM) @ y,
                pL * (I + EL) @ z, -pM * (I + EM) @ z)
    B = 2j * d.beta
    LM = L + M
    ELM = EM @ EL
    corr = (LM @ LM) @ (EM - EL) / B
    U = I - ELM - corr
    V = I - ELM + corr
    if _cond(U) > 1e10 or _cond(V) > 1e10:
        raise SingularUV("U_mu or V_mu is ill-conditioned")
    X = LM / B
    if bc == 3:
        uS = np.linalg.solve(U, S)
        vD = np.linalg.solve(V, Dm)
        return (0.5 * X @ (I - EL) @ uS, -0.5 * X @ (I - EM) @ uS,
                0.5 * X @ (I + EL) @ vD, -0.5 * X @ (I + EM) @ vD)
    # bc == 4
    LMi = L @ np.linalg.inv(M)
    MLi = M @ np.linalg.inv(L)
    vS = np.linalg.solve(V, S)
    uD = np.linalg.solve(U, Dm)
    return (-0.5 * X @ (I - EL) @ LMi @ vS, 0.5 * X @ (I - EM) @ MLi @ vS,
            -0.5 * X @ (I + EL) @ LMi @ uD, 0.5 * X @ (I + EM) @ MLi @ uD)


@dataclass(frozen=True)
class ResolventDecomposition:
    alpha1: np.ndarray
    alpha2: np.ndarray
    alpha3: np.ndarray
    alpha4: np.ndarray
    F0: GridFunction
    total: GridFunction

    def recompose(self, data: MuData) -> np.ndarray:
        return profile_sum(data, (self.alpha1, self.alpha2, self.alpha3, self.alpha4)) \
            + self.F0.values


def profile_sum(d: MuData, alphas) -> np.ndarray:
    a1, a2, a3, a4 = alphas
    FM, BM = d.PM.fwd(), d.PM.bwd()
    FL, BL = d.PL.fwd(), d.PL.bwd()
    return ((FM - BM) @ a1 + (FL - BL) @ a2 + (FM + BM) @ a3 + (FL + BL) @ a4)


def resolvent_apply(bc: int, A, params: ModelParams, lam: complex, f,
                    data: MuData | None = None, bc2_rule: str = "full") -> ResolventDecomposition:
    """``(-A_i - lam)^{-1} f`` through the kernel representation."""
    d = data if data is not None else mu_data(A, params, lam)
    vals = _as_values(f)
    if vals.shape[0] != params.n:
        raise GridMismatch("f is not sampled on the model grid")
    F0, dFa, dFb = F0_and_traces(A, params, lam, vals, data=d)
    alphas = boundary_coefficients(bc, A, params, lam, dFa, dFb, data=d, bc2_rule=bc2_rule)
    total = profile_sum(d, alphas) + F0.values
    return ResolventDecomposition(*alphas, F0, GridFunction(F0.x, total))


def direct_resolvent(A, params: ModelParams, lam: complex, f, D: np.ndarray | None = None):
    """Oracle: solve ``(-D + (k^2/4 + r' - lam) I) u = f`` on the direct grid."""
    Am = _mat(A)
    m = Am.shape[0]
    if D is None:
        D = assemble_fourth_order_direct(Am, params)
    vals = _as_values(f)
    rhs = grid_to_unknowns(vals, params)
    Mx = -D + (params.shift - complex(lam)) * np.eye(D.shape[0])
    u = np.linalg.solve(Mx, rhs)
    return GridFunction(params.x_nodes(), unknowns_to_grid(u, params, m))


def interior_residual(A, params: ModelParams, lam: complex, u, f) -> float:
    """Relative discrete ``L^2`` residual of the defining equation.

    Evaluated at nodes two or more steps from either end, where the central
    stencils read only true grid values.
    """
    Am = _mat(A)
    uv, fv = _as_values(u), _as_values(f)
    h = params.h
    k = params.k
    m = Am.shape[0]
    d4 = (uv[:-4] - 4 * uv[1:-3] + 6 * uv[2:-2] - 4 * uv[3:-1] + uv[4:]) / h ** 4
    d2 = (uv[1:-3] - 2 * uv[2:-2] + uv[3:-1]) / h ** 2
    u0 = uv[2:-2]
    C2 = 2 * Am - k * np.eye(m)
    C0 = Am @ Am - k * Am
    op = -d4 - d2 @ C2.T - u0 @ C0.T          # fourth-order operator
    lhs = -op + (params.shift - complex(lam)) * u0
    r = lhs - fv[2:-2]
    return float(np.linalg.norm(r) / max(np.linalg.norm(fv[2:-2]), 1e-300))


def boundary_defects(bc: int, A, params: ModelParams, u) -> dict:
    """One-sided finite-difference values of the BC quantities at both ends."""
    Am = _mat(A)
    uv = _as_values(u)
    h = params.h

    def d1(v0, v1, v2, v3):
        return (-11 * v0 + 18 * v1 - 9 * v2 + 2 * v3) / (6 * h)

    def d2(v0, v1, v2, v3):
        return (2 * v0 - 5 * v1 + 4 * v2 - v3) / h ** 2

    out = {}
    for side, sl, sgn in (("a", uv[:4], 1.0), ("b", uv[::-1][:4], -1.0)):
        val = sl[0]
        du = sgn * d1(*sl)
        ddu = d2(*sl)
        if bc == 1:
            out[side] = (val, ddu)
        elif bc == 2:
            out[side] = (du, ddu + Am @ val)
        elif bc == 3:
            out[side] = (val, du)
        else:
            out[side] = (du, ddu)
    return out
