"""Concrete operators: the Dirichlet Laplacian on the cross-section, the
multiplier family B_xi, the square-root pair (M, L), and the direct
finite-difference discretization of the fourth-order operator.

Sign conventions used throughout::

    B_xi      = (-A + k/2 + 4 pi^2 xi^2)^2 + r'
    mu        = lam - k^2/4 - r'
    beta      = sqrt(-mu - k^2/4)          (principal root)
    M, L      = -sqrt(-A + k/2 -/+ i beta)
    M^2 + L^2 = -2A + k                    (from the definitions)
    M^2 L^2   = A^2 - kA + (k^2/4 + r' - lam)
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .contour import OperatorHandle, fractional_power, make_handle, power_contour
from .errors import BadGeometry, BranchPoint, HypothesisViolation, SpectrumOnCut, ValidationError
from .matrix_core import as_matrix, eigvals, hermitian_eig, is_hermitian, spectral_apply

PI2 = math.pi ** 2
BC_KINDS = (1, 2, 3, 4)


def dirichlet_laplacian_1d(m: int, omega_length: float) -> OperatorHandle:
    """Second-difference Laplacian on ``(0, omega_length)`` with Dirichlet ends.

    ``h = omega_length / (m + 1)``; entries ``tridiag(1, -2, 1) / h**2``.
    """
    if m < 1 or not omega_length > 0:
        raise BadGeometry("need m >= 1 and omega_length > 0")
    h = omega_length / (m + 1)
    T = (np.diag(np.full(m, -2.0)) + np.diag(np.ones(m - 1), 1)
         + np.diag(np.ones(m - 1), -1)) / h ** 2
    ev = -4.0 / h ** 2 * np.sin(np.arange(1, m + 1) * math.pi / (2 * (m + 1))) ** 2
    return OperatorHandle(T.astype(np.complex128), 0.0,
                          float(np.min(np.abs(ev))), True, np.sort(ev).astype(np.complex128))


def poincare_constant(A0) -> float:
    """Smallest ``|eigenvalue|`` of a Hermitian negative-definite matrix."""
    M = A0.matrix if isinstance(A0, OperatorHandle) else A0
    w = hermitian_eig(M).values
    if np.max(w) >= 0:
        raise HypothesisViolation("A0 is not negative definite")
    return float(np.min(np.abs(w)))


@dataclass(frozen=True)
class ModelParams:
    a: float = 0.0
    b: float = 1.0
    k: float = 1.0
    r_prime: float = 1.0
    p: float = 2.0
    bc: int = 1
    k1: float = 0.5
    k2: float = 1.0
    omega_length: float = math.pi
    m: int = 8
    n: int = 32

    def __post_init__(self):
        checks = [
            (self.a < self.b, "a < b"),
            (self.r_prime > 0, "r_prime > 0"),
            (self.p > 1, "p > 1"),
            (self.k1 > 0, "k1 > 0"),
            (self.k2 > 0, "k2 > 0"),
            (self.omega_length > 0, "omega_length > 0"),
            (self.m >= 2, "m >= 2"),
            (self.n >= 8, "n >= 8"),
            (self.bc in BC_KINDS, "bc in {1, 2, 3, 4}"),
        ]
        for ok, name in checks:
            if not ok:
                raise ValidationError(f"invariant violated: {name}", name)
        c_omega = poincare_constant(dirichlet_laplacian_1d(self.m, self.omega_length))
        if not self.k > -c_omega:
            raise ValidationError(
                f"invariant violated: k > -C_omega (k={self.k}, C_omega={c_omega})",
                "k > -C_omega")

    @property
    def c(self) -> float:
        return self.b - self.a

    @property
    def h(self) -> float:
        return self.c / (self.n - 1)

    @property
    def shift(self) -> float:
        """``k^2/4 + r'``, the constant added to minus the fourth-order operator."""
        return self.k ** 2 / 4 + self.r_prime

    def x_nodes(self) -> np.ndarray:
        return np.linspace(self.a, self.b, self.n)

    def laplacian(self) -> OperatorHandle:
        return dirichlet_laplacian_1d(self.m, self.omega_length)

    def replace(self, **kw) -> "ModelParams":
        d = asdict(self)
        d.update(kw)
        return ModelParams(**d)


@dataclass(frozen=True)
class MuShift:
    lam: complex
    mu: complex

    @classmethod
    def from_lambda(cls, lam: complex, params: ModelParams) -> "MuShift":
        lam = complex(lam)
        return cls(lam, lam - params.k ** 2 / 4 - params.r_prime)


def _mat(A) -> np.ndarray:
    return A.matrix if isinstance(A, OperatorHandle) else as_matrix(A)


def check_h4(A, k: float):
    """Raise if the spectrum of ``A`` meets ``[k, inf)`` or contains 0."""
    ev = eigvals(_mat(A))
    scale = 1.0 + np.max(np.abs(ev))
    if np.any(np.abs(ev) <= 1e-14 * scale):
        raise HypothesisViolation("0 is an eigenvalue of A")
    on_axis = np.abs(ev.imag) <= 1e-12 * scale
    if np.any(on_axis & (ev.real >= k)):
        raise HypothesisViolation("spectrum of A meets [k, +inf)")


def _shift_matrix(A: np.ndarray, params: ModelParams, xi: float) -> np.ndarray:
    n = A.shape[0]
    return -A + (params.k / 2 + 4 * PI2 * xi ** 2) * np.eye(n)


def build_B_xi(A, params: ModelParams, xi: float) -> OperatorHandle:
    """``-A(-A + k + 8 pi^2 xi^2) + ((k/2 + 4 pi^2 xi^2)^2 + r') I``."""
    M = _mat(A)
    check_h4(M, params.k)
    n = M.shape[0]
    eye = np.eye(n)
    B = -M @ (-M + (params.k + 8 * PI2 * xi ** 2) * eye) \
        + ((params.k / 2 + 4 * PI2 * xi ** 2) ** 2 + params.r_prime) * eye
    if is_hermitian(M):
        B = 0.5 * (B + B.conj().T)
    return make_handle(B)


def B_xi_power(A, params: ModelParams, xi: float, alpha: complex) -> np.ndarray:
    return fractional_power(build_B_xi(A, params, xi), alpha)


def d_B_xi_alpha_d_xi(A, params: ModelParams, xi: float, alpha: complex,
                      order: int = 1) -> np.ndarray:
    """Closed-form first or second ``xi``-derivative of ``B_xi**alpha``.

    first:  16 a pi^2 xi S B^(a-1)
    second: 16 a pi^2 S B^(a-1) + 128 a pi^4 xi^2 B^(a-1)
            + 256 a (a-1) pi^4 xi^2 S^2 B^(a-2)
    with ``S = -A + k/2 + 4 pi^2 xi^2``.
    """
    alpha = complex(alpha)
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    M = _mat(A)
    Bh = build_B_xi(M, params, xi)
    S = _shift_matrix(M, params, xi)
    Bm1 = fractional_power(Bh, alpha - 1)
    if order == 1:
        return 16 * alpha * PI2 * xi * (S @ Bm1)
    Bm2 = np.linalg.solve(Bh.matrix, Bm1)
    return (16 * alpha * PI2 * (S @ Bm1)
            + 128 * alpha * PI2 ** 2 * xi ** 2 * Bm1
            + 256 * alpha * (alpha - 1) * PI2 ** 2 * xi ** 2 * (S @ S @ Bm2))


def finite_difference_B_xi_alpha(A, params: ModelParams, xi: float, alpha: complex,
                                 order: int = 1, h: float | None = None) -> np.ndarray:
    """Two-level Richardson extrapolation of central differences of ``xi -> B_xi**alpha``.

    All stencil points share one contour so the quadrature error is a smooth
    function of ``xi`` and cancels in the differences.
    """
    if h is None:
        h = 1e-2 * max(1.0, abs(xi))
    alpha = complex(alpha)
    pts = [xi + c * h for c in (-1, -0.5, -0.25, 0, 0.25, 0.5, 1)]
    handles = {x: build_B_xi(A, params, x) for x in pts}
    r0 = min(H.zero_resolvent_radius for H in handles.values())
    top = max(handles.values(), key=lambda H: H.norm)
    G = power_contour(top, alpha, tol=1e-12, inner_radius=0.5 * r0, nodes_per_panel=32)
    vals = {x: fractional_power(H, alpha, contour=G) for x, H in handles.items()}

    def central(s):
        if order == 1:
            return (vals[xi + s] - vals[xi - s]) / (2 * s)
        return (vals[xi + s] - 2 * vals[xi] + vals[xi - s]) / s ** 2

    # truncation error is even in s: cancel the s^2 then the s^4 terms
    r1 = [(4 * central(s / 2) - central(s)) / 3 for s in (h, h / 2)]
    return (16 * r1[1] - r1[0]) / 15


def principal_sqrt(X: np.ndarray) -> np.ndarray:
    """Principal square root.

    Normal arguments go through the Hermitian eigenbasis of their Hermitian
    part plus scalar shift; the rest through the contour calculus.
    """
    X = as_matrix(X)
    ev = eigvals(X)
    scale = 1.0 + np.max(np.abs(ev))
    near_cut = (ev.real <= 0) & (np.abs(ev.imag) <= 1e-10 * scale)
    if np.any(near_cut) or np.any(np.abs(ev) <= 1e-10 * scale):
        raise SpectrumOnCut("square-root argument has spectrum on (-inf, 0]")
    n = X.shape[0]
    shift = np.trace(X) / n
    H = X - shift * np.eye(n)
    if is_hermitian(H):
        return spectral_apply(H, lambda z: np.sqrt(z + shift), hermitian=True)
    if is_hermitian(1j * H):
        return spectral_apply(1j * H, lambda z: np.sqrt(-1j * z + shift), hermitian=True)
    return fractional_power(make_handle(X), 0.5)


def beta_of_mu(mu: complex, k: float) -> complex:
    w = -complex(mu) - k ** 2 / 4
    if abs(w) < 1e-10 * (1 + abs(mu)):
        raise BranchPoint("mu = -k^2/4 is the branch point where M = L")
    return complex(np.sqrt(w))


def build_M_L(A, params: ModelParams, mu: complex):
    """Return ``(M, L)`` with ``M = -sqrt(-A + k/2 - i beta)``, ``L`` with ``+ i beta``."""
    Am = _mat(A)
    beta = beta_of_mu(mu, params.k)
    eye = np.eye(Am.shape[0])
    base = -Am + params.k / 2 * eye
    M = -principal_sqrt(base - 1j * beta * eye)
    L = -principal_sqrt(base + 1j * beta * eye)
    return M, L


# --- direct fourth-order discretization ------------------------------------

def _bc_value_node(bc: int) -> bool:
    """True when the BC pins ``u`` at the end node (then the node is removed)."""
    return bc in (1, 3)


def direct_grid(params: ModelParams):
    """Indices of the nodes carried as unknowns by the direct discretization."""
    n = params.n
    if _bc_value_node(params.bc):
        return np.arange(1, n - 1)
    return np.arange(n)


def _ghost_maps(bc: int, h: float, Am: np.ndarray, side: int):
    """Ghost values as linear maps of interior values near one end.

    Returns ``{ghost_offset: [(node_offset, block), ...]}`` where offsets are
    measured from the end node inward (``side`` = +1 at a, -1 at b only
    matters for the sign of odd derivatives, which cancels for the central
    conditions used here).
    """
    m = Am.shape[0]
    I = np.eye(m)
    Z = np.zeros((m, m))
    if bc == 1:
        # u = 0, u'' = 0  ->  u_{-1} = -u_1
        return {-1: [(1, -I)]}
    if bc == 3:
        # u = 0, u' = 0  ->  u_{-1} = u_1
        return {-1: [(1, I)]}
    # Both ghosts from fourth-order central conditions at the end node:
    #   u'  ~ (g2 - 8 g1 + 8 u1 - u2) / 12h
    #   u'' ~ (-g2 + 16 g1 - 30 u0 + 16 u1 - u2) / 12h^2
    # g1, g2 ghosts at offsets -1, -2. The u'' row for BC2 adds h^2*12*A u0
    # so that it reads u'' + A u = 0.
    # u' row:  g2 - 8 g1 = -8 u1 + u2
    # u'' row: -g2 + 16 g1 = 30 u0 - 16 u1 + u2 - 12 h^2 A u0 [BC2]
    c0 = 30 * I - (12 * h ** 2 * Am if bc == 2 else Z)
    # add rows: 8 g1 = c0 u0 - 24 u1 + 2 u2
    g1 = [(0, c0 / 8), (1, -3 * I), (2, I / 4)]
    # g2 = 8 g1 - 8 u1 + u2
    g2 = [(0, c0), (1, -32 * I), (2, 3 * I)]
    return {-1: g1, -2: g2}


def assemble_fourth_order_direct(A, params: ModelParams) -> np.ndarray:
    """Finite-difference matrix of ``-u'''' - (2A - k)u'' - (A^2 - kA)u``.

    Second-order central differences in ``x`` on ``params.n`` nodes; ghost
    values beyond each end are eliminated through the boundary rows of
    ``params.bc``. Nodes pinned by ``u = 0`` are dropped. The unknown
    ordering is node-major: block ``j`` holds the ``m`` values at node ``j``.
    """
    Am = _mat(A)
    m = Am.shape[0]
    if params.n < 8 or params.bc not in BC_KINDS:
        raise BadGeometry("need n >= 8 and bc in {1, 2, 3, 4}")
    h = params.h
    k = params.k
    nodes = direct_grid(params)
    pos = {int(j): i for i, j in enumerate(nodes)}
    N = nodes.size
    n_last = params.n - 1
    ghosts_a = _ghost_maps(params.bc, h, Am, 1)
    ghosts_b = _ghost_maps(params.bc, h, Am, -1)
    I = np.eye(m)
    C2 = -(2 * Am - k * I)      # multiplies u''
    C0 = -(Am @ Am - k * Am)    # multiplies u
    D = np.zeros((N * m, N * m), dtype=np.complex128)

    def add(row, node, block):
        # node index may be a ghost or a pinned node; resolve recursively
        if node in pos:
            i = pos[node]
            D[row * m:(row + 1) * m, i * m:(i + 1) * m] += block
            return
        if node < 0:
            for off, B in ghosts_a[node]:
                add(row, off, block @ B)
        elif node > n_last:
            for off, B in ghosts_b[n_last - node]:
                add(row, n_last - off, block @ B)
        # pinned end nodes carry u = 0 and contribute nothing

    w4 = np.array([1, -4, 6, -4, 1]) / h ** 4
    w2 = np.array([1, -2, 1]) / h ** 2
    for row, j in enumerate(nodes):
        j = int(j)
        for d, w in zip(range(-2, 3), w4):
            add(row, j + d, -w * I)
        for d, w in zip(range(-1, 2), w2):
            add(row, j + d, w * C2)
        add(row, j, C0)
    return D


def shifted_direct(A, params: ModelParams) -> np.ndarray:
    """Direct matrix of ``-A_i = -(fourth-order operator) + (k^2/4 + r') I``."""
    D = assemble_fourth_order_direct(A, params)
    return -D + params.shift * np.eye(D.shape[0])


def grid_to_unknowns(values: np.ndarray, params: ModelParams) -> np.ndarray:
    """Flatten an ``(n, m)`` grid array onto the direct unknown vector."""
    return np.asarray(values)[direct_grid(params)].reshape(-1)


def unknowns_to_grid(vec: np.ndarray, params: ModelParams, m: int) -> np.ndarray:
    out = np.zeros((params.n, m), dtype=np.complex128)
    out[direct_grid(params)] = np.asarray(vec).reshape(-1, m)
    return out
