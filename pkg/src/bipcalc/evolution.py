"""Linear and semilinear Cauchy problems ``u' = A_i u + f`` on the model grid.

The generator is the direct finite-difference matrix of the fourth-order
operator. Solutions are propagated through the shifted generator
``A_i - C I`` with ``v = e^{-Ct} u`` and mapped back at the end.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
from scipy.optimize import brentq

from .certify import CertReport
from .contour import semigroup_exp, spectral_abscissa
from .errors import (GridMismatch, IllConditionedEigenbasis, NoConvergence,
                     UnstableGenerator)
from .matrix_core import as_matrix
from .operators import (ModelParams, assemble_fourth_order_direct, direct_grid,
                        grid_to_unknowns, unknowns_to_grid)
from .resolvent import GridFunction


def shift_constant(bc: int, params: ModelParams) -> float:
    """``k^2/4`` for BC1/BC2, ``k^2/4 + r'`` for BC3/BC4."""
    c = params.k ** 2 / 4
    return c + params.r_prime if bc in (3, 4) else c


@dataclass(frozen=True)
class SpaceTimeFunction:
    """Values on a uniform time grid; ``values[j]`` is the frame at ``t[j]``.

    Frames are ``(n, m)`` grid arrays when ``x`` is set, bare vectors otherwise.
    """
    t: np.ndarray
    values: np.ndarray
    x: np.ndarray | None = None

    def __post_init__(self):
        if self.values.shape[0] != self.t.shape[0]:
            raise GridMismatch("one frame per time node is required")
        if self.t.size < 2 or not np.allclose(np.diff(self.t), self.t[1] - self.t[0]):
            raise GridMismatch("time nodes must be uniform")
        if self.x is not None and self.values.shape[1] != self.x.size:
            raise GridMismatch("frames do not match the x grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("space-time function has non-finite values")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def frames(self) -> list:
        if self.x is None:
            return list(self.values)
        return [GridFunction(self.x, v) for v in self.values]

    def __add__(self, other):
        return SpaceTimeFunction(self.t, self.values + other.values, self.x)

    def __sub__(self, other):
        return SpaceTimeFunction(self.t, self.values - other.values, self.x)

    def scaled(self, c) -> "SpaceTimeFunction":
        return SpaceTimeFunction(self.t, c * self.values, self.x)


def time_grid(T_final: float, nt: int) -> np.ndarray:
    return np.linspace(0.0, float(T_final), int(nt) + 1)


def sample_space_time(params: ModelParams, t: np.ndarray, fn: Callable) -> SpaceTimeFunction:
    """Evaluate ``fn(t, x) -> (m,)``-valued data on the grid; ``fn`` is vectorized
    as ``fn(T, X)`` with ``T, X`` of shape ``(nt+1, n)`` returning ``(nt+1, n, m)``."""
    x = params.x_nodes()
    T, X = np.meshgrid(t, x, indexing="ij")
    vals = np.asarray(fn(T, X), dtype=np.complex128)
    return SpaceTimeFunction(np.asarray(t, float), vals, x)


# --- generators --------------------------------------------------------------

@dataclass
class LinearGenerator:
    """Generator matrix on the unknown vector with the maps to and from frames."""
    matrix: np.ndarray
    shift: float = 0.0
    params: ModelParams | None = None
    weights: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def to_vec(self, frame) -> np.ndarray:
        vals = frame.values if isinstance(frame, GridFunction) else np.asarray(frame)
        if self.params is None:
            return np.asarray(vals, dtype=np.complex128).reshape(-1)
        if vals.shape[0] != self.params.n:
            raise GridMismatch(f"expected {self.params.n} nodes, got {vals.shape[0]}")
        return grid_to_unknowns(np.asarray(vals, dtype=np.complex128), self.params)

    def to_frame(self, vec: np.ndarray) -> np.ndarray:
        if self.params is None:
            return vec
        return unknowns_to_grid(vec, self.params, self.params.m)

    def norm(self, vecs: np.ndarray) -> np.ndarray:
        """Discrete ``L^2`` norm of one vector or of each row."""
        w = np.ones(self.dim) if self.weights is None else self.weights
        v = np.atleast_2d(vecs)
        out = np.sqrt(np.sum(w * np.abs(v) ** 2, axis=1))
        return out if np.ndim(vecs) > 1 else float(out[0])

    def exp(self, t: float, shifted: bool = True) -> np.ndarray:
        key = ("exp", float(t), shifted)
        if key not in self._cache:
            G = self.matrix - (self.shift * np.eye(self.dim) if shifted else 0)
            self._cache[key] = semigroup_exp(G, t)
        return self._cache[key]

    def phi12(self, dt: float, shifted: bool = True):
        """``(e^{dt G}, phi1, phi2)`` of ``dt G`` from one block exponential."""
        key = ("phi", float(dt), shifted)
        if key not in self._cache:
            G = self.matrix - (self.shift * np.eye(self.dim) if shifted else 0)
            if spectral_abscissa(G) >= 0:
                raise UnstableGenerator("generator has spectrum in the closed right half-plane")
            d = self.dim
            Z = np.zeros((3 * d, 3 * d), dtype=np.complex128)
            Z[:d, :d] = dt * G
            Z[:d, d:2 * d] = np.eye(d)
            Z[d:2 * d, 2 * d:] = np.eye(d)
            E = sla.expm(Z)
            self._cache[key] = (E[:d, :d], E[:d, d:2 * d], E[:d, 2 * d:])
        return self._cache[key]


def unknown_weights(params: ModelParams) -> np.ndarray:
    """Trapezoid weights in ``x`` for every unknown (Euclidean in the cross-section)."""
    nodes = direct_grid(params)
    w = np.full(nodes.size, params.h)
    w[nodes == 0] = 0.5 * params.h
    w[nodes == params.n - 1] = 0.5 * params.h
    return np.repeat(w, params.m)


def direct_generator(bc: int, params: ModelParams, A=None) -> LinearGenerator:
    """Direct-discretization generator of ``A_i`` with its shift constant."""
    p = params.replace(bc=bc)
    A = p.laplacian() if A is None else A
    D = assemble_fourth_order_direct(A, p)
    return LinearGenerator(D, shift_constant(bc, p), p, unknown_weights(p))


def matrix_generator(G, shift: float = 0.0) -> LinearGenerator:
    return LinearGenerator(as_matrix(G), float(shift))


def _resolve_generator(bc, params, generator):
    if generator is not None:
        return generator
    if params is None:
        raise ValueError("either params or a generator is required")
    return direct_generator(bc, params)


# --- linear solver -------------------------------------------------------------

QUADRATURES = ("trapezoid", "linear")


def mild_solution(bc: int | None, params: ModelParams | None, u0, f: SpaceTimeFunction | None,
                  t: np.ndarray | None = None, generator: LinearGenerator | None = None,
                  quadrature: str = "trapezoid", shifted: bool = True) -> SpaceTimeFunction:
    """Variation-of-constants solution of ``u' = A_i u + f``, ``u(0) = u0``.

    Parameters
    ----------
    bc, params
        Boundary-condition kind and model; ignored when ``generator`` is given.
    u0
        Initial frame (:class:`GridFunction`, grid array or bare vector).
    f
        Forcing on the time grid, or ``None`` for zero forcing (then ``t`` is
        required).
    quadrature
        ``trapezoid``: ``v_{j+1} = E v_j + dt/2 (E g_j + g_{j+1})``.
        ``linear``: exact integral of the piecewise-linear interpolant of
        ``g`` through ``phi1``/``phi2`` of the step exponential.
    shifted
        Propagate ``v = e^{-Ct} u`` with ``A_i - C I`` and map back
        (default), or step ``u`` with ``A_i`` directly.

    Returns
    -------
    SpaceTimeFunction
        The solution frames on the grid of ``f`` (or ``t``).
    """
    gen = _resolve_generator(bc, params, generator)
    if quadrature not in QUADRATURES:
        raise ValueError(f"quadrature must be one of {QUADRATURES}")
    if f is not None:
        t = f.t
    if t is None:
        raise ValueError("a time grid is required when f is None")
    t = np.asarray(t, dtype=float)
    nt = t.size - 1
    dt = float(t[1] - t[0])
    C = gen.shift if shifted else 0.0
    v = np.zeros((nt + 1, gen.dim), dtype=np.complex128)
    v[0] = gen.to_vec(u0)
    if f is None:
        g = np.zeros_like(v)
    else:
        if gen.params is not None and f.x is not None and f.x.size != gen.params.n:
            raise GridMismatch("forcing and model grid differ")
        g = np.stack([gen.to_vec(fr) for fr in f.values]) * np.exp(-C * t)[:, None]
    if quadrature == "trapezoid":
        E = gen.exp(dt, shifted)
        for j in range(nt):
            v[j + 1] = E @ (v[j] + 0.5 * dt * g[j]) + 0.5 * dt * g[j + 1]
    else:
        E, P1, P2 = gen.phi12(dt, shifted)
        Wa = dt * (P1 - P2)
        Wb = dt * P2
        for j in range(nt):
            v[j + 1] = E @ v[j] + Wa @ g[j] + Wb @ g[j + 1]
    u = v * np.exp(C * t)[:, None]
    frames = np.stack([gen.to_frame(row) for row in u])
    x = gen.params.x_nodes() if gen.params is not None else None
    return SpaceTimeFunction(t, frames, x)


def _vecs(gen: LinearGenerator, F: SpaceTimeFunction) -> np.ndarray:
    return np.stack([gen.to_vec(fr) for fr in F.values])


def lp_time(gen: LinearGenerator, vecs: np.ndarray, dt: float, p: float) -> float:
    """``L^p(0, T; X)`` norm of rows sampled on a uniform grid (trapezoid)."""
    nrm = gen.norm(vecs) ** p
    w = np.full(nrm.size, dt)
    w[0] = w[-1] = 0.5 * dt
    return float(np.sum(w * nrm) ** (1 / p))


def equation_residual(u: SpaceTimeFunction, f: SpaceTimeFunction | None,
                      gen: LinearGenerator) -> float:
    """``L^2``-in-time norm of ``(u_{j+1} - u_j)/dt - A u_j - f_j``."""
    U = _vecs(gen, u)
    Fv = np.zeros_like(U) if f is None else _vecs(gen, f)
    dt = u.dt
    R = (U[1:] - U[:-1]) / dt - U[:-1] @ gen.matrix.T - Fv[:-1]
    return float(math.sqrt(dt * np.sum(gen.norm(R) ** 2)))


def max_regularity_ratio(bc: int, params: ModelParams, f_samples, T_final: float = 1.0,
                         nt: int = 200, p: float = 2.0, quadrature: str = "linear",
                         refine: bool = True) -> CertReport:
    """``(||u'||_p + ||A_i u||_p) / ||f||_p`` with ``u(0) = 0`` per forcing sample.

    ``f_samples`` are callables for :func:`sample_space_time`. ``u'`` is
    taken from second-order finite differences of the computed frames. With
    ``refine`` the study is repeated with ``dt/2`` and ``2n - 1`` nodes; the
    verdict requires the max ratio to move by less than a factor 2.
    """

    def ratios(par, ntt):
        gen = direct_generator(bc, par)
        t = time_grid(T_final, ntt)
        out = []
        for fn in f_samples:
            F = sample_space_time(par, t, fn)
            Fv = _vecs(gen, F)
            fn_norm = lp_time(gen, Fv, t[1] - t[0], p)
            if fn_norm == 0.0:
                out.append(0.0)
                continue
            u = mild_solution(bc, par, GridFunction(F.x, np.zeros_like(F.values[0])), F,
                              generator=gen, quadrature=quadrature)
            U = _vecs(gen, u)
            dU = np.gradient(U, t, axis=0, edge_order=2)
            AU = U @ gen.matrix.T
            dt = t[1] - t[0]
            out.append((lp_time(gen, dU, dt, p) + lp_time(gen, AU, dt, p)) / fn_norm)
        return out

    base = ratios(params, nt)
    meta = {"bc": bc, "p": p, "nt": nt, "n": params.n, "quadrature": quadrature}
    ok = True
    if refine:
        fine = ratios(params.replace(n=2 * params.n - 1), 2 * nt)
        meta["refined_ratios"] = fine
        b, r = max(base), max(fine)
        ok = (b == 0.0 and r == 0.0) or (b > 0 and 0.5 <= r / b <= 2.0)
    return CertReport("max_regularity_ratio", list(range(len(base))), base,
                      fit_C=float(max(base)), tolerance=2.0, verdict=bool(ok), metadata=meta)


# --- semilinear problem ----------------------------------------------------------

def lactate_F(params: ModelParams, t: float, u, u_norm: float):
    """``k1 u / (k2 + u_norm)`` with the space-time norm frozen by the caller."""
    if u_norm < 0:
        raise ValueError("u_norm must be non-negative")
    kappa = params.k1 / (params.k2 + u_norm)
    if isinstance(u, GridFunction):
        return GridFunction(u.x, kappa * u.values)
    return kappa * np.asarray(u)


def spacetime_lp(params: ModelParams, u: SpaceTimeFunction, p: float | None = None) -> float:
    """Discrete ``L^p((0, T) x (a, b) x omega)`` norm, trapezoid in ``t`` and ``x``."""
    p = params.p if p is None else p
    wt = np.full(u.t.size, u.dt)
    wt[0] = wt[-1] = 0.5 * u.dt
    wx = np.full(params.n, params.h)
    wx[0] = wx[-1] = 0.5 * params.h
    hw = params.omega_length / (params.m + 1)
    s = np.einsum("t,x,txm->", wt, wx, np.abs(u.values) ** p) * hw
    return float(s ** (1 / p))


# Block count for the Picard solve: the horizon is split until the linear
# contraction estimate k1/k2 * int ||e^{sA}|| ds per block drops below this.
SPLIT_THRESHOLD = 0.5


@dataclass
class PicardTrace:
    differences: list
    ratios: list
    norms: list
    blocks: int
    converged: bool

    def as_dict(self) -> dict:
        return {"differences": self.differences, "ratios": self.ratios,
                "norms": self.norms, "blocks": self.blocks, "converged": self.converged}


def _semigroup_integral(gen: LinearGenerator, T: float, pts: int = 17) -> float:
    """Trapezoid estimate of ``int_0^T ||e^{sA}|| ds`` (norm in the grid metric)."""
    ts = np.linspace(0, T, pts)
    sw = np.sqrt(np.ones(gen.dim) if gen.weights is None else gen.weights)
    vals = [np.linalg.norm(sw[:, None] * gen.exp(s, shifted=False) / sw[None, :], 2) for s in ts]
    return float(np.trapezoid(vals, ts))


def picard_semilinear(bc: int, params: ModelParams, u0, T_final: float = 1.0,
                      tol: float = 1e-10, max_iter: int = 100, nt: int = 200,
                      generator: LinearGenerator | None = None,
                      split_threshold: float = SPLIT_THRESHOLD):
    """Global solution of ``u' = A_i u + k1 u / (k2 + ||u||_p)`` by Picard iteration.

    Each sweep freezes the space-time norm of the previous iterate, so the
    forcing is linear in ``u``. On one block the sweep is the plain map
    ``u <- mild(u0, F(u_prev))``. If the contraction estimate exceeds
    ``split_threshold`` the horizon is cut into blocks solved in sequence,
    each to convergence under the frozen norm, before the norm is updated.

    Returns
    -------
    (SpaceTimeFunction, PicardTrace)
        The last iterate and the sup-in-time differences between iterates.

    Raises
    ------
    NoConvergence
        After ``max_iter`` sweeps; the trace is attached as ``.trace``.
    """
    gen = _resolve_generator(bc, params, generator)
    t = time_grid(T_final, nt)
    dt = t[1] - t[0]
    q = params.k1 / params.k2 * _semigroup_integral(gen, T_final)
    blocks = min(nt, max(1, int(math.ceil(q / split_threshold))))
    while nt % blocks:
        blocks += 1
    u = mild_solution(bc, params, u0, None, t=t, generator=gen)
    diffs, norms = [], []
    U = _vecs(gen, u)

    def sup_diff(A_, B_):
        return float(np.max(gen.norm(A_ - B_)))

    for it in range(max_iter):
        N = spacetime_lp(params, u)
        norms.append(N)
        kappa = params.k1 / (params.k2 + N)
        if blocks == 1:
            Unew = _vecs(gen, mild_solution(bc, params, u0, u.scaled(kappa), generator=gen))
        else:
            Unew = np.empty_like(U)
            per = nt // blocks
            start = gen.to_vec(u0)
            for b in range(blocks):
                sl = slice(b * per, (b + 1) * per + 1)
                tb = t[sl] - t[sl][0]
                Wb = U[sl].copy()
                for _ in range(max_iter):
                    Fb = SpaceTimeFunction(tb, kappa * Wb)
                    bare = _bare(gen)
                    Wn = _vecs(bare, mild_solution(None, None, start, Fb, generator=bare))
                    done = sup_diff(Wn, Wb) <= 0.1 * tol
                    Wb = Wn
                    if done:
                        break
                Unew[sl] = Wb
                start = Wb[-1]
        d = sup_diff(Unew, U)
        diffs.append(d)
        U = Unew
        u = SpaceTimeFunction(t, np.stack([gen.to_frame(r) for r in U]), u.x)
        if d <= tol:
            ratios = [diffs[i + 1] / diffs[i] for i in range(len(diffs) - 1) if diffs[i] > 0]
            return u, PicardTrace(diffs, ratios, norms, blocks, True)
    ratios = [diffs[i + 1] / diffs[i] for i in range(len(diffs) - 1) if diffs[i] > 0]
    trace = PicardTrace(diffs, ratios, norms, blocks, False)
    err = NoConvergence(f"Picard iteration did not reach tol={tol} in {max_iter} sweeps")
    err.trace = trace
    raise err


def _bare(gen: LinearGenerator) -> LinearGenerator:
    """Same generator acting on unknown vectors directly (shares the cache)."""
    return LinearGenerator(gen.matrix, gen.shift, None, gen.weights, gen._cache)


def semilinear_reference(bc: int, params: ModelParams, u0, T_final: float = 1.0,
                         nt: int = 200, generator: LinearGenerator | None = None,
                         substeps: int | None = None) -> SpaceTimeFunction:
    """Independent solution by explicit RK4 for ``w' = A_i w`` plus a scalar
    fixed point for the frozen norm.

    With ``F = kappa u`` and ``kappa = k1/(k2 + N)`` constant in time,
    ``u = e^{kappa t} w``; ``N`` solves ``N = ||e^{kappa(N) t} w||_p``.
    The RK4 step is ``2.5 / rho(A_i)`` or smaller.
    """
    gen = _resolve_generator(bc, params, generator)
    t = time_grid(T_final, nt)
    dt = t[1] - t[0]
    rho = float(np.max(np.abs(np.linalg.eigvals(gen.matrix))))
    if substeps is None:
        substeps = max(1, int(math.ceil(dt * rho / 2.5)))
    hs = dt / substeps
    G = gen.matrix
    w = np.empty((nt + 1, gen.dim), dtype=np.complex128)
    w[0] = gen.to_vec(u0)
    y = w[0].copy()
    for j in range(nt):
        for _ in range(substeps):
            k1 = G @ y
            k2 = G @ (y + 0.5 * hs * k1)
            k3 = G @ (y + 0.5 * hs * k2)
            k4 = G @ (y + hs * k3)
            y = y + hs / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        w[j + 1] = y
    W = SpaceTimeFunction(t, np.stack([gen.to_frame(r) for r in w]), params.x_nodes())

    def resid(N):
        kap = params.k1 / (params.k2 + N)
        return N - spacetime_lp(params, W.scaled(np.exp(kap * t)[:, None, None]))

    lo, hi = 0.0, spacetime_lp(params, W) * math.exp(params.k1 / params.k2 * T_final) + 1.0
    N = brentq(resid, lo, hi, xtol=1e-15, rtol=1e-14) if resid(lo) < 0 else 0.0
    kap = params.k1 / (params.k2 + N)
    return W.scaled(np.exp(kap * t)[:, None, None])


# --- trace-space diagnostic -------------------------------------------------------

def _graded_time_nodes(lmax: float, T: float = 1.0, per_panel: int = 16):
    t0 = min(T, 1e-3 / max(lmax, 1e-300))
    br = np.concatenate([[0.0], np.geomspace(t0, T, max(2, int(math.ceil(math.log2(T / t0))) + 1))])
    x, w = np.polynomial.legendre.leggauss(per_panel)
    nodes, weights = [], []
    for a, b in zip(br[:-1], br[1:]):
        nodes.append(0.5 * (a + b) + 0.5 * (b - a) * x)
        weights.append(0.5 * (b - a) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def trace_norm(gen: LinearGenerator, u0, p: float = 2.0) -> float:
    """``(int_0^1 ||G e^{tG} u0||^p dt)^{1/p}`` with ``G = A_i - C I``."""
    G = gen.matrix - gen.shift * np.eye(gen.dim)
    v0 = gen.to_vec(u0)
    if not np.any(v0):
        return 0.0
    lam, V = np.linalg.eig(G)
    if np.linalg.cond(V) > 1e8:
        raise IllConditionedEigenbasis("eigenbasis too ill-conditioned for the trace diagnostic")
    if np.max(lam.real) >= 0:
        raise UnstableGenerator("shifted generator is not stable")
    c = np.linalg.solve(V, v0)
    tn, tw = _graded_time_nodes(float(np.max(np.abs(lam))))
    Y = (lam * c)[None, :] * np.exp(np.outer(tn, lam))
    vals = gen.norm(Y @ V.T) ** p
    return float(np.sum(tw * vals) ** (1 / p))


def trace_diagnostic(bc: int, params: ModelParams, u0, p: float = 2.0,
                     levels: int = 3, growth_tol: float = 1.25) -> CertReport:
    """Trace-space surrogate ``N(u0)`` and its growth under ``n -> 2n - 1``.

    ``u0`` is a callable ``x -> (n, m)`` array so it can be resampled. The
    verdict (``bounded``) holds when the last refinement grows ``N`` by
    less than ``growth_tol``.
    """
    Ns, ns = [], []
    par = params
    for _ in range(levels):
        gen = direct_generator(bc, par)
        vals = np.asarray(u0(par.x_nodes()), dtype=np.complex128)
        Ns.append(trace_norm(gen, vals, p))
        ns.append(par.n)
        par = par.replace(n=2 * par.n - 1)
    growth = [Ns[i + 1] / Ns[i] if Ns[i] > 0 else 1.0 for i in range(len(Ns) - 1)]
    bounded = bool(not growth or growth[-1] < growth_tol)
    return CertReport("trace_norm", ns, Ns, fit_C=Ns[-1], tolerance=growth_tol,
                      verdict=bounded, metadata={"bc": bc, "p": p, "growth": growth,
                                                 "flag": "bounded" if bounded else "growing"})
