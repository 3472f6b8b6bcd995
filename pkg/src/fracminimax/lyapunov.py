"""Lyapunov-Krasovskii functionals for Caputo-order dynamics.

The basic building block is the tempered fractional integral

    V_{gamma,mu}(t, r) = 1/Gamma(1-gamma) * int_0^t exp(-mu (t-tau)^gamma) (t-tau)^(-gamma) r(tau) dtau,

evaluated by product integration with exact kernel moments (incomplete gamma
functions), so piecewise-linear ``r`` is integrated without quadrature error.
On top of it sit ``V*_{beta,mu}`` (the tempered integral of ``I^beta q`` with
``q = |w - w(0)|^2``), the averaged and discounted ``V_*``, and the
penalty functional ``V_eps`` with its companions ``p_eps`` and ``s_eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple, Optional, Tuple

import numpy as np
from scipy import integrate, special

from . import kernels
from .fraccalc import AcPath, Grid, SampledPath, rl_integral
from .pathspace import PathPoint, as_point, modulus_of_continuity


class LyapunovError(ValueError):
    pass


# ---------------------------------------------------------------------------
# kernel weights


def _gamma_moment_diff(p, gamma, mu, lo, hi):
    """``int_lo^hi s^p exp(-mu s^gamma) ds`` for arrays of cell edges."""
    a = (p + 1.0) / gamma
    ulo = mu * lo**gamma
    uhi = mu * hi**gamma
    pref = mu ** (-a) / gamma * special.gamma(a)
    lower = special.gammainc(a, uhi) - special.gammainc(a, ulo)
    upper = special.gammaincc(a, ulo) - special.gammaincc(a, uhi)
    # take whichever regularised tail avoids cancellation
    return pref * np.where(ulo > a, upper, lower)


@lru_cache(maxsize=128)
def _tempered_weights(gamma: float, mu: float, M: int, h: float):
    m = np.arange(M + 1, dtype=np.float64)
    lo = np.maximum(m - 1.0, 0.0) * h
    hi = m * h
    g = math.gamma(1.0 - gamma)
    k0 = _gamma_moment_diff(-gamma, gamma, mu, lo, hi) / g
    k1 = _gamma_moment_diff(1.0 - gamma, gamma, mu, lo, hi) / g
    A = (k1 - lo * k0) / h
    B = (hi * k0 - k1) / h
    A[0] = B[0] = 0.0
    A.setflags(write=False)
    B.setflags(write=False)
    return A, B


def tempered_weights(gamma: float, mu: float, M: int, h: float):
    """Product-trapezoid weights for the kernel ``exp(-mu s^gamma) s^(-gamma) / Gamma(1-gamma)``."""
    return _tempered_weights(float(gamma), float(mu), int(M), float(h))


def _phi(u):
    """``(1 - exp(-u)(1 + u)) / u^2`` without cancellation for small ``u``."""
    u = np.asarray(u, dtype=np.float64)
    out = np.empty_like(u)
    small = u < 0.1
    us = u[small]
    acc = np.zeros_like(us)
    term = np.ones_like(us)  # u^(k-2) / k! * k!, built incrementally below
    fact = 2.0
    for k in range(2, 16):
        if k > 2:
            term = term * us
            fact *= k
        acc += (-1.0) ** k * (k - 1) * term / fact
    out[small] = acc
    ub = u[~small]
    out[~small] = (-np.expm1(-ub) - ub * np.exp(-ub)) / ub**2
    return out


def aux_M(theta, gamma: float, mu: float):
    """``M(theta) = 1/gamma - (1 - exp(-mu theta^gamma)) / (gamma mu theta^gamma)``."""
    u = mu * np.asarray(theta, dtype=np.float64) ** gamma
    with np.errstate(divide="ignore", invalid="ignore"):
        big = 1.0 / gamma - (-np.expm1(-u)) / (gamma * u)
    # small u: M ~ u/(2 gamma) - u^2/(6 gamma) + ...
    series = (u / 2.0 - u**2 / 6.0 + u**3 / 24.0 - u**4 / 120.0) / gamma
    return np.where(u < 1e-3, series, big)


def aux_M_dot(theta, gamma: float, mu: float):
    """Derivative of :func:`aux_M`: ``theta^(gamma-1) * mu * phi(mu theta^gamma)``."""
    theta = np.asarray(theta, dtype=np.float64)
    return theta ** (gamma - 1.0) * mu * _phi(mu * theta**gamma)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


@lru_cache(maxsize=64)
def _mdot_weights(gamma: float, mu: float, M: int, h: float):
    A = np.zeros(M + 1)
    B = np.zeros(M + 1)
    if M >= 1:
        # first cell: algebraic singularity theta^(gamma-1) handled by QUADPACK's weighted rule
        def g(th):
            return mu * _phi(np.array([mu * th**gamma]))[0]

        opts = dict(weight="alg", wvar=(gamma - 1.0, 0.0), epsabs=0.0, epsrel=1e-13, limit=200)
        A[1] = integrate.quad(lambda th: g(th) * th / h, 0.0, h, **opts)[0]
        B[1] = integrate.quad(lambda th: g(th) * (h - th) / h, 0.0, h, **opts)[0]
    if M >= 2:
        m = np.arange(2, M + 1, dtype=np.float64)[:, None]
        xi = 0.5 * (_GL_X + 1.0)[None, :]
        w = 0.5 * _GL_W[None, :] * h
        theta = (m - 1.0 + xi) * h
        k = aux_M_dot(theta, gamma, mu)
        A[2:] = np.sum(w * k * xi, axis=1)
        B[2:] = np.sum(w * k * (1.0 - xi), axis=1)
    A.setflags(write=False)
    B.setflags(write=False)
    return A, B


# ---------------------------------------------------------------------------
# V_{gamma, mu}


def _scalar_values(r) -> Tuple[np.ndarray, Grid]:
    if isinstance(r, AcPath):
        path = r.realize()
    elif isinstance(r, PathPoint):
        path = r.path
    elif isinstance(r, SampledPath):
        path = r
    else:
        raise TypeError(f"unsupported path type {type(r).__name__}")
    if path.dim != 1:
        raise LyapunovError("a scalar path is required")
    return path.values, path.grid


def _check_gamma_mu(gamma, mu):
    if not 0.0 < gamma < 1.0:
        raise LyapunovError(f"gamma must lie in (0, 1), got {gamma}")
    if not mu > 0.0:
        raise LyapunovError(f"mu must be positive, got {mu}")


def V_gamma_mu_series(values: np.ndarray, grid: Grid, gamma: float, mu: float) -> np.ndarray:
    """``V_{gamma,mu}(t_j, r)`` for every node ``j`` of the scalar nodal data ``values``."""
    _check_gamma_mu(gamma, mu)
    v = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    A, B = tempered_weights(gamma, mu, v.shape[0] - 1, grid.h)
    return kernels.product_apply(A, B, v)[:, 0]


def V_gamma_mu(r, gamma: float, mu: float) -> float:
    """Tempered fractional integral of a scalar path at its last node."""
    values, grid = _scalar_values(r)
    return float(V_gamma_mu_series(values, grid, gamma, mu)[-1])


def V_dot_explicit_series(r: AcPath, gamma: float, mu: float) -> np.ndarray:
    """Time derivative of ``t -> V_{gamma,mu}(t, r_t)`` at every node.

    Uses ``D^gamma r - mu r / Gamma(1-gamma) + mu gamma / Gamma(1-gamma) * int M'(t-tau) r(tau) dtau``,
    which is the double-integral form with its inner integral done in
    closed form.  ``r`` must be a scalar AC^gamma path starting at 0.
    """
    _check_gamma_mu(gamma, mu)
    if not isinstance(r, AcPath) or abs(r.alpha - gamma) > 1e-15:
        raise LyapunovError("r must be an AcPath of order gamma")
    if r.dim != 1:
        raise LyapunovError("a scalar path is required")
    if abs(r.x0[0]) > 1e-14:
        raise LyapunovError("r(0) must vanish")
    vals = r.realize().values
    grid = r.grid
    A, B = _mdot_weights(float(gamma), float(mu), vals.shape[0] - 1, grid.h)
    mem = kernels.product_apply(A, B, vals)[:, 0]
    g = math.gamma(1.0 - gamma)
    return r.generator.values[:, 0] - mu / g * vals[:, 0] + mu * gamma / g * mem


def V_dot_explicit(r: AcPath, gamma: float, mu: float, t_index: Optional[int] = None) -> float:
    j = r.last_index if t_index is None else t_index
    return float(V_dot_explicit_series(r, gamma, mu)[j])


def V_dot_upper_series(r: AcPath, gamma: float, mu: float) -> np.ndarray:
    """Upper estimate of the derivative valid for nonnegative ``r``."""
    vals = r.realize().values
    g = math.gamma(1.0 - gamma)
    Ir = rl_integral(r.realize(), gamma).values[:, 0]
    return (
        r.generator.values[:, 0]
        - mu / g * vals[:, 0]
        + mu**2 * math.gamma(gamma + 1.0) / (2.0 * g) * Ir
    )


def V_continuity_bound(p: PathPoint, q: PathPoint, gamma: float, T: float) -> float:
    """Explicit modulus bounding ``|V(p) - V(q)|`` for scalar points ``p, q``.

    ``R/Gamma(2-gamma) d^(1-gamma) + T^(1-gamma)/Gamma(2-gamma) (d + 2 k(d))``
    with ``d`` the distance of the points, ``R`` their sup norm and ``k``
    the larger of their moduli of continuity.
    """
    from .pathspace import dist

    d = dist(p, q)
    R = max(float(np.max(np.abs(p.values))), float(np.max(np.abs(q.values))))
    k = max(modulus_of_continuity(p, d), modulus_of_continuity(q, d))
    g2 = math.gamma(2.0 - gamma)
    return R / g2 * d ** (1.0 - gamma) + T ** (1.0 - gamma) / g2 * (d + 2.0 * k)


# ---------------------------------------------------------------------------
# V*_{beta, mu}


def q_path(p) -> SampledPath:
    """``q(tau) = |w(tau) - w(0)|^2`` at the nodes of ``p``."""
    p = as_point(p)
    d = p.values - p.values[0]
    return SampledPath(p.grid, np.sum(d * d, axis=1))


def V_star_beta_mu_series(q: np.ndarray, grid: Grid, beta: float, mu: float, alpha: float) -> np.ndarray:
    """``V*_{beta,mu}`` along the restrictions of one path, given its ``q`` at every node."""
    if not 0.0 <= beta < 1.0 - alpha:
        raise LyapunovError(f"beta must lie in [0, 1 - alpha), got {beta}")
    r = np.asarray(q, dtype=np.float64).reshape(-1, 1)
    if beta > 0.0:
        r = rl_integral(SampledPath(grid, r), beta).values
    return V_gamma_mu_series(r, grid, alpha + beta, mu)


def V_star_beta_mu(p, beta: float, mu: float, alpha: float) -> float:
    p = as_point(p)
    return float(V_star_beta_mu_series(q_path(p).values, p.grid, beta, mu, alpha)[-1])


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class LyapunovParams:
    """Constants of the averaged functional ``V_*`` and of ``V_eps``."""

    alpha: float
    lam: float
    m: int
    betas: Tuple[float, ...]
    mus: Tuple[float, ...]
    lam_star: float
    T: float
    R: float
    lambda_H: float
    eps0: float

    def as_dict(self):
        return {
            "alpha": self.alpha,
            "lambda": self.lam,
            "m": self.m,
            "betas": list(self.betas),
            "mus": list(self.mus),
            "lambda_star": self.lam_star,
            "T": self.T,
            "R": self.R,
            "lambda_H": self.lambda_H,
            "eps0": self.eps0,
        }


def level_count(alpha: float) -> int:
    """Smallest ``m`` with ``alpha >= 2^-m``."""
    if not 0.0 < alpha < 1.0:
        raise LyapunovError("alpha must lie in (0, 1)")
    m = 1
    while alpha < 2.0**-m:
        m += 1
    return m


def tower_constants(alpha: float, lam: float, T: float):
    """``(m, betas, mus, lambda_star)`` for dissipation rate ``lam`` on ``[0, T]``."""
    m = level_count(alpha)
    G = math.gamma
    betas = tuple((2.0 ** (i - 1) - 1.0) * alpha for i in range(1, m + 1))
    mus = [m * G(1.0 - alpha) * lam]
    for i in range(m - 1):
        b, b1 = betas[i], betas[i + 1]
        mus.append(mus[i] ** 2 * G(alpha + b + 1.0) * G(1.0 - alpha - b1) / (2.0 * G(1.0 - alpha - b)))
    bm = betas[-1]
    try:
        lam_star = (
            mus[-1] ** 2
            * G(alpha + bm + 1.0)
            * G(1.0 - alpha)
            * T ** (2.0 * alpha + 2.0 * bm - 1.0)
            / (2.0 * G(1.0 - alpha - bm) * G(alpha + 2.0 * bm))
            * math.exp(mus[0] * T**alpha)
        )
    except OverflowError as exc:
        raise LyapunovError("overflow while computing the discount rate") from exc
    if not math.isfinite(lam_star):
        raise LyapunovError("discount rate is not finite")
    return m, betas, tuple(mus), lam_star


def build_lyapunov_params(
    alpha: float,
    lambda_H_of_R: Callable[[float], float],
    R: float,
    T: float,
    lam: Optional[float] = None,
) -> LyapunovParams:
    """Constants for radius ``R``; the dissipation rate defaults to ``4 lambda_H(R)``."""
    if not (R > 0 and T > 0):
        raise LyapunovError("R and T must be positive")
    lH = float(lambda_H_of_R(R))
    if not lH > 0:
        raise LyapunovError("lambda_H(R) must be positive")
    lam = 4.0 * lH if lam is None else float(lam)
    if not lam > 0:
        raise LyapunovError("lambda must be positive")
    m, betas, mus, lam_star = tower_constants(alpha, lam, T)
    eps0 = 2.0 * math.exp(-(lH + lam_star / 2.0) * T)
    return LyapunovParams(float(alpha), lam, m, betas, mus, lam_star, float(T), float(R), lH, eps0)


# ---------------------------------------------------------------------------
# V_*


def V_star_series(values: np.ndarray, grid: Grid, params: LyapunovParams) -> np.ndarray:
    """``V_*(t_j, w_{t_j})`` for every node of one path given by its nodal ``values``."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim == 1:
        vals = vals[:, None]
    d = vals - vals[0]
    q = np.sum(d * d, axis=1)
    total = np.zeros(q.shape[0])
    for b, mu in zip(params.betas, params.mus):
        total += V_star_beta_mu_series(q, grid, b, mu, params.alpha)
    t = grid.nodes(q.shape[0] - 1)
    return np.exp(-params.lam_star * t) / params.m * total


def _check_params(p: PathPoint, params: LyapunovParams):
    if abs(p.grid.T - params.T) > 1e-12 * params.T:
        raise LyapunovError("parameters were built for a different horizon")


def V_star(p, params: LyapunovParams) -> float:
    p = as_point(p)
    _check_params(p, params)
    return float(V_star_series(p.values, p.grid, params)[-1])


class DissipationResult(NamedTuple):
    max_residual: float
    residual: np.ndarray  # one value per cell [t_j, t_j+1]
    v_star: np.ndarray


def dissipation_residual(x: AcPath, params: LyapunovParams) -> DissipationResult:
    """Excess of the derivative of ``V_*`` along ``x`` over its dissipation bound.

    The bound is ``exp(-lambda_* t) (2 <x - x(0), D^alpha x> - lambda |x - x(0)|^2)``
    with the generator of ``x`` as ``D^alpha x``.  Both sides are compared
    cell by cell at the half nodes: the difference quotient of ``V_*`` over
    ``[t_j, t_j+1]`` against the trapezoid mean of the bound over the same
    cell.  This keeps the comparison central and second order while never
    straddling a cell where the generator changes quickly.
    """
    if abs(x.alpha - params.alpha) > 1e-15:
        raise LyapunovError("path order differs from the parameters")
    grid = x.grid
    if abs(grid.T - params.T) > 1e-12 * params.T:
        raise LyapunovError("parameters were built for a different horizon")
    vals = x.realize().values
    v = V_star_series(vals, grid, params)
    dv = np.diff(v) / grid.h
    d = vals - vals[0]
    psi = x.generator.values
    t = grid.nodes(vals.shape[0] - 1)
    rhs = np.exp(-params.lam_star * t) * (2.0 * np.sum(d * psi, axis=1) - params.lam * np.sum(d * d, axis=1))
    res = dv - 0.5 * (rhs[1:] + rhs[:-1])
    return DissipationResult(float(np.max(res)) if res.size else 0.0, res, v)


class CalibratedCheck(NamedTuple):
    max_residual: float
    tol: float
    tol_refined: float
    shrink: float
    passed: bool
    sup_gap: float


def _doubling_gaps(res_coarse, res_fine, T):
    """Mean and max absolute change of the cell residuals under one grid doubling."""
    # a coarse cell is the union of two fine cells; compare with their mean
    fine = 0.5 * (res_fine[0::2] + res_fine[1::2])
    gap = np.abs(res_coarse - fine[: res_coarse.shape[0]])
    h = T / res_coarse.shape[0]
    return float(h * np.sum(gap) / T), float(np.max(gap))


def calibrated_dissipation(make_path: Callable[[Grid], AcPath], params: LyapunovParams, N: int, C: float = 4.0) -> CalibratedCheck:
    """Dissipation check with tolerance from grid refinement.

    ``make_path(grid)`` must sample the same continuous-time generator on any
    grid.  The tolerance on grid ``N`` is ``C`` times the time-averaged change
    of the cell residuals between ``N`` and ``2N``; the same quantity between
    ``2N`` and ``4N`` is ``tol_refined``.  The averaged change is used because
    the pointwise change decays only like ``h^alpha`` on the first cell and
    not at all on cells where the generator has a kink; ``sup_gap`` reports
    the pointwise change for reference.
    """
    T = params.T
    res = [dissipation_residual(make_path(Grid(T, N * k)), params).residual for k in (1, 2, 4)]
    g1, sup1 = _doubling_gaps(res[0], res[1], T)
    g2, _ = _doubling_gaps(res[1], res[2], T)
    tol, tol2 = C * g1, C * g2
    mx = float(np.max(res[0]))
    shrink = tol / tol2 if tol2 > 0 else math.inf
    return CalibratedCheck(mx, tol, tol2, shrink, mx <= tol, C * sup1)


# ---------------------------------------------------------------------------
# V_eps and companions


def _check_eps(eps, params):
    if not 0.0 < eps <= params.eps0 * (1 + 1e-12):
        raise LyapunovError(f"eps must lie in (0, {params.eps0:.6g}], got {eps}")


def _eps_parts(delta, eps, params):
    p = as_point(delta)
    _check_params(p, params)
    _check_eps(eps, params)
    Vs = V_star(p, params)
    d = p.values[-1] - p.values[0]
    return p.t, Vs, d, math.sqrt(eps**4 + Vs)


def V_eps(delta, eps: float, params: LyapunovParams) -> float:
    t, _, _, rad = _eps_parts(delta, eps, params)
    return math.exp(-params.lambda_H * t) / eps * rad


def p_eps(delta, eps: float, params: LyapunovParams) -> float:
    t, _, d, rad = _eps_parts(delta, eps, params)
    lH = params.lambda_H
    return (
        -lH * math.exp(-lH * t) / eps * rad
        - 2.0 * lH * math.exp(-(lH + params.lam_star) * t) / eps * float(d @ d) / rad
    )


def s_eps(delta, eps: float, params: LyapunovParams) -> np.ndarray:
    t, _, d, rad = _eps_parts(delta, eps, params)
    return math.exp(-(params.lambda_H + params.lam_star) * t) / eps * d / rad


def V_eps_series(values: np.ndarray, grid: Grid, eps: float, params: LyapunovParams):
    """``(V_eps, p_eps, s_eps)`` along every restriction of one path."""
    _check_eps(eps, params)
    vals = np.asarray(values, dtype=np.float64)
    Vs = V_star_series(vals, grid, params)
    t = grid.nodes(vals.shape[0] - 1)
    lH, ls = params.lambda_H, params.lam_star
    rad = np.sqrt(eps**4 + Vs)
    d = vals - vals[0]
    V = np.exp(-lH * t) / eps * rad
    P = -lH * np.exp(-lH * t) / eps * rad - 2.0 * lH * np.exp(-(lH + ls) * t) / eps * np.sum(d * d, axis=1) / rad
    S = (np.exp(-(lH + ls) * t) / eps / rad)[:, None] * d
    return V, P, S


class CouplingResult(NamedTuple):
    residual: float
    completion: float
    completion_gap: float


def coupling_inequality_check(problem, w: PathPoint, w2: PathPoint, eps: float, params: LyapunovParams, tol: float = 1e-9) -> CouplingResult:
    """Evaluate ``p_eps(dw) + H(t, w2(t), s_eps(dw)) - H(t, w(t), s_eps(dw))`` for ``dw = w2 - w``.

    Also returns the normalised quadratic expression
    ``1 - eps e^(lambda_H t) a + e^(-lambda_* t) a^2`` (``a = |dw(t)| / sqrt(eps^4 + V_*)``)
    and its excess over ``(1 - e^(-lambda_* t / 2) a)^2``; both must be
    nonnegative.
    """
    if w.t_index != w2.t_index or w.dim != w2.dim:
        raise LyapunovError("points must share time and dimension")
    if np.max(np.abs(w.values[0] - w2.values[0])) > tol:
        raise LyapunovError("paths must share their initial value")
    R = params.R
    for p in (w, w2):
        if np.max(np.linalg.norm(p.values, axis=1)) > R * (1 + 1e-12):
            raise LyapunovError("path leaves the R-ball")
    delta = PathPoint(SampledPath(w.grid, w2.values - w.values))
    t = w.t
    s = s_eps(delta, eps, params)
    res = p_eps(delta, eps, params) + float(problem.H(t, w2.current, s)) - float(problem.H(t, w.current, s))
    _, _, d, rad = _eps_parts(delta, eps, params)
    a = math.sqrt(float(d @ d)) / rad
    expr = 1.0 - eps * math.exp(params.lambda_H * t) * a + math.exp(-params.lam_star * t) * a * a
    square = (1.0 - math.exp(-params.lam_star * t / 2.0) * a) ** 2
    return CouplingResult(res, expr, expr - square)


# ---------------------------------------------------------------------------
# order domination


def check_beta_domination(psi: SampledPath, beta: float, alpha: float, tol: float = 1e-10):
    """Check ``I^beta psi <= Gamma(1-alpha) T^(alpha+beta-1)/Gamma(beta) * I^(1-alpha) psi`` nodewise.

    Returns ``(holds, max excess)``.
    """
    if psi.dim != 1:
        raise LyapunovError("a scalar path is required")
    if np.any(psi.values < 0):
        raise LyapunovError("psi must be nonnegative")
    if beta < 1.0 - alpha:
        raise LyapunovError("beta must be at least 1 - alpha")
    if beta > 1.0:
        raise LyapunovError("orders above 1 are not supported")
    T = psi.grid.T
    lhs = rl_integral(psi, beta).values[:, 0]
    rhs = math.gamma(1.0 - alpha) * T ** (alpha + beta - 1.0) / math.gamma(beta) * rl_integral(psi, 1.0 - alpha).values[:, 0]
    excess = float(np.max(lhs - rhs))
    return excess <= tol * (1.0 + float(np.max(np.abs(rhs)))), excess
