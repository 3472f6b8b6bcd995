"""Caputo-order Cauchy problems with path history, and characteristics.

A characteristic from ``(t0, w0, z0)`` with parameter ``s`` is a pair
``(x, z)`` with ``x = w0`` and ``z = z0`` up to ``t0`` and afterwards

    D^alpha x = f,   |f| <= c_H (1 + |x|),   z' = <s, f> - H(t, x, s).

Trajectories are integrated by the fractional Adams-Bashforth-Moulton
predictor-corrector on the uniform grid; the history's generator is taken
as known data on ``[0, t0]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtri

from . import kernels
from .fraccalc import (
    AcPath,
    Grid,
    SampledPath,
    caputo_derivative,
    power_weights,
    rectangle_weights,
    rl_integral,
)
from .pathspace import PathPoint, restrict


class DynamicsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# problem data


def vectorize_hamiltonian(fn):
    """Lift a pointwise ``H(t, x, s) -> float`` to the broadcasting convention used here."""

    def H(t, x, s):
        x = np.asarray(x, dtype=np.float64)
        s = np.asarray(s, dtype=np.float64)
        lead = np.broadcast_shapes(np.shape(t), x.shape[:-1], s.shape[:-1])
        tb = np.broadcast_to(t, lead)
        xb = np.broadcast_to(x, lead + x.shape[-1:])
        sb = np.broadcast_to(s, lead + s.shape[-1:])
        out = np.empty(lead)
        for idx in np.ndindex(*lead):
            out[idx] = fn(float(tb[idx]), xb[idx], sb[idx])
        return out if lead else float(out)

    return H


@dataclass(frozen=True, eq=False)
class HamiltonianProblem:
    """Hamiltonian, terminal cost and the constants of the growth/Lipschitz assumptions.

    ``H(t, x, s)`` must broadcast: ``t`` of shape ``S``, ``x`` and ``s`` of
    shape ``S + (n,)`` (or ``(n,)``), returning shape ``S``.  ``sigma`` maps
    the nodal values of a full path, shape ``(N + 1, n)``, to a float.
    ``hints`` lists extra constant velocities (each within the ``c_H`` ball)
    that searches should try, e.g. a drift.
    """

    H: Callable
    sigma: Callable[[np.ndarray], float]
    c_H: float
    lambda_H: Callable[[float], float]
    alpha: float
    grid: Grid
    dim: int
    name: str = "custom"
    hints: Tuple[Tuple[float, ...], ...] = ()

    def __post_init__(self):
        if not self.c_H > 0:
            raise DynamicsError("c_H must be positive")
        if not 0 < self.alpha < 1:
            raise DynamicsError("alpha must lie in (0, 1)")
        for v in self.hints:
            if len(v) != self.dim or np.linalg.norm(v) > self.c_H * (1 + 1e-12):
                raise DynamicsError(f"hint velocity {v} is not admissible")

    def velocity_bound(self, x) -> np.ndarray:
        return self.c_H * (1.0 + np.linalg.norm(x, axis=-1))

    def sigma_of(self, path) -> float:
        vals = path.values if hasattr(path, "values") else np.asarray(path)
        return float(self.sigma(vals))


def spot_check_assumptions(problem: HamiltonianProblem, R: float = 2.0, samples: int = 200, seed: int = 0):
    """Sample the growth bound in ``s`` and the local Lipschitz bound in ``x``.

    Returns the largest observed ratio of each left side to its bound; both
    must be at most 1 for a well-posed problem.
    """
    rng = np.random.default_rng(seed)
    n = problem.dim
    T = problem.grid.T

    def ball(k):
        d = rng.normal(size=(k, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d * R * rng.uniform(size=(k, 1)) ** (1.0 / n)

    t = rng.uniform(0, T, samples)
    x, x2 = ball(samples), ball(samples)
    s, s2 = rng.normal(size=(samples, n)) * R, rng.normal(size=(samples, n)) * R
    H = problem.H
    gs = np.abs(H(t, x, s) - H(t, x, s2))
    bs = problem.c_H * (1 + np.linalg.norm(x, axis=1)) * np.linalg.norm(s - s2, axis=1)
    gx = np.abs(H(t, x, s) - H(t, x2, s))
    bx = problem.lambda_H(R) * (1 + np.linalg.norm(s, axis=1)) * np.linalg.norm(x - x2, axis=1)
    return float(np.max(gs / np.maximum(bs, 1e-300))), float(np.max(gx / np.maximum(bx, 1e-300)))


def estimate_lambda_H(H, dim: int, T: float, R: float, samples: int = 2000, seed: int = 0) -> float:
    """Sampled Lipschitz constant of ``H`` in ``x`` over the ``R``-ball, times 1.25."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, T, samples)
    x = rng.uniform(-1, 1, size=(samples, dim))
    x *= R / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), R)
    dx = rng.normal(size=(samples, dim)) * 1e-3 * R
    x2 = x + dx
    x2 *= R / np.maximum(np.linalg.norm(x2, axis=1, keepdims=True), R)
    s = rng.normal(size=(samples, dim)) * R
    q = np.abs(H(t, x, s) - H(t, x2, s)) / (
        (1 + np.linalg.norm(s, axis=1)) * np.maximum(np.linalg.norm(x - x2, axis=1), 1e-300)
    )
    return 1.25 * float(np.max(q))


# ---------------------------------------------------------------------------
# selections


@dataclass(frozen=True)
class Letter:
    """Velocity rule ``const + rho * c_H * (1 + |x|) * direction``."""

    const: Tuple[float, ...]
    direction: Tuple[float, ...]
    rho: float = 0.0

    def velocity(self, x, c_H):
        return np.asarray(self.const) + self.rho * c_H * (1.0 + np.linalg.norm(x)) * np.asarray(self.direction)

    def admissible(self, c_H) -> bool:
        # |const + rho c(1+r) d| <= c(1+r) for all r >= 0 iff it holds at r = 0 and
        # the direction term alone fits; checked on both ends of the ray
        c = np.asarray(self.const)
        d = np.asarray(self.direction)
        ok0 = np.linalg.norm(c + self.rho * c_H * d) <= c_H * (1 + 1e-12)
        return bool(ok0 and abs(self.rho) * np.linalg.norm(d) <= 1 + 1e-12)


def zero_letter(n: int) -> Letter:
    return Letter((0.0,) * n, (0.0,) * n, 0.0)


def directions(n: int, K: int) -> np.ndarray:
    """``K`` quasi-uniform unit directions in ``R^n``; ``n = 1`` gives ``{+1, -1}``.

    For ``n >= 2`` the sequence is prefix-nested: the first ``K`` directions
    are the same for every larger ``K``.
    """
    if K < 1:
        raise DynamicsError("need at least one direction")
    if n == 1:
        return np.array([[1.0], [-1.0]])
    k = np.arange(K, dtype=np.float64)
    if n == 2:
        ang = k * math.pi * (3.0 - math.sqrt(5.0))
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    # Kronecker sequence with generalised golden ratio, pushed through the
    # Gaussian quantile and normalised
    phi = 2.0
    for _ in range(64):
        phi = (1.0 + phi) ** (1.0 / (n + 1))
    a = phi ** -np.arange(1, n + 1)
    u = np.mod(0.5 + np.outer(k + 1, a), 1.0)
    g = ndtri(u)
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def policy_alphabet(problem: HamiltonianProblem, K: int, magnitudes=(0.5, 1.0)) -> Tuple[Letter, ...]:
    """Zero velocity, ``rho``-scaled extreme velocities and the problem's hint velocities."""
    n = problem.dim
    letters = [zero_letter(n)]
    for d in directions(n, K):
        for rho in magnitudes:
            letters.append(Letter((0.0,) * n, tuple(float(v) for v in d), float(rho)))
    for v in problem.hints:
        letters.append(Letter(tuple(float(c) for c in v), (0.0,) * n, 0.0))
    return tuple(letters)


@dataclass(frozen=True)
class SelectionPolicy:
    """Piecewise-constant directive on ``J`` equal pieces of ``[t0, T]``.

    Each entry of ``directives`` is a :class:`Letter` or a callable
    ``f(t, values) -> R^n`` receiving the nodal history up to the current node.
    A node on a piece boundary belongs to the later piece.
    """

    directives: Tuple

    @property
    def J(self) -> int:
        return len(self.directives)

    @property
    def letter_based(self) -> bool:
        return all(isinstance(d, Letter) for d in self.directives)


def piece_index(N: int, j0: int, J: int) -> np.ndarray:
    """Piece of each node; history nodes get ``-1``."""
    piece = np.full(N + 1, -1, dtype=np.int64)
    if j0 < N:
        j = np.arange(j0 + 1, N + 1)
        piece[j0 + 1 :] = np.minimum((j - j0) * J // (N - j0), J - 1)
    return piece


# ---------------------------------------------------------------------------
# characteristics


@dataclass(frozen=True, eq=False)
class Characteristic:
    """Trajectory ``x`` (through its generator) with cost ``z`` and its origin.

    ``f_start`` is the velocity selected at the start node.  The generator
    stores the history's value there, but the cost rate on the first cell
    uses the selection.
    """

    x: AcPath
    z: SampledPath
    t0_index: int
    z0: float
    s: np.ndarray
    f_start: Optional[np.ndarray] = None

    @property
    def path(self) -> SampledPath:
        return self.x.realize()

    @property
    def grid(self) -> Grid:
        return self.x.grid

    def point(self, j: int) -> PathPoint:
        return restrict(self.x, j)

    @property
    def z_values(self) -> np.ndarray:
        return self.z.values[:, 0]


def _with_values(x: AcPath, values: np.ndarray) -> AcPath:
    return AcPath(x.x0, x.generator, x.alpha, SampledPath(x.grid, values))


def history_generator(history: PathPoint, alpha: float, check_tol: float = 1e-2) -> SampledPath:
    """Generator of the history on ``[0, t0]``; exact when carried, otherwise recovered.

    Recovered generators are re-integrated and compared with the history; a
    mismatch above ``check_tol * (1 + max|w|)`` means the history is not
    usable as an AC^alpha path.
    """
    if history.generator is not None and history.alpha is not None and abs(history.alpha - alpha) < 1e-15:
        return history.generator
    if history.t_index == 0:
        return SampledPath(history.grid, np.zeros((1, history.dim)))
    gen = caputo_derivative(history.path, alpha)
    back = rl_integral(gen, alpha).values + history.values[0]
    err = float(np.max(np.abs(back - history.values)))
    scale = 1.0 + float(np.max(np.abs(history.values)))
    if not np.all(np.isfinite(gen.values)) or err > check_tol * scale:
        raise DynamicsError(f"history is not representable at order {alpha} (error {err:.3g})")
    return gen


def _trapezoid_z(z0, hz, j0, h):
    z = np.full(hz.shape, float(z0))
    if hz.shape[-1] > j0 + 1:
        inc = 0.5 * h * (hz[..., j0:-1] + hz[..., j0 + 1 :])
        z[..., j0 + 1 :] = z0 + np.cumsum(inc, axis=-1)
    return z


def solve_caputo_ivp(history: PathPoint, z0: float, rhs: Callable, problem: HamiltonianProblem, n_corr: int = 1):
    """PECE solution of ``D^alpha x = f``, ``z' = h`` where ``(f, h) = rhs(t, values)``.

    ``values`` passed to ``rhs`` are the nodal states up to and including
    the current node.  Returns a :class:`Characteristic` with ``s = None``.
    """
    grid = problem.grid
    alpha = problem.alpha
    if history.grid != grid:
        raise DynamicsError("history lives on a different grid")
    if not history.before_horizon:
        raise DynamicsError("history must end before the horizon")
    N, n, h = grid.N, history.dim, grid.h
    j0 = history.t_index
    gen = history_generator(history, alpha)
    A, B = power_weights(alpha, N, h)
    P = rectangle_weights(alpha, N, h)
    X = np.empty((N + 1, n))
    PSI = np.empty((N + 1, n))
    HZ = np.zeros(N + 1)
    X[: j0 + 1] = history.values
    PSI[: j0 + 1] = gen.values
    x0 = X[0]
    t = grid.nodes()

    def call(j, values):
        f, hz = rhs(t[j], values)
        f = np.asarray(f, dtype=np.float64).reshape(n)
        if not (np.all(np.isfinite(f)) and math.isfinite(hz)):
            raise DynamicsError(f"right-hand side is not finite at t = {t[j]}")
        return f, float(hz)

    f0, HZ[j0] = call(j0, X[: j0 + 1])
    if j0 == 0:
        PSI[0] = f0
    for j in range(j0 + 1, N + 1):
        past = PSI[j - 1 :: -1]
        hist = A[1 : j + 1] @ past
        if j >= 2:
            hist += B[2 : j + 1] @ PSI[j - 1 : 0 : -1]
        X[j] = x0 + P[1 : j + 1] @ past
        for _ in range(n_corr):
            f, _ = call(j, X[: j + 1])
            X[j] = x0 + hist + B[1] * f
        PSI[j], HZ[j] = call(j, X[: j + 1])
    z = _trapezoid_z(z0, HZ, j0, h)
    x = _with_values(AcPath(x0, SampledPath(grid, PSI), alpha), X)
    return Characteristic(x, SampledPath(grid, z), j0, float(z0), None, f0)


def characteristic_velocity_set(problem: HamiltonianProblem, t: float, x, s, K: int):
    """Finite sample of ``E(t, x, s)``: zero velocity and the extreme velocities."""
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    Hv = float(problem.H(t, x, s))
    out = [(np.zeros(problem.dim), -Hv)]
    r = problem.velocity_bound(x)
    for d in directions(problem.dim, K):
        f = r * d
        out.append((f, float(s @ f) - Hv))
    return out


def _letters_arrays(letters: Sequence[Letter], n: int):
    const = np.array([l.const for l in letters], dtype=np.float64).reshape(len(letters), n)
    dirs = np.array([l.direction for l in letters], dtype=np.float64).reshape(len(letters), n)
    rho = np.array([l.rho for l in letters], dtype=np.float64)
    return const, dirs, rho


@dataclass
class PolicyBatch:
    """Trajectories of many letter policies from one origin."""

    X: np.ndarray  # (P, N+1, n)
    PSI: np.ndarray  # (P, N+1, n)
    Z: np.ndarray  # (P, N+1)
    t0_index: int
    s: np.ndarray
    alpha: float
    grid: Grid
    z0: float = 0.0
    F0: Optional[np.ndarray] = None  # (P, n) velocity selected at the start node

    @property
    def end_index(self) -> int:
        return self.X.shape[1] - 1

    def characteristic(self, i: int) -> Characteristic:
        x = AcPath(self.X[i, 0], SampledPath(self.grid, self.PSI[i]), self.alpha)
        x = _with_values(x, self.X[i])
        f0 = None if self.F0 is None else self.F0[i]
        return Characteristic(x, SampledPath(self.grid, self.Z[i]), self.t0_index, self.z0, self.s, f0)


def integrate_policies(
    problem, history: PathPoint, s, letters: Sequence[Letter], policies, z0=0.0, n_corr=1, end_index=None
) -> PolicyBatch:
    """Integrate every row of ``policies`` (letter indices per piece) from ``history``.

    The pieces split ``[t0, t_end]`` where ``end_index`` defaults to the
    horizon; trajectories stop at ``end_index``.
    """
    grid = problem.grid
    if history.grid != grid:
        raise DynamicsError("history lives on a different grid")
    if not history.before_horizon:
        raise DynamicsError("history must end before the horizon")
    for l in letters:
        if not l.admissible(problem.c_H):
            raise DynamicsError(f"letter {l} violates the velocity bound")
    policies = np.atleast_2d(np.asarray(policies, dtype=np.int64))
    n, j0 = history.dim, history.t_index
    N = grid.N if end_index is None else int(end_index)
    if not j0 < N <= grid.N:
        raise DynamicsError(f"end index {N} must lie in {j0 + 1}..{grid.N}")
    s = np.asarray(s, dtype=np.float64).reshape(n)
    gen = history_generator(history, problem.alpha)
    const, dirs, rho = _letters_arrays(letters, n)
    A, B = power_weights(problem.alpha, N, grid.h)
    P = rectangle_weights(problem.alpha, N, grid.h)
    piece = piece_index(N, j0, policies.shape[1])
    X, PSI = _pece_with_seed(history.values, gen.values, A, B, P, policies, piece, const, dirs, rho, problem.c_H, n_corr)
    t = grid.nodes(N)
    hz = np.einsum("pjc,c->pj", PSI, s) - problem.H(t[None, :], X, s)
    # the first cell is driven by the selection, not by the history's generator
    first = policies[:, piece[j0 + 1]]
    xj0 = history.current
    F0 = const[first] + (rho[first] * problem.c_H * (1.0 + np.linalg.norm(xj0)))[:, None] * dirs[first]
    hz[:, j0] = F0 @ s - problem.H(t[j0], xj0, s)
    Z = _trapezoid_z(z0, hz, j0, grid.h)
    return PolicyBatch(X, PSI, Z, j0, s, problem.alpha, grid, float(z0), F0)


def _pece_with_seed(x_hist, psi_hist, A, B, P, policies, piece, const, dirs, rho, c_H, n_corr):
    if x_hist.shape[0] > 1:
        return kernels.pece_batch(x_hist, psi_hist, A, B, P, policies, piece, const, dirs, rho, c_H, n_corr)
    # a one-node history has no generator yet: seed node 0 with each policy's velocity
    first = policies[:, piece[1]]
    groups = {}
    for i, l in enumerate(first):
        groups.setdefault(int(l), []).append(i)
    n_pol, n_nodes, n = policies.shape[0], piece.shape[0], x_hist.shape[1]
    X = np.empty((n_pol, n_nodes, n))
    PSI = np.empty((n_pol, n_nodes, n))
    x0 = x_hist[0]
    for l, idx in groups.items():
        v = const[l] + rho[l] * c_H * (1.0 + np.linalg.norm(x0)) * dirs[l]
        Xi, Pi = kernels.pece_batch(x_hist, v[None, :], A, B, P, policies[idx], piece, const, dirs, rho, c_H, n_corr)
        X[idx], PSI[idx] = Xi, Pi
    return X, PSI


def integrate_characteristic(problem, history: PathPoint, z0: float, s, policy: SelectionPolicy, n_corr=1, tol=1e-9) -> Characteristic:
    """Characteristic driven by ``policy``; letter policies use the batched kernel."""
    s = np.asarray(s, dtype=np.float64).reshape(problem.dim)
    if policy.letter_based:
        letters = tuple(dict.fromkeys(policy.directives))
        row = [letters.index(d) for d in policy.directives]
        batch = integrate_policies(problem, history, s, letters, [row], z0, n_corr)
        return batch.characteristic(0)

    grid = problem.grid
    j0 = history.t_index
    piece = piece_index(grid.N, j0, policy.J)
    c_H = problem.c_H

    def rhs(t, values):
        j = values.shape[0] - 1
        k = max(piece[j], 0)
        d = policy.directives[k]
        x = values[-1]
        f = d.velocity(x, c_H) if isinstance(d, Letter) else np.asarray(d(t, values), dtype=np.float64)
        bound = c_H * (1.0 + np.linalg.norm(x))
        if np.linalg.norm(f) > bound * (1 + tol) + tol:
            raise DynamicsError(f"selection leaves the velocity ball at t = {t}")
        return f, float(s @ f - problem.H(t, x, s))

    ch = solve_caputo_ivp(history, z0, rhs, problem, n_corr)
    return Characteristic(ch.x, ch.z, ch.t0_index, ch.z0, s, ch.f_start)


def inclusion_residual(ch: Characteristic, problem: HamiltonianProblem) -> Tuple[float, float]:
    """Nodewise check of a characteristic after its start.

    Returns ``(velocity excess, cost-rate mismatch)``: the largest excess of
    ``|psi|`` over ``c_H (1 + |x|)`` and the largest gap between the ``z``
    increments and the trapezoid rule applied to ``<s, psi> - H``.
    """
    j0 = ch.t0_index
    X = ch.path.values
    PSI = ch.x.generator.values
    t = ch.grid.nodes(ch.path.last_index)
    excess = np.linalg.norm(PSI[j0 + 1 :], axis=1) - problem.velocity_bound(X[j0 + 1 :])
    hz = PSI @ ch.s - problem.H(t, X, ch.s)
    if ch.f_start is not None:
        hz[j0] = float(ch.f_start @ ch.s - problem.H(t[j0], X[j0], ch.s))
    z = _trapezoid_z(ch.z0, hz, j0, ch.grid.h)
    gap = np.max(np.abs(z - ch.z_values)) if len(t) else 0.0
    return float(max(np.max(excess, initial=-np.inf), 0.0)), float(gap)


def concatenate(first: Characteristic, t_switch: int, second: Characteristic, tol: float = 1e-9) -> Characteristic:
    """Follow ``first`` up to node ``t_switch`` and ``second`` afterwards."""
    if second.t0_index != t_switch:
        raise DynamicsError("second characteristic must start at the switch node")
    if t_switch < first.t0_index:
        raise DynamicsError("switch precedes the start of the first characteristic")
    a = first.path.values[: t_switch + 1]
    b = second.path.values[: t_switch + 1]
    scale = 1.0 + float(np.max(np.abs(a)))
    if np.max(np.abs(a - b)) > tol * scale:
        raise DynamicsError("histories differ at the switch")
    zf = first.z_values[t_switch]
    if abs(zf - second.z0) > tol * (1 + abs(zf)):
        raise DynamicsError("cost values differ at the switch")
    if t_switch == first.t0_index:
        return second
    z = second.z_values.copy()
    z[: t_switch + 1] = first.z_values[: t_switch + 1]
    return Characteristic(second.x, SampledPath(second.grid, z), first.t0_index, first.z0, second.s, first.f_start)


# ---------------------------------------------------------------------------
# CSV


def write_characteristic_csv(ch: Characteristic, file) -> None:
    """Columns ``t, x1..xn, z, psi1..psin``."""
    n = ch.x.dim
    own = isinstance(file, str) or hasattr(file, "__fspath__")
    fh = open(file, "w", newline="") if own else file
    try:
        w = csv.writer(fh)
        w.writerow(["t", *(f"x{i + 1}" for i in range(n)), "z", *(f"psi{i + 1}" for i in range(n))])
        X, Z, PSI = ch.path.values, ch.z_values, ch.x.generator.values
        for j, t in enumerate(ch.grid.nodes(ch.path.last_index)):
            w.writerow([f"{t:.17g}", *(f"{v:.17g}" for v in X[j]), f"{Z[j]:.17g}", *(f"{v:.17g}" for v in PSI[j])])
    finally:
        if own:
            fh.close()
