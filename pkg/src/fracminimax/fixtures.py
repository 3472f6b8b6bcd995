"""Built-in problems, candidate functionals and seeded path generators.

Every registered problem is spot-checked against its growth and Lipschitz
constants when it is built; :func:`build` raises if the sampled ratios
exceed one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np

from .dynamics import HamiltonianProblem, history_generator, spot_check_assumptions
from .fraccalc import AcPath, Grid, SampledPath, gamma_fn, make_ac_path, power_weights, sample_function
from .minimax import CandidateSolution
from .pathspace import PathPoint, as_point


class FixtureError(ValueError):
    pass


def _vec(v, n, what):
    a = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if a.size == 1 and n > 1:
        a = np.full(n, float(a[0]))
    if a.shape != (n,):
        raise FixtureError(f"{what} must have {n} components")
    return a


def _linear_sigma(a):
    return lambda values: float(np.asarray(values)[-1] @ a)


def drift(alpha=0.5, T=1.0, N=200, n=1, a=1.0, b=1.0, lambda_H=0.25) -> HamiltonianProblem:
    """``H = <b, s>`` with ``sigma(w) = <a, w(T)>``; the value is the drift forecast."""
    a, b = _vec(a, n, "a"), _vec(b, n, "b")
    nb = float(np.linalg.norm(b))

    def H(t, x, s):
        s = np.asarray(s, dtype=np.float64)
        out = s @ b
        return np.broadcast_to(out, np.broadcast_shapes(np.shape(t), np.shape(x)[:-1], s.shape[:-1])) + 0.0

    return HamiltonianProblem(
        H, _linear_sigma(a), nb if nb > 0 else 1.0, lambda R: lambda_H, alpha, Grid(T, N), n, "drift",
        (tuple(b),),
    )


def zero_hamiltonian(alpha=0.5, T=1.0, N=200, n=1, a=1.0, c_H=1.0, lambda_H=0.25) -> HamiltonianProblem:
    """``H = 0`` with linear terminal cost: every motion has ``z`` constant."""
    a = _vec(a, n, "a")

    def H(t, x, s):
        return np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x)[:-1], np.shape(s)[:-1]))

    return HamiltonianProblem(H, _linear_sigma(a), c_H, lambda R: lambda_H, alpha, Grid(T, N), n, "zero-hamiltonian")


def norm_terminal(alpha=0.5, T=1.0, N=200, n=1, c=0.5, lambda_H=0.25) -> HamiltonianProblem:
    """``H = c |s|`` with ``sigma(w) = |w(T)|^2``."""

    def H(t, x, s):
        out = c * np.linalg.norm(np.asarray(s, dtype=np.float64), axis=-1)
        return np.broadcast_to(out, np.broadcast_shapes(np.shape(t), np.shape(x)[:-1], np.shape(s)[:-1])) + 0.0

    def sigma(values):
        w = np.asarray(values)[-1]
        return float(w @ w)

    return HamiltonianProblem(H, sigma, c, lambda R: lambda_H, alpha, Grid(T, N), n, "norm-terminal")


def nonlinear(alpha=0.5, T=1.0, N=200, n=1) -> HamiltonianProblem:
    """``H = 0.5|s| + 0.1<tanh x, s> - 0.05|x|^2/(1+|x|^2)`` with a path-dependent cost.

    ``|H(s) - H(s')| <= (0.5 + 0.1|x|)|s - s'|`` gives ``c_H = 0.5``; the
    ``x``-Lipschitz constant is at most ``0.1|s| + 0.033``, so
    ``lambda_H = 0.15`` for every radius.  ``sigma(w) = sqrt(1 + |w(T)|^2)
    + 0.1 max |w|``.
    """

    def H(t, x, s):
        x = np.asarray(x, dtype=np.float64)
        s = np.asarray(s, dtype=np.float64)
        r2 = np.sum(x * x, axis=-1)
        out = 0.5 * np.linalg.norm(s, axis=-1) + 0.1 * np.sum(np.tanh(x) * s, axis=-1) - 0.05 * r2 / (1.0 + r2)
        return np.broadcast_to(out, np.broadcast_shapes(np.shape(t), x.shape[:-1], s.shape[:-1])) + 0.0

    def sigma(values):
        v = np.asarray(values)
        return float(math.sqrt(1.0 + v[-1] @ v[-1]) + 0.1 * np.max(np.linalg.norm(v, axis=1)))

    return HamiltonianProblem(H, sigma, 0.5, lambda R: 0.15, alpha, Grid(T, N), n, "nonlinear")


@dataclass(frozen=True)
class Fixture:
    name: str
    factory: Callable[..., HamiltonianProblem]
    params: Dict[str, str]
    summary: str


_COMMON = {"alpha": "float in (0,1)", "T": "float > 0", "N": "int >= 2", "n": "int >= 1"}

REGISTRY: Dict[str, Fixture] = {
    f.name: f
    for f in (
        Fixture("drift", drift, {**_COMMON, "a": "vector", "b": "vector", "lambda_H": "float > 0"},
                "H = <b, s>, sigma = <a, w(T)>"),
        Fixture("zero-hamiltonian", zero_hamiltonian,
                {**_COMMON, "a": "vector", "c_H": "float > 0", "lambda_H": "float > 0"},
                "H = 0, sigma = <a, w(T)>"),
        Fixture("norm-terminal", norm_terminal, {**_COMMON, "c": "float > 0", "lambda_H": "float > 0"},
                "H = c|s|, sigma = |w(T)|^2"),
        Fixture("nonlinear", nonlinear, dict(_COMMON),
                "H = 0.5|s| + 0.1<tanh x, s> - 0.05|x|^2/(1+|x|^2), sigma = sqrt(1+|w(T)|^2) + 0.1 max|w|"),
    )
}


def build(name: str, check: bool = True, **params) -> HamiltonianProblem:
    """Instantiate a registered fixture; ``check`` runs the assumption spot check."""
    if name not in REGISTRY:
        raise FixtureError(f"unknown fixture {name!r}; known: {', '.join(sorted(REGISTRY))}")
    fx = REGISTRY[name]
    unknown = set(params) - set(fx.params)
    if unknown:
        raise FixtureError(f"unknown parameters for {name}: {', '.join(sorted(unknown))}")
    problem = fx.factory(**params)
    if check:
        gs, gx = spot_check_assumptions(problem)
        if gs > 1 + 1e-9 or gx > 1 + 1e-9:
            raise FixtureError(f"{name} violates its constants (ratios {gs:.3g}, {gx:.3g})")
    return problem


def list_fixtures():
    return {
        name: {"summary": fx.summary, "params": dict(fx.params)}
        for name, fx in sorted(REGISTRY.items())
    }


# ---------------------------------------------------------------------------
# candidates for the drift problem


def _generator_values(p: PathPoint, alpha: float) -> np.ndarray:
    return history_generator(p, alpha).values


def forecast_candidate(problem: HamiltonianProblem, a=None, b=None) -> CandidateSolution:
    """``phi(t, w) = <a, x(T)>`` where ``x`` continues ``w`` with generator ``b``.

    Evaluated with the same product weights as the solver, so along a motion
    with velocity ``b`` the value is reproduced to rounding.
    ``grad phi = a (T-t)^(alpha-1) / Gamma(alpha)`` and
    ``d_t phi = -<a, b> (T-t)^(alpha-1) / Gamma(alpha)``.
    """
    n, alpha, grid = problem.dim, problem.alpha, problem.grid
    a = _vec(1.0 if a is None else a, n, "a")
    b = _vec(problem.hints[0] if b is None else b, n, "b")
    N, h = grid.N, grid.h
    A, B = power_weights(alpha, N, h)
    ga = gamma_fn(alpha)

    def phi(p):
        p = as_point(p)
        j = p.t_index
        if j == N:
            return float(a @ p.current)
        G = np.empty((N + 1, n))
        G[: j + 1] = _generator_values(p, alpha)
        G[j + 1 :] = b
        xT = p.values[0] + A[1:] @ G[N - 1 :: -1] + B[1:] @ G[N::-1][: N]
        return float(a @ xT)

    def kern(p):
        return (grid.T - p.t) ** (alpha - 1.0) / ga

    return CandidateSolution(
        phi,
        lambda p: -float(a @ b) * kern(p),
        lambda p: a * kern(p),
        "forecast",
    )


def memory_blind_candidate(problem: HamiltonianProblem, a=None) -> CandidateSolution:
    """``phi(t, w) = <a, w(t)>``: ignores how the state was reached."""
    a = _vec(1.0 if a is None else a, problem.dim, "a")
    return CandidateSolution(lambda p: float(a @ p.current), name="memory-blind")


def constant_candidate(value: float) -> CandidateSolution:
    return CandidateSolution(lambda p: float(value), lambda p: 0.0, lambda p: 0.0, "constant")


# ---------------------------------------------------------------------------
# seeded paths

GENERATOR_KINDS = ("piecewise", "trig", "fourier")


def random_generator_fn(rng: np.random.Generator, kind: str, n: int, T: float = 1.0, scale: float = 2.0):
    """A bounded generator ``t -> R^n``: piecewise constant (8 pieces), sinusoid or 5-term Fourier sum."""
    if kind == "piecewise":
        vals = rng.uniform(-scale, scale, (8, n))
        return lambda t: vals[np.minimum((np.asarray(t) * 8 / T + 1e-9).astype(int), 7)]
    if kind == "trig":
        amp = rng.uniform(-scale, scale, n)
        w = rng.uniform(1, 8, n)
        ph = rng.uniform(0, 2 * math.pi, n)
        return lambda t: amp * np.sin(np.outer(t, w) + ph)
    if kind == "fourier":
        c = scale / 2 * rng.normal(size=(5, n)) / np.arange(1, 6)[:, None]
        ph = rng.uniform(0, 2 * math.pi, (5, n))
        return lambda t: sum(c[k] * np.cos(2 * math.pi * (k + 1) * np.asarray(t)[:, None] / T + ph[k]) for k in range(5))
    raise FixtureError(f"unknown generator kind {kind!r}")


def random_ac_path(rng: np.random.Generator, grid: Grid, n: int, alpha: float, kind=None, x0_scale=1.0, scale=2.0) -> AcPath:
    kind = kind or GENERATOR_KINDS[int(rng.integers(len(GENERATOR_KINDS)))]
    fn = random_generator_fn(rng, kind, n, grid.T, scale)
    x0 = rng.normal(size=n) * x0_scale
    return make_ac_path(x0, sample_function(grid, fn), alpha)


def random_point(rng: np.random.Generator, problem: HamiltonianProblem, t_index=None, scale=1.0) -> PathPoint:
    """Random history ending at ``t_index`` (drawn in the first 80% of the grid if not given)."""
    grid = problem.grid
    if t_index is None:
        t_index = int(rng.integers(1, max(2, int(0.8 * grid.N))))
    x = random_ac_path(rng, grid, problem.dim, problem.alpha, x0_scale=0.5 * scale, scale=scale)
    gen = x.generator.truncate(t_index)
    path = x.realize().truncate(t_index)
    return PathPoint(path, gen, problem.alpha)


def memory_trap_point(problem: HamiltonianProblem, t0: float = 0.5, level: float = -4.0) -> PathPoint:
    """History driven by a constant generator ``level`` from ``0`` on ``[0, t0]``.

    After ``t0`` the fading memory pulls such a path back towards its start,
    which a functional of the current state alone cannot anticipate.
    """
    grid = problem.grid
    j0 = grid.index_of(t0)
    psi = SampledPath(grid, np.full((j0 + 1, problem.dim), float(level)))
    x = make_ac_path(np.zeros(problem.dim), psi, problem.alpha)
    return PathPoint(x.realize(), psi, problem.alpha)
