"""Envelope functionals, stability checks for candidate solutions, and the comparison witness.

Characteristics are searched over piecewise-constant letter policies (see
:func:`fracminimax.dynamics.policy_alphabet`).  Every max or min reported
here is therefore taken over a finite policy class: an upper envelope is a
lower estimate of the supremum over all measurable selections and vice
versa.  A failed stability check proves nothing unless the class was
enumerated exhaustively, and even then only within the class.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .dynamics import (
    Characteristic,
    DynamicsError,
    HamiltonianProblem,
    Letter,
    SelectionPolicy,
    concatenate,
    integrate_characteristic,
    integrate_policies,
    policy_alphabet,
)
from .fraccalc import SampledPath
from .lyapunov import LyapunovParams, V_eps_series
from .pathspace import PathPoint, as_point


class MinimaxError(ValueError):
    pass


@dataclass(frozen=True)
class CandidateSolution:
    """A path functional ``phi(t, w)`` with optional ci-derivatives.

    ``dt_phi`` returns a float and ``grad_phi`` a vector of length ``n``;
    both are only needed by :func:`classical_residual`.
    """

    phi: Callable[[PathPoint], float]
    dt_phi: Optional[Callable[[PathPoint], float]] = None
    grad_phi: Optional[Callable[[PathPoint], np.ndarray]] = None
    name: str = "candidate"

    def __call__(self, p: PathPoint) -> float:
        v = float(self.phi(p))
        if not math.isfinite(v):
            raise MinimaxError(f"{self.name} is not finite at t = {p.t}")
        return v


@dataclass(frozen=True)
class SearchBudget:
    """Size of the policy search.

    ``J`` equal pieces, ``K`` directions per letter family, magnitudes
    ``rho`` for the extreme letters (zero velocity is always included).
    If the class has at most ``max_enumeration`` members it is enumerated;
    otherwise a beam search of width ``beam_width`` is followed by
    ``rounds`` sweeps of coordinate refinement.
    """

    J: int = 4
    K: int = 3
    rounds: int = 2
    beam_width: int = 16
    max_enumeration: int = 20000
    magnitudes: Tuple[float, ...] = (0.5, 1.0)
    chunk: int = 2048

    def __post_init__(self):
        if self.J < 1 or self.K < 1:
            raise MinimaxError("J and K must be positive")
        if self.max_enumeration < 1 or self.beam_width < 1:
            raise MinimaxError("search budget is zero")
        if self.rounds < 0:
            raise MinimaxError("rounds must be nonnegative")


class SearchResult(NamedTuple):
    value: float
    characteristic: Optional[Characteristic]
    policy: Tuple[int, ...]
    letters: Tuple[Letter, ...]
    exhaustive: bool
    evaluated: int


# ---------------------------------------------------------------------------
# policy search


def _batch_sigma(problem: HamiltonianProblem, X: np.ndarray) -> np.ndarray:
    return np.array([problem.sigma(X[i]) for i in range(X.shape[0])], dtype=np.float64)


def _phi_batch(cand: CandidateSolution, batch, j: int) -> np.ndarray:
    grid, alpha = batch.grid, batch.alpha
    out = np.empty(batch.X.shape[0])
    for i in range(out.shape[0]):
        pt = PathPoint(SampledPath(grid, batch.X[i, : j + 1]), SampledPath(grid, batch.PSI[i, : j + 1]), alpha)
        out[i] = cand(pt)
    return out


def _search(problem, p: PathPoint, s, budget: SearchBudget, score: Callable, maximize: bool, end_index: int, z0=0.0, letters=None) -> SearchResult:
    """Best policy under ``score(batch) -> values``; ties go to the lexicographically smallest policy."""
    if letters is None:
        letters = policy_alphabet(problem, budget.K, budget.magnitudes)
    letters = tuple(letters)
    L, J = len(letters), budget.J
    sign = 1.0 if maximize else -1.0
    evaluated = 0
    best = [-np.inf, None]

    def run(pols):
        nonlocal evaluated
        pols = np.asarray(pols, dtype=np.int64).reshape(-1, J)
        vals = np.empty(pols.shape[0])
        for a in range(0, pols.shape[0], budget.chunk):
            b = integrate_policies(problem, p, s, letters, pols[a : a + budget.chunk], z0, end_index=end_index)
            v = sign * np.asarray(score(b), dtype=np.float64)
            if not np.all(np.isfinite(v)):
                raise MinimaxError("non-finite objective during search")
            vals[a : a + len(v)] = v
        evaluated += pols.shape[0]
        for v, pol in zip(vals, map(tuple, pols)):
            if v > best[0] or (v == best[0] and pol < best[1]):
                best[0], best[1] = float(v), pol
        return vals

    exhaustive = L**J <= budget.max_enumeration
    if exhaustive:
        # lexicographic order, consumed in chunks
        it = itertools.product(range(L), repeat=J)
        while True:
            chunk = list(itertools.islice(it, budget.chunk))
            if not chunk:
                break
            run(chunk)
    else:
        beam = [()]
        for k in range(J):
            cand = [pre + (l,) for pre in beam for l in range(L)]
            full = [c + (c[-1],) * (J - k - 1) for c in cand]
            vals = run(full)
            order = sorted(range(len(cand)), key=lambda i: (-vals[i], full[i]))
            beam = [cand[i] for i in order[: budget.beam_width]]
        for _ in range(budget.rounds):
            improved = False
            for k in range(J):
                base = best[1]
                trial = [base[:k] + (l,) + base[k + 1 :] for l in range(L) if l != base[k]]
                before = best[0]
                run(trial)
                improved |= best[0] > before
            if not improved:
                break

    pol = best[1]
    b = integrate_policies(problem, p, s, letters, [pol], z0, end_index=end_index)
    return SearchResult(sign * best[0], b.characteristic(0), pol, letters, exhaustive, evaluated)


def _terminal_payoff(problem):
    def score(b):
        return _batch_sigma(problem, b.X) - b.Z[:, -1]

    return score


def _envelope(problem, p, s, budget, maximize, letters=None) -> SearchResult:
    p = as_point(p)
    s = np.asarray(s, dtype=np.float64).reshape(problem.dim)
    if p.grid != problem.grid:
        raise MinimaxError("point lives on a different grid")
    if not p.before_horizon:
        return SearchResult(problem.sigma_of(p), None, (), (), True, 0)
    return _search(problem, p, s, budget, _terminal_payoff(problem), maximize, problem.grid.N, 0.0, letters)


def psi_upper(problem: HamiltonianProblem, p, s, budget: SearchBudget = SearchBudget(), letters=None) -> SearchResult:
    """Largest ``sigma(x) - z(T)`` over characteristics from ``(p, z = 0)`` in the policy class."""
    return _envelope(problem, p, s, budget, True, letters)


def psi_lower(problem: HamiltonianProblem, p, s, budget: SearchBudget = SearchBudget(), letters=None) -> SearchResult:
    """Smallest ``sigma(x) - z(T)`` over characteristics from ``(p, z = 0)`` in the policy class."""
    return _envelope(problem, p, s, budget, False, letters)


# ---------------------------------------------------------------------------
# stability checks


OK = "ok"
REFUTED = "refuted within policy class"
UNDECIDED = "undecided (budget exhausted)"


class StabilityResult(NamedTuple):
    passed: bool
    witness: Optional[Characteristic]
    slack: float
    eps: float
    status: str
    phi_start: float
    best: float
    exhaustive: bool

    @property
    def margin(self) -> float:
        """How far the best policy misses the inequality (positive on failure)."""
        return self.slack - self.eps


def _end_index(problem, p: PathPoint, t1) -> int:
    try:
        j1 = problem.grid.index_of(float(t1))
    except Exception as exc:
        raise MinimaxError(str(exc)) from exc
    if not p.t_index < j1 <= problem.grid.N:
        raise MinimaxError(f"t1 = {t1} must lie in (t, T]")
    return j1


def _stability(cand, problem, p, t1, s, eps, budget, upper, z0=0.0):
    p = as_point(p)
    if p.grid != problem.grid:
        raise MinimaxError("point lives on a different grid")
    s = np.asarray(s, dtype=np.float64).reshape(problem.dim)
    j1 = _end_index(problem, p, t1)
    phi0 = cand(p)
    if eps is None:
        eps = 1e-3 * max(1.0, abs(phi0))
    if not eps > 0:
        raise MinimaxError("eps must be positive")

    def score(b):
        return _phi_batch(cand, b, j1) - b.Z[:, -1]

    res = _search(problem, p, s, budget, score, not upper, j1, z0)
    ref = phi0 - z0
    slack = res.value - ref if upper else ref - res.value
    passed = slack <= eps
    status = OK if passed else (REFUTED if res.exhaustive else UNDECIDED)
    return StabilityResult(passed, res.characteristic, float(slack), float(eps), status, phi0, res.value, res.exhaustive)


def stability_check_upper(cand: CandidateSolution, problem, p, t1, s, eps=None, budget: SearchBudget = SearchBudget()) -> StabilityResult:
    """Look for a characteristic with ``phi(t1, x_t1) - z(t1) <= phi(p) + eps``.

    ``slack`` is the best achieved ``phi(t1, x_t1) - z(t1) - phi(p)``.
    """
    return _stability(cand, problem, p, t1, s, eps, budget, True)


def stability_check_lower(cand: CandidateSolution, problem, p, t1, s, eps=None, budget: SearchBudget = SearchBudget()) -> StabilityResult:
    """Look for a characteristic with ``phi(t1, x_t1) - z(t1) >= phi(p) - eps``."""
    return _stability(cand, problem, p, t1, s, eps, budget, False)


# ---------------------------------------------------------------------------
# chaining


class ChainResult(NamedTuple):
    characteristic: Characteristic
    nodes: np.ndarray  # grid indices t_{k,0} .. t_{k,k}
    step_slack: np.ndarray  # nonnegative, one per interval
    cumulative: np.ndarray  # cumulative step slack at nodes[1:]
    node_slack: np.ndarray  # running max of the deviation from phi(p) at each chain node
    deviation: np.ndarray  # phi(t_j, x) - z(t_j) - phi(p), signed for the side, every node from t0
    bound: float

    @property
    def passed(self) -> bool:
        return bool(self.node_slack[-1] <= self.bound)


def multistep_chain(
    cand: CandidateSolution,
    problem,
    p,
    s,
    k: int,
    eps_step: float,
    budget: SearchBudget = SearchBudget(),
    upper: bool = True,
    tol: float = 1e-9,
) -> ChainResult:
    """Glue ``k`` interval witnesses on ``t_i = t0 + (T - t0) i / k`` into one characteristic.

    Each interval is searched from the end of the previous witness with the
    cost carried over, so the deviation from ``phi(p)`` at the chain nodes
    is at most the cumulative step slack.
    """
    p = as_point(p)
    if k < 1:
        raise MinimaxError("k must be at least 1")
    N, j0 = problem.grid.N, p.t_index
    if k > N - j0:
        raise MinimaxError("more steps than grid cells")
    nodes = np.array([j0 + round((N - j0) * i / k) for i in range(k + 1)], dtype=np.int64)
    grid = problem.grid
    phi0 = cand(p)
    sign = 1.0 if upper else -1.0
    chain = None
    cur, zc = p, 0.0
    steps = []
    for i in range(k):
        r = _stability(cand, problem, cur, grid.nodes()[nodes[i + 1]], s, eps_step, budget, upper, zc)
        if not r.passed:
            raise MinimaxError(f"interval {i} search failed ({r.status}, slack {r.slack:.3g})")
        steps.append(max(r.slack, 0.0))
        chain = r.witness if chain is None else concatenate(chain, int(nodes[i]), r.witness, tol)
        cur = chain.point(int(nodes[i + 1]))
        zc = float(chain.z_values[nodes[i + 1]])
    steps = np.array(steps)
    z = chain.z_values
    dev = np.array([sign * (cand(chain.point(j)) - z[j] - phi0) for j in range(j0, N + 1)])
    at_nodes = np.maximum(dev[nodes - j0], 0.0)
    return ChainResult(
        chain,
        nodes,
        steps,
        np.cumsum(steps),
        np.maximum.accumulate(at_nodes),
        dev,
        k * eps_step + tol,
    )


# ---------------------------------------------------------------------------
# classical residual


def classical_residual(cand: CandidateSolution, problem, p) -> float:
    """``|d_t phi + H(t, w(t), grad phi)|`` before the horizon, ``|phi - sigma|`` at it."""
    p = as_point(p)
    if not p.before_horizon:
        return abs(cand(p) - problem.sigma_of(p))
    if cand.dt_phi is None or cand.grad_phi is None:
        raise MinimaxError("classical residual needs both ci-derivatives")
    g = np.broadcast_to(np.asarray(cand.grad_phi(p), dtype=np.float64), (problem.dim,))
    return abs(float(cand.dt_phi(p)) + float(problem.H(p.t, p.current, g)))


# ---------------------------------------------------------------------------
# envelope bracket


class Bracket(NamedTuple):
    lower: float
    upper: float
    lower_by_s: Tuple[float, ...]
    upper_by_s: Tuple[float, ...]


def pair_letters(s_list, n: int) -> List[Letter]:
    """Extreme letters along ``(s_i - s_j) / |s_i - s_j|`` for every ordered pair.

    Along such a letter ``z`` for ``s_i`` never falls below ``z`` for ``s_j``
    (growth bound of ``H`` in ``s``), which keeps ``lower(s_i) <= upper(s_j)``
    inside the policy class.
    """
    out = []
    for a, b in itertools.permutations(range(len(s_list)), 2):
        d = np.asarray(s_list[a], dtype=np.float64) - np.asarray(s_list[b], dtype=np.float64)
        nd = float(np.linalg.norm(d))
        if nd > 0:
            out.append(Letter((0.0,) * n, tuple(float(v) for v in d / nd), 1.0))
    return out


def envelope_bracket(problem, p, s_list: Sequence, budget: SearchBudget = SearchBudget()) -> Bracket:
    """``(max_s psi_lower, min_s psi_upper)`` over ``s_list``.

    In one dimension the alphabet already contains both unit directions;
    in higher dimensions the pair letters of ``s_list`` are appended so the
    two sides stay ordered.
    """
    s_list = [np.asarray(s, dtype=np.float64).reshape(problem.dim) for s in s_list]
    if not s_list:
        raise MinimaxError("s_list is empty")
    letters = list(policy_alphabet(problem, budget.K, budget.magnitudes))
    if problem.dim > 1:
        letters += [l for l in pair_letters(s_list, problem.dim) if l not in letters]
    lo = tuple(psi_lower(problem, p, s, budget, letters).value for s in s_list)
    hi = tuple(psi_upper(problem, p, s, budget, letters).value for s in s_list)
    return Bracket(max(lo), min(hi), lo, hi)


# ---------------------------------------------------------------------------
# comparison witness


class WitnessReport(NamedTuple):
    t0_index: int
    v: np.ndarray  # v on nodes t0..T
    max_increase: float
    tol: float
    nonincreasing: bool
    final_lhs: float  # V_eps(T, dx) + z(T)
    final_rhs: float  # eps (1 + T - t0) + z0
    final_holds: bool
    delta_sigma: float  # sigma(x) - sigma(x')
    x: Characteristic
    x2: Characteristic
    z: np.ndarray


def comparison_witness(
    problem: HamiltonianProblem,
    p,
    eps: float,
    params: LyapunovParams,
    policy: SelectionPolicy,
    policy2: SelectionPolicy,
    z0: float = 0.0,
    tol: Optional[float] = None,
) -> WitnessReport:
    """Integrate the coupled pair ``(x, x', z)`` and test the monotone function.

    Both motions start from the shared history ``p``.  The cost follows the
    upper edge of the admissible band,

        z' = <s_eps, f - f'> + H(t, x', s_eps) - H(t, x, s_eps) + eps,

    with ``s_eps`` evaluated on ``dx = x' - x``, and
    ``v(t) = V_eps(t, dx_t) + z(t) - eps (t - t0)`` must not increase.
    ``tol`` defaults to ``10 h eps`` per cell.
    """
    p = as_point(p)
    grid = problem.grid
    if not p.before_horizon:
        raise MinimaxError("the witness needs t0 < T")
    if abs(params.alpha - problem.alpha) > 1e-15 or abs(params.T - grid.T) > 1e-12:
        raise MinimaxError("Lyapunov parameters do not match the problem")
    zero = np.zeros(problem.dim)
    try:
        ch = integrate_characteristic(problem, p, 0.0, zero, policy)
        ch2 = integrate_characteristic(problem, p, 0.0, zero, policy2)
    except DynamicsError as exc:
        raise MinimaxError(f"inadmissible policy: {exc}") from exc
    X, X2 = ch.path.values, ch2.path.values
    for vals in (X, X2):
        if np.max(np.linalg.norm(vals, axis=1)) > params.R * (1 + 1e-12):
            raise MinimaxError("a motion leaves the R-ball of the Lyapunov parameters")
    j0, N, h = p.t_index, grid.N, grid.h
    t = grid.nodes()
    V, _, S = V_eps_series(X2 - X, grid, eps, params)
    F = ch.x.generator.values.copy()
    F2 = ch2.x.generator.values.copy()
    F[j0], F2[j0] = ch.f_start, ch2.f_start
    rate = (
        np.einsum("jc,jc->j", S, F - F2)
        + problem.H(t, X2, S)
        - problem.H(t, X, S)
        + eps
    )
    z = np.full(N + 1, float(z0))
    z[j0 + 1 :] = z0 + np.cumsum(0.5 * h * (rate[j0:-1] + rate[j0 + 1 :]))
    v = V[j0:] + z[j0:] - eps * (t[j0:] - t[j0])
    tol = 10.0 * h * eps if tol is None else float(tol)
    inc = float(np.max(np.diff(v), initial=-np.inf))
    lhs = float(V[-1] + z[-1])
    rhs = eps * (1.0 + grid.T - t[j0]) + z0
    dsig = problem.sigma_of(X) - problem.sigma_of(X2)
    return WitnessReport(j0, v, inc, tol, inc <= tol, lhs, rhs, lhs <= rhs + (N - j0) * tol, dsig, ch, ch2, z)
