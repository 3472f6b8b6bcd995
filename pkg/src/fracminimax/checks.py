"""Quick self-checks per module, run by ``fracminimax verify --suite <name>``.

Each check returns ``Check(name, value, bound, passed)``; the suites are
small enough to finish in seconds and use fixed seeds.
"""

from __future__ import annotations

import math
from typing import Callable, Dict, List, NamedTuple

import numpy as np

from . import fixtures as fx
from .dynamics import Letter, SelectionPolicy, integrate_characteristic
from .fraccalc import Grid, caputo_derivative, check_semigroup, constant_path, gamma_fn, make_ac_path, rl_integral, sample_function
from .lyapunov import V_gamma_mu, build_lyapunov_params, calibrated_dissipation, level_count
from .minimax import SearchBudget, classical_residual, envelope_bracket, stability_check_lower, stability_check_upper
from .pathspace import PathPoint, check_dist_bounds, restrict


class Check(NamedTuple):
    name: str
    value: float
    bound: float
    passed: bool

    def as_dict(self):
        return {"name": self.name, "value": self.value, "bound": self.bound, "passed": self.passed}


def _le(name, value, bound):
    value = float(value)
    return Check(name, value, float(bound), bool(value <= bound))


def suite_fraccalc(seed: int = 0) -> List[Check]:
    out = []
    g = Grid(1.0, 1000)
    t = g.nodes()
    for a in (0.3, 0.5, 0.8):
        I = rl_integral(constant_path(g, 1.0), a).values[1:, 0]
        exact = t[1:] ** a / gamma_fn(a + 1)
        out.append(_le(f"I^{a} of 1, rel err", np.max(np.abs(I - exact) / exact), 1e-3))
    psi = sample_function(g, lambda s: np.sin(3 * s)[:, None] * s[:, None])
    out.append(_le("semigroup 0.3+0.4", check_semigroup(psi, 0.3, 0.4), 1e-3))
    x = make_ac_path([0.0], psi, 0.5)
    back = caputo_derivative(x.realize(), 0.5).values
    out.append(_le("round trip", np.max(np.abs(back - psi.values)) / np.max(np.abs(psi.values)), 1e-2))
    return out


def suite_pathspace(seed: int = 0) -> List[Check]:
    rng = np.random.default_rng(seed)
    g = Grid(1.0, 200)
    worst = np.inf
    for _ in range(20):
        x = fx.random_ac_path(rng, g, 2, 0.5)
        y = fx.random_ac_path(rng, g, 2, 0.5)
        j, k = sorted(rng.integers(1, g.N + 1, size=2))[::-1]
        b = check_dist_bounds(restrict(x, int(j)), restrict(y, int(k)))
        worst = min(worst, min(b.slack))
    return [Check("distance bounds, worst slack", float(worst), -10 * g.h, bool(worst >= -10 * g.h))]


def suite_dynamics(seed: int = 0) -> List[Check]:
    P = fx.build("drift", N=200)
    p0 = PathPoint(constant_path(P.grid, [0.0], 0))
    one = fx.build("zero-hamiltonian", N=200, c_H=1.0)
    ch = integrate_characteristic(one, p0, 0.0, [1.0], SelectionPolicy((Letter((1.0,), (0.0,), 0.0),)))
    exact = 1.0 / gamma_fn(1.5)
    out = [_le("D^a x = 1 terminal error", abs(ch.path.values[-1, 0] - exact), 1e-10)]
    hint = SelectionPolicy((Letter(P.hints[0], (0.0,), 0.0),))
    ch = integrate_characteristic(P, p0, 0.0, [0.7], hint)
    out.append(_le("drift motion keeps z = 0", np.max(np.abs(ch.z_values)), 1e-12))
    return out


def suite_lyapunov(seed: int = 0) -> List[Check]:
    g = Grid(1.0, 1000)
    v = V_gamma_mu(constant_path(g, 1.0), 0.5, 1.0)
    out = [_le("V(r=1, 0.5, 1) spot value", abs(v - 2 * (1 - math.exp(-1)) / math.sqrt(math.pi)), 1e-4)]
    out.append(Check("m at alpha 0.3", float(level_count(0.3)), 2.0, level_count(0.3) == 2))
    params = build_lyapunov_params(0.5, lambda R: 0.125, 2.0, 1.0)
    rng = np.random.default_rng(seed)
    fails = 0
    for _ in range(3):
        f = fx.random_generator_fn(rng, "trig", 2)
        x0 = rng.normal(size=2)
        c = calibrated_dissipation(lambda gr: make_ac_path(x0, sample_function(gr, f), 0.5), params, 200)
        fails += not c.passed
    out.append(_le("dissipation failures", fails, 0))
    return out


def suite_minimax(seed: int = 0) -> List[Check]:
    P = fx.build("drift", N=100)
    fc = fx.forecast_candidate(P)
    rng = np.random.default_rng(seed)
    b = SearchBudget(J=3, K=3)
    out = []
    p = fx.random_point(rng, P, t_index=30)
    r = stability_check_upper(fc, P, p, 1.0, [1.0], budget=b)
    out.append(_le("forecast upper slack", r.slack, 1e-2))
    r = stability_check_lower(fc, P, p, 1.0, [1.0], budget=b)
    out.append(_le("forecast lower slack", r.slack, 1e-2))
    out.append(_le("forecast classical residual", classical_residual(fc, P, p), 1e-6))
    br = envelope_bracket(P, p, [[0.0], [1.0]], b)
    out.append(_le("bracket order", br.lower - br.upper, 0.0))
    v = fc(p)
    out.append(_le("forecast inside bracket", max(br.lower - v, v - br.upper), 1e-9))
    return out


SUITES: Dict[str, Callable[[int], List[Check]]] = {
    "fraccalc": suite_fraccalc,
    "pathspace": suite_pathspace,
    "dynamics": suite_dynamics,
    "lyapunov": suite_lyapunov,
    "minimax": suite_minimax,
}


def run_suite(name: str, seed: int = 0) -> List[Check]:
    if name == "all":
        return [c for s in SUITES.values() for c in s(seed)]
    if name not in SUITES:
        raise KeyError(name)
    return SUITES[name](seed)
