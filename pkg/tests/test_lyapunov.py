import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracminimax import fixtures as fx
from fracminimax.fraccalc import AcPath, Grid, SampledPath, constant_path, make_ac_path, sample_function
from fracminimax.lyapunov import (
    LyapunovError,
    V_continuity_bound,
    V_dot_explicit_series,
    V_eps,
    V_gamma_mu,
    V_gamma_mu_series,
    V_star,
    aux_M,
    aux_M_dot,
    build_lyapunov_params,
    calibrated_dissipation,
    check_beta_domination,
    coupling_inequality_check,
    level_count,
    p_eps,
    s_eps,
    tower_constants,
)
from fracminimax.pathspace import PathPoint, restrict

R_FUNCS = {"one": lambda t: np.ones_like(t), "t": lambda t: t, "t2": lambda t: t * t, "sin": np.sin}


def exact_r(name, gamma, grid):
    """AcPath of order gamma with exact nodal values and generator."""
    t = grid.nodes()
    G = math.gamma
    if name == "t":
        gen = t ** (1 - gamma) / G(2 - gamma)
    elif name == "t2":
        gen = 2 * t ** (2 - gamma) / G(3 - gamma)
    else:
        gen = sum((-1) ** k * t ** (2 * k + 1 - gamma) / G(2 * k + 2 - gamma) for k in range(12))
    nodes = SampledPath(grid, R_FUNCS[name](t)[:, None])
    return AcPath([0.0], SampledPath(grid, gen[:, None]), gamma, nodes)


@pytest.mark.parametrize("name", ["one", "t", "t2", "sin"])
@pytest.mark.parametrize("gamma", [0.5, 0.7])
@pytest.mark.parametrize("mu", [0.5, 1.0, 2.0])
def test_tempered_integral_matches_oracle(oracles, name, gamma, mu):
    ref = next(o["value"] for o in oracles["tempered"] if o["r"] == name and o["gamma"] == gamma and o["mu"] == mu)
    g = Grid(1.0, 400)
    got = V_gamma_mu(sample_function(g, lambda t: R_FUNCS[name](t)[:, None]), gamma, mu)
    # exact for piecewise-linear r; second order otherwise
    assert got == pytest.approx(ref, abs=1e-12 if name in ("one", "t") else 2e-6)


@pytest.mark.parametrize("name", ["t", "t2", "sin"])
@pytest.mark.parametrize("gamma", [0.5, 0.7])
@pytest.mark.parametrize("mu", [0.5, 1.0, 2.0])
def test_explicit_rate_matches_oracle(oracles, name, gamma, mu):
    g = Grid(1.0, 400)
    rate = V_dot_explicit_series(exact_r(name, gamma, g), gamma, mu)
    for o in oracles["tempered_rate"]:
        if o["r"] == name and o["gamma"] == gamma and o["mu"] == mu:
            j = g.index_of(o["t"])
            assert rate[j] == pytest.approx(o["value"], abs=2e-4)


def test_spot_value(oracles):
    v = V_gamma_mu(constant_path(Grid(1.0, 50), 1.0), 0.5, 1.0)
    assert v == pytest.approx(oracles["spot"]["closed_form"], abs=1e-13)


@pytest.mark.parametrize("case", range(6))
def test_tower_constants_match_oracle(oracles, case):
    o = oracles["tower"][case]
    m, betas, mus, ls = tower_constants(o["alpha"], o["lambda"], o["T"])
    assert m == o["m"]
    assert np.allclose(betas, o["betas"], rtol=1e-13)
    assert np.allclose(mus, o["mus"], rtol=1e-12)
    assert ls == pytest.approx(o["lambda_star"], rel=1e-11)


@given(st.floats(0.01, 0.99))
def test_level_count_definition(alpha):
    m = level_count(alpha)
    assert alpha >= 2.0**-m
    assert m == 1 or alpha < 2.0 ** -(m - 1)


@given(st.floats(0.05, 0.95), st.floats(0.1, 3.0))
@settings(max_examples=30, deadline=None)
def test_aux_M_derivative(gamma, mu):
    th = np.linspace(0.05, 1.0, 20)
    d = 1e-6
    fd = (aux_M(th + d, gamma, mu) - aux_M(th - d, gamma, mu)) / (2 * d)
    assert np.allclose(fd, aux_M_dot(th, gamma, mu), rtol=1e-5, atol=1e-7)
    assert np.all(aux_M(th, gamma, mu) >= 0)


@given(st.floats(0.1, 0.9), st.floats(0.1, 2.0), st.floats(-2, 2), st.floats(-2, 2))
@settings(max_examples=25, deadline=None)
def test_tempered_integral_is_linear(gamma, mu, a, b):
    g = Grid(1.0, 40)
    r1 = sample_function(g, lambda t: np.sin(3 * t)[:, None])
    r2 = sample_function(g, lambda t: (t**2)[:, None])
    lhs = V_gamma_mu_series(a * r1.values + b * r2.values, g, gamma, mu)
    rhs = a * V_gamma_mu_series(r1.values, g, gamma, mu) + b * V_gamma_mu_series(r2.values, g, gamma, mu)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_continuity_bound_holds():
    rng = np.random.default_rng(0)
    g = Grid(1.0, 100)
    for _ in range(20):
        x = fx.random_ac_path(rng, g, 1, 0.5)
        y = fx.random_ac_path(rng, g, 1, 0.5)
        j, k = rng.integers(1, g.N + 1, 2)
        p, q = restrict(x, int(j)), restrict(y, int(k))
        gap = abs(V_gamma_mu(p, 0.6, 1.0) - V_gamma_mu(q, 0.6, 1.0))
        assert gap <= V_continuity_bound(p, q, 0.6, 1.0) + 1e-12


@pytest.mark.parametrize("alpha", [0.5, 0.3])
def test_dissipation_on_trig_paths(alpha):
    params = build_lyapunov_params(alpha, lambda R: 0.125, 2.0, 1.0)
    rng = np.random.default_rng(7)
    for _ in range(3):
        f = fx.random_generator_fn(rng, "trig", 2)
        x0 = rng.normal(size=2)
        c = calibrated_dissipation(lambda gr: make_ac_path(x0, sample_function(gr, f), alpha), params, 200)
        assert c.passed and c.shrink >= 1.5


def test_V_star_vanishes_on_constant_path():
    params = build_lyapunov_params(0.5, lambda R: 0.25, 2.0, 1.0)
    p = PathPoint(constant_path(Grid(1.0, 50), [1.0, 2.0]))
    assert V_star(p, params) == 0.0


def test_V_eps_at_zero_increment():
    params = build_lyapunov_params(0.5, lambda R: 0.25, 2.0, 1.0)
    eps = 0.5 * params.eps0
    g = Grid(1.0, 50)
    for j in (0, 10, 50):
        p = PathPoint(constant_path(g, [0.0, 0.0], j))
        assert V_eps(p, eps, params) == pytest.approx(math.exp(-0.25 * p.t) * eps, rel=1e-14)
        assert np.all(s_eps(p, eps, params) == 0)
        assert p_eps(p, eps, params) < 0


def test_eps_outside_range_is_rejected():
    params = build_lyapunov_params(0.5, lambda R: 0.25, 2.0, 1.0)
    p = PathPoint(constant_path(Grid(1.0, 10), [0.0]))
    with pytest.raises(LyapunovError):
        V_eps(p, 2 * params.eps0, params)


@pytest.mark.parametrize("name", ["drift", "nonlinear"])
def test_coupling_inequality(name):
    P = fx.build(name, N=100, n=2)
    params = build_lyapunov_params(P.alpha, P.lambda_H, 2.0, 1.0)
    rng = np.random.default_rng(11)
    for _ in range(20):
        x0 = rng.normal(size=2) * 0.3
        w = fx.random_ac_path(rng, P.grid, 2, P.alpha, scale=0.5)
        w2 = fx.random_ac_path(rng, P.grid, 2, P.alpha, scale=0.5)
        j = int(rng.integers(1, P.grid.N + 1))
        a = PathPoint(SampledPath(P.grid, w.realize().values[: j + 1] - w.x0 + x0))
        b = PathPoint(SampledPath(P.grid, w2.realize().values[: j + 1] - w2.x0 + x0))
        r = coupling_inequality_check(P, a, b, params.eps0 * rng.uniform(0.1, 1), params)
        assert r.residual <= 1e-12
        assert r.completion_gap >= -1e-12


def test_beta_domination():
    g = Grid(1.0, 200)
    psi = sample_function(g, lambda t: (1 + np.sin(5 * t) ** 2)[:, None])
    ok, excess = check_beta_domination(psi, 0.7, 0.5)
    assert ok and excess <= 1e-10


def test_build_params_validation():
    with pytest.raises(LyapunovError):
        build_lyapunov_params(0.5, lambda R: 0.0, 2.0, 1.0)
    with pytest.raises(LyapunovError):
        build_lyapunov_params(0.5, lambda R: 1.0, -1.0, 1.0)
    p = build_lyapunov_params(0.3, lambda R: 0.125, 2.0, 1.0)
    assert p.m == 2 and p.lam == 0.5
    assert p.eps0 == pytest.approx(2 * math.exp(-(0.125 + p.lam_star / 2)))


def test_explicit_rate_needs_matching_order():
    g = Grid(1.0, 20)
    with pytest.raises(LyapunovError):
        V_dot_explicit_series(exact_r("t", 0.5, g), 0.7, 1.0)


def test_beta_below_range_is_rejected():
    psi = constant_path(Grid(1.0, 10), 1.0)
    with pytest.raises(LyapunovError):
        check_beta_domination(psi, 0.2, 0.5)
