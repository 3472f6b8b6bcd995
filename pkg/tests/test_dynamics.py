import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracminimax import fixtures as fx
from fracminimax.dynamics import (
    DynamicsError,
    Letter,
    SelectionPolicy,
    concatenate,
    directions,
    history_generator,
    inclusion_residual,
    integrate_characteristic,
    integrate_policies,
    piece_index,
    policy_alphabet,
    solve_caputo_ivp,
    write_characteristic_csv,
)
from fracminimax.fraccalc import SampledPath, constant_path, gamma_fn
from fracminimax.pathspace import PathPoint

DRIFT = fx.build("drift", N=100)
NONLIN = fx.build("nonlinear", N=100, n=2)


def _origin(problem, x0=0.0):
    return PathPoint(constant_path(problem.grid, np.full(problem.dim, x0), 0))


def test_constant_velocity_matches_closed_form():
    zero = fx.build("zero-hamiltonian", N=100)
    ch = integrate_characteristic(zero, _origin(zero), 0.0, [0.0], SelectionPolicy((Letter((1.0,), (0.0,), 0.0),)))
    t = zero.grid.nodes()
    assert np.allclose(ch.path.values[:, 0], t**0.5 / gamma_fn(1.5), atol=1e-13)


def test_drift_motion_has_zero_cost():
    p = fx.random_point(np.random.default_rng(1), DRIFT, t_index=30)
    ch = integrate_characteristic(DRIFT, p, 0.0, [2.5], SelectionPolicy((Letter((1.0,), (0.0,), 0.0),)))
    assert np.max(np.abs(ch.z_values)) < 1e-13


@given(st.integers(0, 2**31), st.integers(0, 80), st.integers(1, 4))
@settings(max_examples=15, deadline=None)
def test_batch_matches_single_integration(seed, j0, J):
    rng = np.random.default_rng(seed)
    p = fx.random_point(rng, NONLIN, t_index=j0) if j0 else _origin(NONLIN, 0.3)
    letters = policy_alphabet(NONLIN, 3)
    pols = rng.integers(0, len(letters), size=(4, J))
    s = rng.normal(size=2)
    batch = integrate_policies(NONLIN, p, s, letters, pols)
    for i in range(4):
        ch = integrate_characteristic(NONLIN, p, 0.0, s, SelectionPolicy(tuple(letters[k] for k in pols[i])))
        assert np.allclose(ch.path.values, batch.X[i], atol=1e-12)
        assert np.allclose(ch.z_values, batch.Z[i], atol=1e-12)


@given(st.integers(0, 2**31))
@settings(max_examples=15, deadline=None)
def test_characteristics_satisfy_the_inclusion(seed):
    rng = np.random.default_rng(seed)
    p = fx.random_point(rng, NONLIN)
    letters = policy_alphabet(NONLIN, 4)
    pol = SelectionPolicy(tuple(letters[k] for k in rng.integers(0, len(letters), 3)))
    ch = integrate_characteristic(NONLIN, p, 0.5, rng.normal(size=2), pol)
    excess, gap = inclusion_residual(ch, NONLIN)
    assert excess <= 1e-12 and gap <= 1e-12
    assert np.array_equal(ch.path.values[: p.t_index + 1], p.values)
    assert ch.z_values[p.t_index] == 0.5


def test_feedback_selection_is_checked():
    def too_fast(t, values):
        return 10.0 * np.ones(2)

    with pytest.raises(DynamicsError):
        integrate_characteristic(NONLIN, _origin(NONLIN), 0.0, [1.0, 0.0], SelectionPolicy((too_fast,)))


def test_feedback_selection_runs():
    def brake(t, values):
        x = values[-1]
        return -0.5 * x / max(1.0, np.linalg.norm(x)) * NONLIN.c_H

    ch = integrate_characteristic(NONLIN, _origin(NONLIN, 1.0), 0.0, [1.0, 1.0], SelectionPolicy((brake,)))
    assert np.all(np.diff(ch.path.values[:, 0]) < 0)


def test_end_index_gives_a_prefix():
    p = fx.random_point(np.random.default_rng(2), NONLIN, t_index=20)
    letters = policy_alphabet(NONLIN, 3)
    pol = [[1, 2, 3]]
    short = integrate_policies(NONLIN, p, [1.0, 0.0], letters, pol, end_index=50)
    assert short.X.shape[1] == 51
    with pytest.raises(DynamicsError):
        integrate_policies(NONLIN, p, [1.0, 0.0], letters, pol, end_index=20)


def test_concatenate_joins_at_switch():
    p = fx.random_point(np.random.default_rng(4), DRIFT, t_index=10)
    letters = policy_alphabet(DRIFT, 3)
    first = integrate_characteristic(DRIFT, p, 0.0, [1.0], SelectionPolicy((letters[1],)))
    q = first.point(50)
    second = integrate_characteristic(DRIFT, q, first.z_values[50], [1.0], SelectionPolicy((letters[2],)))
    both = concatenate(first, 50, second)
    assert np.array_equal(both.path.values[:51], first.path.values[:51])
    assert np.array_equal(both.z_values[50:], second.z_values[50:])
    assert both.t0_index == 10
    with pytest.raises(DynamicsError):
        concatenate(first, 40, second)


def test_history_must_be_representable():
    vals = np.zeros((21, 1))
    vals[10:] = 1.0  # a jump
    with pytest.raises(DynamicsError):
        history_generator(PathPoint(SampledPath(DRIFT.grid, vals)), 0.5)


def test_recovered_history_reproduces_the_path():
    x = fx.random_ac_path(np.random.default_rng(5), DRIFT.grid, 1, 0.5, kind="trig")
    p = PathPoint(x.realize().truncate(40))
    ch = solve_caputo_ivp(p, 0.0, lambda t, v: (np.zeros(1), 0.0), DRIFT)
    assert np.allclose(ch.path.values[:41], p.values)


def test_piece_index():
    pi = piece_index(10, 2, 4)
    assert list(pi[:3]) == [-1, -1, -1]
    assert list(pi[3:]) == [0, 1, 1, 2, 2, 3, 3, 3]


@given(st.integers(2, 5), st.integers(1, 12), st.integers(1, 12))
@settings(max_examples=20, deadline=None)
def test_directions_are_unit_and_prefix_nested(n, k1, k2):
    k1, k2 = sorted((k1, k2))
    a, b = directions(n, k1), directions(n, k2)
    assert np.allclose(np.linalg.norm(b, axis=1), 1.0)
    assert np.array_equal(a, b[:k1])


def test_letters_admissible():
    for l in policy_alphabet(NONLIN, 5):
        assert l.admissible(NONLIN.c_H)
    assert not Letter((1.0,), (1.0,), 0.5).admissible(1.0)


def test_csv_columns():
    ch = integrate_characteristic(DRIFT, _origin(DRIFT), 0.0, [1.0], SelectionPolicy((Letter((1.0,), (0.0,), 0.0),)))
    buf = io.StringIO()
    write_characteristic_csv(ch, buf)
    head = buf.getvalue().splitlines()
    assert head[0] == "t,x1,z,psi1"
    assert len(head) == DRIFT.grid.N + 2


def test_spot_check_rejects_bad_constants():
    from fracminimax.dynamics import HamiltonianProblem, spot_check_assumptions

    bad = HamiltonianProblem(lambda t, x, s: 3.0 * np.linalg.norm(s, axis=-1) + 0 * np.sum(x, axis=-1), lambda v: 0.0,
                             1.0, lambda R: 1.0, 0.5, DRIFT.grid, 1)
    gs, _ = spot_check_assumptions(bad)
    assert gs > 1
