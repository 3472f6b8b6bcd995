import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracminimax import fixtures as fx
from fracminimax.dynamics import Letter, SelectionPolicy, integrate_characteristic, policy_alphabet
from fracminimax.fraccalc import constant_path
from fracminimax.lyapunov import build_lyapunov_params
from fracminimax.minimax import (
    REFUTED,
    CandidateSolution,
    MinimaxError,
    SearchBudget,
    classical_residual,
    comparison_witness,
    envelope_bracket,
    multistep_chain,
    pair_letters,
    psi_lower,
    psi_upper,
    stability_check_lower,
    stability_check_upper,
)
from fracminimax.pathspace import PathPoint

DRIFT = fx.build("drift", N=100)
NONLIN = fx.build("nonlinear", N=100)
SMALL = SearchBudget(J=3, K=3)


def test_forecast_oracle_values(oracles):
    o = oracles["forecast"][0]
    errs = []
    for N in (200, 400):
        P = fx.build("drift", N=N)
        q = fx.memory_trap_point(P)
        assert q.current[0] == pytest.approx(o["x_t0"], abs=1e-12)
        errs.append(abs(fx.forecast_candidate(P)(q) - o["x_T"]))
        # the generator jumps at t0; linear interpolation smears it over one cell
        assert errs[-1] <= 3.0 / N
    assert errs[1] < 0.6 * errs[0]


def test_forecast_reproduced_along_hint_motion():
    fc = fx.forecast_candidate(DRIFT)
    p = fx.random_point(np.random.default_rng(3), DRIFT, t_index=25)
    ch = integrate_characteristic(DRIFT, p, 0.0, [1.0], SelectionPolicy((Letter(DRIFT.hints[0], (0.0,), 0.0),)))
    vals = [fc(ch.point(j)) for j in range(25, 101)]
    assert np.max(np.abs(np.array(vals) - fc(p))) < 1e-12
    assert ch.path.values[-1, 0] == pytest.approx(fc(p), abs=1e-12)


def test_boundary_value_is_the_terminal_cost():
    p = fx.random_point(np.random.default_rng(0), NONLIN, t_index=NONLIN.grid.N)
    assert psi_upper(NONLIN, p, [1.0]).value == NONLIN.sigma_of(p)
    assert psi_lower(NONLIN, p, [1.0]).value == NONLIN.sigma_of(p)


@given(st.integers(0, 2**31), st.floats(-2, 2))
@settings(max_examples=10, deadline=None)
def test_drift_envelopes_bracket_the_forecast(seed, s):
    p = fx.random_point(np.random.default_rng(seed), DRIFT)
    v = fx.forecast_candidate(DRIFT)(p)
    assert psi_lower(DRIFT, p, [s], SMALL).value <= v + 1e-10
    assert psi_upper(DRIFT, p, [s], SMALL).value >= v - 1e-10


def test_more_pieces_never_worsen_the_envelope():
    p = fx.random_point(np.random.default_rng(9), NONLIN, t_index=20)
    ups, los = [], []
    for J in (1, 2, 4):
        b = SearchBudget(J=J, K=3)
        ups.append(psi_upper(NONLIN, p, [0.5], b).value)
        los.append(psi_lower(NONLIN, p, [0.5], b).value)
    assert ups[0] <= ups[1] + 1e-12 <= ups[2] + 2e-12
    assert los[0] >= los[1] - 1e-12 >= los[2] - 2e-12


def test_search_is_deterministic():
    p = fx.random_point(np.random.default_rng(9), NONLIN, t_index=20)
    b = SearchBudget(J=6, K=3, max_enumeration=10)
    r1, r2 = psi_upper(NONLIN, p, [0.5], b), psi_upper(NONLIN, p, [0.5], b)
    assert not r1.exhaustive
    assert r1.policy == r2.policy and r1.value == r2.value


def test_beam_search_is_not_worse_than_a_constant_policy():
    p = fx.random_point(np.random.default_rng(9), NONLIN, t_index=20)
    b = SearchBudget(J=6, K=3, max_enumeration=10)
    beam = psi_upper(NONLIN, p, [0.5], b).value
    const = psi_upper(NONLIN, p, [0.5], SearchBudget(J=1, K=3)).value
    assert beam >= const - 1e-12


@given(st.integers(0, 2**31), st.floats(-2, 2), st.sampled_from([0.3, 0.6, 1.0]))
@settings(max_examples=10, deadline=None)
def test_forecast_is_stable_and_classical(seed, s, t1):
    fc = fx.forecast_candidate(DRIFT)
    p = fx.random_point(np.random.default_rng(seed), DRIFT, t_index=20)
    up = stability_check_upper(fc, DRIFT, p, t1, [s], budget=SMALL)
    lo = stability_check_lower(fc, DRIFT, p, t1, [s], budget=SMALL)
    assert up.passed and lo.passed
    assert up.slack <= 1e-10 and lo.slack <= 1e-10
    assert classical_residual(fc, DRIFT, p) <= 1e-12


def test_forecast_derivatives_match_finite_differences():
    fc = fx.forecast_candidate(DRIFT)
    p = fx.random_point(np.random.default_rng(1), DRIFT, t_index=40)
    h = DRIFT.grid.h
    # time derivative: freeze the state for one step
    ch = integrate_characteristic(DRIFT, p, 0.0, [0.0], SelectionPolicy((Letter((0.0,), (0.0,), 0.0),)))
    dt_fd = (fc(ch.point(41)) - fc(p)) / h
    assert dt_fd == pytest.approx(fc.dt_phi(p), rel=0.05)
    # spatial derivative: the path-shift direction
    shifted = PathPoint(constant_path(DRIFT.grid, [0.0], 0))
    assert fc.grad_phi(shifted) == pytest.approx(1.0 / np.sqrt(np.pi), rel=1e-12)


def test_perturbed_forecast_fails_terminal_condition():
    fc = fx.forecast_candidate(DRIFT)
    bumped = CandidateSolution(lambda p: fc(p) + 0.1, fc.dt_phi, fc.grad_phi, "bumped")
    p = fx.random_point(np.random.default_rng(2), DRIFT, t_index=DRIFT.grid.N)
    assert classical_residual(bumped, DRIFT, p) == pytest.approx(0.1, abs=1e-12)


def test_constant_is_a_solution_without_hamiltonian():
    zero = fx.build("zero-hamiltonian", N=100)
    c = fx.constant_candidate(2.0)
    p = fx.random_point(np.random.default_rng(4), zero)
    for check in (stability_check_upper, stability_check_lower):
        r = check(c, zero, p, 1.0, [0.0], budget=SMALL)
        assert r.passed and abs(r.slack) < 1e-14
    assert classical_residual(c, zero, p) == 0.0


def test_memory_blind_candidate_is_refuted():
    P = fx.build("drift", N=200)
    q = fx.memory_trap_point(P)
    r = stability_check_upper(fx.memory_blind_candidate(P), P, q, 1.0, [1.0], eps=1e-3, budget=SearchBudget(J=4, K=3))
    assert not r.passed
    assert r.status == REFUTED
    assert r.margin > 0.1


def test_undecided_when_not_exhaustive():
    P = fx.build("drift", N=200)
    q = fx.memory_trap_point(P)
    r = stability_check_upper(fx.memory_blind_candidate(P), P, q, 1.0, [1.0], eps=1e-3,
                              budget=SearchBudget(J=4, K=3, max_enumeration=100))
    assert not r.passed and r.status.startswith("undecided")


def test_single_step_chain_matches_stability_check():
    fc = fx.forecast_candidate(DRIFT)
    p = fx.random_point(np.random.default_rng(5), DRIFT, t_index=20)
    ch = multistep_chain(fc, DRIFT, p, [0.5], 1, 1e-3, SMALL)
    r = stability_check_upper(fc, DRIFT, p, 1.0, [0.5], eps=1e-3, budget=SMALL)
    assert ch.step_slack[0] == pytest.approx(max(r.slack, 0.0), abs=1e-15)
    assert np.array_equal(ch.characteristic.path.values, r.witness.path.values)


@pytest.mark.parametrize("upper", [True, False])
def test_chain_slack_accumulates_monotonically(upper):
    fc = fx.forecast_candidate(DRIFT)
    p = fx.random_point(np.random.default_rng(6), DRIFT, t_index=20)
    ch = multistep_chain(fc, DRIFT, p, [1.3], 4, 1e-3, SMALL, upper=upper)
    assert ch.passed
    assert np.all(np.diff(ch.node_slack) >= 0)
    assert np.all(ch.node_slack <= ch.bound)
    assert list(ch.nodes) == [20, 40, 60, 80, 100]


def test_chain_rejects_a_failing_interval():
    P = fx.build("drift", N=200)
    with pytest.raises(MinimaxError):
        multistep_chain(fx.memory_blind_candidate(P), P, fx.memory_trap_point(P), [1.0], 2, 1e-3, SMALL)


@given(st.integers(0, 2**31), st.lists(st.floats(-1.5, 1.5), min_size=1, max_size=3))
@settings(max_examples=8, deadline=None)
def test_bracket_is_ordered(seed, s_vals):
    p = fx.random_point(np.random.default_rng(seed), NONLIN)
    br = envelope_bracket(NONLIN, p, [[s] for s in s_vals], SMALL)
    assert br.lower <= br.upper + 1e-12


def test_bracket_ordered_in_two_dimensions():
    P = fx.build("nonlinear", N=60, n=2)
    rng = np.random.default_rng(8)
    b = SearchBudget(J=2, K=4)
    for _ in range(3):
        p = fx.random_point(rng, P)
        br = envelope_bracket(P, p, [rng.normal(size=2) for _ in range(3)], b)
        assert br.lower <= br.upper + 1e-12


def test_more_multipliers_tighten_the_bracket():
    p = fx.random_point(np.random.default_rng(10), NONLIN, t_index=30)
    a = envelope_bracket(NONLIN, p, [[0.0]], SMALL)
    b = envelope_bracket(NONLIN, p, [[0.0], [0.5], [1.0]], SMALL)
    assert b.lower >= a.lower and b.upper <= a.upper


def test_pair_letters_are_unit_and_motionless():
    for l in pair_letters([[1.0, 0.0], [0.0, 2.0], [1.0, 0.0]], 2):
        assert np.linalg.norm(l.direction) == pytest.approx(1.0)
        assert l.rho == 1.0 and all(v == 0 for v in l.const)


def test_witness_with_identical_motions():
    P = fx.build("nonlinear", N=100)
    params = build_lyapunov_params(P.alpha, P.lambda_H, 8.0, 1.0)
    L = policy_alphabet(P, 3)
    pol = SelectionPolicy((L[1], L[2]))
    p = fx.random_point(np.random.default_rng(1), P, scale=0.5)
    eps = min(0.1, params.eps0)
    r = comparison_witness(P, p, eps, params, pol, pol)
    assert r.nonincreasing and r.final_holds
    assert abs(r.delta_sigma) == 0.0
    # v is V_eps(t, 0) = exp(-lambda t) eps: strictly decreasing
    assert np.all(np.diff(r.v) < 0)


def test_witness_rejects_mismatched_parameters():
    params = build_lyapunov_params(0.3, NONLIN.lambda_H, 8.0, 1.0)
    pol = SelectionPolicy((policy_alphabet(NONLIN, 3)[0],))
    p = fx.random_point(np.random.default_rng(1), NONLIN)
    with pytest.raises(MinimaxError):
        comparison_witness(NONLIN, p, 1e-3, params, pol, pol)


def test_budget_validation():
    with pytest.raises(MinimaxError):
        SearchBudget(J=0)
    with pytest.raises(MinimaxError):
        stability_check_upper(fx.forecast_candidate(DRIFT), DRIFT, fx.random_point(np.random.default_rng(0), DRIFT, t_index=50),
                              0.2, [1.0])


def test_candidate_must_be_finite():
    bad = CandidateSolution(lambda p: float("nan"))
    with pytest.raises(MinimaxError):
        bad(PathPoint(constant_path(DRIFT.grid, [0.0], 0)))
