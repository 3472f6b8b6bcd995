import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracminimax import fixtures as fx
from fracminimax.fraccalc import Grid, SampledPath, constant_path
from fracminimax.pathspace import (
    PathPoint,
    PathSpaceError,
    check_dist_bounds,
    dist,
    dist_star,
    modulus_of_continuity,
    restrict,
    sampled,
)

G = Grid(1.0, 60)
seeds = st.integers(0, 2**31)
idx = st.integers(0, G.N)


def _pair(seed, j, k):
    rng = np.random.default_rng(seed)
    x = fx.random_ac_path(rng, G, 2, 0.5)
    y = fx.random_ac_path(rng, G, 2, 0.5)
    return restrict(x, j), restrict(y, k)


@given(seeds, idx, idx)
@settings(max_examples=40, deadline=None)
def test_dist_is_symmetric_and_nonnegative(seed, j, k):
    p, q = _pair(seed, j, k)
    assert dist(p, q) == dist(q, p) >= 0


@given(seeds, idx)
@settings(max_examples=20, deadline=None)
def test_dist_to_self_is_zero(seed, j):
    p, _ = _pair(seed, j, 0)
    assert dist(p, p) == 0.0


@given(seeds, idx, idx, idx)
@settings(max_examples=40, deadline=None)
def test_triangle_inequality(seed, i, j, k):
    rng = np.random.default_rng(seed)
    ps = [restrict(fx.random_ac_path(rng, G, 1, 0.4), m) for m in (i, j, k)]
    assert dist(ps[0], ps[2]) <= dist(ps[0], ps[1]) + dist(ps[1], ps[2]) + 1e-12


@given(seeds, idx, idx)
@settings(max_examples=40, deadline=None)
def test_standard_bounds(seed, j, k):
    j, k = max(j, k), min(j, k)
    p, q = _pair(seed, j, k)
    b = check_dist_bounds(p, q)
    assert b.upper and b.time_gap and b.value_gap


@given(seeds, idx, idx)
@settings(max_examples=30, deadline=None)
def test_refined_distance_is_smaller(seed, j, k):
    p, q = _pair(seed, j, k)
    assert dist_star(p, q, refine=True) <= dist_star(p, q) + 1e-14


def test_time_gap_of_constant_paths():
    p = PathPoint(constant_path(G, [1.0], 40))
    q = PathPoint(constant_path(G, [1.0], 10))
    assert dist(p, q) == pytest.approx(30 * G.h)


@given(seeds, st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=30, deadline=None)
def test_modulus_is_monotone(seed, d1, d2):
    p, _ = _pair(seed, G.N, 0)
    lo, hi = sorted((d1, d2))
    assert modulus_of_continuity(p, lo) <= modulus_of_continuity(p, hi)


def test_restrict_keeps_generator():
    rng = np.random.default_rng(0)
    x = fx.random_ac_path(rng, G, 2, 0.5)
    p = restrict(x, 20)
    assert p.t_index == 20 and p.generator.last_index == 20
    assert np.array_equal(restrict(p, 5).values, x.realize().values[:6])
    with pytest.raises(PathSpaceError):
        restrict(p, 21)


def test_errors():
    p = sampled(np.zeros((3, 1)), G)
    q = sampled(np.zeros((3, 2)), G)
    with pytest.raises(PathSpaceError):
        dist(p, q)
    with pytest.raises(PathSpaceError):
        check_dist_bounds(p, sampled(np.zeros((5, 1)), G))
    with pytest.raises(PathSpaceError):
        modulus_of_continuity(p, -1.0)
    with pytest.raises(PathSpaceError):
        PathPoint(SampledPath(G, np.zeros((3, 1))), SampledPath(G, np.zeros((2, 1))), 0.5)
