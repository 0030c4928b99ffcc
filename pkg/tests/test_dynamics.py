import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numba import njit

from lsvgroup.dynamics import (ConvergenceError, DomainError, MapParams, ReturnCapExceeded,
                               apply_map, branch_points, classify_return_time,
                               left_branch_inverse, return_time, return_time_orbit)

gammas = st.floats(0.0, 0.95)

# c_1..c_3 for gamma = 0.6 from a 40-digit root finder (mpmath.findroot)
C_GAMMA_06 = [0.29039522974334145055, 0.1868655605682950957, 0.12937638994956171028]


def test_apply_map_examples():
    assert apply_map(MapParams(0.6), 0.5) == 1.0
    assert apply_map(MapParams(0.0), 0.3) == pytest.approx(0.6, abs=1e-15)
    assert apply_map(MapParams(0.6), 0.75) == 0.5


@given(gammas)
def test_half_maps_to_one(g):
    assert apply_map(MapParams(g), 0.5) == 1.0


@given(gammas)
def test_jump_at_half(g):
    assert apply_map(MapParams(g), 0.5 + 1e-12) < 1e-11


@pytest.mark.parametrize("x", [-0.1, 1.0000001, math.nan, math.inf])
def test_apply_map_domain(x):
    with pytest.raises(DomainError):
        apply_map(MapParams(0.3), x)


def test_map_params_validation():
    with pytest.raises(ValueError):
        MapParams(1.0)
    with pytest.raises(ValueError):
        MapParams(-0.1)


@given(gammas, st.floats(0.0, 1.0))
def test_image_in_unit_interval(g, x):
    y = apply_map(MapParams(g), x)
    assert 0.0 <= y <= 1.0


def test_left_inverse_examples():
    for g in (0.0, 0.3, 0.9):
        assert left_branch_inverse(MapParams(g), 1.0) == 0.5
    assert left_branch_inverse(MapParams(0.0), 0.4) == pytest.approx(0.2, abs=1e-15)
    p = MapParams(0.6)
    x = left_branch_inverse(p, 0.5)
    assert abs(apply_map(p, x) - 0.5) <= p.bisection_tol


def test_inverse_consistency_random():
    g = np.random.default_rng(0)
    for gamma in (0.0, 0.4, 0.8):
        p = MapParams(gamma)
        for z in g.random(1000):
            assert abs(apply_map(p, left_branch_inverse(p, z)) - z) <= 10 * p.bisection_tol


def test_left_inverse_unreachable_tolerance():
    with pytest.raises(ConvergenceError):
        # 0.3 happens to have an exact double preimage, so pick a point that does not
        left_branch_inverse(MapParams(0.6, bisection_tol=1e-30), 0.1789655172413793)


def test_branch_points_examples():
    bp = branch_points(MapParams(0.0), 3)
    assert bp.points.tolist() == [0.5, 0.25, 0.125, 0.0625]
    p = MapParams(0.6)
    bp = branch_points(p, 3)
    assert bp[0] == 0.5
    np.testing.assert_allclose(bp.points[1:], C_GAMMA_06, rtol=0, atol=1e-15)
    assert abs(apply_map(p, bp[1]) - 0.5) <= p.bisection_tol
    assert abs(apply_map(p, bp[2]) - bp[1]) <= p.bisection_tol


def test_branch_points_power_law():
    bp = branch_points(MapParams(0.6), 10_000)
    k = np.arange(100, 10_001)
    slope = np.polyfit(np.log(k), np.log(bp.points[k]), 1)[0]
    assert -1 / 0.6 - 0.1 <= slope <= -1 / 0.6 + 0.1


@given(gammas)
def test_branch_points_decreasing(g):
    c = branch_points(MapParams(g), 50).points
    assert c[0] == 0.5
    assert np.all(np.diff(c) < 0)


def test_return_time_examples():
    p = MapParams(0.0)
    r, orb = return_time_orbit(p, 0.8)
    assert r == 1 and orb.tolist() == [0.8]
    r, orb = return_time_orbit(p, 0.6)
    assert r == 3
    np.testing.assert_allclose(orb, [0.6, 0.2, 0.4], atol=1e-15)


@pytest.mark.parametrize("n", [2, 5, 17, 120])
def test_return_time_at_cylinder_edge(n):
    p = MapParams(0.6)
    c = branch_points(p, n).points
    y = 0.5 + c[n - 1] / 2 + 1e-13 * c[n - 1]
    assert return_time(p, y) == n


def test_return_time_domain_and_cap():
    with pytest.raises(DomainError):
        return_time(MapParams(0.3), 0.4)
    p = MapParams(0.9, max_return=50)
    c = branch_points(p, 200).points
    with pytest.raises(ReturnCapExceeded):
        return_time(p, 0.5 + c[150] / 2)


def test_cylinder_consistency_classification():
    p = MapParams(0.6)
    ys = 0.5 + 0.5 * np.random.default_rng(1).random(10_000)
    bp = branch_points(p, 1000)
    # add points just above 1/2, deeper than the table reaches
    ys = np.concatenate([ys, 0.5 + 0.5 * bp.points[1000] * np.array([0.9, 0.5, 0.1])])
    cls = classify_return_time(ys, bp)
    brute = np.array([return_time(p, y) for y in ys])
    # c_0..c_1000 resolve r <= 1001; deeper points share the label 1002
    assert np.all(brute[-3:] > 1001)
    assert np.array_equal(cls, np.minimum(brute, 1002))


@njit(cache=True)
def steps_below_half(y, gamma, n):
    """Consecutive first iterates of y that stay in [0, 1/2), up to n."""
    coef = 2.0 ** gamma
    x = 2.0 * y - 1.0
    k = 0
    while k < n and x < 0.5:
        x = x * (1.0 + coef * x ** gamma)
        k += 1
    return k


@given(gammas, st.floats(0.5, 1.0))
def test_orbit_stays_outside_y_until_return(g, y):
    p = MapParams(g, max_return=10**6)
    try:
        r, orb = return_time_orbit(p, y)
    except ReturnCapExceeded:
        # points just above 1/2 land near 0 and genuinely need more than the cap
        assert steps_below_half(y, g, p.max_return) == p.max_return
        return
    assert orb[0] == y
    assert np.all(orb[1:] < 0.5)
    # monotone escape along the left branch
    assert np.all(np.diff(orb[1:]) > 0)
    assert apply_map(p, orb[-1]) >= 0.5
