import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sst

from lsvgroup.dynamics import MapParams, apply_map
from lsvgroup.groups import (CocycleSpec, GroupElement, IllConditionedRank, ZeroProjectionWarning,
                             axis_generator, cocycle_product, evaluate_cocycle, fix_space,
                             golden_angle, haar_sample, matrix_exp_skew, project_dichotomy,
                             rotated_sum_sup, rotation2)


def series_exp(s, terms=30):
    out = np.eye(s.shape[0])
    term = np.eye(s.shape[0])
    for k in range(1, terms):
        term = term @ s / k
        out = out + term
    return out


def rand_skew(rng, d, scale=1.0):
    a = rng.standard_normal((d, d))
    a = a - a.T
    return scale * a / np.linalg.norm(a, 2)


def rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def test_exp_examples():
    r = matrix_exp_skew([[0.0, -math.pi / 2], [math.pi / 2, 0.0]]).matrix
    np.testing.assert_allclose(r, [[0.0, -1.0], [1.0, 0.0]], atol=1e-15)
    for d in (1, 2, 3, 5):
        np.testing.assert_array_equal(matrix_exp_skew(np.zeros((d, d))).matrix, np.eye(d))


@pytest.mark.parametrize("d", [2, 3, 4, 5, 7])
def test_exp_matches_series(d):
    rng = np.random.default_rng(d)
    for _ in range(5):
        s = rand_skew(rng, d, rng.uniform(0.05, 1.0))
        np.testing.assert_allclose(matrix_exp_skew(s).matrix, series_exp(s), rtol=0, atol=1e-12)


def test_exp_so3_axis_angle():
    np.testing.assert_allclose(matrix_exp_skew(axis_generator((0, 0, 1), 0.7)).matrix,
                               rot_z(0.7), atol=1e-15)


@given(st.integers(2, 6), st.integers(0, 10_000), st.floats(0.0, 8.0))
def test_exp_is_special_orthogonal(d, seed, scale):
    s = rand_skew(np.random.default_rng(seed), d, scale)
    q = matrix_exp_skew(s).check()
    assert q.orthogonality_defect() <= 1e-10


def test_group_element_check():
    with pytest.raises(ValueError):
        GroupElement(np.diag([1.0, -1.0])).check()
    with pytest.raises(ValueError):
        GroupElement(2 * np.eye(2)).check()
    with pytest.raises(ValueError):
        GroupElement(np.ones(3))


def test_cocycle_examples():
    w = 0.9
    g = evaluate_cocycle(CocycleSpec.so2(w), 0.37).matrix
    np.testing.assert_allclose(g, rotation2(w), atol=1e-15)
    spec = CocycleSpec("SO3", axis_generator((0, 0, 1), math.pi / 3),
                       0.1 * axis_generator((1, 0, 0)))
    np.testing.assert_allclose(evaluate_cocycle(spec, 0.0).matrix, rot_z(math.pi / 3), atol=1e-15)
    rng = np.random.default_rng(4)
    spec4 = CocycleSpec("SOd", rand_skew(rng, 4), rand_skew(rng, 4))
    q = evaluate_cocycle(spec4, 0.7).matrix
    assert np.max(np.abs(q.T @ q - np.eye(4))) <= 1e-10
    # exp(S0 + x^eta S1) against the series
    spec5 = CocycleSpec("SOd", rand_skew(rng, 5), rand_skew(rng, 5), 0.5)
    x = 0.3
    s = spec5.base_generator + x ** 0.5 * spec5.modulation_generator
    np.testing.assert_allclose(evaluate_cocycle(spec5, x).matrix, series_exp(s), atol=1e-12)


def test_cocycle_spec_validation():
    with pytest.raises(ValueError):
        CocycleSpec("SO2", np.zeros((3, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        CocycleSpec("bogus", np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        CocycleSpec.so2(1.0, 0.5, eta=0.0)
    with pytest.raises(ValueError):
        evaluate_cocycle(CocycleSpec.so2(1.0), 1.5)
    t = CocycleSpec("trivial", np.ones((2, 2)), np.ones((2, 2)))
    assert not t.base_generator.any() and t.is_constant


def test_torus_projects_off_blocks():
    rng = np.random.default_rng(0)
    spec = CocycleSpec("torus", rand_skew(rng, 4), rand_skew(rng, 4))
    assert not spec.base_generator[:2, 2:].any() and not spec.base_generator[2:, :2].any()


def test_cocycle_product_examples():
    p = MapParams(0.4)
    spec = CocycleSpec.so3_axis(golden_angle(), 0.8)
    np.testing.assert_array_equal(cocycle_product(spec, p, 0.3, 0).matrix, np.eye(3))
    const = CocycleSpec.so2(0.7)
    np.testing.assert_allclose(cocycle_product(const, p, 0.3, 5).matrix,
                               np.linalg.matrix_power(rotation2(0.7), 5), atol=1e-14)
    y = 0.61
    ys = [y, apply_map(p, y), apply_map(p, apply_map(p, y))]
    ref = np.eye(3)
    for z in ys:
        ref = ref @ evaluate_cocycle(spec, z).matrix
    np.testing.assert_allclose(cocycle_product(spec, p, y, 3).matrix, ref, atol=1e-13)
    with pytest.raises(ValueError):
        cocycle_product(spec, p, 0.3, -1)


@settings(max_examples=30)
@given(st.floats(0.0, 0.9), st.floats(0.0, 1.0), st.integers(0, 20), st.integers(0, 20))
def test_cocycle_identity(g, y, j, k):
    p = MapParams(g)
    spec = CocycleSpec.so3_axis(1.1, 0.9, eta=0.7)
    z = y
    for _ in range(j):
        z = apply_map(p, z)
    lhs = cocycle_product(spec, p, y, j + k).matrix
    rhs = cocycle_product(spec, p, y, j).matrix @ cocycle_product(spec, p, z, k).matrix
    assert np.max(np.abs(lhs - rhs)) <= 1e-10


def test_holder_modulus():
    rng = np.random.default_rng(7)
    for eta in (1.0, 0.5):
        spec = CocycleSpec("SOd", rand_skew(rng, 4), rand_skew(rng, 4, 2.0), eta)
        c = spec.holder_constant()
        x, xp = rng.uniform(0, 1, 1000), rng.uniform(0, 1, 1000)
        for a, b in zip(x, xp):
            diff = np.max(np.abs(evaluate_cocycle(spec, a).matrix - evaluate_cocycle(spec, b).matrix))
            assert diff <= 1.1 * c * abs(a - b) ** eta + 1e-14


def test_fix_space_examples():
    assert fix_space(rotation2(math.pi / 2)).rank == 0
    fs = fix_space(rot_z(math.pi / 3))
    assert fs.rank == 1
    np.testing.assert_allclose(np.abs(fs.fix_basis[0]), [0, 0, 1], atol=1e-14)
    assert fix_space(np.eye(4)).rank == 4
    # one planar generator in d = 3 has rank 2, so Fix has dimension 1
    rng = np.random.default_rng(1)
    u = rng.standard_normal(3)
    assert fix_space(matrix_exp_skew(axis_generator(u, 1.3))).rank == 1
    # block rotations in d = 5: rank(S0) = 4
    s = np.zeros((5, 5))
    s[:2, :2] = [[0, -1.0], [1.0, 0]]
    s[2:4, 2:4] = [[0, -2.0], [2.0, 0]]
    assert fix_space(matrix_exp_skew(s)).rank == 1


def test_fix_space_ambiguous_rank():
    with pytest.raises(IllConditionedRank):
        fix_space(rot_z(1e-8))


def test_project_dichotomy_examples():
    fs = fix_space(rot_z(math.pi / 3))
    v = np.array([1.0, 1.0, 1.0])
    perp = project_dichotomy(v, fs, "perp")
    fix = project_dichotomy(v, fs, "fix")
    np.testing.assert_allclose(perp, [1, 1, 0], atol=1e-15)
    np.testing.assert_allclose(fix, [0, 0, 1], atol=1e-15)
    np.testing.assert_allclose(perp + fix, v, atol=1e-15)
    with pytest.warns(ZeroProjectionWarning):
        project_dichotomy([1.0, 0.0, 0.0], fs, "fix")
    with pytest.raises(ValueError):
        project_dichotomy(v, fs, "sideways")


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(0.1, 3.0))
def test_dichotomy_split_is_orthogonal(v, angle):
    fs = fix_space(matrix_exp_skew(axis_generator((0.3, -0.2, 1.0), angle)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroProjectionWarning)
        a = project_dichotomy(v, fs, "perp")
        b = project_dichotomy(v, fs, "fix")
    assert abs(a @ b) <= 1e-10 * (1 + np.dot(v, v))
    np.testing.assert_allclose(a + b, v, atol=1e-12)


def test_rotated_sum_examples():
    assert rotated_sum_sup(rotation2(math.pi / 2), [1.0, 0.0], 100) == pytest.approx(math.sqrt(2),
                                                                                    abs=1e-14)
    assert rotated_sum_sup(np.eye(2), [1.0, 0.0], 100) == pytest.approx(101.0, abs=1e-12)


def brute_rotated(g, v, L):
    s = np.zeros_like(v)
    w = v.copy()
    best = 0.0
    for _ in range(L + 1):
        s = s + w
        best = max(best, np.linalg.norm(s))
        w = g @ w
    return best


@settings(max_examples=20)
@given(st.floats(0.05, 2 * math.pi - 0.05), st.integers(1, 2000))
def test_rotated_sum_bound(w, L):
    v = np.array([1.0, 0.0])
    got = rotated_sum_sup(rotation2(w), v, L)
    assert got == pytest.approx(brute_rotated(rotation2(w), v, L), rel=1e-9)
    assert got <= 2.0 / abs(np.exp(1j * w) - 1.0) * (1 + 1e-12)


def test_haar_so2_angle_uniform():
    rng = np.random.default_rng(11)
    ang = np.array([math.atan2(g.matrix[1, 0], g.matrix[0, 0]) % (2 * math.pi)
                    for g in (haar_sample("SO2", 2, rng) for _ in range(100_000))])
    assert sst.kstest(ang / (2 * math.pi), "uniform").statistic < 0.01


@pytest.mark.parametrize("kind,d", [("SO3", 3), ("SOd", 4), ("torus", 4)])
def test_haar_left_invariance(kind, d):
    rng = np.random.default_rng(12)
    n = 100_000
    a = np.array([haar_sample(kind, d, rng).matrix for _ in range(n)])
    b = np.array([haar_sample(kind, d, rng).matrix for _ in range(n)])
    g = haar_sample(kind, d, np.random.default_rng(99)).matrix
    gb = np.einsum("ij,njk->nik", g, b)
    for i, j in [(0, 0), (0, 1), (d - 1, d - 2)]:
        assert sst.ks_2samp(a[:, i, j], gb[:, i, j]).statistic < 0.02


@given(st.sampled_from([("SO2", 2), ("SO3", 3), ("SOd", 5), ("torus", 6), ("trivial", 3)]),
       st.integers(0, 2**32 - 1))
def test_haar_orthogonal(kd, seed):
    g = haar_sample(kd[0], kd[1], np.random.default_rng(seed)).check()
    assert g.orthogonality_defect() <= 1e-10
