import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats as sst

from lsvgroup.groups import haar_sample, rotation2
from lsvgroup.stats import (DegenerateVariance, InsufficientSamples, equivariance_defect,
                            estimate_covariance, diffusion_exponent, isotropy_defect, ks_normal,
                            log_normalization_probe, stable_index)


def test_covariance_examples():
    np.testing.assert_array_equal(estimate_covariance(np.zeros((200, 2)), 10), np.zeros((2, 2)))
    rng = np.random.default_rng(0)
    n = 1000
    x = rng.standard_normal((100_000, 2)) * math.sqrt(n)
    np.testing.assert_allclose(estimate_covariance(x, n), np.eye(2), atol=0.02)
    with pytest.raises(InsufficientSamples):
        estimate_covariance(x[:50], n)


def test_covariance_invariances():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((500, 3)) @ rng.standard_normal((3, 3))
    s = estimate_covariance(x, 7)
    perm = rng.permutation(500)
    np.testing.assert_allclose(estimate_covariance(x[perm], 7), s, rtol=1e-12, atol=1e-14)
    g = haar_sample("SO3", 3, rng).matrix
    np.testing.assert_allclose(estimate_covariance(x @ g.T, 7), g @ s @ g.T, rtol=0, atol=1e-12)
    assert np.array_equal(s, s.T)


def test_equivariance_examples():
    r = rotation2(math.pi / 2)
    assert equivariance_defect(np.eye(2), [r]) == 0.0
    assert equivariance_defect(np.diag([2.0, 1.0]), [r]) == pytest.approx(
        math.sqrt(2) / math.sqrt(5), rel=1e-12)
    assert equivariance_defect(np.zeros((2, 2)), [r], with_flag=True) == (0.0, True)


@given(st.floats(0.01, 100.0), st.integers(2, 5), st.integers(0, 1000))
def test_scalar_matrices_are_central(s2, d, seed):
    rng = np.random.default_rng(seed)
    gs = [haar_sample("SOd", d, rng) for _ in range(5)]
    assert equivariance_defect(s2 * np.eye(d), gs) <= 1e-14


def test_isotropy():
    assert isotropy_defect(3 * np.eye(3)) == 0.0
    assert isotropy_defect(np.diag([1.0, -1.0])) == pytest.approx(1.0)


def test_ks_examples():
    rng = np.random.default_rng(2)
    assert ks_normal(rng.standard_normal(100_000)) < 0.006
    u = rng.uniform(-math.sqrt(3), math.sqrt(3), 100_000)
    assert ks_normal(u) > 0.05
    with pytest.raises(DegenerateVariance):
        ks_normal(np.ones(2000))
    assert ks_normal(np.ones(2000), standardize=False) >= 0.5
    with pytest.raises(InsufficientSamples):
        ks_normal(np.zeros(10))


def test_ks_matches_scipy():
    x = np.random.default_rng(3).standard_normal(5000) * 0.7 + 0.1
    ref = sst.kstest((x - x.mean()) / x.std(), "norm").statistic
    assert ks_normal(x) == pytest.approx(ref, abs=1e-12)


def test_ks_projection():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((5000, 2))
    assert ks_normal(x, (1.0, 1.0)) == pytest.approx(ks_normal(x @ np.array([1, 1]) / math.sqrt(2)),
                                                    abs=1e-15)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200), st.booleans())
def test_ks_in_unit_interval(xs, standardize):
    try:
        k = ks_normal(np.array(xs), standardize=standardize, min_samples=1)
    except DegenerateVariance:
        return
    assert 0.0 <= k <= 1.0


NS = np.array([10**3, 10**4, 10**5, 10**6])


def test_exponent_linear():
    ns = NS
    samples = [np.full((10, 1), float(n)) for n in ns]
    e, s = diffusion_exponent(samples, ns)
    assert e == pytest.approx(1.0, abs=1e-12)


def test_exponent_random_walk():
    # exact partial sums of n iid +-1 steps: 2 Bin(n, 1/2) - n
    rng = np.random.default_rng(5)
    samples = [2.0 * rng.binomial(n, 0.5, 10_000) - n for n in NS]
    e, _ = diffusion_exponent(samples, NS)
    assert abs(e - 0.5) <= 0.03


def test_exponent_stable_increments():
    # partial sums of iid symmetric alpha-stable steps: simulated directly for
    # the small n, then checked to scale like n^(1/alpha)
    alpha = 1.43
    rng = np.random.default_rng(6)
    ns = np.array([10, 30, 100, 300, 1000])
    steps = sst.levy_stable.rvs(alpha, 0.0, size=(2000, ns[-1]), random_state=rng)
    csum = np.cumsum(steps, axis=1)
    samples = [csum[:, n - 1] for n in ns]
    e, _ = diffusion_exponent(samples, ns, min_decades=2)
    assert abs(e - 1 / alpha) <= 0.05


@given(st.floats(1e-3, 1e3))
def test_exponent_scale_invariant(c):
    rng = np.random.default_rng(7)
    samples = [rng.standard_normal((200, 2)) * n ** 0.6 for n in NS]
    a = diffusion_exponent(samples, NS)[0]
    b = diffusion_exponent([c * s for s in samples], NS)[0]
    assert abs(a - b) <= 1e-10


def test_exponent_needs_decades():
    with pytest.raises(InsufficientSamples):
        diffusion_exponent([np.ones(5)] * 3, [10, 20, 40])


def test_hill_examples():
    rng = np.random.default_rng(8)
    cauchy = stable_index(rng.standard_cauchy(100_000))
    assert abs(cauchy["alpha"] - 1.0) <= 0.1
    pareto = stable_index(rng.pareto(2.5, 100_000) + 1.0)
    assert abs(pareto["alpha"] - 2.5) <= 0.15
    gauss = stable_index(rng.standard_normal(100_000))
    assert gauss["at_boundary"] and gauss["alpha"] >= 2.0
    lo, hi = pareto["band"]
    assert lo <= pareto["alpha"] <= hi
    with pytest.raises(InsufficientSamples):
        stable_index(np.ones(100))


def test_log_probe_synthetic():
    rng = np.random.default_rng(9)
    a = 0.8
    ns = np.array([10**3, 10**4, 10**5, 10**6, 10**7])
    samples = [rng.standard_normal((20_000, 2)) * math.sqrt(a * n * math.log(n)) for n in ns]
    probe = log_normalization_probe(samples, ns)
    assert probe["slope"] > 0
    assert probe["coefficient"] == pytest.approx(a, rel=0.1)
    flat = log_normalization_probe([np.full(100, math.sqrt(n)) for n in ns], ns)
    assert abs(flat["slope"]) <= 1e-12
    const = log_normalization_probe([np.zeros(100) for _ in ns], ns)
    assert const["slope"] == 0.0
