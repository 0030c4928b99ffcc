import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lsvgroup.observables import ObservableSpec


def test_kinds_evaluate():
    v0, u = np.array([0.5, -1.0]), np.array([2.0, 0.25])
    x = 0.3
    np.testing.assert_array_equal(ObservableSpec("constant", v0)(x), v0)
    np.testing.assert_allclose(ObservableSpec("holder_power", v0, u, 0.5)(x),
                               v0 + math.sqrt(x) * u, rtol=1e-15)
    np.testing.assert_allclose(ObservableSpec("trigonometric", v0, u)(x),
                               v0 * math.cos(2 * math.pi * x) + u * math.sin(2 * math.pi * x),
                               rtol=1e-15)
    ind = ObservableSpec("indicator", v0, u)
    np.testing.assert_array_equal(ind(0.49), v0)
    np.testing.assert_array_equal(ind(0.5), v0 + u)


def test_table_interpolation():
    t = ObservableSpec("table", [0.0], table_x=[0.0, 0.5, 1.0], table_v=[0.0, 1.0, -1.0])
    assert t(0.25)[0] == pytest.approx(0.5)
    assert t(0.75)[0] == pytest.approx(0.0)
    assert t(1.0)[0] == -1.0
    assert t.sup_norm() == 1.0
    with pytest.raises(ValueError):
        ObservableSpec("table", [0.0], table_x=[0.1, 1.0], table_v=[0.0, 1.0])


def test_holder_zero_value():
    s = ObservableSpec("holder_power", [1.0, 2.0], [3.0, 4.0], 0.3)
    np.testing.assert_array_equal(s.value_at_zero(), [1.0, 2.0])


def test_centering_and_replace():
    s = ObservableSpec("holder_power", [0.0], [1.0]).centered([0.5])
    assert s(0.0)[0] == -0.5 and s(1.0)[0] == 0.5
    assert s.sup_norm() == pytest.approx(0.5, abs=1e-9)
    np.testing.assert_array_equal(s.with_v0([2.0])(0.0), [1.5])


def test_validation():
    with pytest.raises(ValueError):
        ObservableSpec("bogus", [1.0])
    with pytest.raises(ValueError):
        ObservableSpec("holder_power", [1.0, 0.0], [1.0])
    with pytest.raises(ValueError):
        ObservableSpec("holder_power", [1.0], [1.0], 1.5)


@given(st.floats(0.0, 1.0), st.floats(0.05, 1.0))
def test_sup_norm_bounds_values(x, eta):
    s = ObservableSpec("holder_power", [0.3, -1.0], [-2.0, 1.5], eta)
    assert np.linalg.norm(s(x)) <= s.sup_norm() + 1e-12
