import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import BPoly, CubicSpline

from orbistab.errors import DomainExceeded
from orbistab.interp import Interpolant, wrap_angle

X = np.linspace(0.0, 2 * math.pi, 41)


def test_hermite_matches_scipy_bpoly():
    y = np.stack([np.sin(X), np.cos(X), -np.sin(X)], axis=1)
    ref = BPoly.from_derivatives(X, y)
    f = Interpolant.hermite(X, [y[:, 0], y[:, 1], y[:, 2]])
    xs = np.linspace(0.0, 2 * math.pi, 333)
    for nu in range(3):
        np.testing.assert_allclose(f(xs, nu), ref(xs, nu), atol=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 2 * math.pi))
def test_scalar_paths_agree(x):
    f = Interpolant.hermite(X, [np.sin(X), np.cos(X), -np.sin(X)])
    v, d1, d2 = f.eval1_all(x)
    assert v == pytest.approx(f(x), abs=1e-12)
    assert d1 == pytest.approx(f(x, 1), abs=1e-11)
    assert d2 == pytest.approx(f(x, 2), abs=1e-10)
    assert f.eval1(x) == pytest.approx(v, abs=1e-12)


def test_periodic_wrap():
    f = Interpolant.periodic_spline(X, np.cos(X))
    ref = CubicSpline(X, np.cos(X), bc_type="periodic")
    assert f(1.0 + 4 * math.pi) == pytest.approx(float(ref(1.0)), abs=1e-12)
    assert f.eval1(-1.0) == pytest.approx(float(ref(2 * math.pi - 1.0)), abs=1e-12)


def test_vector_values():
    y = np.column_stack([np.sin(X), np.cos(X)])
    f = Interpolant.spline(X, y)
    assert f(0.3).shape == (2,)
    assert f(np.array([0.1, 0.2, 0.3])).shape == (3, 2)
    np.testing.assert_allclose(f.eval1(0.3), f(0.3), atol=1e-14)


def test_derivative_object():
    f = Interpolant.bspline(X, np.sin(X))
    d = f.derivative()
    xs = np.linspace(0.1, 6.0, 50)
    np.testing.assert_allclose(d(xs), f(xs, 1), atol=1e-12)
    np.testing.assert_allclose(d(xs), np.cos(xs), atol=1e-6)


def test_domain_error():
    f = Interpolant.spline(X, np.sin(X))
    with pytest.raises(DomainExceeded):
        f(7.0)
    with pytest.raises(DomainExceeded):
        f.eval1(-0.1)


@settings(max_examples=200, deadline=None)
@given(st.floats(-100.0, 100.0))
def test_wrap_angle(x):
    y = wrap_angle(x)
    assert -math.pi < y <= math.pi
    assert math.cos(y) == pytest.approx(math.cos(x), abs=1e-9)
    assert math.sin(y) == pytest.approx(math.sin(x), abs=1e-9)
