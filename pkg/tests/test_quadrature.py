from math import factorial

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sosm.errors import InvalidArgumentError
from sosm.quadrature import edge_quadrature, quadrature


def monomial_integral(a, b):
    """Exact integral of x^a y^b over the reference triangle."""
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@pytest.mark.parametrize("degree", range(1, 11))
def test_weights_sum_to_reference_area(degree):
    rule = quadrature(degree)
    assert rule.weights.sum() == pytest.approx(0.5, abs=1e-15)
    assert np.allclose(rule.points.sum(axis=1), 1.0)
    assert np.all(rule.points >= 0)


@given(degree=st.integers(1, 10), data=st.data())
def test_exact_for_monomials_up_to_degree(degree, data):
    a = data.draw(st.integers(0, degree))
    b = data.draw(st.integers(0, degree - a))
    rule = quadrature(degree)
    x, y = rule.xy.T
    assert rule.weights @ (x**a * y**b) == pytest.approx(monomial_integral(a, b), rel=1e-13)


def test_centroid_rule_integrates_linear():
    rule = quadrature(1)
    x, y = rule.xy.T
    assert rule.weights @ (x + y) == pytest.approx(1 / 3, rel=1e-15)


def test_degree8_beta_integral():
    rule = quadrature(8)
    x, y = rule.xy.T
    assert rule.weights @ (x**3 * y**5) == pytest.approx(factorial(3) * factorial(5) / factorial(10), rel=1e-13)


@pytest.mark.parametrize("degree", [0, 11, 2.5, -1])
def test_unsupported_degree(degree):
    with pytest.raises(InvalidArgumentError):
        quadrature(degree)


def test_edge_rule():
    s, w = edge_quadrature(4)
    assert w.sum() == pytest.approx(2.0)
    assert w @ s**6 == pytest.approx(2 / 7)
