import numpy as np
import pytest
from hypothesis import given, strategies as st

from bitrnf.autodiff import Var, backpropagate
from bitrnf.nonlinear import squaremax, squaresign, squareplus, squish, squmoid

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


def test_squareplus_examples():
    assert squareplus(0.0) == 1.0
    assert squareplus(2.0) == pytest.approx(1.0 + np.sqrt(2.0), abs=1e-15)


def test_squareplus_negative_matches_extended_precision():
    # 50-digit mpmath evaluation of (x + sqrt(x^2 + 4)) / 2 at x = -50
    assert squareplus(-50.0) == pytest.approx(0.0199920063936071594091994, rel=1e-15)
    # naive formula cancels completely here; stable form keeps full precision
    assert squareplus(-1e8) == pytest.approx(1e-8, rel=1e-14)


def test_squareplus_huge_inputs_do_not_overflow():
    with np.errstate(over="raise"):
        assert squareplus(1e200) == 1e200
        assert 0.0 < squareplus(-1e200) < 1e-199
        assert squaresign(1e300) == 1.0


def test_squareplus_b_zero_is_relu():
    x = np.array([-2.0, 0.0, 3.0])
    np.testing.assert_array_equal(squareplus(x, b=0.0), [0.0, 0.0, 3.0])
    with pytest.raises(ValueError):
        squareplus(1.0, b=-1.0)


@given(finite)
def test_squareplus_above_relu(x):
    if abs(x) < 1e7:
        assert squareplus(x) > max(x, 0.0)
    else:
        # sqrt(x^2 + 4) rounds to |x| here, so only >= survives in floating point
        assert squareplus(x) >= max(x, 0.0) and squareplus(x) > 0.0


def test_squmoid_examples():
    assert squmoid(0.0) == 0.5
    assert squmoid(2.0) == pytest.approx(0.5 * (2.0 / np.sqrt(8.0) + 1.0), abs=1e-15)
    assert squmoid(2.0) == pytest.approx(0.8535534, abs=1e-7)


def test_squmoid_is_derivative_of_squareplus():
    rng = np.random.default_rng(0)
    x = rng.uniform(-10, 10, 20)
    h = 1e-5
    fd = (squareplus(x + h) - squareplus(x - h)) / (2 * h)
    np.testing.assert_allclose(squmoid(x), fd, atol=1e-9)


def test_squmoid_is_tape_derivative_of_squareplus():
    x = Var(np.linspace(-5, 5, 41), op="param")
    g = backpropagate(squareplus(x).sum(), {"x": x})["x"]
    np.testing.assert_allclose(g, squmoid(x.value), atol=1e-15)
    z = Var(0.0, op="param")
    assert backpropagate(squareplus(z), {"z": z})["z"] == 0.5


def test_squaresign_examples():
    assert squaresign(0.0) == 0.0
    assert squaresign(1.0) == pytest.approx(2.0 / np.sqrt(8.0), abs=1e-15)
    assert squaresign(-1.0) == -squaresign(1.0)


@given(finite)
def test_squaresign_odd_bitwise(x):
    assert squaresign(-x) == -squaresign(x)
    assert -1.0 <= squaresign(x) <= 1.0


def test_squish_examples():
    assert squish(0.0) == 0.0
    assert squish(2.0) == pytest.approx(1.7071068, abs=1e-7)
    assert squish(-2.0) == pytest.approx(-0.2928932, abs=1e-7)


def test_squaremax_examples():
    np.testing.assert_allclose(squaremax(np.zeros(3)), np.full(3, 1 / 3), atol=1e-15)
    np.testing.assert_allclose(squaremax(np.array([2.0, 0.0])),
                               [np.sqrt(2) / 2, 1 - np.sqrt(2) / 2], atol=1e-15)
    with pytest.raises(ValueError):
        squaremax(np.array([]))


@given(st.lists(finite, min_size=1, max_size=20))
def test_squaremax_simplex_and_equivariance(v):
    v = np.array(v)
    p = squaremax(v)
    assert np.all(p > 0)
    assert abs(p.sum() - 1.0) <= 1e-12
    perm = np.random.default_rng(len(v)).permutation(len(v))
    np.testing.assert_allclose(squaremax(v[perm]), p[perm], rtol=1e-15, atol=1e-300)


def test_identities_on_dense_grid():
    x = np.linspace(-50, 50, 200_001)
    np.testing.assert_allclose(squaresign(x), 2 * squmoid(2 * x) - 1, atol=1e-12)
    g = Var(x, op="param")
    grad = backpropagate(squareplus(g).sum(), {"g": g})["g"]
    np.testing.assert_allclose(grad, squmoid(x), atol=1e-12)
