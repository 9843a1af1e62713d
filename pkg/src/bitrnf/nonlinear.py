"""Exponential-free activations built from squareplus.

All functions accept floats, arrays or recorded :class:`~bitrnf.autodiff.Var`
values.  ``b`` controls the smoothness around zero and defaults to 4.
"""
import numpy as np

from .autodiff import absolute, sqrt, value_of, vsum, where

DEFAULT_B = 4.0
_HUGE = 1e150


def _root(x, b):
    """sqrt(x**2 + b) without overflow for |x| > 1e150."""
    xv = value_of(x)
    big = np.abs(xv) > _HUGE
    if not np.any(big):
        return sqrt(x * x + b)
    small_x = where(big, 1.0, x)
    big_x = where(big, x, 1.0)
    return where(big, absolute(big_x) * sqrt(1.0 + (b / big_x) / big_x), sqrt(small_x * small_x + b))


def squareplus(x, b=DEFAULT_B):
    """(x + sqrt(x^2 + b)) / 2, evaluated without cancellation for x < 0."""
    if b < 0:
        raise ValueError("b must be non-negative")
    neg = value_of(x) < 0
    r = _root(x, b)
    if not np.any(neg):
        return 0.5 * (x + r)
    if b == 0:
        return where(neg, 0.0, x)
    # for x < 0: (x + r)/2 == b / (2 (r - x))
    pos_part = 0.5 * (x + r)
    neg_part = 0.5 * b / (r - x)
    return where(neg, neg_part, pos_part)


def squmoid(x, b=DEFAULT_B):
    """Derivative of :func:`squareplus`; a sigmoid-shaped map onto (0, 1)."""
    if b <= 0:
        raise ValueError("b must be positive")
    neg = value_of(x) < 0
    r = _root(x, b)
    if not np.any(neg):
        return 0.5 * (x / r + 1.0)
    pos_part = 0.5 * (x / r + 1.0)
    neg_part = 0.5 * b / r / (r - x)
    return where(neg, neg_part, pos_part)


def squaresign(x, b=DEFAULT_B):
    """2x / sqrt(4x^2 + b): odd, tanh-shaped, onto (-1, 1)."""
    if b <= 0:
        raise ValueError("b must be positive")
    return 2.0 * x / _root(2.0 * x, b)


def squish(x, b=DEFAULT_B):
    """Swish with the sigmoid replaced by squmoid."""
    return squmoid(x, b) * x


def squaremax(v, b=DEFAULT_B, axis=-1):
    """Softmax with exp replaced by squareplus; normalizes along ``axis``."""
    if value_of(v).size == 0 or value_of(v).shape[axis] == 0:
        raise ValueError("squaremax needs a non-empty input")
    p = squareplus(v, b)
    return p / vsum(p, axis=axis, keepdims=True)
