"""Odd-restricted affine coupling layer.

The layer keeps the masked coordinates and rescales/shifts the rest with
networks of the masked part.  Splitting a network's output into its even and
odd halves gives an even, positive, bounded scale and an odd translation,
which together make the whole map odd.
"""
from dataclasses import dataclass

import numpy as np

from .nonlinear import squaresign, squish


def make_even_odd(f):
    """Return ``(even, odd)`` with ``even(x) = (f(x) + f(-x)) / 2`` and
    ``odd(x) = (f(x) - f(-x)) / 2``."""
    def even(x):
        return 0.5 * (f(x) + f(-x))

    def odd(x):
        return 0.5 * (f(x) - f(-x))

    return even, odd


def alternating_mask(dim, rng=None):
    """0/1 alternating pattern; the starting parity is drawn from ``rng`` if given."""
    if dim < 2:
        raise ValueError("coupling needs dim >= 2")
    start = 0 if rng is None else int(rng.integers(2))
    return (np.arange(dim) + start) % 2


@dataclass(frozen=True)
class CouplingLayer:
    mask: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    tau: float

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim != 1 or m.shape[0] < 2:
            raise ValueError("mask must be a 1-D sequence of length >= 2")
        if not np.all((m == 0) | (m == 1)) or m.min() == m.max():
            raise ValueError("mask needs at least one 0 and one 1, nothing else")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        D = m.shape[0]
        if self.w1.shape[0] != D or self.w2.shape != (self.w1.shape[1], 2 * D):
            raise ValueError("network shapes do not match the mask")
        object.__setattr__(self, "mask", m.astype(float))

    @property
    def dim(self):
        return self.mask.shape[0]

    def raw(self, x):
        """Shared feedforward map R^D -> R^{2D}; the first half feeds the scale."""
        return squish(x @ self.w1 + self.b1) @ self.w2 + self.b2

    def scale_translation(self, xm):
        even, odd = make_even_odd(self.raw)
        D = self.dim
        s = np.exp(np.log1p(-self.tau) * squaresign(even(xm)[..., :D]))
        t = odd(xm)[..., D:]
        return s, t


def init_coupling(dim, tau, rng, hidden=16, mask=None, out_scale=1.0):
    if mask is None:
        mask = alternating_mask(dim, rng)
    w1 = rng.normal(0.0, 1.0 / np.sqrt(dim), (dim, hidden))
    b1 = rng.normal(0.0, 1.0, hidden)
    w2 = rng.normal(0.0, out_scale / np.sqrt(hidden), (hidden, 2 * dim))
    b2 = rng.normal(0.0, out_scale, 2 * dim)
    return CouplingLayer(np.asarray(mask), w1, b1, w2, b2, tau)


def _check(x, layer):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (layer.dim,):
        raise ValueError(f"expected last dimension {layer.dim}, got {x.shape}")
    return x


def coupling_forward(x_b, layer: CouplingLayer):
    x_b = _check(x_b, layer)
    m = layer.mask
    s, t = layer.scale_translation(m * x_b)
    return m * x_b + (1.0 - m) * (s * x_b + t)


def coupling_inverse(x_t, layer: CouplingLayer):
    x_t = _check(x_t, layer)
    m = layer.mask
    # the masked part passes through unchanged, so s and t are recomputable
    s, t = layer.scale_translation(m * x_t)
    return m * x_t + (1.0 - m) * (x_t - t) / s


def coupling_log_det(x_b, layer: CouplingLayer):
    """log|det J| = sum of log s over the unmasked coordinates."""
    x_b = _check(x_b, layer)
    m = layer.mask
    s, _ = layer.scale_translation(m * x_b)
    return np.sum((1.0 - m) * np.log(s), axis=-1)
