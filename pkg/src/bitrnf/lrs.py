"""Odd linear rational spline (LRS) transform of a standardized variable.

A half spline with ``K`` intervals on normalized coordinates ``[0, 1]`` is
mirrored through the point ``(1/2, 1/2)``, giving ``2K`` intervals whose
transform on ``[-c, c]`` satisfies ``g(-e) = -g(e)``.  Outside ``[-c, c]`` the
map is the identity, which matches the unit end slopes.

Because the map is odd and the base is symmetric, the transformed variable
keeps mean zero; callers obtain the mean of ``loc + scale * g(eps)`` without
ever evaluating the spline.

Tables hold arrays whose last axis runs over knots; any leading axes (batch,
action dimension) broadcast against the leading axes of the evaluated points.
"""
from dataclasses import dataclass

import numpy as np

from .autodiff import (concat, cumsum, exp, flip, gather, log, sqrt,
                       value_of, where)
from .nonlinear import squaremax, squaresign

__all__ = [
    "FlowHyper", "HalfSpline", "KnotTable", "FlowInvariantError",
    "derive_hyper", "map_raw_params", "mirror", "identity_table",
    "forward", "inverse", "inverse_with_log_det", "log_abs_det_grad",
    "table_violations", "raw_sizes",
]


class FlowInvariantError(RuntimeError):
    """An assembled knot table broke monotonicity or symmetry."""


@dataclass(frozen=True)
class FlowHyper:
    tau: float
    K: int
    c: float

    @property
    def slope_bounds(self):
        return 1.0 - self.tau, 1.0 / (1.0 - self.tau)


def derive_hyper(tau):
    """K = round(2**(5 tau)) with ties to even, c = 5 tau."""
    tau = float(tau)
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    return FlowHyper(tau=tau, K=int(np.round(2.0 ** (5.0 * tau))), c=5.0 * tau)


def raw_sizes(hyper):
    """Lengths of the raw slope, midpoint, and two knot-spacing vectors."""
    K = hyper.K
    return K + 1, K, K, K


@dataclass(frozen=True)
class HalfSpline:
    qb: object
    qt: object
    phi_m: object
    d: object


@dataclass(frozen=True)
class KnotTable:
    qb: object
    qt: object
    phi_m: object
    d: object
    hyper: FlowHyper

    def select(self, idx):
        """Sub-table for leading-axis index ``idx`` (plain arrays only)."""
        return KnotTable(value_of(self.qb)[idx], value_of(self.qt)[idx],
                         value_of(self.phi_m)[idx], value_of(self.d)[idx], self.hyper)

    def detached(self):
        return KnotTable(value_of(self.qb), value_of(self.qt), value_of(self.phi_m),
                         value_of(self.d), self.hyper)


def _knot_spacing(y, hyper):
    floor = (1.0 - hyper.tau) / hyper.tau
    return (squaremax(y) + floor) / (1.0 + hyper.K * floor)


def map_raw_params(y_d, y_phi, y_dqb, y_dqt, hyper):
    """Map unconstrained outputs to a tau-bounded half spline.

    Slopes land in (1 - tau, 1/(1 - tau)); the two end slopes are pinned to 1
    so ``y_d[..., 0]`` and ``y_d[..., K]`` are ignored.  Midpoints land in
    ((1 - tau)/2, (1 + tau)/2).  Knot spacings on each axis sum to one and
    their ratio stays inside the slope bounds.
    """
    K, tau = hyper.K, hyper.tau
    for arr, n, label in ((y_d, K + 1, "y_d"), (y_phi, K, "y_phi"),
                          (y_dqb, K, "y_dqb"), (y_dqt, K, "y_dqt")):
        if value_of(arr).shape[-1] != n:
            raise ValueError(f"{label} needs {n} entries on its last axis")
    lead = value_of(y_d).shape[:-1]
    ones = np.ones(lead + (1,))
    zeros = np.zeros(lead + (1,))

    d = exp(np.log(1.0 - tau) * squaresign(y_d))
    d = concat([ones, d[..., 1:K], ones])
    phi_m = 0.5 * (1.0 + tau * squaresign(y_phi))

    def knots(y):
        steps = cumsum(_knot_spacing(y, hyper))
        return concat([zeros, steps[..., :K - 1], ones])

    return HalfSpline(qb=knots(y_dqb), qt=knots(y_dqt), phi_m=phi_m, d=d)


def table_violations(table, atol=0.0):
    """Human-readable list of broken table invariants (empty when valid)."""
    qb, qt = value_of(table.qb), value_of(table.qt)
    phi, d = value_of(table.phi_m), value_of(table.d)
    lo, hi = table.hyper.slope_bounds
    problems = []
    for name, q in (("qb", qb), ("qt", qt)):
        if np.any(np.diff(q, axis=-1) <= 0):
            problems.append(f"{name} not strictly increasing")
        if np.any(q[..., 0] != 0.0) or np.any(q[..., -1] != 1.0):
            problems.append(f"{name} endpoints not at 0 and 1")
        if np.max(np.abs(q + np.flip(q, -1) - 1.0)) > atol + 1e-15:
            problems.append(f"{name} not point-symmetric")
    if np.any(d[..., 0] != 1.0) or np.any(d[..., -1] != 1.0):
        problems.append("end slopes differ from 1")
    if np.any(d <= lo) or np.any(d >= hi):
        problems.append("slopes outside tau bounds")
    if np.max(np.abs(phi + np.flip(phi, -1) - 1.0)) > atol + 1e-15:
        problems.append("midpoints not mirrored")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.diff(qt, axis=-1) / np.diff(qb, axis=-1)
    if np.any(~(ratio > lo)) or np.any(~(ratio < hi)):
        problems.append("aspect ratios outside tau bounds")
    return problems


def mirror(half: HalfSpline, hyper: FlowHyper, check=True):
    """Assemble the full odd table from a half spline (2K + 1 knots)."""
    K = hyper.K

    def knots(q):
        return concat([0.5 * q[..., :K], 0.5 * (1.0 + flip(1.0 - q))])

    table = KnotTable(
        qb=knots(half.qb),
        qt=knots(half.qt),
        phi_m=concat([half.phi_m, 1.0 - flip(half.phi_m)]),
        d=concat([half.d[..., :K], flip(half.d)]),
        hyper=hyper,
    )
    if check:
        qb, qt = value_of(table.qb), value_of(table.qt)
        if np.any(np.diff(qb, axis=-1) <= 0) or np.any(np.diff(qt, axis=-1) <= 0):
            raise FlowInvariantError("mirrored knots are not strictly increasing")
    return table


def identity_table(hyper, shape=()):
    K = hyper.K
    z = np.zeros
    return mirror(map_raw_params(z(shape + (K + 1,)), z(shape + (K,)),
                                 z(shape + (K,)), z(shape + (K,)), hyper), hyper)


# evaluation -----------------------------------------------------------------

def _locate(knots, q):
    """Index k with knots[k] <= q < knots[k+1], per broadcast row.

    Rows are stacked into one sorted array by offsetting row r by 2r, so a
    single searchsorted covers every row; a one-step exact fix-up removes the
    rounding introduced by the offsets.
    """
    n = knots.shape[-1]
    tshape = knots.shape[:-1]
    lead = np.broadcast_shapes(tshape, q.shape)
    rows = np.arange(int(np.prod(tshape, dtype=int))).reshape(tshape)
    flat = (knots + 2.0 * rows[..., None]).ravel()
    rows_b = np.broadcast_to(rows, lead)
    qb = np.broadcast_to(q, lead)
    pos = np.searchsorted(flat, qb + 2.0 * rows_b, side="right")
    k = np.clip(pos - rows_b * n - 1, 0, n - 2)
    k = np.where((qb >= np.take_along_axis(np.broadcast_to(knots, lead + (n,)),
                                           (k + 1)[..., None], -1)[..., 0]) & (k < n - 2), k + 1, k)
    k = np.where((qb < np.take_along_axis(np.broadcast_to(knots, lead + (n,)),
                                          k[..., None], -1)[..., 0]) & (k > 0), k - 1, k)
    return k


def _interval(table, k):
    """Per-point interval quantities in the forward (b -> t) orientation."""
    qb0, qb1 = gather(table.qb, k), gather(table.qb, k + 1)
    qt0, qt1 = gather(table.qt, k), gather(table.qt, k + 1)
    phim = gather(table.phi_m, k)
    ws = 1.0 / sqrt(gather(table.d, k))
    we = 1.0 / sqrt(gather(table.d, k + 1))
    dqb, dqt = qb1 - qb0, qt1 - qt0
    wm = (phim / ws + (1.0 - phim) / we) * dqb / dqt
    psim = phim / (ws * wm) * dqb / dqt
    return dict(qb0=qb0, qt0=qt0, dqb=dqb, dqt=dqt, phim=phim, psim=psim, ws=ws, we=we, wm=wm)


def _rational(u, um, vm, w_left, w_mid_left, w_mid_right, w_right):
    """Two-piece rational map of [0, 1] through (um, vm).

    Forward uses (phim, psim, ws, wm, wm, we); swapping the roles gives the
    exact inverse (psim, phim, wm, ws, we, wm).
    """
    left = value_of(u) < value_of(um)
    u1 = where(left, u, 0.0)
    u2 = where(left, 1.0, u)
    first = vm * w_mid_left * u1 / (w_mid_left * u1 + w_left * (um - u1))
    second = ((vm * w_mid_right * (1.0 - u2) + w_right * (u2 - um))
              / (w_mid_right * (1.0 - u2) + w_right * (u2 - um)))
    return where(left, first, second), left


def _log_slope(phi, left, iv):
    """log of d(eps_t)/d(eps_b) inside an interval at relative position phi."""
    wm, ws, we = iv["wm"], iv["ws"], iv["we"]
    phim, psim = iv["phim"], iv["psim"]
    p1 = where(left, phi, 0.0)
    p2 = where(left, 1.0, phi)
    lg_first = log(wm * ws * psim * phim) - 2.0 * log(wm * p1 + ws * (phim - p1))
    lg_second = (log(wm * we * (1.0 - psim) * (1.0 - phim))
                 - 2.0 * log(wm * (1.0 - p2) + we * (p2 - phim)))
    return log(iv["dqt"] / iv["dqb"]) + where(left, lg_first, lg_second)


def _normalized(x, c):
    inside = np.abs(value_of(x)) < c
    q = where(inside, (x + c) / (2.0 * c), 0.5)
    return q, inside


def forward(eps_b, table: KnotTable):
    """Base-side standardized value to target side."""
    c = table.hyper.c
    q, inside = _normalized(eps_b, c)
    k = _locate(value_of(table.qb), value_of(q))
    iv = _interval(table, k)
    phi = (q - iv["qb0"]) / iv["dqb"]
    psi, _ = _rational(phi, iv["phim"], iv["psim"], iv["ws"], iv["wm"], iv["wm"], iv["we"])
    eps_t = 2.0 * c * (iv["dqt"] * psi + iv["qt0"]) - c
    return where(inside, eps_t, eps_b)


def inverse_with_log_det(eps_t, table: KnotTable):
    """Closed-form inverse plus log|d eps_t / d eps_b| evaluated at the preimage."""
    c = table.hyper.c
    q, inside = _normalized(eps_t, c)
    k = _locate(value_of(table.qt), value_of(q))
    iv = _interval(table, k)
    psi = (q - iv["qt0"]) / iv["dqt"]
    phi, left = _rational(psi, iv["psim"], iv["phim"], iv["wm"], iv["ws"], iv["we"], iv["wm"])
    eps_b = 2.0 * c * (iv["dqb"] * phi + iv["qb0"]) - c
    log_det = _log_slope(phi, left, iv)
    return where(inside, eps_b, eps_t), where(inside, log_det, 0.0)


def inverse(eps_t, table: KnotTable):
    return inverse_with_log_det(eps_t, table)[0]


def log_abs_det_grad(eps_b, table: KnotTable):
    """log of the forward slope at ``eps_b``; zero outside [-c, c]."""
    c = table.hyper.c
    q, inside = _normalized(eps_b, c)
    k = _locate(value_of(table.qb), value_of(q))
    iv = _interval(table, k)
    phi = (q - iv["qb0"]) / iv["dqb"]
    left = value_of(phi) < value_of(iv["phim"])
    return where(inside, _log_slope(phi, left, iv), 0.0)
