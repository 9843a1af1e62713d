"""
An odd spline keeps the mean where it was
=========================================

Build one random restricted spline, check that it is odd and invertible,
and watch the Monte-Carlo mean of ``loc + scale * g(eps)`` stay at ``loc``.

Run with ``python3 demos/01_odd_spline.py``.
"""
import numpy as np

from bitrnf import lrs

rng = np.random.default_rng(42)

# tau sets the number of knots and the interval [-c, c] that gets bent
hyper = lrs.derive_hyper(0.8)
print("tau = 0.8  ->  K =", hyper.K, " c =", hyper.c)

raw = [rng.normal(0.0, 2.0, n) for n in lrs.raw_sizes(hyper)]
table = lrs.mirror(lrs.map_raw_params(*raw, hyper), hyper)
print("table problems:", lrs.table_violations(table) or "none")

eps = np.linspace(-4.5, 4.5, 10)
y = lrs.forward(eps, table)
print("\n   eps      g(eps)    g(-eps)")
for e, v, w in zip(eps, y, lrs.forward(-eps, table)):
    print(f"{e:7.3f}  {v:9.5f}  {w:9.5f}")

back = lrs.inverse(y, table)
print("\nmax |g^-1(g(eps)) - eps| =", np.max(np.abs(back - eps)))

# slope of the map, from the closed form and from a central difference
h = 1e-6
fd = (lrs.forward(eps + h, table) - lrs.forward(eps - h, table)) / (2 * h)
print("max |slope - central difference| =",
      np.max(np.abs(np.exp(lrs.log_abs_det_grad(eps, table)) - fd)))

# the transformed noise has mean zero, so the location is the mean
loc, scale = 0.7, 1.3
nu = 4.0
z = rng.standard_t(nu, 1_000_000)
a = loc + scale * lrs.forward(z, table)
se = a.std() / np.sqrt(a.size)
print(f"\nMC mean of loc + scale * g(eps): {a.mean():.5f} +- {se:.5f}  (loc = {loc})")
print(f"plain base gives                 {np.mean(loc + scale * z):.5f}")
