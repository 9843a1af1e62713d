"""Diagonal normal / student-t bases, their mixtures, and raw-output mappings.

Location/scale conventions follow ``x = loc + scale * eps`` with ``eps`` a
standardized symmetric variable.  The student-t family shares one degrees of
freedom value across all dimensions of a component; the joint density is the
product of univariate densities.
"""
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .autodiff import concat, exp, lgamma, log, log1p, stack, value_of, vsum
from .nonlinear import squaremax, squareplus, squmoid

FAMILIES = ("normal", "student_t")
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class MeanUndefinedError(ValueError):
    pass


# raw network output -> parameter domain ---------------------------------

def map_scale(y):
    return squareplus(y)


def map_dof(y, dim):
    """Degrees of freedom via the q-Gaussian correspondence.

    ``q - 1 = squmoid(y) / dim`` lies in (0, 1/dim), hence the returned
    ``nu = 2 / (q - 1) - dim`` always exceeds ``dim`` and the mean exists.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    q1 = squmoid(y) / dim
    return 2.0 / q1 - dim


def map_weights(y, kind):
    """Mixture weights: squaremax for a GMM, ``[rho, 1 - rho]`` for a bimodal pair."""
    n = value_of(y).shape[-1]
    if kind == "gmm":
        if n < 2:
            raise ValueError("gmm weights need at least 2 raw values")
        return squaremax(y)
    if kind == "bimodal":
        if n != 1:
            raise ValueError("bimodal weights take exactly 1 raw value")
        rho = squmoid(y)
        return concat([rho, 1.0 - rho], axis=-1)
    raise ValueError(f"unknown weight kind {kind!r}")


# standardized log densities ----------------------------------------------

def std_normal_logpdf(eps):
    return -0.5 * (eps * eps) - _HALF_LOG_2PI


def std_student_logpdf(eps, nu):
    """Univariate standard student-t log density, elementwise."""
    norm = lgamma(0.5 * (nu + 1.0)) - lgamma(0.5 * nu) - 0.5 * log(nu * np.pi)
    return norm - 0.5 * (nu + 1.0) * log1p(eps * eps / nu)


def std_logpdf(eps, family, nu=None):
    if family == "normal":
        return std_normal_logpdf(eps)
    if family == "student_t":
        return std_student_logpdf(eps, nu)
    raise ValueError(f"unknown family {family!r}")


def std_sample(rng, shape, family, nu=None):
    """Standardized draws; student-t as ``z / sqrt(chi2_nu / nu)`` per element.

    Draw order is fixed (all normals, then all chi-squares) so a seed fully
    determines the stream.
    """
    z = rng.standard_normal(shape)
    if family == "normal":
        return z
    nu = np.broadcast_to(np.asarray(nu, dtype=float), shape)
    chi2 = rng.chisquare(nu)
    return z / np.sqrt(chi2 / nu)


def std_sf(x, family, nu=None):
    """Upper-tail mass of the standardized base."""
    if family == "normal":
        return stats.norm.sf(x)
    return stats.t.sf(x, nu)


# parameter containers ------------------------------------------------------

@dataclass(frozen=True)
class BaseParams:
    loc: np.ndarray
    scale: np.ndarray
    dof: Optional[float] = None

    def __post_init__(self):
        loc = np.atleast_1d(np.asarray(self.loc, dtype=float))
        scale = np.broadcast_to(np.asarray(self.scale, dtype=float), loc.shape).copy()
        object.__setattr__(self, "loc", loc)
        object.__setattr__(self, "scale", scale)
        if np.any(scale <= 0):
            raise ValueError("scale must be positive")
        if self.dof is not None and not self.dof > 0:
            raise ValueError("dof must be positive")

    @property
    def dim(self):
        return self.loc.shape[0]


@dataclass(frozen=True)
class MixtureParams:
    components: Sequence[BaseParams]
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if len(self.components) != w.shape[0]:
            raise ValueError("one weight per component required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must lie on the simplex")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise ValueError("components must share a dimension")


def _family_dof(params, family):
    if family == "student_t" and params.dof is None:
        raise ValueError("student_t needs dof")
    return params.dof


def log_pdf(x, params: BaseParams, family):
    """Diagonal log density summed over the last axis of ``x``."""
    nu = _family_dof(params, family)
    eps = (x - params.loc) / params.scale
    return vsum(std_logpdf(eps, family, nu), axis=-1) - np.sum(np.log(params.scale))


def sample(rng, params: BaseParams, family, size=None):
    nu = _family_dof(params, family)
    shape = (params.dim,) if size is None else (size, params.dim)
    return params.loc + params.scale * std_sample(rng, shape, family, nu)


def logsumexp(terms):
    """log(sum(exp(terms))) along the last axis, shifting by a constant max."""
    shift = np.max(value_of(terms), axis=-1, keepdims=True)
    return log(vsum(exp(terms - shift), axis=-1)) + shift[..., 0]


def mixture_log_pdf(x, m: MixtureParams, family):
    """Stable log of the weighted sum of component densities."""
    terms = [log_pdf(x, c, family) + np.log(w)
             for c, w in zip(m.components, m.weights) if w > 0]
    return logsumexp(stack(terms, axis=-1))


def mixture_sample(rng, m: MixtureParams, family, size):
    which = rng.choice(len(m.components), size=size, p=m.weights)
    draws = np.stack([sample(rng, c, family, size) for c in m.components])
    return draws[which, np.arange(size)]


def analytic_mean(params, family="student_t"):
    """Closed-form mean of a base or a mixture (weighted component means)."""
    if isinstance(params, BaseParams):
        if family == "student_t" and params.dof is not None and params.dof <= 1:
            raise MeanUndefinedError(f"student-t mean needs dof > 1, got {params.dof}")
        return params.loc.copy()
    return sum(w * analytic_mean(c, family) for c, w in zip(params.components, params.weights))
