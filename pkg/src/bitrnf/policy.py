"""State-conditioned policy distributions.

A conditioner network maps a batch of states to a :class:`PolicyDistribution`:
a diagonal mixture of ``M`` location-scale components over ``D`` action
dimensions.  The supported kinds are

==========  =========  ==========  =====================================
kind        family     components  flow
==========  =========  ==========  =====================================
normal      normal     1           -
student     student_t  1           -
gmm         normal     M           -
bit         student_t  2           -
rnf         normal     1           odd LRS on component 0
bit_rnf     student_t  2           odd LRS on component 0
==========  =========  ==========  =====================================

Component 0 of the flow kinds is ``loc + scale * g(eps)`` with ``g`` odd, so
its mean is ``loc`` and the policy mean is ``sum_m w_m loc_m`` whatever the
spline looks like.
"""
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import stats

from . import lrs
from .autodiff import ParameterStore, Var, concat, log, sqrt, stack, value_of, vmean, vsum
from .distributions import (logsumexp, map_dof, map_scale, map_weights, std_logpdf,
                            std_sample)
from .nonlinear import squaresign, squish

KINDS = ("normal", "student", "gmm", "bit", "rnf", "bit_rnf")
_LN_EPS = 1e-5


@dataclass(frozen=True)
class ConditionerConfig:
    state_dim: int
    action_dim: int
    kind: str = "bit_rnf"
    tau: float = 0.8
    components: int = 16
    trunk_depth: int = 2
    trunk_width: int = 64
    head_depth: int = 2
    head_width: int = 32
    full_shapes: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.state_dim < 1 or self.action_dim < 1:
            raise ValueError("state_dim and action_dim must be >= 1")
        if self.kind == "gmm" and self.components < 2:
            raise ValueError("gmm needs at least 2 components")

    @property
    def trunk(self):
        return (5, 100) if self.full_shapes else (self.trunk_depth, self.trunk_width)

    @property
    def flow_head(self):
        return (2, 32) if self.full_shapes else (self.head_depth, self.head_width)

    @property
    def family(self):
        return "student_t" if self.kind in ("student", "bit", "bit_rnf") else "normal"

    @property
    def n_components(self):
        return {"gmm": self.components, "bit": 2, "bit_rnf": 2}.get(self.kind, 1)

    @property
    def has_flow(self):
        return self.kind in ("rnf", "bit_rnf")

    @property
    def hyper(self):
        return lrs.derive_hyper(self.tau) if self.has_flow else None

    def head_layout(self):
        """Ordered (name, size) slices of the distribution head output."""
        M, D = self.n_components, self.action_dim
        parts = [("loc", M * D), ("scale", M * D)]
        if self.family == "student_t":
            parts.append(("dof", 1))
        if self.kind == "gmm":
            parts.append(("weights", M))
        elif M == 2:
            parts.append(("weights", 1))
        return parts

    def flow_out_size(self):
        K = self.hyper.K
        return self.action_dim * (4 * K - 1)


def init_params(cfg: ConditionerConfig, rng, out_scale=0.1, loc_spread=1.5, init_scale=0.5):
    """Scaled-normal weights, zero biases except where noted.

    Output layers are shrunk by ``out_scale`` so a fresh policy sits close to
    its base with a near-identity flow.  Mixture location biases sit at the
    M normal quantiles scaled by ``loc_spread``, shuffled independently per
    action dimension, which breaks the symmetry between components.  Scale
    biases start so that the initial scale equals ``init_scale``.
    """
    arrays = {}
    depth, width = cfg.trunk
    fan_in = cfg.state_dim
    for i in range(depth):
        arrays[f"trunk.{i}.w"] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, width))
        arrays[f"trunk.{i}.b"] = np.zeros(width)
        fan_in = width
    n_out = sum(n for _, n in cfg.head_layout())
    arrays["head.w"] = rng.normal(0.0, out_scale / np.sqrt(width), (width, n_out))
    bias = np.zeros(n_out)
    M, D = cfg.n_components, cfg.action_dim
    if M > 1:
        q = loc_spread * stats.norm.ppf((np.arange(M) + 0.5) / M)
        bias[:M * D] = np.stack([rng.permutation(q) for _ in range(D)], axis=1).ravel()
    # inverse of squareplus: y = s - 1/s for b = 4
    bias[M * D:2 * M * D] = init_scale - 1.0 / init_scale
    arrays["head.b"] = bias
    if cfg.has_flow:
        hdepth, hwidth = cfg.flow_head
        fan_in = width
        for i in range(hdepth):
            arrays[f"flow.{i}.w"] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, hwidth))
            arrays[f"flow.{i}.b"] = np.zeros(hwidth)
            fan_in = hwidth
        arrays["flow.out.w"] = rng.normal(0.0, out_scale / np.sqrt(fan_in),
                                          (fan_in, cfg.flow_out_size()))
        arrays["flow.out.b"] = np.zeros(cfg.flow_out_size())
    return ParameterStore(arrays)


def zero_params(cfg: ConditionerConfig):
    like = init_params(cfg, np.random.default_rng(0))
    return ParameterStore({k: np.zeros_like(v) for k, v in like.items()})


def layer_norm(h):
    mu = vmean(h, axis=-1, keepdims=True)
    centered = h - mu
    var = vmean(centered * centered, axis=-1, keepdims=True)
    return centered / sqrt(var + _LN_EPS)


def trunk_features(states, params, depth, prefix="trunk"):
    """Fully connected layers, each followed by layer norm and squish."""
    h = states
    for i in range(depth):
        h = squish(layer_norm(h @ params[f"{prefix}.{i}.w"] + params[f"{prefix}.{i}.b"]))
    return h


@dataclass(frozen=True)
class PolicyDistribution:
    """Batch of ``B`` diagonal mixtures over ``D`` action dimensions.

    ``loc`` and ``scale`` are (B, M, D), ``weights`` (B, M), ``dof`` (B, 1)
    for the student-t family, and ``table`` a knot table with leading shape
    (B, D) applied to component 0 when present.
    """
    kind: str
    family: str
    loc: object
    scale: object
    weights: object
    dof: object = None
    table: Optional[lrs.KnotTable] = None
    hyper: Optional[lrs.FlowHyper] = field(default=None)

    @property
    def batch_size(self):
        return value_of(self.loc).shape[0]

    @property
    def dim(self):
        return value_of(self.loc).shape[2]

    @property
    def n_components(self):
        return value_of(self.loc).shape[1]

    def mean(self):
        """Weighted component locations; never touches the flow."""
        w = self.weights
        return vsum(w.reshape(*value_of(w).shape, 1) * self.loc, axis=1)

    def component_log_probs(self, actions):
        """log(w_m) + log p_m(a) for each component, stacked on the last axis."""
        terms = []
        weights = value_of(self.weights)
        for m in range(self.n_components):
            if not isinstance(self.weights, Var) and np.all(weights[:, m] == 0.0):
                continue
            terms.append(self._component_log_density(actions, m) + log(self.weights[:, m]))
        return stack(terms, axis=-1)

    def _component_log_density(self, actions, m):
        loc, scale = self.loc[:, m, :], self.scale[:, m, :]
        eps = (actions - loc) / scale
        log_det = 0.0
        if self.table is not None and m == 0:
            eps, log_det = lrs.inverse_with_log_det(eps, self.table)
        lp = std_logpdf(eps, self.family, self.dof) - log(scale) - log_det
        return vsum(lp, axis=-1)

    def component_densities(self, actions):
        """Weighted per-component densities, (…, B, M) plain arrays."""
        out = np.zeros(np.broadcast_shapes(np.shape(actions)[:-1], (self.batch_size,))
                       + (self.n_components,))
        w = value_of(self.weights)
        for m in range(self.n_components):
            if np.all(w[:, m] == 0.0):
                continue
            out[..., m] = w[:, m] * np.exp(value_of(self._component_log_density(actions, m)))
        return out

    def log_prob(self, actions):
        """log density of actions shaped (B, D) or (N, B, D)."""
        return logsumexp(self.component_log_probs(actions))

    def sample(self, rng, n=None):
        """Draw actions, (B, D) or (n, B, D).

        Every draw consumes one uniform (component choice) and one
        standardized base variate per dimension, in that order.
        """
        loc, scale = value_of(self.loc), value_of(self.scale)
        B, M, D = loc.shape
        lead = (B,) if n is None else (n, B)
        u = rng.random(lead)
        nu = None if self.dof is None else value_of(self.dof)
        eps = std_sample(rng, lead + (D,), self.family, nu)
        cum = np.cumsum(value_of(self.weights), axis=-1)
        comp = np.minimum((u[..., None] >= cum).sum(axis=-1), M - 1)
        if self.table is not None:
            # the table broadcasts over draws; keep flowed values for component 0 only
            flowed = lrs.forward(eps, self.table.detached())
            eps = np.where((comp == 0)[..., None], flowed, eps)
        b_idx = np.arange(B)
        return loc[b_idx, comp] + scale[b_idx, comp] * eps

    def marginal(self, dim):
        """The exact one-dimensional marginal along action dimension ``dim``."""
        if not 0 <= dim < self.dim:
            raise IndexError(f"action dimension {dim} out of range")
        sl = (slice(None), slice(None), slice(dim, dim + 1))
        table = None
        if self.table is not None:
            table = lrs.KnotTable(*(value_of(getattr(self.table, f))[:, dim:dim + 1]
                                    for f in ("qb", "qt", "phi_m", "d")), self.table.hyper)
        return replace(self, loc=value_of(self.loc)[sl], scale=value_of(self.scale)[sl],
                       weights=value_of(self.weights),
                       dof=None if self.dof is None else value_of(self.dof), table=table)

    def detached(self):
        return replace(self, loc=value_of(self.loc), scale=value_of(self.scale),
                       weights=value_of(self.weights),
                       dof=None if self.dof is None else value_of(self.dof),
                       table=None if self.table is None else self.table.detached())


def conditioner_forward(states, params, cfg: ConditionerConfig):
    """Map states (B, S) to a policy distribution through the network."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 1:
        states = states[None, :]
    if states.shape[-1] != cfg.state_dim:
        raise ValueError(f"state dimension {states.shape[-1]} != {cfg.state_dim}")
    if not np.all(np.isfinite(states)):
        raise ValueError("states must be finite")
    B = states.shape[0]
    M, D = cfg.n_components, cfg.action_dim
    h = trunk_features(states, params, cfg.trunk[0])
    raw = h @ params["head.w"] + params["head.b"]

    heads, start = {}, 0
    for name, size in cfg.head_layout():
        heads[name] = raw[:, start:start + size]
        start += size
    loc = heads["loc"].reshape(B, M, D)
    scale = map_scale(heads["scale"]).reshape(B, M, D)
    dof = map_dof(heads["dof"], D) if "dof" in heads else None
    if cfg.kind == "gmm":
        weights = map_weights(heads["weights"], "gmm")
    elif M == 2:
        weights = map_weights(heads["weights"], "bimodal")
    else:
        weights = np.ones((B, 1))

    table = None
    if cfg.has_flow:
        table = flow_table(h, params, cfg)
    return PolicyDistribution(kind=cfg.kind, family=cfg.family, loc=loc, scale=scale,
                              weights=weights, dof=dof, table=table, hyper=cfg.hyper)


def flow_table(features, params, cfg: ConditionerConfig):
    """Flow head: features -> per-dimension knot table (B, D, 2K+1)."""
    hyper = cfg.hyper
    K, D = hyper.K, cfg.action_dim
    g = features
    for i in range(cfg.flow_head[0]):
        g = squaresign(g @ params[f"flow.{i}.w"] + params[f"flow.{i}.b"])
    out = g @ params["flow.out.w"] + params["flow.out.b"]
    B = value_of(out).shape[0]
    out = out.reshape(B, D, 4 * K - 1)
    pad = np.zeros((B, D, 1))
    y_d = concat([pad, out[..., :K - 1], pad])
    y_phi = out[..., K - 1:2 * K - 1]
    y_dqb = out[..., 2 * K - 1:3 * K - 1]
    y_dqt = out[..., 3 * K - 1:]
    return lrs.mirror(lrs.map_raw_params(y_d, y_phi, y_dqb, y_dqt, hyper), hyper)


def density_grid(dist: PolicyDistribution, dim, lo, hi, n):
    """Marginal pdf of a single-state distribution on a uniform grid.

    Returns ``(grid, pdf, contributions)`` where ``contributions`` holds the
    weighted per-component densities (they sum to ``pdf``).
    """
    if n < 2 or not lo < hi:
        raise ValueError("need n >= 2 and lo < hi")
    marg = dist.detached().marginal(dim)
    grid = np.linspace(lo, hi, n)
    actions = grid[:, None, None]
    pdf = np.exp(value_of(marg.log_prob(actions)))[:, 0]
    contrib = marg.component_densities(actions)[:, 0, :]
    return grid, pdf, contrib


def make_distribution(kind, loc, scale, weights=None, dof=None, table=None, hyper=None):
    """Build a single-state (B = 1) distribution directly from parameters.

    ``loc``/``scale`` are (M, D); ``table`` a knot table with leading shape
    (D,).  Mostly useful for tests and verification.
    """
    loc = np.atleast_2d(np.asarray(loc, dtype=float))[None]
    scale = np.broadcast_to(np.asarray(scale, dtype=float), loc.shape[1:])[None].copy()
    M = loc.shape[1]
    weights = np.ones(1) if weights is None else np.asarray(weights, dtype=float)
    if weights.shape != (M,):
        raise ValueError("one weight per component")
    family = "student_t" if dof is not None else "normal"
    if table is not None:
        table = lrs.KnotTable(*(value_of(getattr(table, f))[None]
                                for f in ("qb", "qt", "phi_m", "d")), table.hyper)
        hyper = table.hyper
    return PolicyDistribution(kind=kind, family=family, loc=loc, scale=scale,
                              weights=weights[None], table=table, hyper=hyper,
                              dof=None if dof is None else np.full((1, 1), float(dof)))
