"""JSON run configuration: schema, defaults, validation.

A config file is a JSON object with optional sections ``env``, ``policy``,
``train`` and ``eval`` plus top-level ``version`` and ``seed``.  Missing keys
take the defaults below; unknown keys are rejected.  ``policy.tau`` has no
default and must be given for the flow kinds ``rnf`` and ``bit_rnf``.

Defaults::

    version  1
    seed     0
    env      name "bimodal_bandit", horizon null (1 for the bandit, 100 for
             point_reach), dim 1
    policy   kind "bit_rnf", tau (required for flow kinds), components 16,
             trunk_depth 2, trunk_width 64, head_depth 2, head_width 32,
             full_shapes false
    train    gamma 0.99, lr 0.001, steps 30000, rollout 64, beta_ent 0.015,
             beta_td 0.005, value_ensemble 1, normalize_advantage false,
             checkpoint_every 0 (final checkpoint only)
    eval     episodes 100, mode "mean"
"""
from dataclasses import asdict, dataclass, field, fields
import json
from typing import Optional

from .policy import KINDS, ConditionerConfig
from .rl import TrainConfig, make_env

CONFIG_VERSION = 1
ENVS = ("bimodal_bandit", "point_reach")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class EnvSection:
    name: str = "bimodal_bandit"
    horizon: Optional[int] = None
    dim: int = 1


@dataclass(frozen=True)
class PolicySection:
    kind: str = "bit_rnf"
    tau: Optional[float] = None
    components: int = 16
    trunk_depth: int = 2
    trunk_width: int = 64
    head_depth: int = 2
    head_width: int = 32
    full_shapes: bool = False


@dataclass(frozen=True)
class TrainSection:
    gamma: float = 0.99
    lr: float = 1e-3
    steps: int = 30000
    rollout: int = 64
    beta_ent: float = 0.015
    beta_td: float = 0.005
    value_ensemble: int = 1
    normalize_advantage: bool = False
    checkpoint_every: int = 0


@dataclass(frozen=True)
class EvalSection:
    episodes: int = 100
    mode: str = "mean"


@dataclass(frozen=True)
class Config:
    version: int = CONFIG_VERSION
    seed: int = 0
    env: EnvSection = field(default_factory=EnvSection)
    policy: PolicySection = field(default_factory=PolicySection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def make_env(self):
        return make_env(self.env.name, self.env.horizon, self.env.dim)

    def policy_config(self, env=None):
        env = env or self.make_env()
        p = self.policy
        return ConditionerConfig(
            state_dim=env.state_dim, action_dim=env.action_dim, kind=p.kind,
            tau=0.8 if p.tau is None else p.tau, components=p.components,
            trunk_depth=p.trunk_depth, trunk_width=p.trunk_width,
            head_depth=p.head_depth, head_width=p.head_width, full_shapes=p.full_shapes)

    def train_config(self):
        t = self.train
        return TrainConfig(gamma=t.gamma, lr=t.lr, steps=t.steps, rollout=t.rollout,
                           beta_ent=t.beta_ent, beta_td=t.beta_td,
                           value_ensemble=t.value_ensemble,
                           normalize_advantage=t.normalize_advantage, seed=self.seed)


def _coerce(path, value, typ):
    """Check a JSON value against a field annotation; ints are accepted for floats."""
    optional = typ in (Optional[int], Optional[float])
    if value is None:
        if optional:
            return None
        raise ConfigError(path, "must not be null")
    base = {Optional[int]: int, Optional[float]: float}.get(typ, typ)
    if base is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if base is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if base is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if base is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise TypeError(typ)


def _section(cls, raw, prefix):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(prefix, "expected an object")
    known = {f.name: f for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{prefix}.{key}", "unknown key")
    values = {k: _coerce(f"{prefix}.{k}", v, known[k].type) for k, v in raw.items()}
    return cls(**values)


def _positive(path, value, minimum=1):
    if value < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {value}")


def config_from_dict(raw):
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a JSON object")
    allowed = {"version", "seed", "env", "policy", "train", "eval"}
    for key in raw:
        if key not in allowed:
            raise ConfigError(key, "unknown key")
    version = _coerce("version", raw.get("version", CONFIG_VERSION), int)
    if version != CONFIG_VERSION:
        raise ConfigError("version", f"unsupported config version {version} (expected {CONFIG_VERSION})")
    seed = _coerce("seed", raw.get("seed", 0), int)
    if seed < 0:
        raise ConfigError("seed", "must be non-negative")
    env = _section(EnvSection, raw.get("env"), "env")
    policy = _section(PolicySection, raw.get("policy"), "policy")
    train = _section(TrainSection, raw.get("train"), "train")
    ev = _section(EvalSection, raw.get("eval"), "eval")

    if env.name not in ENVS:
        raise ConfigError("env.name", f"must be one of {ENVS}, got {env.name!r}")
    _positive("env.dim", env.dim)
    if env.name == "bimodal_bandit" and env.dim != 1:
        raise ConfigError("env.dim", "bimodal_bandit has a single action dimension")
    if env.horizon is not None:
        _positive("env.horizon", env.horizon)
        if env.name == "bimodal_bandit" and env.horizon != 1:
            raise ConfigError("env.horizon", "bimodal_bandit episodes last exactly one step")

    if policy.kind not in KINDS:
        raise ConfigError("policy.kind", f"must be one of {KINDS}, got {policy.kind!r}")
    if policy.kind in ("rnf", "bit_rnf") and policy.tau is None:
        raise ConfigError("policy.tau", f"required for flow kind {policy.kind!r}")
    if policy.tau is not None and not 0.0 < policy.tau < 1.0:
        raise ConfigError("policy.tau", f"must lie in (0, 1), got {policy.tau}")
    if policy.kind == "gmm":
        _positive("policy.components", policy.components, 2)
    for name in ("trunk_depth", "trunk_width", "head_depth", "head_width"):
        _positive(f"policy.{name}", getattr(policy, name))

    if not 0.0 <= train.gamma < 1.0:
        raise ConfigError("train.gamma", f"must lie in [0, 1), got {train.gamma}")
    if not train.lr > 0.0:
        raise ConfigError("train.lr", "must be positive")
    _positive("train.steps", train.steps, 0)
    _positive("train.rollout", train.rollout)
    _positive("train.value_ensemble", train.value_ensemble)
    _positive("train.checkpoint_every", train.checkpoint_every, 0)
    for name in ("beta_ent", "beta_td"):
        if getattr(train, name) < 0.0:
            raise ConfigError(f"train.{name}", "must be non-negative")

    _positive("eval.episodes", ev.episodes)
    if ev.mode not in ("mean", "sample"):
        raise ConfigError("eval.mode", f"must be 'mean' or 'sample', got {ev.mode!r}")
    return Config(version, seed, env, policy, train, ev)


def config_to_dict(cfg: Config):
    return asdict(cfg)


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"not valid JSON ({exc})") from exc
    return config_from_dict(raw)
