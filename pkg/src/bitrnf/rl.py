"""Toy environments, an on-policy advantage actor-critic trainer, evaluation."""
import csv
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .autodiff import NonFiniteGradientError, ParameterStore, backpropagate, value_of, vmean
from .policy import ConditionerConfig, conditioner_forward, init_params, trunk_features

METRICS_HEADER = ("step", "episode", "return", "loss_pi", "loss_v", "entropy_est", "skipped_steps")


# environments ---------------------------------------------------------------

def bandit_reward(a):
    """Wide low bump at -1 (height 0.6) and narrow high bump at 1.5 (height 1)."""
    a = np.asarray(a, dtype=float)
    return (0.6 * np.exp(-(a + 1.0) ** 2 / (2 * 0.4 ** 2))
            + 1.0 * np.exp(-(a - 1.5) ** 2 / (2 * 0.15 ** 2)))


class BimodalBandit:
    """One-step task with a 2-d uniform context that does not affect reward."""

    name = "bimodal_bandit"
    state_dim = 2
    action_dim = 1

    def __init__(self, horizon=1):
        if horizon != 1:
            raise ValueError("bimodal_bandit episodes last exactly one step")
        self.horizon = 1
        self._state = np.zeros(2)

    def reset(self, rng):
        self._state = rng.uniform(-1.0, 1.0, 2)
        return self._state.copy()

    def step(self, action):
        r = float(bandit_reward(np.asarray(action, dtype=float).reshape(-1)[0]))
        return self._state.copy(), r, True


class PointReach:
    """Point mass driven towards the origin; action is a clipped acceleration.

    State is (position, velocity) per axis.  Reward is
    ``-|position|^2 - 0.01 |a|^2`` at the pre-step position and clipped action.
    """

    name = "point_reach"

    def __init__(self, horizon=100, dim=1, dt=0.1, init_state=None):
        self.horizon = int(horizon)
        self.dim = int(dim)
        self.dt = dt
        self.init_state = None if init_state is None else np.asarray(init_state, dtype=float)
        self.state_dim = 2 * self.dim
        self.action_dim = self.dim
        self._pos = np.zeros(self.dim)
        self._vel = np.zeros(self.dim)
        self._t = 0

    def _obs(self):
        return np.concatenate([self._pos, self._vel])

    def reset(self, rng):
        if self.init_state is not None:
            self._pos = self.init_state[:self.dim].copy()
            self._vel = self.init_state[self.dim:].copy()
        else:
            self._pos = rng.uniform(-1.0, 1.0, self.dim)
            self._vel = np.zeros(self.dim)
        self._t = 0
        return self._obs()

    def step(self, action):
        a = np.clip(np.asarray(action, dtype=float).reshape(self.dim), -1.0, 1.0)
        r = float(-np.dot(self._pos, self._pos) - 0.01 * np.dot(a, a))
        self._vel = self._vel + a * self.dt
        self._pos = self._pos + self._vel * self.dt
        self._t += 1
        return self._obs(), r, self._t >= self.horizon


def make_env(name, horizon=None, dim=1, init_state=None):
    if name == "bimodal_bandit":
        return BimodalBandit(1 if horizon is None else horizon)
    if name == "point_reach":
        return PointReach(100 if horizon is None else horizon, dim=dim, init_state=init_state)
    raise ValueError(f"unknown environment {name!r}")


# value network ----------------------------------------------------------------

def init_value_params(state_dim, depth, width, ensemble, rng):
    arrays = {}
    fan_in = state_dim
    for i in range(depth):
        arrays[f"value.{i}.w"] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, width))
        arrays[f"value.{i}.b"] = np.zeros(width)
        fan_in = width
    arrays["value.out.w"] = rng.normal(0.0, 0.1 / np.sqrt(fan_in), (fan_in, ensemble))
    arrays["value.out.b"] = np.zeros(ensemble)
    return ParameterStore(arrays)


def value_forward(states, params, depth):
    """Ensemble-mean state value, shape (B,)."""
    h = trunk_features(np.atleast_2d(states), params, depth, prefix="value")
    return vmean(h @ params["value.out.w"] + params["value.out.b"], axis=-1)


# training ---------------------------------------------------------------------

@dataclass
class TrainConfig:
    gamma: float = 0.99
    lr: float = 1e-3
    steps: int = 30000
    rollout: int = 64
    beta_ent: float = 0.015
    beta_td: float = 0.005
    value_ensemble: int = 1
    normalize_advantage: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.rollout < 1 or self.steps < 0 or self.value_ensemble < 1:
            raise ValueError("rollout, value_ensemble must be >= 1 and steps >= 0")


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool


class Adam:
    """Adam with bias correction; state is kept per parameter name."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, store: ParameterStore, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self.m.get(name, 0.0) * self.beta1 + (1.0 - self.beta1) * g
            v = self.v.get(name, 0.0) * self.beta2 + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            store[name] = store[name] - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def compute_advantage(rewards, v_s, v_next, dones, gamma):
    """One-step TD advantage ``r + gamma V(s') (1 - done) - V(s)``."""
    rewards, v_s, v_next = (np.asarray(x, dtype=float) for x in (rewards, v_s, v_next))
    not_done = 1.0 - np.asarray(dones, dtype=float)
    return rewards + gamma * v_next * not_done - v_s


def shaped_reward(rewards, log_pi, td_error, beta_ent, beta_td):
    """Entropy bonus ``-log pi`` and TD-error penalty ``|delta|`` added to r."""
    return (np.asarray(rewards, dtype=float) - beta_ent * np.asarray(log_pi, dtype=float)
            - beta_td * np.abs(td_error))


def policy_loss(advantages, log_pi):
    """``-mean(A log pi)`` with the advantages held constant."""
    return -vmean(np.asarray(advantages, dtype=float) * log_pi)


@dataclass
class UpdateResult:
    loss_pi: float
    loss_v: float
    entropy_est: float
    skipped: bool


class A2CTrainer:
    """Collects fixed-length rollouts and takes one gradient step per rollout."""

    def __init__(self, env, policy_cfg: ConditionerConfig, train_cfg: TrainConfig,
                 rng=None, policy_params=None, value_params=None):
        self.env = env
        self.policy_cfg = policy_cfg
        self.cfg = train_cfg
        self.rng = np.random.default_rng(train_cfg.seed) if rng is None else rng
        self.value_depth = policy_cfg.trunk[0]
        self.policy_params = (init_params(policy_cfg, self.rng)
                              if policy_params is None else policy_params)
        self.value_params = (init_value_params(env.state_dim, *policy_cfg.trunk,
                                               train_cfg.value_ensemble, self.rng)
                             if value_params is None else value_params)
        self.policy_opt = Adam(train_cfg.lr)
        self.value_opt = Adam(train_cfg.lr)
        self.step_count = 0
        self.episode_count = 0
        self.skipped_steps = 0
        self._state = None
        self._episode_return = 0.0

    def act(self, state):
        dist = conditioner_forward(state[None], self.policy_params, self.policy_cfg)
        return dist.sample(self.rng)[0]

    def collect(self):
        """Run ``rollout`` environment steps; returns transitions and finished returns."""
        if self._state is None:
            self._state = self.env.reset(self.rng)
        batch, finished = [], []
        for _ in range(self.cfg.rollout):
            a = self.act(self._state)
            s_next, r, done = self.env.step(a)
            batch.append(Transition(self._state, a, r, s_next, done))
            self._episode_return += r
            self.step_count += 1
            if done:
                finished.append(self._episode_return)
                self._episode_return = 0.0
                self.episode_count += 1
                self._state = self.env.reset(self.rng)
            else:
                self._state = s_next
        return batch, finished

    def update(self, batch: List[Transition]):
        if not batch:
            raise ValueError("empty rollout")
        S = np.stack([t.s for t in batch])
        A = np.stack([t.a for t in batch])
        R = np.array([t.r for t in batch])
        S2 = np.stack([t.s_next for t in batch])
        done = np.array([t.done for t in batch], dtype=float)
        cfg = self.cfg
        vparams = self.value_params.arrays()
        v_s = value_forward(S, vparams, self.value_depth)
        v_next = value_forward(S2, vparams, self.value_depth)

        pleaves = self.policy_params.leaves()
        vleaves = self.value_params.leaves()
        dist = conditioner_forward(S, pleaves, self.policy_cfg)
        log_pi = dist.log_prob(A)
        td = compute_advantage(R, v_s, v_next, done, cfg.gamma)
        r_shaped = shaped_reward(R, value_of(log_pi), td, cfg.beta_ent, cfg.beta_td)
        adv = compute_advantage(r_shaped, v_s, v_next, done, cfg.gamma)
        if cfg.normalize_advantage and adv.size > 1:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        loss_pi = policy_loss(adv, log_pi)
        target = r_shaped + cfg.gamma * v_next * (1.0 - done)
        err = target - value_forward(S, vleaves, self.value_depth)
        loss_v = vmean(err * err)
        result = UpdateResult(float(value_of(loss_pi)), float(value_of(loss_v)),
                              float(-np.mean(value_of(log_pi))), False)
        try:
            grads = backpropagate(loss_pi + loss_v, {**pleaves, **vleaves})
        except NonFiniteGradientError:
            self.skipped_steps += 1
            result.skipped = True
            return result
        self.policy_opt.step(self.policy_params, {k: grads[k] for k in pleaves})
        self.value_opt.step(self.value_params, {k: grads[k] for k in vleaves})
        return result

    def train(self, steps=None, on_update=None):
        """Run until ``steps`` environment steps; ``on_update(row)`` gets each metrics row."""
        target = self.cfg.steps if steps is None else steps
        while self.step_count < target:
            batch, finished = self.collect()
            res = self.update(batch)
            row = {
                "step": self.step_count,
                "episode": self.episode_count,
                "return": float(np.mean(finished)) if finished else math.nan,
                "loss_pi": res.loss_pi,
                "loss_v": res.loss_v,
                "entropy_est": res.entropy_est,
                "skipped_steps": self.skipped_steps,
            }
            if on_update is not None:
                on_update(row)
        return self


class MetricsWriter:
    """Append-only CSV sink for training metrics."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(METRICS_HEADER)

    def __call__(self, row):
        self._writer.writerow([row[k] if isinstance(row[k], int) else repr(float(row[k]))
                               for k in METRICS_HEADER])
        self._fh.flush()

    def close(self):
        self._fh.close()


# evaluation ---------------------------------------------------------------------

def evaluate(policy_params, policy_cfg, env, episodes, mode, rng):
    """Run episodes acting with the analytic mean (``mode='mean'``) or samples.

    Returns per-episode returns plus mean/std/min/max; ``min`` is the worst case.
    """
    if mode not in ("mean", "sample"):
        raise ValueError("mode must be 'mean' or 'sample'")
    returns = []
    for _ in range(episodes):
        s = env.reset(rng)
        total, done = 0.0, False
        while not done:
            dist = conditioner_forward(s[None], policy_params, policy_cfg)
            a = dist.mean()[0] if mode == "mean" else dist.sample(rng)[0]
            s, r, done = env.step(a)
            total += r
        returns.append(total)
    arr = np.asarray(returns)
    return {
        "mode": mode,
        "episodes": episodes,
        "mean": float(arr.mean()),
        "std": float(arr.std()),
        "min": float(arr.min()),
        "max": float(arr.max()),
        "returns": [float(x) for x in arr],
    }
