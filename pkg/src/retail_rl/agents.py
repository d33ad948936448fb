"""Value-based agents sharing one network, replay buffer and exploration scheme.

Each agent turns the network output into per-action scalar values (used for
greedy action choice) and implements its own loss. Losses are reduced as
``mean over batch`` of ``sum over predicted levels j`` of ``mean over target
samples i``, which is the pairing used by quantile-style TD learning.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import gld, neural, seeding
from .neural import Adam, NetworkSpec

AGENT_NAMES = ("dqn", "qrdqn", "erdqn", "gtdqn")


@dataclass
class AgentConfig:
    gamma: float = 0.99
    epsilon: float = 0.01
    epsilon_start: float = 1.0
    epsilon_decay_updates: int = 0  # linear decay from epsilon_start; 0 means constant epsilon
    batch_size: int = 64
    target_sync: int = 500
    buffer_capacity: int = 100_000
    lr: float = 1e-4
    adam_beta2: float = 0.999
    lr_final: float | None = None  # linear decay target; None keeps lr constant
    lr_decay_updates: int = 0
    grad_clip: float | None = 10.0
    n_quantiles: int = 9
    delta: float = 1.0
    loss_variant: str = "paper"
    reward_scale: float = 1.0
    action_selection: str = "mean"  # gtdqn only: "mean" or "quantile_average"
    ablation_quantiles: int = 5
    conv_kernel: int = 5
    conv_channels: int = 4
    trunk: tuple = (128, 64)
    head_scale: float = 0.1
    check_crossings: bool = True
    observe_position: bool = False  # also feed on-hand count and in-transit units to the network

    def __post_init__(self):
        self.trunk = tuple(self.trunk)
        errors = []
        if not 0 <= self.gamma < 1:
            errors.append("gamma must lie in [0, 1)")
        for name in ("epsilon", "epsilon_start"):
            if not 0 <= getattr(self, name) <= 1:
                errors.append(f"{name} must lie in [0, 1]")
        for name in ("batch_size", "target_sync", "buffer_capacity", "n_quantiles", "ablation_quantiles"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        if self.lr_final is not None and not (self.lr_final > 0 and self.lr_decay_updates >= 1):
            errors.append("lr_final needs a positive value and lr_decay_updates >= 1")
        if not 0 < self.adam_beta2 < 1:
            errors.append("adam_beta2 must lie in (0, 1)")
        if not self.lr > 0 or not self.delta > 0 or not self.reward_scale > 0:
            errors.append("lr, delta and reward_scale must be positive")
        if self.loss_variant not in gld.LOSS_VARIANTS:
            errors.append(f"loss_variant must be one of {gld.LOSS_VARIANTS}")
        if self.action_selection not in ("mean", "quantile_average"):
            errors.append("action_selection must be 'mean' or 'quantile_average'")
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def levels(self) -> np.ndarray:
        return gld.midpoint_levels(self.n_quantiles)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trunk"] = list(self.trunk)
        return d


class ReplayBuffer:
    """Fixed-capacity ring of transitions; sampling is uniform with replacement."""

    def __init__(self, capacity: int, obs_width: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_width))
        self.next_obs = np.zeros((capacity, obs_width))
        self.action = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros(capacity)
        self.done = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._head = 0

    def __len__(self) -> int:
        return self.size

    def push(self, obs, action, reward, next_obs, done) -> None:
        """Append one transition or a batch (leading axis)."""
        obs = np.atleast_2d(obs)
        next_obs = np.atleast_2d(next_obs)
        action = np.atleast_1d(action)
        reward = np.atleast_1d(reward).astype(np.float64)
        done = np.broadcast_to(np.atleast_1d(done), action.shape)
        if not np.all(np.isfinite(reward)):
            raise ValueError("rewards must be finite")
        n = len(action)
        if n > self.capacity:
            obs, next_obs, action, reward, done = (a[-self.capacity:] for a in (obs, next_obs, action, reward, done))
            self._head = (self._head + n - self.capacity) % self.capacity
            n = self.capacity
        idx = (self._head + np.arange(n)) % self.capacity
        self.obs[idx] = obs
        self.next_obs[idx] = next_obs
        self.action[idx] = action
        self.reward[idx] = reward
        self.done[idx] = done
        self._head = int((self._head + n) % self.capacity)
        self.size = min(self.size + n, self.capacity)

    def indices(self) -> np.ndarray:
        """Stored slots from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (self._head + np.arange(self.capacity)) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self.size, batch_size)
        return {
            "obs": self.obs[idx], "action": self.action[idx], "reward": self.reward[idx],
            "next_obs": self.next_obs[idx], "done": self.done[idx], "index": idx,
        }


def epsilon_greedy(values: np.ndarray, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Greedy with probability ``1 - epsilon`` (ties to the lowest index), else uniform.

    Consumes the same random numbers whatever the values, so runs that differ
    only in their value estimates stay in lock-step.
    """
    values = np.atleast_2d(values)
    b, n = values.shape
    if n < 1:
        raise ValueError("need at least one action")
    explore = rng.random(b) < epsilon
    random_actions = rng.integers(0, n, b)
    return np.where(explore, random_actions, np.argmax(values, axis=1))


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


GLD_FLOOR = 1e-3


def gtdqn_head_map(raw: np.ndarray) -> np.ndarray:
    """Raw head outputs ``[..., 4]`` to valid parameters: identity location, softplus + floor otherwise."""
    raw = np.asarray(raw, dtype=np.float64)
    lam = np.empty_like(raw)
    lam[..., 0] = raw[..., 0]
    lam[..., 1:] = softplus(raw[..., 1:]) + GLD_FLOOR
    return lam


def gtdqn_head_map_grad(raw: np.ndarray) -> np.ndarray:
    d = np.ones_like(raw)
    d[..., 1:] = sigmoid(raw[..., 1:])
    return d


class ValueAgent:
    name = "base"
    outputs_per_action = 1

    def __init__(self, max_stock: int, horizon: int, n_actions: int, cfg: AgentConfig = None, seed=0,
                 shelf_scale: float = 30.0, forecast_scale: float = 10.0):
        self.cfg = cfg or AgentConfig()
        self.spec = NetworkSpec(
            max_stock=max_stock, horizon=horizon, n_actions=n_actions,
            outputs_per_action=self._outputs_per_action(), conv_kernel=min(self.cfg.conv_kernel, max_stock),
            conv_channels=self.cfg.conv_channels, trunk=self.cfg.trunk,
            shelf_scale=shelf_scale, forecast_scale=forecast_scale, observe_position=self.cfg.observe_position,
        )
        init_ss, sample_ss, act_ss = seeding.children(seed, 3)
        self.params = neural.init_params(self.spec, np.random.default_rng(init_ss), self.cfg.head_scale)
        self.target = neural.copy_params(self.params)
        self.opt = Adam(self.params, lr=self.cfg.lr, beta2=self.cfg.adam_beta2, clip_norm=self.cfg.grad_clip)
        self.buffer = ReplayBuffer(self.cfg.buffer_capacity, self.spec.input_width)
        self.sample_rng = np.random.default_rng(sample_ss)
        self.act_rng = np.random.default_rng(act_ss)
        self.updates = 0
        self.crossings = 0
        self.crossing_checks = 0

    def _outputs_per_action(self) -> int:
        return self.outputs_per_action

    # -- acting ---------------------------------------------------------------

    def values_from_output(self, out: np.ndarray) -> np.ndarray:
        """Per-action scalar used for greedy selection, ``[B, A]``."""
        raise NotImplementedError

    def action_values(self, x, params=None) -> np.ndarray:
        return self.values_from_output(neural.forward(self.spec, self.params if params is None else params, x))

    @property
    def epsilon(self) -> float:
        cfg = self.cfg
        if cfg.epsilon_decay_updates <= 0:
            return cfg.epsilon
        frac = min(self.updates / cfg.epsilon_decay_updates, 1.0)
        return cfg.epsilon_start + frac * (cfg.epsilon - cfg.epsilon_start)

    @property
    def learning_rate(self) -> float:
        cfg = self.cfg
        if cfg.lr_final is None:
            return cfg.lr
        frac = min(self.updates / cfg.lr_decay_updates, 1.0)
        return cfg.lr + frac * (cfg.lr_final - cfg.lr)

    def act(self, obs, explore: bool = True, rng: np.random.Generator | None = None) -> np.ndarray:
        x = obs.to_array(self.spec.observe_position) if hasattr(obs, "to_array") else np.atleast_2d(obs)
        eps = self.epsilon if explore else 0.0
        return epsilon_greedy(self.action_values(x), eps, rng or self.act_rng)

    # -- learning -------------------------------------------------------------

    def remember(self, obs, action, reward, next_obs, done=False) -> None:
        self.buffer.push(obs, action, reward, next_obs, done)

    def learn(self) -> tuple[float, float]:
        """One update from a replay sample. Returns ``(loss, mean chosen value)``."""
        batch = self.buffer.sample(self.cfg.batch_size, self.sample_rng)
        return self.update(batch)

    def update(self, batch: dict) -> tuple[float, float]:
        cfg = self.cfg
        out, cache = neural.forward(self.spec, self.params, batch["obs"], return_cache=True)
        next_out = neural.forward(self.spec, self.target, batch["next_obs"])
        reward = batch["reward"] * cfg.reward_scale
        discount = cfg.gamma * (1.0 - batch["done"].astype(np.float64))
        loss, dout = self.loss_and_grad(out, next_out, batch["action"], reward, discount)
        self.opt.step(self.params, neural.backward(self.spec, self.params, cache, dout), lr=self.learning_rate)
        self.updates += 1
        if self.updates % cfg.target_sync == 0:
            neural.sync_target(self.params, self.target)
        values = self.values_from_output(out)
        chosen = float(values[np.arange(len(values)), batch["action"]].mean())
        return float(loss), chosen

    def loss_and_grad(self, out, next_out, action, reward, discount):
        raise NotImplementedError

    def sync_target(self) -> None:
        neural.sync_target(self.params, self.target)

    def state_meta(self) -> dict:
        return {"agent": self.name, "updates": self.updates, "config": self.cfg.to_dict()}

    def load_params(self, params: dict) -> None:
        neural.check_params(self.spec, params)
        for k, v in params.items():
            np.copyto(self.params[k], v)
        self.sync_target()


def _pairwise_reduce(elem: np.ndarray) -> float:
    """``mean_b sum_j mean_i`` for an array shaped ``[B, i, j]``."""
    return float(elem.mean(axis=1).sum(axis=1).mean())


class DQNAgent(ValueAgent):
    name = "dqn"
    outputs_per_action = 1

    def values_from_output(self, out):
        return out[..., 0]

    def loss_and_grad(self, out, next_out, action, reward, discount):
        b = len(action)
        rows = np.arange(b)
        target = reward + discount * next_out[..., 0].max(axis=1)
        td = target - out[rows, action, 0]
        a = np.abs(td)
        loss = np.where(a <= 1.0, 0.5 * td * td, a - 0.5).mean()
        dout = np.zeros_like(out)
        dout[rows, action, 0] = -np.clip(td, -1.0, 1.0) / b
        return loss, dout


class QRDQNAgent(ValueAgent):
    name = "qrdqn"

    def _outputs_per_action(self):
        return self.cfg.n_quantiles

    def values_from_output(self, out):
        return out.mean(axis=-1)

    def count_crossings(self, theta):
        if self.cfg.check_crossings:
            bad = np.any(np.diff(theta, axis=-1) < 0, axis=-1)
            self.crossings += int(bad.sum())
            self.crossing_checks += bad.size

    def loss_and_grad(self, out, next_out, action, reward, discount):
        cfg = self.cfg
        b = len(action)
        rows = np.arange(b)
        self.count_crossings(out)
        best = np.argmax(self.values_from_output(next_out), axis=1)
        target = reward[:, None] + discount[:, None] * next_out[rows, best]   # [B, N]
        pred = out[rows, action]                                               # [B, N]
        u = cfg.levels[None, None, :]
        y, y_hat = target[:, :, None], pred[:, None, :]
        loss = _pairwise_reduce(gld.smoothed_pinball_loss(u, y, y_hat, cfg.delta, cfg.loss_variant))
        dpred = gld.smoothed_pinball_grad(u, y, y_hat, cfg.delta, cfg.loss_variant).mean(axis=1) / b
        dout = np.zeros_like(out)
        dout[rows, action] = dpred
        return loss, dout


class ERDQNAgent(ValueAgent):
    name = "erdqn"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        levels = self.cfg.levels
        mid = np.flatnonzero(np.isclose(levels, 0.5))
        if mid.size != 1:
            raise ValueError("expectile agent needs an odd number of levels so that 0.5 is one of them")
        self.mid = int(mid[0])

    def _outputs_per_action(self):
        return self.cfg.n_quantiles

    def values_from_output(self, out):
        return out[..., self.mid]

    def loss_and_grad(self, out, next_out, action, reward, discount):
        cfg = self.cfg
        b = len(action)
        rows = np.arange(b)
        best = np.argmax(self.values_from_output(next_out), axis=1)
        target = reward[:, None] + discount[:, None] * next_out[rows, best]
        pred = out[rows, action]
        u = cfg.levels[None, None, :]
        y, y_hat = target[:, :, None], pred[:, None, :]
        loss = _pairwise_reduce(gld.expectile_loss(u, y, y_hat))
        dout = np.zeros_like(out)
        dout[rows, action] = gld.expectile_grad(u, y, y_hat).mean(axis=1) / b
        return loss, dout


class GTDQNAgent(ValueAgent):
    """Predicts generalized lambda parameters per action and regresses their quantiles."""

    name = "gtdqn"
    outputs_per_action = 4

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.ablation_levels = gld.midpoint_levels(self.cfg.ablation_quantiles)

    def lambdas(self, out):
        return gtdqn_head_map(out)

    def values_from_output(self, out):
        lam = gtdqn_head_map(out)
        if self.cfg.action_selection == "mean":
            return gld.mean_array(lam)
        return gld.quantile_array(lam, self.ablation_levels).mean(axis=-1)

    def loss_and_grad(self, out, next_out, action, reward, discount):
        cfg = self.cfg
        b = len(action)
        rows = np.arange(b)
        u = cfg.levels
        lam = gtdqn_head_map(out)
        if cfg.check_crossings:
            q_all = gld.quantile_array(lam, u)
            bad = np.any(np.diff(q_all, axis=-1) < 0, axis=-1)
            self.crossings += int(bad.sum())
            self.crossing_checks += bad.size
        # target network for both the optimal action and the projected quantiles
        lam_next = gtdqn_head_map(next_out)
        best = np.argmax(self.values_from_output(next_out), axis=1)
        target = reward[:, None] + discount[:, None] * gld.quantile_array(lam_next[rows, best], u)  # [B, N]
        lam_sa = lam[rows, action]                                                               # [B, 4]
        pred = gld.quantile_array(lam_sa, u)                                                     # [B, N]
        y, y_hat = target[:, :, None], pred[:, None, :]
        uu = u[None, None, :]
        loss = _pairwise_reduce(gld.smoothed_pinball_loss(uu, y, y_hat, cfg.delta, cfg.loss_variant))
        dpred = gld.smoothed_pinball_grad(uu, y, y_hat, cfg.delta, cfg.loss_variant).mean(axis=1) / b  # [B, N]
        dlam = np.einsum("bn,bnk->bk", dpred, gld.quantile_array_grad(lam_sa, u))
        dout = np.zeros_like(out)
        dout[rows, action] = dlam * gtdqn_head_map_grad(out[rows, action])
        return loss, dout


AGENTS = {cls.name: cls for cls in (DQNAgent, QRDQNAgent, ERDQNAgent, GTDQNAgent)}


def make_agent(name: str, max_stock: int, horizon: int, n_actions: int, cfg: AgentConfig = None, seed=0, **kw):
    try:
        cls = AGENTS[name]
    except KeyError:
        raise ValueError(f"unknown agent {name!r}; choose from {sorted(AGENTS)}") from None
    return cls(max_stock, horizon, n_actions, cfg, seed, **kw)
