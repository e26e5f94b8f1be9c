"""DQN, double DQN and REINFORCE agents on top of :mod:`savfleet.nn`.

One network maps the full observation to ``n_zones * k`` outputs; zone z
reads its ``k`` local actions from slice ``[z*k, (z+1)*k)``. Each zone takes
its own action every step and all zones share the global reward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from savfleet import nn
from savfleet.mdp import Trajectory, Transition, discounted_return
from savfleet.policies import FOUR_NEAREST, action_space_size


@dataclass
class AgentConfig:
    gamma: float = 0.99
    eta: float = 1e-3  # TD learning rate
    alpha: float = 1e-3  # policy-gradient learning rate
    epsilon_start: float = 1.0
    epsilon_floor: float = 0.05
    epsilon_decay_steps: int = 30 * 168
    buffer_capacity: int = 20_000
    batch_size: int = 32
    target_sync: int = 500
    updates_per_step: int = 1
    hidden: tuple = (120, 120)
    momentum: float = 0.0
    # REINFORCE: "next" sums rewards after step i, "current" includes r_i
    return_from: str = "next"
    baseline: bool = False
    # REINFORCE: rescale each episode's returns to zero mean, unit std
    standardize_returns: bool = False
    # clip each update's global gradient norm; None leaves gradients untouched
    max_grad_norm: float | None = None
    # divide rewards by their running mean absolute value before learning
    normalize_rewards: bool = False
    # standardise observations with running mean / std before the network
    normalize_inputs: bool = False

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.eta <= 0 or self.alpha <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size > self.buffer_capacity:
            raise ValueError("batch_size exceeds buffer_capacity")
        if self.return_from not in ("next", "current"):
            raise ValueError("return_from must be 'next' or 'current'")

    def epsilon(self, step: int) -> float:
        if step >= self.epsilon_decay_steps:
            return self.epsilon_floor
        frac = step / self.epsilon_decay_steps
        return self.epsilon_start + frac * (self.epsilon_floor - self.epsilon_start)


class ReplayBuffer:
    """Fixed-capacity ring of transitions stored as arrays."""

    def __init__(self, capacity: int, obs_size: int, n_zones: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, obs_size))
        self.next_states = np.zeros((capacity, obs_size))
        self.actions = np.zeros((capacity, n_zones), dtype=int)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._pos = 0

    def __len__(self):
        return self.size

    def push(self, t: Transition):
        i = self._pos
        self.states[i] = t.state
        self.next_states[i] = t.next_state
        self.actions[i] = np.atleast_1d(t.action)
        self.rewards[i] = t.reward
        self.dones[i] = t.done
        self._pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng):
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} transitions, batch needs {batch_size}")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.dones[idx]


def default_mask(mode: str, neighbors: np.ndarray) -> np.ndarray:
    """(n_zones, k) boolean mask; in four-nearest mode repeated self-fills
    at grid edges are masked so "stay" is one action, not two."""
    n = neighbors.shape[0]
    k = action_space_size(mode, n)
    mask = np.ones((n, k), dtype=bool)
    if mode == FOUR_NEAREST:
        for z in range(n):
            seen = set()
            for j in range(k):
                if neighbors[z, j] in seen:
                    mask[z, j] = False
                seen.add(neighbors[z, j])
    return mask


def _zone_slice(out, zone, k):
    return out[..., zone * k : (zone + 1) * k]


def _masked_argmax(q, mask):
    return np.argmax(np.where(mask, q, -np.inf), axis=-1)


def _masked_max(q, mask):
    return np.max(np.where(mask, q, -np.inf), axis=-1)


def select_action_q(params, observation, zone, epsilon, mask, rng, k=None) -> int:
    """Epsilon-greedy choice over the zone's unmasked Q slice."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("action mask has no valid action")
    k = k or mask.size
    valid = np.flatnonzero(mask)
    if rng.random() < epsilon:
        return int(valid[rng.integers(len(valid))])
    q = _zone_slice(nn.forward(params, observation)[0], zone, k)
    return int(_masked_argmax(q, mask))


def _per_zone(params, states, k):
    out = nn.forward(params, states)[0]
    return out.reshape(out.shape[:-1] + (-1, k))


def dqn_td_target(target_params, transition: Transition, gamma, mask=None, k=None):
    """r + gamma * max_a Q_target(s', a) per zone; just r for terminal transitions.

    Returns a float for single-zone networks and a per-zone array otherwise.
    """
    k = k or target_params.weights[-1].shape[1]
    q = _per_zone(target_params, transition.next_state, k)
    mask = np.ones(q.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(q.shape)
    boot = 0.0 if transition.done else gamma * _masked_max(q, mask)
    out = transition.reward + boot * np.ones(q.shape[0])
    return float(out[0]) if out.size == 1 else out


def ddqn_td_target(online_params, target_params, transition: Transition, gamma, mask=None, k=None):
    """r + gamma * Q_target(s', argmax_a Q_online(s', a)); just r when done."""
    k = k or target_params.weights[-1].shape[1]
    q_t = _per_zone(target_params, transition.next_state, k)
    mask = np.ones(q_t.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(q_t.shape)
    if transition.done:
        out = np.full(q_t.shape[0], float(transition.reward))
    else:
        a = _masked_argmax(_per_zone(online_params, transition.next_state, k), mask)
        out = transition.reward + gamma * q_t[np.arange(q_t.shape[0]), a]
    return float(out[0]) if out.size == 1 else out


def sync_target(params, target_params):
    """Hard copy of the online weights into the target network (in place)."""
    for dst, src in zip(target_params.arrays(), params.arrays()):
        dst[...] = src
    return target_params


def batch_targets(params, target_params, rewards, next_states, dones, gamma, mask, k, double):
    q_next_t = _per_zone(target_params, next_states, k)  # (B, n, k)
    if double:
        a = _masked_argmax(_per_zone(params, next_states, k), mask)
        boot = np.take_along_axis(q_next_t, a[..., None], axis=-1)[..., 0]
    else:
        boot = _masked_max(q_next_t, mask)
    boot = np.where(dones[:, None], 0.0, boot)
    return rewards[:, None] + gamma * boot


def dqn_train_step(params, target_params, buffer: ReplayBuffer, config: AgentConfig, rng, opt=None,
                   mask=None, k=None, double=False, batch=None) -> float:
    """One SGD step on the mean squared TD error of a uniform minibatch.

    Only the online prediction Q(s, a) receives gradient. Returns the loss
    measured before the step. ``batch`` overrides sampling (used for fixed-batch tests).
    """
    if batch is None:
        batch = buffer.sample(config.batch_size, rng)
    states, actions, rewards, next_states, dones = batch
    k = k or params.weights[-1].shape[1] // actions.shape[1]
    n = actions.shape[1]
    mask = np.ones((n, k), dtype=bool) if mask is None else mask
    opt = opt or nn.OptimState(config.eta, config.momentum)

    targets = batch_targets(params, target_params, rewards, next_states, dones, config.gamma, mask, k, double)
    out, trace = nn.forward(params, states)
    q = out.reshape(len(states), n, k)
    pred = np.take_along_axis(q, actions[..., None], axis=-1)[..., 0]
    err = pred - targets
    loss = float(np.mean(err**2))
    dq = np.zeros_like(q)
    np.put_along_axis(dq, actions[..., None], (2.0 / err.size * err)[..., None], axis=-1)
    grads = nn.backward(params, trace, dq.reshape(out.shape))
    if config.max_grad_norm is not None:
        nn.clip_by_norm(grads, config.max_grad_norm)
    nn.sgd_update(params, grads, opt)
    return loss


def policy_log_prob_grad(params, observation, actions, mask, k):
    """log pi(actions | observation) summed over zones, and d/d(output) of it."""
    out, trace = nn.forward(params, observation)
    logits = np.where(mask, out.reshape(-1, k), -np.inf)
    logp = nn.log_softmax(logits)
    p = np.exp(logp)
    idx = np.arange(len(actions))
    g = -p
    g[idx, actions] += 1.0
    return float(logp[idx, actions].sum()), g.reshape(out.shape), trace


def reinforce_update(params, trajectory: Trajectory, gamma, alpha, mask=None, k=None, return_from="next",
                     baseline=0.0, opt=None, standardize=False, max_grad_norm=None):
    """Sequential policy-gradient ascent over one finished episode.

    For each step i: theta += alpha * G_i * grad log pi(a_i | s_i), where G_i
    is the discounted sum of rewards after step i (``return_from="next"``)
    or from step i on (``"current"``), minus ``baseline``. ``standardize``
    rescales the episode's returns to zero mean and unit standard deviation
    instead of subtracting a baseline.
    """
    if trajectory.total_steps == 0:
        raise ValueError("empty trajectory")
    rewards = trajectory.rewards()
    tail = discounted_return(rewards, gamma)
    if return_from == "next":
        returns = np.append(tail[1:], 0.0)
    else:
        returns = tail
    if standardize:
        spread = returns.std()
        returns = (returns - returns.mean()) / (spread if spread > 0 else 1.0)
    else:
        returns = returns - baseline
    opt = opt or nn.OptimState(alpha)
    for step, g in zip(trajectory.steps, returns):
        if g == 0.0:
            continue
        actions = np.atleast_1d(step.action)
        kk = k or params.weights[-1].shape[1] // len(actions)
        m = np.ones((len(actions), kk), dtype=bool) if mask is None else mask
        _, dlogp, trace = policy_log_prob_grad(params, step.state, actions, m, kk)
        grads = nn.backward(params, trace, g * dlogp)
        if max_grad_norm is not None:
            nn.clip_by_norm(grads, max_grad_norm)
        nn.sgd_update(params, grads, opt, ascent=True)
    return params


class _RewardScaler:
    def __init__(self, enabled):
        self.enabled = enabled
        self.total = 0.0
        self.count = 0

    def __call__(self, r):
        if not self.enabled:
            return r
        self.total += abs(r)
        self.count += 1
        scale = self.total / self.count
        return r / scale if scale > 0 else r


class _InputScaler:
    """Running per-feature mean / std (Welford); identity when disabled."""

    def __init__(self, enabled, size):
        self.enabled = enabled
        self.count = 0
        self.mean = np.zeros(size)
        self.m2 = np.zeros(size)

    def update(self, x):
        if not self.enabled:
            return
        self.count += 1
        d = x - self.mean
        self.mean += d / self.count
        self.m2 += d * (x - self.mean)

    def __call__(self, x):
        if not self.enabled or self.count < 2:
            return np.asarray(x, dtype=float)
        std = np.sqrt(self.m2 / (self.count - 1))
        return (x - self.mean) / np.maximum(std, 1e-3)


class DQNAgent:
    """Deep Q-learning with replay and a hard-synced target network.

    ``double=True`` switches the TD target to the double-DQN form.
    """

    learns = True

    def __init__(self, obs_size, n_zones, mode, config: AgentConfig, rng, neighbors=None, double=False):
        self.config = config
        self.n_zones = n_zones
        self.k = action_space_size(mode, n_zones)
        self.double = double
        self.kind = "ddqn" if double else "dqn"
        sizes = [obs_size, *config.hidden, n_zones * self.k]
        self.params = nn.init_params(sizes, rng)
        self.target = self.params.copy()
        self.opt = nn.OptimState(config.eta, config.momentum)
        self.buffer = ReplayBuffer(config.buffer_capacity, obs_size, n_zones)
        if neighbors is not None:
            self.mask = default_mask(mode, neighbors)
        else:
            self.mask = np.ones((n_zones, self.k), dtype=bool)
        self.steps = 0
        self.losses: list[float] = []
        self._scale = _RewardScaler(config.normalize_rewards)
        self._inputs = _InputScaler(config.normalize_inputs, obs_size)

    @property
    def epsilon(self):
        return self.config.epsilon(self.steps)

    def act(self, observation, rng, explore=True):
        eps = self.epsilon if explore else 0.0
        q = _per_zone(self.params, self._inputs(observation), self.k)
        greedy = _masked_argmax(q, self.mask)
        explore_draw = rng.random(self.n_zones) < eps
        actions = greedy.copy()
        for z in np.flatnonzero(explore_draw):
            valid = np.flatnonzero(self.mask[z])
            actions[z] = valid[rng.integers(len(valid))]
        return actions

    def observe(self, t: Transition, rng):
        r = self._scale(t.reward)
        self.buffer.push(Transition(t.state, t.action, r, t.next_state, t.done))
        self._inputs.update(np.asarray(t.state, dtype=float))
        self.steps += 1
        if len(self.buffer) >= self.config.batch_size:
            for _ in range(self.config.updates_per_step):
                s, a, rew, s2, d = self.buffer.sample(self.config.batch_size, rng)
                batch = (self._inputs(s), a, rew, self._inputs(s2), d)
                loss = dqn_train_step(self.params, self.target, self.buffer, self.config, rng, self.opt,
                                      self.mask, self.k, self.double, batch=batch)
                self.losses.append(loss)
        if self.steps % self.config.target_sync == 0:
            sync_target(self.params, self.target)

    def end_episode(self, trajectory, rng):
        return None


class ReinforceAgent:
    """Softmax policy over each zone's slice, updated once per finished episode."""

    kind = "reinforce"
    learns = True

    def __init__(self, obs_size, n_zones, mode, config: AgentConfig, rng, neighbors=None, k=None):
        self.config = config
        self.n_zones = n_zones
        self.k = k or action_space_size(mode, n_zones)
        sizes = [obs_size, *config.hidden, n_zones * self.k]
        self.params = nn.init_params(sizes, rng)
        self.opt = nn.OptimState(config.alpha, config.momentum)
        if neighbors is not None:
            self.mask = default_mask(mode, neighbors)
        else:
            self.mask = np.ones((n_zones, self.k), dtype=bool)
        self.losses: list[float] = []
        self.epsilon = 0.0
        self._baseline = 0.0
        self._episodes = 0
        self._scale = _RewardScaler(config.normalize_rewards)
        # statistics stay frozen within an episode and are refreshed after each update
        self._inputs = _InputScaler(config.normalize_inputs, obs_size)

    def probabilities(self, observation):
        out = nn.forward(self.params, self._inputs(observation))[0].reshape(-1, self.k)
        return nn.softmax(np.where(self.mask, out, -np.inf))

    def act(self, observation, rng, explore=True):
        p = self.probabilities(observation)
        u = rng.random(self.n_zones)
        a = (np.cumsum(p, axis=1) < u[:, None] * p.sum(axis=1, keepdims=True)).sum(axis=1)
        # guard against a draw landing past the last unmasked entry
        return np.minimum(a, self.k - 1)

    def observe(self, t, rng):
        return None

    def end_episode(self, trajectory: Trajectory, rng):
        raw = trajectory
        if self.config.normalize_rewards or self.config.normalize_inputs:
            steps = [Transition(self._inputs(s.state), s.action, self._scale(s.reward), s.next_state, s.done)
                     for s in trajectory.steps]
            trajectory = Trajectory(steps)
        baseline = self._baseline if self.config.baseline else 0.0
        reinforce_update(self.params, trajectory, self.config.gamma, self.config.alpha, self.mask, self.k,
                         self.config.return_from, baseline, self.opt, self.config.standardize_returns,
                         self.config.max_grad_norm)
        if self.config.baseline:
            ret = discounted_return(trajectory.rewards(), self.config.gamma).mean()
            self._episodes += 1
            self._baseline += (ret - self._baseline) / min(self._episodes, 20)
        for step in raw.steps:
            self._inputs.update(np.asarray(step.state, dtype=float))


def run_episode(agent, env, train: bool, rng):
    """Play one episode; learners update online (DQN) or at the end (REINFORCE).

    Returns ``(trajectory, episode_return)``; the environment's info maps
    are kept on ``trajectory.infos``.
    """
    traj = Trajectory()
    obs = env.reset()
    done = False
    while not done:
        action = agent.act(obs, rng, explore=train)
        nxt, r, done, info = env.step(action)
        t = Transition(obs, action, r, nxt, done)
        traj.append(t)
        traj.infos.append(info)
        if train:
            agent.observe(t, rng)
        obs = nxt
    if train:
        agent.end_episode(traj, rng)
    return traj, float(traj.rewards().sum())
