"""Tabular solvers: dynamic programming, Monte Carlo evaluation, TD control, MCTS.

Every argmax in this module breaks ties toward the lowest index.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from savfleet.mdp import TabularMDP, discounted_return, sample_step


class NonEpisodicError(RuntimeError):
    pass


def _lookahead(mdp: TabularMDP, v: np.ndarray) -> np.ndarray:
    # Q(s,a) = sum_s2 P(s2|s,a) (reward[s,a,s2] + gamma v(s2))
    return mdp.expected_reward() + mdp.gamma * mdp.transition @ v


def greedy_policy(q) -> np.ndarray:
    return np.argmax(np.asarray(q), axis=1)


def value_iteration(mdp: TabularMDP, epsilon: float = 1e-3):
    """Synchronous value iteration.

    Sweeps until the sup-norm change of a sweep drops below ``epsilon``.
    Returns ``(v, policy)`` with the policy greedy on the final values.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    v = np.zeros(mdp.n_states)
    while True:
        v_new = _lookahead(mdp, v).max(axis=1)
        delta = np.max(np.abs(v_new - v))
        v = v_new
        if delta < epsilon:
            break
    return v, greedy_policy(_lookahead(mdp, v))


def policy_evaluation(mdp: TabularMDP, policy, epsilon: float = 1e-3, v0=None):
    S = mdp.n_states
    idx = np.arange(S)
    P = mdp.transition[idx, policy]
    r = mdp.expected_reward()[idx, policy]
    v = np.zeros(S) if v0 is None else np.array(v0, dtype=float)
    while True:
        v_new = r + mdp.gamma * P @ v
        delta = np.max(np.abs(v_new - v))
        v = v_new
        if delta < epsilon:
            return v


def policy_iteration(mdp: TabularMDP, epsilon: float = 1e-3, return_passes: bool = False):
    """Iterative policy evaluation alternated with greedy improvement.

    The current action is kept whenever it is still a maximiser, so near-ties
    cannot make the loop cycle.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    policy = np.zeros(mdp.n_states, dtype=int)
    idx = np.arange(mdp.n_states)
    passes = 0
    while True:
        v = policy_evaluation(mdp, policy, epsilon)
        q = _lookahead(mdp, v)
        passes += 1
        best = greedy_policy(q)
        keep = q[idx, policy] >= q[idx, best] - 1e-12 * (1.0 + np.abs(q[idx, best]))
        new_policy = np.where(keep, policy, best)
        if np.array_equal(new_policy, policy):
            break
        policy = new_policy
    if return_passes:
        return v, policy, passes
    return v, policy


# --- Monte Carlo policy evaluation ----------------------------------------


@dataclass
class MCEstimate:
    v: np.ndarray
    counts: np.ndarray

    @property
    def visited(self):
        return self.counts > 0


def _policy_fn(policy):
    if callable(policy):
        return policy
    arr = np.asarray(policy)
    if arr.ndim == 1:
        return lambda s, rng: int(arr[s])
    cdf = np.cumsum(arr, axis=1)
    return lambda s, rng: int(np.searchsorted(cdf[s], rng.random() * cdf[s, -1], side="right"))


def _rollout(env, act, rng, step_cap):
    states, rewards = [], []
    s = env.reset()
    for _ in range(step_cap):
        s2, r, done, _ = env.step(act(s, rng))
        states.append(s)
        rewards.append(r)
        s = s2
        if done:
            return states, rewards
    raise NonEpisodicError(f"episode did not terminate within {step_cap} steps")


def _mc_evaluate(env, policy, episodes, gamma, rng, step_cap, first_visit):
    act = _policy_fn(policy)
    step_cap = step_cap or 10 * env.n_states
    totals = np.zeros(env.n_states)
    counts = np.zeros(env.n_states, dtype=np.int64)
    for _ in range(episodes):
        states, rewards = _rollout(env, act, rng, step_cap)
        returns = discounted_return(rewards, gamma)
        seen = set()
        for s, g in zip(states, returns):
            if first_visit:
                if s in seen:
                    continue
                seen.add(s)
            totals[s] += g
            counts[s] += 1
    v = np.divide(totals, counts, out=np.zeros_like(totals), where=counts > 0)
    return MCEstimate(v, counts)


def mc_first_visit(env, policy, episodes, gamma, rng, step_cap=None) -> MCEstimate:
    """First-visit Monte Carlo evaluation of ``policy``.

    ``policy`` may be an array of actions, an (S, A) matrix of action
    probabilities, or a callable ``(state, rng) -> action``. States that were
    never visited keep value 0 with count 0.
    """
    return _mc_evaluate(env, policy, episodes, gamma, rng, step_cap, first_visit=True)


def mc_every_visit(env, policy, episodes, gamma, rng, step_cap=None) -> MCEstimate:
    """Like :func:`mc_first_visit` but every occurrence of a state counts."""
    return _mc_evaluate(env, policy, episodes, gamma, rng, step_cap, first_visit=False)


# --- TD control ------------------------------------------------------------


@dataclass
class TDConfig:
    eta: float = 0.1
    gamma: float = 0.9
    episodes: int = 1000
    epsilon_start: float = 1.0
    epsilon_floor: float = 0.05
    # fraction of the episode budget over which epsilon decays linearly
    decay_fraction: float = 0.5
    step_cap: int | None = None
    # double Q only: bootstrap Q1 through Q2's value at Q1's argmax (and vice versa)
    cross: bool = False

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")

    def epsilon(self, episode: int) -> float:
        horizon = self.decay_fraction * self.episodes
        if horizon <= 0 or episode >= horizon:
            return self.epsilon_floor
        frac = episode / horizon
        return self.epsilon_start + frac * (self.epsilon_floor - self.epsilon_start)


def _valid(env, s):
    fn = getattr(env, "valid_actions", None)
    return fn(s) if fn is not None else np.arange(env.n_actions)


def _eps_greedy(q_row, valid, eps, rng):
    if rng.random() < eps:
        return int(valid[int(rng.integers(len(valid)))])
    return int(valid[int(np.argmax(q_row[valid]))])


def q_learning(env, config: TDConfig, rng, log: list | None = None) -> np.ndarray:
    """Tabular Q-learning with an epsilon-greedy behaviour policy.

    If ``log`` is a list, one dict per episode is appended with keys
    episode, return, epsilon, truncated, first_action.
    """
    q = np.zeros((env.n_states, env.n_actions))
    step_cap = config.step_cap or 10 * env.n_states
    gamma, eta = config.gamma, config.eta
    for ep in range(config.episodes):
        eps = config.epsilon(ep)
        s = env.reset()
        total, first, truncated = 0.0, None, True
        for _ in range(step_cap):
            a = _eps_greedy(q[s], _valid(env, s), eps, rng)
            if first is None:
                first = a
            s2, r, done, _ = env.step(a)
            total += r
            boot = 0.0 if done else q[s2, _valid(env, s2)].max()
            q[s, a] += eta * (r + gamma * boot - q[s, a])
            s = s2
            if done:
                truncated = False
                break
        if log is not None:
            log.append(dict(episode=ep, ret=total, epsilon=eps, truncated=truncated, first_action=first))
    return q


def double_q_learning(env, config: TDConfig, rng, log: list | None = None):
    """Two tables updated on fair coin flips; actions are greedy on Q1 + Q2.

    By default each table bootstraps from its own maximum. With
    ``config.cross`` the updated table picks the next action and the other
    table evaluates it.
    """
    q1 = np.zeros((env.n_states, env.n_actions))
    q2 = np.zeros_like(q1)
    step_cap = config.step_cap or 10 * env.n_states
    gamma, eta, cross = config.gamma, config.eta, config.cross
    for ep in range(config.episodes):
        eps = config.epsilon(ep)
        s = env.reset()
        total, first, truncated = 0.0, None, True
        for _ in range(step_cap):
            a = _eps_greedy(q1[s] + q2[s], _valid(env, s), eps, rng)
            if first is None:
                first = a
            s2, r, done, _ = env.step(a)
            total += r
            upd, other = (q1, q2) if rng.random() < 0.5 else (q2, q1)
            if done:
                boot = 0.0
            else:
                valid = _valid(env, s2)
                if cross:
                    boot = other[s2, valid[int(np.argmax(upd[s2, valid]))]]
                else:
                    boot = upd[s2, valid].max()
            upd[s, a] += eta * (r + gamma * boot - upd[s, a])
            s = s2
            if done:
                truncated = False
                break
        if log is not None:
            log.append(dict(episode=ep, ret=total, epsilon=eps, truncated=truncated, first_action=first))
    return q1, q2


def write_diagnostics(log, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "return", "epsilon", "truncated"])
        for row in log:
            w.writerow([row["episode"], repr(float(row["ret"])), repr(float(row["epsilon"])), int(row["truncated"])])


# --- Monte Carlo tree search -----------------------------------------------


class _Node:
    __slots__ = ("n", "n_a", "value_sum")

    def __init__(self, n_actions):
        self.n = 0
        self.n_a = np.zeros(n_actions, dtype=np.int64)
        self.value_sum = np.zeros(n_actions)

    def q(self):
        return np.divide(self.value_sum, self.n_a, out=np.zeros_like(self.value_sum), where=self.n_a > 0)


def uct_select(node: _Node, c: float) -> int:
    unvisited = np.flatnonzero(node.n_a == 0)
    if len(unvisited):
        return int(unvisited[0])
    score = node.q() + c * np.sqrt(math.log(node.n) / node.n_a)
    return int(np.argmax(score))


def mcts_plan(model: TabularMDP, s0: int, simulations: int, c: float, gamma: float, rng,
              rollout_depth: int = 50, tree: dict | None = None) -> int:
    """UCT planning from ``s0`` using ``model`` as a generative simulator.

    Tree nodes are keyed by the path of states from the root. New nodes are
    valued by a uniform random rollout of at most ``rollout_depth`` steps;
    tree paths are truncated at the same depth.
    Returns the most visited root action. Pass a dict as ``tree`` to inspect
    the search afterwards.
    """
    if simulations < 1:
        raise ValueError("simulations must be >= 1")
    tree = {} if tree is None else tree
    A = model.n_actions
    terminal = model.terminal

    def rollout(s, depth):
        g, disc = 0.0, 1.0
        for _ in range(depth):
            if s in terminal:
                break
            s, r = sample_step(model, s, int(rng.integers(A)), rng)
            g += disc * r
            disc *= gamma
        return g

    def simulate(path, s):
        if s in terminal or len(path) > rollout_depth:
            return 0.0
        node = tree.get(path)
        if node is None:
            tree[path] = _Node(A)
            return rollout(s, rollout_depth)
        a = uct_select(node, c)
        s2, r = sample_step(model, s, a, rng)
        g = r + gamma * simulate(path + (s2,), s2)
        node.n += 1
        node.n_a[a] += 1
        node.value_sum[a] += g
        return g

    root = (s0,)
    tree.setdefault(root, _Node(A))
    for _ in range(simulations):
        simulate(root, s0)
    return int(np.argmax(tree[root].n_a))
