"""Small MDPs and environments with known answers, used by tests and demos."""

import numpy as np

from savfleet.mdp import Env, TabularMDP


def chain_mdp(gamma=0.9):
    """s0 -> s1 -> s2 (terminal); action 0 moves forward with reward 1,
    action 1 stays put with reward 0."""
    P = np.zeros((3, 2, 3))
    R = np.zeros((3, 2, 3))
    P[0, 0, 1] = P[1, 0, 2] = 1.0
    R[0, 0, 1] = R[1, 0, 2] = 1.0
    P[0, 1, 0] = P[1, 1, 1] = 1.0
    P[2, :, 2] = 1.0
    return TabularMDP(P, R, gamma, {2})


def gridworld_mdp(size=4, gamma=0.9):
    """Deterministic size x size grid, goal in the bottom-right corner.

    Actions are N, E, S, W; moving into a wall leaves the agent in place.
    Every move costs 1.
    """
    n = size * size
    goal = n - 1
    moves = [(-1, 0), (0, 1), (1, 0), (0, -1)]
    P = np.zeros((n, 4, n))
    R = np.zeros((n, 4, n))
    for s in range(n):
        if s == goal:
            P[s, :, s] = 1.0
            continue
        r, c = divmod(s, size)
        for a, (dr, dc) in enumerate(moves):
            rr, cc = r + dr, c + dc
            s2 = rr * size + cc if 0 <= rr < size and 0 <= cc < size else s
            P[s, a, s2] = 1.0
            R[s, a, s2] = -1.0
    return TabularMDP(P, R, gamma, {goal})


def bandit_mdp(p_win=(1.0, 0.0), gamma=0.9):
    """One-shot two-armed bandit. Arm ``a`` pays 1 with probability
    ``p_win[a]``; states 1 (win) and 2 (loss) are both terminal."""
    P = np.zeros((3, 2, 3))
    R = np.zeros((3, 2, 3))
    for a, p in enumerate(p_win):
        P[0, a, 1] = p
        P[0, a, 2] = 1.0 - p
        R[0, a, 1] = 1.0
    P[1, :, 1] = 1.0
    P[2, :, 2] = 1.0
    return TabularMDP(P, R, gamma, {1, 2})


def loop_mdp(p_stay=0.5, gamma=0.9):
    """Single live state that loops back with probability ``p_stay`` (reward 1)
    or exits to the terminal state (reward 0). One action."""
    P = np.zeros((2, 1, 2))
    R = np.zeros((2, 1, 2))
    P[0, 0, 0] = p_stay
    P[0, 0, 1] = 1.0 - p_stay
    R[0, 0, 0] = 1.0
    P[1, 0, 1] = 1.0
    return TabularMDP(P, R, gamma, {1})


def loop_value(p_stay=0.5, gamma=0.9):
    """Analytic V(s0) of :func:`loop_mdp`: V = p (1 + gamma V)."""
    return p_stay / (1.0 - gamma * p_stay)


def fixed_horizon_mdp(horizon=3, n_actions=2, seed=0):
    """Layered MDP where every path reaches the terminal state in exactly
    ``horizon`` steps. Integer rewards keep shifted copies exactly comparable."""
    rng = np.random.default_rng(seed)
    width = 2
    n = 1 + width * (horizon - 1) + 1
    term = n - 1
    P = np.zeros((n, n_actions, n))
    R = np.zeros((n, n_actions, n))

    def layer(k):
        return [0] if k == 0 else list(range(1 + width * (k - 1), 1 + width * k))

    for k in range(horizon):
        nxt = layer(k + 1) if k + 1 < horizon else [term]
        for s in layer(k):
            for a in range(n_actions):
                probs = rng.dirichlet(np.ones(len(nxt)))
                P[s, a, nxt] = probs
                R[s, a, nxt] = rng.integers(-3, 4, size=len(nxt))
    P[term, :, term] = 1.0
    return TabularMDP(P, R, 0.99, {term})


def shift_rewards(mdp, c):
    """Copy of ``mdp`` with ``c`` added to every non-terminal transition reward."""
    R = mdp.reward.copy()
    live = [s for s in range(mdp.n_states) if s not in mdp.terminal]
    R[live] += c * (mdp.transition[live] > 0)
    return TabularMDP(mdp.transition.copy(), R, mdp.gamma, mdp.terminal)


class MaxBiasEnv(Env):
    """Start state A with RIGHT (ends, reward 0) and LEFT (to B, reward 0);
    B has ``n_b_actions`` actions that all end with reward ~ Normal(mu, sigma).

    States: 0 = A, 1 = B, 2 = terminal. A only has two valid actions.
    """

    LEFT, RIGHT = 0, 1

    def __init__(self, rng, n_b_actions=8, mu=-0.1, sigma=1.0):
        super().__init__()
        self.rng = rng
        self.n_states = 3
        self.n_actions = n_b_actions
        self.mu, self.sigma = mu, sigma
        self.state = None
        self._a_actions = np.array([self.LEFT, self.RIGHT])
        self._b_actions = np.arange(n_b_actions)

    def valid_actions(self, s):
        return self._a_actions if s == 0 else self._b_actions

    def _reset(self):
        self.state = 0
        return 0

    def _step(self, action):
        if self.state == 0:
            if action == self.LEFT:
                self.state = 1
                return 1, 0.0, False, {}
            self.state = 2
            return 2, 0.0, True, {}
        self.state = 2
        return 2, float(self.rng.normal(self.mu, self.sigma)), True, {}
