"""Finite MDPs, transition records and the reset/step/close environment contract."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class TabularMDP:
    """Explicit finite MDP.

    ``transition[s, a, s2]`` is P(s2 | s, a) and ``reward[s, a, s2]`` the
    reward collected on that transition.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    terminal: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.reward = np.asarray(self.reward, dtype=float)
        self.terminal = frozenset(int(s) for s in self.terminal)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def expected_reward(self) -> np.ndarray:
        """R(s, a) = sum_s2 P(s2|s,a) reward[s,a,s2]."""
        return np.einsum("ijk,ijk->ij", self.transition, self.reward)


@dataclass
class Transition:
    state: object
    action: object
    reward: float
    next_state: object
    done: bool


@dataclass
class Trajectory:
    steps: list = field(default_factory=list)
    # per-step info maps from the environment, when recorded
    infos: list = field(default_factory=list)

    @property
    def total_steps(self) -> int:
        return len(self.steps)

    def append(self, t: Transition):
        self.steps.append(t)

    def rewards(self) -> np.ndarray:
        return np.array([t.reward for t in self.steps], dtype=float)

    def is_chained(self) -> bool:
        for prev, nxt in zip(self.steps, self.steps[1:]):
            if prev.done:
                continue
            if not np.array_equal(np.asarray(prev.next_state), np.asarray(nxt.state)):
                return False
        return True


class EnvStateError(RuntimeError):
    """Raised when an environment is driven out of its reset/step/close order."""


class Env:
    """Base for reset/step/close environments.

    Subclasses implement ``_reset`` and ``_step``; the ordering rules
    (no step before reset, no step after done, nothing after close) live here.
    """

    def __init__(self):
        self._active = False
        self._closed = False

    def reset(self):
        if self._closed:
            raise EnvStateError("environment is closed")
        obs = self._reset()
        self._active = True
        return obs

    def step(self, action):
        if self._closed:
            raise EnvStateError("environment is closed")
        if not self._active:
            raise EnvStateError("step() called before reset() or after episode end")
        obs, reward, done, info = self._step(action)
        if done:
            self._active = False
        return obs, reward, done, info

    def close(self):
        if self._closed:
            return
        self._closed = True
        self._active = False
        self._release()

    def _release(self):
        pass

    def _reset(self):
        raise NotImplementedError

    def _step(self, action):
        raise NotImplementedError


class TabularEnv(Env):
    """Episodic environment sampling a :class:`TabularMDP`."""

    def __init__(self, mdp: TabularMDP, start_state: int = 0, rng=None):
        super().__init__()
        self.mdp = mdp
        self.start_state = start_state
        self.rng = rng if rng is not None else np.random.default_rng()
        self.n_states = mdp.n_states
        self.n_actions = mdp.n_actions
        self.state = None

    def valid_actions(self, s):
        return np.arange(self.n_actions)

    def _reset(self):
        self.state = self.start_state
        return self.state

    def _step(self, action):
        s2, r = sample_step(self.mdp, self.state, action, self.rng)
        self.state = s2
        return s2, r, s2 in self.mdp.terminal, {}

    def _release(self):
        self.mdp = None


def validate_mdp(mdp: TabularMDP, atol: float = 1e-9) -> list[str]:
    """List every violated invariant; an empty list means the MDP is well formed."""
    problems = []
    P, R = mdp.transition, mdp.reward
    if P.ndim != 3 or P.shape[0] != P.shape[2]:
        return [f"transition tensor has shape {P.shape}, expected (S, A, S)"]
    if R.shape != P.shape:
        problems.append(f"reward shape {R.shape} does not match transition shape {P.shape}")
    if not 0.0 <= mdp.gamma < 1.0:
        problems.append(f"gamma={mdp.gamma} outside [0, 1)")
    S, A, _ = P.shape
    for s in range(S):
        for a in range(A):
            row = P[s, a]
            if np.any(row < 0.0) or np.any(row > 1.0):
                problems.append(f"(s={s}, a={a}): probability outside [0, 1]")
            total = row.sum()
            if abs(total - 1.0) > atol:
                problems.append(f"(s={s}, a={a}): row sums to {total:.12g}, not 1")
    for s in sorted(mdp.terminal):
        if not 0 <= s < S:
            problems.append(f"terminal state {s} out of range")
            continue
        for a in range(A):
            if abs(P[s, a, s] - 1.0) > atol:
                problems.append(f"(s={s}, a={a}): terminal state does not self-loop")
            if R.shape == P.shape and R[s, a, s] != 0.0:
                problems.append(f"(s={s}, a={a}): terminal self-loop reward is not 0")
    if not np.all(np.isfinite(R)):
        problems.append("reward tensor has non-finite entries")
    return problems


def sample_step(mdp: TabularMDP, s: int, a: int, rng) -> tuple[int, float]:
    if not 0 <= s < mdp.n_states:
        raise IndexError(f"state {s} out of range [0, {mdp.n_states})")
    if not 0 <= a < mdp.n_actions:
        raise IndexError(f"action {a} out of range [0, {mdp.n_actions})")
    row = mdp.transition[s, a]
    # inverse-CDF draw, one uniform per step
    s2 = int(np.searchsorted(np.cumsum(row), rng.random() * row.sum(), side="right"))
    s2 = min(s2, mdp.n_states - 1)
    return s2, float(mdp.reward[s, a, s2])


def discounted_return(rewards, gamma: float) -> np.ndarray:
    """Suffix sums G[t] = sum_{j>=t} gamma^(j-t) r[j], one backward pass."""
    rewards = np.asarray(rewards, dtype=float)
    out = np.empty_like(rewards)
    g = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        g = rewards[t] + gamma * g
        out[t] = g
    return out


# --- plain-text fixture format -------------------------------------------
#
#   # comment lines start with '#'
#   n_states n_actions gamma
#   terminal <s> <s> ...            (optional line; may list no states)
#   S*A lines of S probabilities    (row for (s, a) in s-major order)
#   S*A lines of S rewards          (same ordering)


def load_mdp(path) -> TabularMDP:
    lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    head = lines.pop(0).split()
    S, A, gamma = int(head[0]), int(head[1]), float(head[2])
    terminal = ()
    if lines and lines[0].startswith("terminal"):
        terminal = [int(x) for x in lines.pop(0).split()[1:]]
    if len(lines) != 2 * S * A:
        raise ValueError(f"expected {2 * S * A} matrix rows, found {len(lines)}")
    rows = np.array([[float(x) for x in ln.split()] for ln in lines])
    if rows.shape[1] != S:
        raise ValueError(f"matrix rows must have {S} entries")
    P = rows[: S * A].reshape(S, A, S)
    R = rows[S * A :].reshape(S, A, S)
    return TabularMDP(P, R, gamma, frozenset(terminal))


def save_mdp(mdp: TabularMDP, path):
    S, A = mdp.n_states, mdp.n_actions
    out = [f"{S} {A} {mdp.gamma!r}", "terminal " + " ".join(str(s) for s in sorted(mdp.terminal))]
    for tensor in (mdp.transition, mdp.reward):
        for s in range(S):
            for a in range(A):
                out.append(" ".join(repr(float(x)) for x in tensor[s, a]))
    Path(path).write_text("\n".join(out) + "\n")
