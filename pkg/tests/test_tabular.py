import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from savfleet import acceptance
from savfleet.fixtures import (
    MaxBiasEnv,
    bandit_mdp,
    chain_mdp,
    fixed_horizon_mdp,
    gridworld_mdp,
    loop_mdp,
    loop_value,
    shift_rewards,
)
from savfleet.mdp import Env, TabularEnv, TabularMDP
from savfleet.tabular import (
    NonEpisodicError,
    TDConfig,
    double_q_learning,
    greedy_policy,
    mc_every_visit,
    mc_first_visit,
    mcts_plan,
    policy_evaluation,
    policy_iteration,
    q_learning,
    uct_select,
    value_iteration,
    write_diagnostics,
)


def optimal_q(mdp):
    return acceptance.optimal_q(mdp)


def non_tied_states(mdp, gap=1e-6):
    q = optimal_q(mdp)
    out = []
    for s in range(mdp.n_states):
        if s in mdp.terminal:
            continue
        top = np.sort(q[s])[::-1]
        if top[0] - top[1] > gap:
            out.append(s)
    return out


# --- dynamic programming ------------------------------------------------------


def test_value_iteration_chain_closed_form():
    v, policy = value_iteration(chain_mdp())
    assert v == pytest.approx([1.9, 1.0, 0.0], abs=1e-9)
    assert policy[:2].tolist() == [0, 0]


def test_value_iteration_absorbing_state():
    P = np.ones((1, 2, 1))
    v, _ = value_iteration(TabularMDP(P, np.zeros_like(P), 0.7, {0}))
    assert v.tolist() == [0.0]


def test_value_iteration_gridworld_matches_enumeration():
    mdp = gridworld_mdp()
    v, _ = value_iteration(mdp)
    assert np.max(np.abs(v - acceptance.horizon_values(mdp))) < 1e-3


def test_value_iteration_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        value_iteration(chain_mdp(), epsilon=0.0)
    with pytest.raises(ValueError):
        policy_iteration(chain_mdp(), epsilon=-1.0)


def test_bellman_residual_below_epsilon():
    for mdp in (chain_mdp(), gridworld_mdp(), loop_mdp(0.8)):
        eps = 1e-3
        v, _ = value_iteration(mdp, eps)
        backup = (mdp.expected_reward() + mdp.gamma * mdp.transition @ v).max(axis=1)
        assert np.max(np.abs(backup - v)) < eps


def test_policy_iteration_agrees_with_value_iteration_on_chain():
    v_vi, p_vi = value_iteration(chain_mdp(), 1e-9)
    v_pi, p_pi = policy_iteration(chain_mdp(), 1e-9)
    assert np.max(np.abs(v_vi - v_pi)) < 1e-6
    assert p_vi.tolist() == p_pi.tolist()


def test_policy_iteration_single_action_one_pass():
    _, _, passes = policy_iteration(loop_mdp(0.5), return_passes=True)
    assert passes == 1


def test_policy_iteration_gridworld_policy_matches_at_non_tied_states():
    mdp = gridworld_mdp()
    _, p_vi = value_iteration(mdp)
    v_pi, p_pi = policy_iteration(mdp)
    q = optimal_q(mdp)
    for s in non_tied_states(mdp):
        assert p_pi[s] == p_vi[s] == int(np.argmax(q[s]))
    # the returned policy is stable under greedy improvement
    look = mdp.expected_reward() + mdp.gamma * mdp.transition @ v_pi
    assert np.all(look[np.arange(mdp.n_states), p_pi] >= look.max(axis=1) - 2e-3)


def test_policy_evaluation_satisfies_bellman_equation():
    mdp = gridworld_mdp()
    _, policy = value_iteration(mdp)
    v = policy_evaluation(mdp, policy, 1e-8)
    idx = np.arange(mdp.n_states)
    rhs = mdp.expected_reward()[idx, policy] + mdp.gamma * mdp.transition[idx, policy] @ v
    assert np.max(np.abs(rhs - v)) < 1e-7


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 5), st.integers(2, 3), st.floats(0.1, 0.95))
def test_vi_and_pi_agree_on_random_mdps(seed, n_states, n_actions, gamma):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    R = rng.normal(size=(n_states, n_actions, n_states))
    mdp = TabularMDP(P, R, gamma)
    eps = 1e-6
    v_vi, p_vi = value_iteration(mdp, eps)
    v_pi, p_pi = policy_iteration(mdp, eps)
    # both are within eps * gamma / (1 - gamma) of V*, give or take the stopping rule
    tol = 4 * eps / (1 - gamma)
    assert np.max(np.abs(v_vi - v_pi)) < tol
    q = mdp.expected_reward() + gamma * P @ v_vi
    for s in range(n_states):
        top = np.sort(q[s])[::-1]
        if top[0] - top[1] > 2 * tol:
            assert p_vi[s] == p_pi[s]


def test_greedy_policy_examples():
    assert greedy_policy([[0.1, 0.9]]).tolist() == [1]
    assert greedy_policy([[0.5, 0.5]]).tolist() == [0]


@given(st.lists(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3), min_size=1, max_size=6),
       st.floats(1e-3, 1e3))
def test_greedy_policy_invariant_to_positive_scaling(rows, c):
    q = np.array(rows)
    scaled = q * c
    # only compare rows where scaling cannot create or break a floating-point tie
    for s in range(len(q)):
        if len(set(q[s])) == 3 and len(set(scaled[s])) == 3:
            assert greedy_policy(q)[s] == greedy_policy(scaled)[s]


# --- Monte Carlo --------------------------------------------------------------


def test_first_visit_single_deterministic_episode():
    env = TabularEnv(chain_mdp(), rng=np.random.default_rng(0))
    est = mc_first_visit(env, [0, 0, 0], 1, 0.9, np.random.default_rng(0))
    assert est.v.tolist() == pytest.approx([1.9, 1.0, 0.0])
    assert est.counts.tolist() == [1, 1, 0]
    assert not est.visited[2]


def test_first_and_every_visit_agree_without_revisits():
    env = TabularEnv(gridworld_mdp(), rng=np.random.default_rng(0))
    _, policy = value_iteration(gridworld_mdp())
    a = mc_first_visit(env, policy, 5, 0.9, np.random.default_rng(1))
    b = mc_every_visit(env, policy, 5, 0.9, np.random.default_rng(1))
    assert np.array_equal(a.v, b.v) and np.array_equal(a.counts, b.counts)


class ScriptedEnv(Env):
    """Replays a fixed state/reward script; used to build revisit cases."""

    def __init__(self, states, rewards, n_states):
        super().__init__()
        self.states, self.rewards, self.n_states = states, rewards, n_states
        self.i = 0

    def _reset(self):
        self.i = 0
        return self.states[0]

    def _step(self, action):
        r = self.rewards[self.i]
        self.i += 1
        done = self.i == len(self.rewards)
        return self.states[self.i], r, done, {}


def test_revisited_state_first_vs_every_visit():
    # s0 -> s0 -> s1(terminal), rewards 1, 1 with gamma 1: returns from s0 are 2 then 1
    env = ScriptedEnv([0, 0, 1], [1.0, 1.0], 2)
    first = mc_first_visit(env, lambda s, rng: 0, 1, 1.0, np.random.default_rng(0))
    every = mc_every_visit(env, lambda s, rng: 0, 1, 1.0, np.random.default_rng(0))
    assert first.v[0] == 2.0 and first.counts[0] == 1
    assert every.v[0] == 1.5 and every.counts[0] == 2


def test_first_visit_bandit_within_3_sigma():
    mdp = bandit_mdp((0.3, 0.8))
    env = TabularEnv(mdp, rng=np.random.default_rng(5))
    n = 100_000
    est = mc_first_visit(env, [1, 0, 0], n, 0.9, np.random.default_rng(6))
    assert abs(est.v[0] - 0.8) < 3 * np.sqrt(0.8 * 0.2 / n)


def test_loop_fixture_both_estimators_within_3_sigma():
    p, gamma = 0.5, 0.9
    mdp = loop_mdp(p, gamma)
    n = 100_000
    env = TabularEnv(mdp, rng=np.random.default_rng(7))
    first = mc_first_visit(env, [0, 0], n, gamma, np.random.default_rng(8))
    env = TabularEnv(mdp, rng=np.random.default_rng(7))
    every = mc_every_visit(env, [0, 0], n, gamma, np.random.default_rng(8))
    target = loop_value(p, gamma)
    # per-episode return G = sum_{k<K} gamma^k with K ~ Geometric; its variance from a large sample
    rng = np.random.default_rng(9)
    k = rng.geometric(1 - p, size=200_000) - 1
    g = (1 - gamma**k) / (1 - gamma)
    sigma = g.std() / np.sqrt(n)
    assert abs(first.v[0] - target) < 3 * sigma
    # every-visit samples are correlated within an episode, so allow the same bound on its mean of visits
    assert abs(every.v[0] - target) < 3 * g.std() / np.sqrt(every.counts[0] / 2)
    assert every.counts[0] > first.counts[0]


def test_first_visit_is_unbiased_over_independent_runs():
    mdp = bandit_mdp((0.4, 0.6))
    means = []
    for k in range(50):
        env = TabularEnv(mdp, rng=np.random.default_rng(100 + k))
        means.append(mc_first_visit(env, [0, 0, 0], 200, 0.9, np.random.default_rng(k)).v[0])
    sigma = np.sqrt(0.4 * 0.6 / 200) / np.sqrt(50)
    assert abs(np.mean(means) - 0.4) < 3 * sigma


def test_mc_detects_non_episodic_policy():
    env = TabularEnv(chain_mdp(), rng=np.random.default_rng(0))
    with pytest.raises(NonEpisodicError):
        mc_first_visit(env, [1, 1, 1], 1, 0.9, np.random.default_rng(0))


def test_mc_accepts_probability_matrix_policy():
    env = TabularEnv(chain_mdp(), rng=np.random.default_rng(0))
    policy = np.array([[1.0, 0.0], [1.0, 0.0], [0.5, 0.5]])
    est = mc_every_visit(env, policy, 3, 0.9, np.random.default_rng(0))
    assert est.v[:2] == pytest.approx([1.9, 1.0])


# --- TD control -----------------------------------------------------------------


def test_q_learning_chain_converges():
    mdp = chain_mdp()
    rng = np.random.default_rng(0)
    q = q_learning(TabularEnv(mdp, rng=rng), TDConfig(eta=0.1, gamma=0.9, episodes=5000), rng)
    assert np.max(np.abs(q - optimal_q(mdp))) < 0.05


def test_q_learning_gamma_zero_learns_immediate_reward():
    mdp = bandit_mdp((1.0, 0.0))
    rng = np.random.default_rng(1)
    q = q_learning(TabularEnv(mdp, rng=rng), TDConfig(eta=0.5, gamma=0.0, episodes=200), rng)
    assert q[0] == pytest.approx(mdp.expected_reward()[0], abs=1e-6)


def test_q_learning_gridworld_greedy_policy_is_optimal():
    mdp = gridworld_mdp()
    rng = np.random.default_rng(2)
    q = q_learning(TabularEnv(mdp, rng=rng), TDConfig(eta=0.5, gamma=0.9, episodes=3000), rng)
    q_star = optimal_q(mdp)
    for s in non_tied_states(mdp):
        assert greedy_policy(q)[s] == int(np.argmax(q_star[s]))


def test_q_learning_truncation_is_logged():
    mdp = chain_mdp()
    rng = np.random.default_rng(0)
    log = []
    cfg = TDConfig(episodes=20, epsilon_start=1.0, epsilon_floor=1.0, step_cap=2)
    q_learning(TabularEnv(mdp, rng=rng), cfg, rng, log)
    assert len(log) == 20
    assert any(row["truncated"] for row in log)


def test_epsilon_schedule_linear_to_floor():
    cfg = TDConfig(episodes=100, epsilon_start=1.0, epsilon_floor=0.05)
    assert cfg.epsilon(0) == 1.0
    assert cfg.epsilon(25) == pytest.approx(0.525)
    assert cfg.epsilon(50) == 0.05 and cfg.epsilon(99) == 0.05


def test_td_config_rejects_bad_rates():
    with pytest.raises(ValueError):
        TDConfig(eta=0.0)
    with pytest.raises(ValueError):
        TDConfig(gamma=1.5)


def test_double_q_chain_policy_optimal():
    mdp = chain_mdp()
    for cross in (False, True):
        rng = np.random.default_rng(3)
        q1, q2 = double_q_learning(TabularEnv(mdp, rng=rng), TDConfig(episodes=3000, cross=cross), rng)
        assert greedy_policy(q1 + q2)[:2].tolist() == [0, 0]


def test_double_q_zero_episodes_is_tie():
    rng = np.random.default_rng(0)
    q1, q2 = double_q_learning(TabularEnv(chain_mdp(), rng=rng), TDConfig(episodes=0), rng)
    assert not q1.any() and not q2.any()
    assert greedy_policy(q1 + q2).tolist() == [0, 0, 0]


def test_maximization_bias_small_batch():
    # a smaller version of the acceptance batch; the cross form must already separate clearly
    single = acceptance.left_rate("single", runs=200, episodes=300)
    cross = acceptance.left_rate("double", runs=200, episodes=300, cross=True)
    assert acceptance.z_score(single, cross, 200 * 300) > 3.0


def test_max_bias_env_valid_actions():
    env = MaxBiasEnv(np.random.default_rng(0))
    assert env.valid_actions(0).tolist() == [0, 1]
    assert len(env.valid_actions(1)) == 8
    env.reset()
    assert env.step(MaxBiasEnv.RIGHT)[2]


def test_write_diagnostics(tmp_path):
    rng = np.random.default_rng(0)
    log = []
    q_learning(TabularEnv(chain_mdp(), rng=rng), TDConfig(episodes=5), rng, log)
    write_diagnostics(log, tmp_path / "d.csv")
    rows = list(csv.DictReader(open(tmp_path / "d.csv")))
    assert list(rows[0]) == ["episode", "return", "epsilon", "truncated"]
    assert len(rows) == 5


# --- MCTS -------------------------------------------------------------------------


def test_mcts_single_action_root():
    assert mcts_plan(loop_mdp(0.5), 0, 10, 1.4, 0.9, np.random.default_rng(0)) == 0


def test_mcts_bandit_prefers_paying_arm():
    assert mcts_plan(bandit_mdp((1.0, 0.0)), 0, 200, 1.4, 1.0, np.random.default_rng(0)) == 0
    assert mcts_plan(bandit_mdp((0.0, 1.0)), 0, 200, 1.4, 1.0, np.random.default_rng(0)) == 1


def test_mcts_chain_matches_value_iteration():
    mdp = chain_mdp()
    _, policy = value_iteration(mdp)
    assert mcts_plan(mdp, 0, 10_000, 1.4, mdp.gamma, np.random.default_rng(1)) == policy[0]


def test_mcts_tree_visit_counts_consistent():
    tree = {}
    mcts_plan(gridworld_mdp(3), 0, 300, 1.4, 0.9, np.random.default_rng(2), tree=tree)
    for node in tree.values():
        assert node.n == node.n_a.sum()
        assert np.all(np.isfinite(node.q()))


def test_uct_visits_unvisited_actions_first():
    from savfleet.tabular import _Node

    node = _Node(3)
    node.n, node.n_a[:] = 5, [5, 0, 0]
    node.value_sum[0] = 100.0
    assert uct_select(node, 1.4) == 1


def test_mcts_rejects_zero_budget():
    with pytest.raises(ValueError):
        mcts_plan(chain_mdp(), 0, 0, 1.4, 0.9, np.random.default_rng(0))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 5))
def test_mcts_root_choice_invariant_to_reward_shift(seed, shift):
    # every path collects the same number of rewards, so a constant shift moves all
    # sibling values equally and leaves each UCT comparison unchanged
    mdp = fixed_horizon_mdp(horizon=3, n_actions=2, seed=seed)
    shifted = shift_rewards(mdp, shift)
    a = mcts_plan(mdp, 0, 300, 1.4, 1.0, np.random.default_rng(seed))
    b = mcts_plan(shifted, 0, 300, 1.4, 1.0, np.random.default_rng(seed))
    assert a == b
