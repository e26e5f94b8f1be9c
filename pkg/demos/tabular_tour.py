"""Tabular solvers on the small fixtures: planning, learning and the max-bias effect.

    python3 demos/tabular_tour.py
"""

import argparse

import numpy as np

from savfleet import acceptance
from savfleet.fixtures import gridworld_mdp
from savfleet.mdp import TabularEnv
from savfleet.tabular import (
    TDConfig,
    greedy_policy,
    mcts_plan,
    policy_iteration,
    q_learning,
    value_iteration,
)

ARROWS = np.array(list("^>v<"))


def show_policy(policy, size):
    grid = ARROWS[policy].reshape(size, size)
    grid[-1, -1] = "G"
    return "\n".join("  " + " ".join(row) for row in grid)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--bias-runs", type=int, default=300)
    args = parser.parse_args()

    mdp = gridworld_mdp(4)
    v, pol_vi = value_iteration(mdp)
    _, pol_pi, passes = policy_iteration(mdp, return_passes=True)
    print("4x4 gridworld, value iteration")
    print(np.round(v.reshape(4, 4), 3))
    print(show_policy(pol_vi, 4))
    print(f"policy iteration settled after {passes} improvement passes; "
          f"policies agree on {np.mean(pol_vi == pol_pi):.0%} of states")

    rng = np.random.default_rng(args.seed)
    q = q_learning(TabularEnv(mdp, rng=rng), TDConfig(eta=0.5, gamma=0.9, episodes=3000), rng)
    print(f"\nQ-learning, 3000 episodes: max |Q - Q*| = {np.abs(q - acceptance.optimal_q(mdp)).max():.3f}")
    print(show_policy(greedy_policy(q), 4))

    root = mcts_plan(mdp, 0, 2000, 1.4, mdp.gamma, np.random.default_rng(args.seed))
    q_star = acceptance.optimal_q(mdp)[0]
    print(f"\nMCTS from the start corner picks {ARROWS[root]} (Q* {q_star[root]:.3f}); "
          f"value iteration picks {ARROWS[pol_vi[0]]} (Q* {q_star[pol_vi[0]]:.3f})")

    n = args.bias_runs
    single = acceptance.left_rate("single", runs=n, seed=args.seed)
    cross = acceptance.left_rate("double", runs=n, seed=args.seed, cross=True)
    print(f"\nmaximization bias over {n} runs x 300 episodes: LEFT chosen "
          f"{single:.1%} by Q-learning, {cross:.1%} by double Q-learning")


if __name__ == "__main__":
    main()
