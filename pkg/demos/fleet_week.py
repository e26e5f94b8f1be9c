"""One simulated week under each baseline, then a short DQN training run.

Prints where the cost comes from (waiting, empty travel, parking) so the
reward can be read against fleet behaviour.

    python3 demos/fleet_week.py --weeks 10
"""

import argparse

import numpy as np

from savfleet import experiment as ex
from savfleet.agents import run_episode
from savfleet.sim import SAVEnv, SimConfig

COLUMNS = ("waiting_cost", "empty_cost", "parking_cost", "queue", "parked", "relocating")


def describe(label, traj):
    means = {k: np.mean([info[k] for info in traj.infos]) for k in COLUMNS}
    cells = "  ".join(f"{means[k]:7.2f}" for k in COLUMNS)
    print(f"{label:<22}{np.mean(traj.rewards()):8.2f}  {cells}")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--weeks", type=int, default=10, help="DQN training weeks")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    print(f"{'policy':<22}{'reward':>8}  " + "  ".join(f"{c[:7]:>7}" for c in COLUMNS))
    for kind in ("random", "imbalance"):
        env = SAVEnv(SimConfig(seed=args.seed))
        agent = ex.make_agent(kind, env, ex.preset_agent_config(kind), np.random.default_rng(args.seed))
        describe(kind, run_episode(agent, env, False, np.random.default_rng(args.seed + 1))[0])

    env = SAVEnv(SimConfig(seed=args.seed))
    rng = np.random.default_rng(args.seed + 1)
    agent = ex.make_agent("dqn", env, ex.preset_agent_config("dqn"), rng)
    for week in range(args.weeks):
        traj, _ = run_episode(agent, env, True, rng)
        if week in (0, args.weeks - 1):
            describe(f"dqn week {week + 1} (eps {agent.epsilon:.2f})", traj)
    describe("dqn greedy", run_episode(agent, env, False, rng)[0])


if __name__ == "__main__":
    main()
