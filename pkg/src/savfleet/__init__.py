"""Reinforcement learning for shared autonomous vehicle fleet relocation.

Modules:

- :mod:`savfleet.mdp` -- finite MDPs and the reset/step/close environment contract
- :mod:`savfleet.tabular` -- dynamic programming, Monte Carlo, Q-learning variants and MCTS
- :mod:`savfleet.nn` -- ReLU network with hand-written backpropagation
- :mod:`savfleet.agents` -- DQN, double DQN and REINFORCE
- :mod:`savfleet.sim` -- hourly multi-zone fleet simulator
- :mod:`savfleet.policies` -- imbalance and random baselines, action encodings
- :mod:`savfleet.experiment` -- weekly-iteration protocol and reports
"""

__version__ = "0.1.0"
