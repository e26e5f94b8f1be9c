"""Imbalance baseline, random baseline and the two action-space encodings."""

from __future__ import annotations

import numpy as np

N_ZONE = "n_zone"
FOUR_NEAREST = "four_nearest"
MODES = (N_ZONE, FOUR_NEAREST)

# N, E, S, W as (row, col) offsets
_DIRECTIONS = ((-1, 0), (0, 1), (1, 0), (0, -1))


def action_space_size(mode: str, n_zones: int) -> int:
    if mode == N_ZONE:
        return n_zones
    if mode == FOUR_NEAREST:
        return 4
    raise ValueError(f"unknown action-space mode {mode!r}")


def build_neighbor_table(grid) -> np.ndarray:
    """(n_zones, 4) array of N, E, S, W neighbours; missing directions map to the zone itself."""
    index = {(int(r), int(c)): z for z, (r, c) in enumerate(grid.coords)}
    table = np.empty((grid.n_zones, 4), dtype=int)
    for z, (r, c) in enumerate(grid.coords):
        for k, (dr, dc) in enumerate(_DIRECTIONS):
            table[z, k] = index.get((int(r) + dr, int(c) + dc), z)
    return table


def expand_action(mode: str, zone: int, local_action: int, table: np.ndarray) -> int:
    """Map a zone's local action index to the target zone it names."""
    size = action_space_size(mode, table.shape[0])
    if not 0 <= local_action < size:
        raise ValueError(f"local action {local_action} out of range for {mode} (size {size})")
    if mode == N_ZONE:
        return int(local_action)
    return int(table[zone, local_action])


def local_to_targets(mode: str, local, table: np.ndarray) -> np.ndarray:
    """Vectorised :func:`expand_action` over all zones.

    ``local`` is either one action index per zone, or an (n_zones, k) matrix
    of local action probabilities which is mapped to (n_zones, n_zones)
    target probabilities.
    """
    n = table.shape[0]
    k = action_space_size(mode, n)
    local = np.asarray(local)
    if local.ndim == 1:
        if local.shape != (n,) or np.any(local < 0) or np.any(local >= k):
            raise ValueError(f"expected {n} local actions in [0, {k})")
        local = local.astype(int)
        return local.copy() if mode == N_ZONE else table[np.arange(n), local]
    if local.shape != (n, k):
        raise ValueError(f"expected a ({n}, {k}) matrix of local action probabilities, got {local.shape}")
    if mode == N_ZONE:
        return local.astype(float)
    out = np.zeros((n, n))
    for j in range(k):
        np.add.at(out, (np.arange(n), table[:, j]), local[:, j])
    return out


def block_balance(sav_total, sav_block, demand_block, demand_total) -> float:
    """Surplus of available vehicles in a block relative to its share of demand."""
    if sav_total == 0 or demand_total == 0:
        raise ZeroDivisionError("block balance needs non-zero vehicle and demand totals")
    return sav_total * (sav_block / sav_total - demand_block / demand_total)


def imbalance_scores(sav_share, demand_share) -> np.ndarray:
    """Relative surplus (s - d) / d per zone.

    A zone without demand scores +inf when it holds vehicles and 0 otherwise.
    """
    s = np.asarray(sav_share, dtype=float)
    d = np.asarray(demand_share, dtype=float)
    if s.shape != d.shape:
        raise ValueError(f"share vectors differ in length: {s.shape} vs {d.shape}")
    out = np.zeros_like(s)
    pos = d > 0
    out[pos] = (s[pos] - d[pos]) / d[pos]
    out[~pos & (s > 0)] = np.inf
    return out


def eligibility(scores, threshold: float = 0.10) -> np.ndarray:
    return np.asarray(scores) >= threshold


def imbalance_directive(observation, rng, threshold: float = 0.10) -> np.ndarray:
    """Target zone per zone: surplus zones send their idle vehicles to one
    uniformly drawn deficit zone, every other zone stays put."""
    obs = np.asarray(observation, dtype=float)
    n = obs.size // 3
    demand, sav = obs[:n], obs[n : 2 * n]
    scores = imbalance_scores(sav, demand)
    targets = np.arange(n)
    deficit = np.flatnonzero(scores < 0)
    if len(deficit) == 0:
        return targets
    for z in np.flatnonzero(eligibility(scores, threshold)):
        targets[z] = deficit[int(rng.integers(len(deficit)))]
    return targets


class ImbalanceAgent:
    """Non-learning baseline acting through :func:`imbalance_directive`."""

    kind = "imbalance"
    learns = False

    def __init__(self, threshold: float = 0.10):
        self.threshold = threshold

    def act(self, observation, rng, explore=True):
        from savfleet.sim import Directive

        return Directive(imbalance_directive(observation, rng, self.threshold))

    def observe(self, transition, rng):
        return None

    def end_episode(self, trajectory, rng):
        return None


class RandomAgent:
    """Uniform random local action for every zone, every hour."""

    kind = "random"
    learns = False

    def __init__(self, n_zones: int, mode: str):
        self.n_zones = n_zones
        self.k = action_space_size(mode, n_zones)

    def act(self, observation, rng, explore=True):
        return rng.integers(self.k, size=self.n_zones)

    def observe(self, transition, rng):
        return None

    def end_episode(self, trajectory, rng):
        return None
