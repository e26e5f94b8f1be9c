"""Hourly multi-zone fleet simulator with a cost-based global reward.

One step is one hour. Within a step the simulator

1. matches waiting clients to idle or parked vehicles, nearest first;
2. moves the remaining idle vehicles according to the relocation directive
   (a vehicle sent to its own zone parks there if a space is free);
3. releases vehicles whose trips end within the hour;
4. ages unserved clients, dropping those that reach 24 hours;
5. advances the clock, computes the reward and spawns next hour's requests.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from savfleet.mdp import Env
from savfleet.policies import FOUR_NEAREST, MODES, action_space_size, build_neighbor_table, local_to_targets

IDLE, RELOCATING, SERVING, PARKED = "idle", "relocating", "serving", "parked"
MAX_WAIT_HOURS = 24


@dataclass
class ZoneGrid:
    rows: int
    cols: int
    capacity: np.ndarray
    fee: np.ndarray
    # requests per hour originating in each zone, shape (n_zones, 24)
    profile: np.ndarray
    # relative weight of each zone as a destination, shape (n_zones, 24)
    attraction: np.ndarray
    hop_hours: float = 0.2
    hop_miles: float = 2.0

    def __post_init__(self):
        self.capacity = np.asarray(self.capacity, dtype=int)
        self.fee = np.asarray(self.fee, dtype=float)
        self.profile = np.asarray(self.profile, dtype=float)
        self.attraction = np.asarray(self.attraction, dtype=float)
        self.coords = np.array([(r, c) for r in range(self.rows) for c in range(self.cols)])
        diff = np.abs(self.coords[:, None, :] - self.coords[None, :, :])
        self.hops = diff.sum(axis=-1)
        self.travel_hours = self.hops * self.hop_hours
        self.distance = self.hops * self.hop_miles

    @property
    def n_zones(self) -> int:
        return self.rows * self.cols

    def validate(self) -> list[str]:
        n = self.n_zones
        problems = []
        for name, arr, shape in (
            ("capacity", self.capacity, (n,)),
            ("fee", self.fee, (n,)),
            ("profile", self.profile, (n, 24)),
            ("attraction", self.attraction, (n, 24)),
        ):
            if arr.shape != shape:
                problems.append(f"{name} has shape {arr.shape}, expected {shape}")
        if np.any(self.capacity < 0):
            problems.append("negative parking capacity")
        if np.any(self.fee < 0):
            problems.append("negative parking fee")
        if np.any(self.profile < 0) or np.any(self.attraction < 0):
            problems.append("negative demand rate or attraction weight")
        if self.hop_hours <= 0 or self.hop_miles < 0:
            problems.append("hop_hours must be positive and hop_miles non-negative")
        return problems


def _bump(hours, centre, width):
    return np.exp(-0.5 * ((hours - centre) / width) ** 2)


def default_grid(rows: int = 3, cols: int = 7) -> ZoneGrid:
    """Synthetic city: a high-fee downtown core in the middle of the grid,
    residential zones around it, and commute peaks at 8h and 18h.

    Morning requests start in residential zones and head downtown; evening
    requests run the other way, so vehicles pile up on the wrong side of town
    after each peak unless they are relocated. Rates are set so that at
    demand scale 1 a 60-vehicle fleet is about 70% busy at the peaks.
    """
    n = rows * cols
    coords = np.array([(r, c) for r in range(rows) for c in range(cols)])
    centre = np.array([(rows - 1) / 2.0, (cols - 1) / 2.0])
    ring = np.abs(coords - centre).sum(axis=1)
    core = ring <= 1.0
    inner = (ring > 1.0) & (ring <= 2.5)

    fee = np.where(core, 6.0, np.where(inner, 3.0, 1.0))
    capacity = np.where(core, 3, np.where(inner, 5, 8))

    hours = np.arange(24)
    am, pm = _bump(hours, 8.0, 1.5), _bump(hours, 18.0, 1.5)
    day = _bump(hours, 13.0, 4.0)
    profile = np.zeros((n, 24))
    attraction = np.zeros((n, 24))
    for z in range(n):
        if core[z]:
            profile[z] = 0.36 + 1.2 * day + 6.0 * pm
            attraction[z] = 0.5 + 1.0 * day + 6.0 * am
        else:
            profile[z] = 0.12 + 0.36 * day + 1.92 * am
            attraction[z] = 0.3 + 0.5 * day + 1.6 * pm
    return ZoneGrid(rows, cols, capacity, fee, profile, attraction)


@dataclass
class SimConfig:
    fleet_size: int = 60
    gas_price: float = 0.20
    demand_scale: float = 1.0
    episode_length: int = 168
    # maximum pickup distance in grid hops; None means unlimited
    match_radius: int | None = 2
    action_space: str = FOUR_NEAREST
    seed: int = 0

    def validate(self) -> list[str]:
        problems = []
        if self.fleet_size <= 0:
            problems.append(f"fleet_size must be positive (got {self.fleet_size})")
        if self.gas_price < 0:
            problems.append(f"gas_price must be non-negative (got {self.gas_price})")
        if self.demand_scale < 0:
            problems.append(f"demand_scale must be non-negative (got {self.demand_scale})")
        if self.episode_length <= 0:
            problems.append(f"episode_length must be positive (got {self.episode_length})")
        if self.match_radius is not None and self.match_radius < 0:
            problems.append(f"match_radius must be non-negative (got {self.match_radius})")
        if self.action_space not in MODES:
            problems.append(f"action_space must be one of {MODES} (got {self.action_space!r})")
        return problems


@dataclass
class Vehicle:
    id: int
    zone: int
    status: str = IDLE
    busy_until: int = 0
    empty_miles: float = 0.0


@dataclass
class ClientRequest:
    id: int
    origin: int
    destination: int
    salary: float
    request_time: int
    waiting: float = 0.0


@dataclass
class SimWorld:
    grid: ZoneGrid
    vehicles: list
    queue: list = field(default_factory=list)
    parked: np.ndarray = None
    clock: int = 0
    # (salary, waiting hours) of every client charged in the current step
    charged: list = field(default_factory=list)
    served: int = 0
    abandoned: int = 0

    def __post_init__(self):
        if self.parked is None:
            self.parked = np.zeros(self.grid.n_zones, dtype=int)


@dataclass
class Directive:
    """Relocation directive in target-zone form.

    ``targets`` is one target zone per zone, or an (n_zones, n_zones) matrix
    whose row z is the distribution each idle vehicle in zone z samples from.
    Accepted by :meth:`SAVEnv.step` under either action-space mode.
    """

    targets: np.ndarray


def spawn_demand(grid: ZoneGrid, hour: int, scale: float, rng, start_id: int = 0, clock: int | None = None):
    """Poisson requests for one hour.

    Destinations are drawn from the hour's attraction weights (the origin zone
    excluded); salaries are log-normal with median 25/h and log-sd 0.5.
    """
    hour = hour % 24
    clock = hour if clock is None else clock
    counts = rng.poisson(grid.profile[:, hour] * scale)
    requests = []
    next_id = start_id
    weights = grid.attraction[:, hour]
    for z in np.flatnonzero(counts):
        c = int(counts[z])
        w = weights.copy()
        w[z] = 0.0
        if w.sum() <= 0:
            w = np.ones_like(w)
            w[z] = 0.0
        dests = rng.choice(grid.n_zones, size=c, p=w / w.sum())
        salaries = rng.lognormal(math.log(25.0), 0.5, size=c)
        for d, sal in zip(dests, salaries):
            requests.append(ClientRequest(next_id, int(z), int(d), float(sal), clock))
            next_id += 1
    return requests


def compute_reward(world: SimWorld, gas_price: float) -> float:
    """Negated sum of mean waiting cost, mean empty-travel cost and mean parking fee."""
    return -sum(reward_components(world, gas_price))


def reward_components(world: SimWorld, gas_price: float):
    waiting = [s * w for s, w in world.charged]
    empty = [v.empty_miles * gas_price for v in world.vehicles if v.empty_miles > 0]
    parking = [world.grid.fee[v.zone] for v in world.vehicles if v.status == PARKED]
    return (
        float(np.mean(waiting)) if waiting else 0.0,
        float(np.mean(empty)) if empty else 0.0,
        float(np.mean(parking)) if parking else 0.0,
    )


def encode_state(world: SimWorld) -> np.ndarray:
    """Concatenated demand shares, vehicle shares and free parking spaces."""
    n = world.grid.n_zones
    demand = np.zeros(n)
    for c in world.queue:
        demand[c.origin] += 1
    sav = np.bincount([v.zone for v in world.vehicles], minlength=n).astype(float)
    total = demand.sum()
    demand_share = demand / total if total > 0 else demand
    sav_share = sav / sav.sum()
    free = (world.grid.capacity - world.parked).astype(float)
    return np.concatenate([demand_share, sav_share, free])


TRACE_FIELDS = ["step", "waiting_cost", "empty_cost", "parking_cost", "reward", "queue", "idle", "parked",
                "serving", "relocating"]


class SAVEnv(Env):
    """Fleet relocation environment.

    ``step`` accepts a :class:`Directive`, one local action per zone, or an
    (n_zones, k) matrix of local action probabilities for the configured
    action-space mode.
    """

    def __init__(self, config: SimConfig | None = None, grid: ZoneGrid | None = None, trace: bool = False):
        super().__init__()
        self.config = config or SimConfig()
        problems = self.config.validate()
        self.grid = grid or default_grid()
        problems += self.grid.validate()
        if problems:
            raise ValueError("invalid simulator configuration: " + "; ".join(problems))
        self.n_zones = self.grid.n_zones
        self.mode = self.config.action_space
        self.n_local = action_space_size(self.mode, self.n_zones)
        self.neighbors = build_neighbor_table(self.grid)
        self.rng = np.random.default_rng(self.config.seed)
        self.world: SimWorld | None = None
        self.trace_enabled = trace
        self.trace: list[dict] = []
        self._next_client = 0

    @property
    def observation_size(self) -> int:
        return 3 * self.n_zones

    def _reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        n = self.n_zones
        vehicles = [Vehicle(i, i % n) for i in range(self.config.fleet_size)]
        self.world = SimWorld(self.grid, vehicles)
        self._next_client = 0
        self.trace = []
        self._spawn()
        return encode_state(self.world)

    def reset(self, seed=None):
        if self._closed:
            return super().reset()
        obs = self._reset(seed)
        self._active = True
        return obs

    def _spawn(self):
        w = self.world
        new = spawn_demand(self.grid, w.clock % 24, self.config.demand_scale, self.rng, self._next_client, w.clock)
        self._next_client += len(new)
        w.queue.extend(new)

    def _targets(self, action):
        n = self.n_zones
        if isinstance(action, Directive):
            t = np.asarray(action.targets)
            if t.shape == (n,):
                if np.any(t < 0) or np.any(t >= n):
                    raise ValueError("directive names a zone out of range")
                return t.astype(int)
            if t.shape != (n, n) or np.any(t < 0):
                raise ValueError(f"directive must have shape ({n},) or ({n}, {n})")
            return t
        return local_to_targets(self.mode, action, self.neighbors)

    def _step(self, action):
        targets = self._targets(action)
        w, g, cfg = self.world, self.grid, self.config
        t = w.clock
        for v in w.vehicles:
            v.empty_miles = 0.0
        w.charged = []
        w.served = w.abandoned = 0

        self._match(t)
        self._relocate(targets, t)

        for v in w.vehicles:
            if v.status in (RELOCATING, SERVING) and v.busy_until <= t + 1:
                v.status = IDLE

        still = []
        for c in w.queue:
            c.waiting += 1.0
            if c.waiting >= MAX_WAIT_HOURS:
                c.waiting = float(MAX_WAIT_HOURS)
                w.abandoned += 1
            else:
                still.append(c)
            w.charged.append((c.salary, c.waiting))
        w.queue = still

        w.clock += 1
        parts = reward_components(w, cfg.gas_price)
        reward = -sum(parts)
        done = w.clock >= cfg.episode_length
        counts = {s: 0 for s in (IDLE, PARKED, SERVING, RELOCATING)}
        for v in w.vehicles:
            counts[v.status] += 1
        info = {
            "waiting_cost": parts[0],
            "empty_cost": parts[1],
            "parking_cost": parts[2],
            "queue": float(len(w.queue)),
            "served": float(w.served),
            "abandoned": float(w.abandoned),
            "idle": float(counts[IDLE]),
            "parked": float(counts[PARKED]),
            "serving": float(counts[SERVING]),
            "relocating": float(counts[RELOCATING]),
        }
        if self.trace_enabled:
            row = {"step": w.clock, "reward": reward}
            row.update({k: info[k] for k in TRACE_FIELDS if k in info})
            self.trace.append(row)
        if not done:
            self._spawn()
        return encode_state(w), reward, done, info

    def _match(self, t):
        w, g = self.world, self.grid
        radius = self.config.match_radius
        avail = [v for v in w.vehicles if v.status in (IDLE, PARKED)]
        if not avail or not w.queue:
            return
        zones = np.array([v.zone for v in avail])
        free = np.ones(len(avail), dtype=bool)
        remaining = []
        for c in sorted(w.queue, key=lambda c: (c.request_time, c.id)):
            if not free.any():
                remaining.append(c)
                continue
            hops = g.hops[c.origin, zones].astype(float)
            hops[~free] = np.inf
            if radius is not None:
                hops[hops > radius] = np.inf
            # avail is in id order, so argmin breaks ties toward the lowest id
            i = int(np.argmin(hops))
            if not np.isfinite(hops[i]):
                remaining.append(c)
                continue
            free[i] = False
            v = avail[i]
            if v.status == PARKED:
                w.parked[v.zone] -= 1
            pickup = int(hops[i])
            ride = int(g.hops[c.origin, c.destination])
            v.status = SERVING
            v.empty_miles += pickup * g.hop_miles
            v.busy_until = t + max(1, math.ceil((pickup + ride) * g.hop_hours - 1e-9))
            v.zone = c.destination
            w.charged.append((c.salary, c.waiting + pickup * g.hop_hours))
            w.served += 1
        w.queue = remaining

    def _relocate(self, targets, t):
        w, g = self.world, self.grid
        stochastic = targets.ndim == 2
        for v in w.vehicles:
            if v.status not in (IDLE, PARKED):
                continue
            z = v.zone
            if stochastic:
                row = targets[z]
                tot = row.sum()
                if tot <= 0:
                    raise ValueError(f"directive row for zone {z} has no mass")
                dest = int(np.searchsorted(np.cumsum(row), self.rng.random() * tot, side="right"))
                dest = min(dest, self.n_zones - 1)
            else:
                dest = int(targets[z])
            if dest == z:
                if v.status == IDLE and w.parked[z] < g.capacity[z]:
                    v.status = PARKED
                    w.parked[z] += 1
                continue
            if v.status == PARKED:
                w.parked[z] -= 1
            hops = int(g.hops[z, dest])
            v.status = RELOCATING
            v.empty_miles += hops * g.hop_miles
            v.busy_until = t + max(1, math.ceil(hops * g.hop_hours - 1e-9))
            v.zone = dest

    def _release(self):
        self.world = None

    def write_trace(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
            wr.writeheader()
            for row in self.trace:
                wr.writerow({k: repr(float(row[k])) if k != "step" else row[k] for k in TRACE_FIELDS})


# --- scenario files ---------------------------------------------------------
#
#   # comment
#   rows = 3
#   cols = 7
#   hop_hours = 0.2
#   hop_miles = 2.0
#   zone.<i>.capacity = 8
#   zone.<i>.fee = 1.0
#   zone.<i>.profile = r0, r1, ..., r23        (requests/hour by hour of day)
#   zone.<i>.attraction = w0, w1, ..., w23     (destination weights)


def save_scenario(grid: ZoneGrid, path):
    lines = [f"rows = {grid.rows}", f"cols = {grid.cols}", f"hop_hours = {grid.hop_hours!r}",
             f"hop_miles = {grid.hop_miles!r}"]
    for z in range(grid.n_zones):
        lines.append(f"zone.{z}.capacity = {int(grid.capacity[z])}")
        lines.append(f"zone.{z}.fee = {float(grid.fee[z])!r}")
        lines.append(f"zone.{z}.profile = " + ", ".join(repr(float(x)) for x in grid.profile[z]))
        lines.append(f"zone.{z}.attraction = " + ", ".join(repr(float(x)) for x in grid.attraction[z]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_scenario(path) -> ZoneGrid:
    kv = {}
    for ln in Path(path).read_text().splitlines():
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        key, _, value = ln.partition("=")
        kv[key.strip()] = value.strip()
    rows, cols = int(kv["rows"]), int(kv["cols"])
    n = rows * cols
    capacity = np.zeros(n, dtype=int)
    fee = np.zeros(n)
    profile = np.zeros((n, 24))
    attraction = np.zeros((n, 24))
    for z in range(n):
        capacity[z] = int(kv[f"zone.{z}.capacity"])
        fee[z] = float(kv[f"zone.{z}.fee"])
        profile[z] = [float(x) for x in kv[f"zone.{z}.profile"].split(",")]
        attraction[z] = [float(x) for x in kv[f"zone.{z}.attraction"].split(",")]
    grid = ZoneGrid(rows, cols, capacity, fee, profile, attraction,
                    float(kv.get("hop_hours", 0.2)), float(kv.get("hop_miles", 2.0)))
    problems = grid.validate()
    if problems:
        raise ValueError(f"{path}: " + "; ".join(problems))
    return grid
