"""Acceptance checks, each an independent oracle comparison with a stated tolerance.

Every ``check_*`` function returns a :class:`CheckResult`; :func:`run_checks`
runs a selection and ``python -m savfleet verify`` prints one line per check.
The oracles here deliberately avoid the library code paths they judge
(for instance the reward oracle walks the world with plain loops).
"""

from __future__ import annotations

import filecmp
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from savfleet import experiment as ex
from savfleet import fixtures, nn, sim, tabular
from savfleet.mdp import TabularEnv
from savfleet.policies import FOUR_NEAREST, N_ZONE, RandomAgent


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float
    gated: bool = True

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        if not self.gated:
            status = "INFO"
        return f"[{status}] {self.number:>2} {self.name}: {self.detail} ({self.seconds:.2f} s)"


def _timed(number, name, fn, limit=None, gated=True):
    t0 = time.perf_counter()
    passed, detail = fn()
    dt = time.perf_counter() - t0
    if limit is not None and dt >= limit:
        passed = False
        detail += f"; exceeded {limit:g} s budget"
    return CheckResult(number, name, bool(passed), detail, dt, gated)


# --- 1: tabular solvers against finite-horizon enumeration ------------------


def horizon_values(mdp, horizon: int = 100) -> np.ndarray:
    """Optimal ``horizon``-step values by explicit backward recursion over (s, a, s2)."""
    S, A = mdp.n_states, mdp.n_actions
    v = [0.0] * S
    for _ in range(horizon):
        nxt = []
        for s in range(S):
            if s in mdp.terminal:
                nxt.append(0.0)
                continue
            best = -math.inf
            for a in range(A):
                total = 0.0
                for s2 in range(S):
                    p = mdp.transition[s, a, s2]
                    if p:
                        total += p * (mdp.reward[s, a, s2] + mdp.gamma * v[s2])
                best = max(best, total)
            nxt.append(best)
        v = nxt
    return np.array(v)


def check_tabular_oracle() -> CheckResult:
    def body():
        worst_vi = worst_pi = 0.0
        for mdp in (fixtures.chain_mdp(), fixtures.gridworld_mdp()):
            v_vi, _ = tabular.value_iteration(mdp)
            v_pi, _ = tabular.policy_iteration(mdp)
            worst_vi = max(worst_vi, float(np.max(np.abs(v_vi - horizon_values(mdp)))))
            worst_pi = max(worst_pi, float(np.max(np.abs(v_pi - v_vi))))
        ok = worst_vi < 1e-3 and worst_pi < 2e-3
        return ok, f"|VI - horizon-100| = {worst_vi:.2e} (< 1e-3), |PI - VI| = {worst_pi:.2e} (< 2e-3)"

    return _timed(1, "tabular oracle equivalence", body, limit=1.0)


# --- 2: Q-learning on the chain ----------------------------------------------


def optimal_q(mdp) -> np.ndarray:
    v, _ = tabular.value_iteration(mdp, epsilon=1e-10)
    q = np.einsum("ijk,ijk->ij", mdp.transition, mdp.reward + mdp.gamma * v[None, None, :])
    for s in mdp.terminal:
        q[s] = 0.0
    return q


def check_q_learning(seed: int = 0) -> CheckResult:
    def body():
        mdp = fixtures.chain_mdp()
        rng = np.random.default_rng(seed)
        env = TabularEnv(mdp, rng=rng)
        q = tabular.q_learning(env, tabular.TDConfig(eta=0.1, gamma=mdp.gamma, episodes=5000), rng)
        gap = float(np.max(np.abs(q - optimal_q(mdp))))
        return gap < 0.05, f"max |Q - Q*| = {gap:.2e} after 5000 episodes (< 0.05)"

    return _timed(2, "Q-learning convergence", body, limit=10.0)


# --- 3: maximization bias ------------------------------------------------------


def left_rate(learner: str, runs: int = 1000, episodes: int = 300, seed: int = 0, cross: bool = False) -> float:
    """Fraction of start-state LEFT choices over all runs and episodes."""
    left = 0
    cfg = tabular.TDConfig(eta=0.1, gamma=1.0, episodes=episodes, epsilon_start=0.1, epsilon_floor=0.1, cross=cross)
    for r in range(runs):
        rng = np.random.default_rng([seed, r])
        env = fixtures.MaxBiasEnv(rng)
        log = []
        if learner == "single":
            tabular.q_learning(env, cfg, rng, log)
        else:
            tabular.double_q_learning(env, cfg, rng, log)
        left += sum(1 for row in log if row["first_action"] == fixtures.MaxBiasEnv.LEFT)
    return left / (runs * episodes)


def z_score(p_single: float, p_double: float, n: int) -> float:
    """Two-proportion z statistic for p_single > p_double."""
    se = math.sqrt(p_single * (1 - p_single) / n + p_double * (1 - p_double) / n)
    return (p_single - p_double) / se if se > 0 else math.inf


def check_maximization_bias(runs: int = 1000, episodes: int = 300) -> list[CheckResult]:
    out = {}

    def body():
        single = left_rate("single", runs, episodes)
        cross = left_rate("double", runs, episodes, cross=True)
        z = z_score(single, cross, runs * episodes)
        out["single"] = single
        return z >= 3.0, f"LEFT rate single {single:.3f} vs double (cross-estimator) {cross:.3f}, z = {z:.1f} (>= 3)"

    gated = _timed(3, "maximization bias", body, limit=120.0)

    def own_max():
        own = left_rate("double", runs, episodes, cross=False)
        z = z_score(out["single"], own, runs * episodes)
        return True, f"own-max form LEFT rate {own:.3f}, z = {z:.1f} vs single (reported only)"

    return [gated, _timed(3, "maximization bias, own-max form", own_max, gated=False)]


# --- 4: gradient exactness ------------------------------------------------------


def check_gradients(seeds=range(10)) -> CheckResult:
    def body():
        worst = 0.0
        for seed in seeds:
            rng = np.random.default_rng(seed)
            params = nn.init_params([6, 5, 5, 4], rng)
            x = rng.normal(size=6)
            target = rng.normal(size=4)
            report = nn.gradient_check(params, x, nn.squared_error_loss(target))
            worst = max(worst, report.max_rel_error)
        return worst < 1e-4, f"max relative error {worst:.2e} over {len(list(seeds))} seeds (< 1e-4)"

    return _timed(4, "gradient exactness", body, limit=5.0)


# --- 5: simulator invariants ------------------------------------------------------


def simulator_violations(episodes: int = 100, seed: int = 0, episode_length: int = 168) -> list[str]:
    problems = []
    env = sim.SAVEnv(sim.SimConfig(seed=seed, episode_length=episode_length))
    rng = np.random.default_rng(seed + 1)
    agent = RandomAgent(env.n_zones, env.mode)
    n, fleet = env.n_zones, env.config.fleet_size
    for ep in range(episodes):
        obs = env.reset()
        done = False
        while not done:
            obs, r, done, _ = env.step(agent.act(obs, rng))
            w = env.world
            if len(w.vehicles) != fleet:
                problems.append(f"episode {ep}: fleet size {len(w.vehicles)}")
            demand, share = obs[:n], obs[n:2 * n]
            if abs(share.sum() - 1.0) > 1e-9:
                problems.append(f"episode {ep}: vehicle shares sum to {share.sum()!r}")
            if w.queue and abs(demand.sum() - 1.0) > 1e-9:
                problems.append(f"episode {ep}: demand shares sum to {demand.sum()!r}")
            if not w.queue and demand.sum() != 0.0:
                problems.append(f"episode {ep}: empty queue but non-zero demand shares")
            parked = np.bincount([v.zone for v in w.vehicles if v.status == sim.PARKED], minlength=n)
            if np.any(parked > env.grid.capacity) or np.any(parked != w.parked):
                problems.append(f"episode {ep}: parking counts out of bounds or out of sync")
            if r > 0:
                problems.append(f"episode {ep}: positive reward {r}")
            if any(c.waiting >= sim.MAX_WAIT_HOURS for c in w.queue):
                problems.append(f"episode {ep}: a client waits beyond {sim.MAX_WAIT_HOURS} h")
            if any(wait > sim.MAX_WAIT_HOURS for _, wait in w.charged):
                problems.append(f"episode {ep}: waiting charged beyond the cap")
            if problems:
                return problems
    return problems


def check_simulator(episodes: int = 100) -> CheckResult:
    def body():
        problems = simulator_violations(episodes)
        if problems:
            return False, problems[0]
        return True, f"{episodes} random-policy episodes, no invariant violated"

    return _timed(5, "simulator invariants", body, limit=60.0)


# --- 6: reward formula --------------------------------------------------------------


def reference_reward(world, gas_price: float) -> float:
    """Straight-line global reward: -(mean waiting cost + mean gas cost of empty vehicles + mean parking fee)."""
    wait_sum, wait_n = 0.0, 0
    for salary, hours in world.charged:
        wait_sum += salary * hours
        wait_n += 1
    gas_sum, gas_n = 0.0, 0
    for v in world.vehicles:
        if v.empty_miles > 0:
            gas_sum += gas_price * v.empty_miles
            gas_n += 1
    fee_sum, fee_n = 0.0, 0
    for v in world.vehicles:
        if v.status == sim.PARKED:
            fee_sum += world.grid.fee[v.zone]
            fee_n += 1
    total = 0.0
    if wait_n:
        total += wait_sum / wait_n
    if gas_n:
        total += gas_sum / gas_n
    if fee_n:
        total += fee_sum / fee_n
    return -total


def random_world(rng, grid=None):
    grid = grid or sim.default_grid()
    n = grid.n_zones
    statuses = (sim.IDLE, sim.RELOCATING, sim.SERVING, sim.PARKED)
    vehicles = []
    for i in range(int(rng.integers(0, 40))):
        status = statuses[int(rng.integers(4))]
        miles = float(rng.choice([0.0, rng.uniform(0, 20)]))
        vehicles.append(sim.Vehicle(i, int(rng.integers(n)), status, 0, miles))
    world = sim.SimWorld(grid, vehicles)
    world.charged = [(float(rng.lognormal(3, 0.5)), float(rng.uniform(0, 24))) for _ in range(int(rng.integers(0, 30)))]
    return world


def check_reward_formula(worlds: int = 1000, seed: int = 0) -> CheckResult:
    def body():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(worlds):
            w = random_world(rng)
            gas = float(rng.uniform(0, 1))
            worst = max(worst, abs(sim.compute_reward(w, gas) - reference_reward(w, gas)))
        return worst <= 1e-9, f"max |difference| {worst:.1e} over {worlds} synthetic worlds (<= 1e-9)"

    return _timed(6, "reward formula", body, limit=5.0)


# --- 7-9: desk-scale experiments --------------------------------------------------

_DESK_CACHE: dict = {}


def desk_series(agent: str, mode: str = FOUR_NEAREST, seeds=(0, 1)) -> np.ndarray:
    """Max-over-runs iteration rewards of a desk-preset experiment (memoised)."""
    key = (agent, mode, tuple(seeds))
    if key not in _DESK_CACHE:
        runs = ex.run_experiment(ex.desk_preset(agent, mode, seeds))
        _DESK_CACHE[key] = ex.max_of_runs(runs)
    return _DESK_CACHE[key]


def check_learning_signal() -> CheckResult:
    def body():
        dqn = ex.final_mean(desk_series("dqn"))
        rnd = ex.final_mean(desk_series("random"))
        gain = ex.improvement_percent(rnd, dqn)
        return gain >= 5.0, f"final-5 mean DQN {dqn:.3f} vs random {rnd:.3f}: {gain:.1f}% better (>= 5%)"

    return _timed(7, "learning signal (desk preset)", body, limit=15 * 60.0)


PUBLISHED_REWARDS = {"dqn": (-1290.0, -1267.0, 1.78), "reinforce": (-1287.0, -1267.0, 1.55), "ddqn": (-1273.0, -1268.0, 0.39)}


def check_improvement_arithmetic() -> CheckResult:
    def body():
        got = {k: round(ex.improvement_percent(a, b), 2) for k, (a, b, _) in PUBLISHED_REWARDS.items()}
        ok = all(got[k] == want for k, (_, _, want) in PUBLISHED_REWARDS.items())
        return ok, ", ".join(f"{k} {got[k]:.2f}%" for k in PUBLISHED_REWARDS)

    return _timed(8, "improvement arithmetic", body, limit=1.0)


def check_action_space_report(out_dir) -> list[CheckResult]:
    agents = ("dqn", "ddqn", "reinforce")
    out = {}

    def body():
        series = {f"{a}/{m}": desk_series(a, m) for a in agents for m in (N_ZONE, FOUR_NEAREST)}
        paths = ex.emit_report(series, out_dir, ex.action_space_pairs(agents), "action_spaces")
        rows = ex.read_summary(Path(out_dir) / "action_spaces_summary.csv")
        shape = [(r["row"], r["algorithm"]) for r in rows]
        want = [("reward", a) for a in agents for _ in range(2)] + [("improvement_percent", a) for a in agents]
        out["rows"] = rows
        return shape == want and len(paths) == 8, f"summary with {len(rows)} rows for {', '.join(agents)}"

    first = _timed(8, "action-space comparison report", body)

    def ordering():
        imp = {r["algorithm"]: float(r["final5_mean"]) for r in out.get("rows", []) if r["row"] == "improvement_percent"}
        text = ", ".join(f"{a} {v:+.1f}%" for a, v in imp.items())
        return True, f"4-nearest over n-zone (final-5 mean): {text} (reported only)"

    return [first, _timed(8, "action-space ordering", ordering, gated=False)]


def check_baseline_report(out_dir) -> list[CheckResult]:
    agents = ("imbalance", "dqn", "ddqn", "reinforce", "random")
    out = {}

    def body():
        series = {f"{a}/{FOUR_NEAREST}": desk_series(a) for a in agents}
        ex.emit_report(series, out_dir, ex.baseline_pairs(agents), "vs_imbalance")
        rows = ex.read_summary(Path(out_dir) / "vs_imbalance_summary.csv")
        out["rows"] = rows
        present = {r["algorithm"] for r in rows if r["row"] == "reward"}
        finite = all(np.all(np.isfinite(s)) for s in series.values())
        return present == set(agents) and finite, f"reward rows for {', '.join(sorted(present))}"

    first = _timed(9, "imbalance baseline report", body)

    def gains():
        imp = {r["algorithm"]: float(r["final5_mean"]) for r in out.get("rows", []) if r["row"] == "improvement_percent"}
        return True, "over imbalance (final-5 mean): " + ", ".join(f"{a} {v:+.1f}%" for a, v in imp.items()) + " (reported only)"

    return [first, _timed(9, "RL vs imbalance", gains, gated=False)]


# --- 10: determinism ---------------------------------------------------------------


def _experiment_files(out_dir, iterations: int):
    cfg = ex.desk_preset("dqn", FOUR_NEAREST, (0, 1), iterations=iterations, out=str(out_dir))
    runs = ex.run_experiment(cfg)
    ex.emit_report({cfg.label: ex.max_of_runs(runs)}, out_dir, (), "determinism")
    return sorted(p.relative_to(out_dir) for p in Path(out_dir).rglob("*") if p.is_file())


def check_determinism(iterations: int = 4) -> CheckResult:
    def body():
        with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
            fa, fb = _experiment_files(Path(a), iterations), _experiment_files(Path(b), iterations)
            if fa != fb:
                return False, "different file sets"
            diff = [str(f) for f in fa if not filecmp.cmp(Path(a) / f, Path(b) / f, shallow=False)]
            if diff:
                return False, f"files differ: {', '.join(diff)}"
            return True, f"{len(fa)} files byte-identical across two pinned-seed runs"

    return _timed(10, "determinism", body)


# --- driver ---------------------------------------------------------------------------

ALL = tuple(range(1, 11))
FAST = (1, 2, 4, 6, 8)


def run_checks(numbers=ALL, out_dir=None, echo=print, experiments: bool = True) -> list[CheckResult]:
    """Run the selected criteria in order, printing one line per result.

    ``experiments=False`` keeps criterion 8 to its arithmetic part.
    """
    results = []
    work = Path(out_dir) if out_dir else Path(tempfile.mkdtemp(prefix="savfleet-acceptance-"))
    for k in numbers:
        if k == 1:
            batch = [check_tabular_oracle()]
        elif k == 2:
            batch = [check_q_learning()]
        elif k == 3:
            batch = check_maximization_bias()
        elif k == 4:
            batch = [check_gradients()]
        elif k == 5:
            batch = [check_simulator()]
        elif k == 6:
            batch = [check_reward_formula()]
        elif k == 7:
            batch = [check_learning_signal()]
        elif k == 8:
            batch = [check_improvement_arithmetic()]
            if experiments:
                batch += check_action_space_report(work)
        elif k == 9:
            batch = check_baseline_report(work)
        elif k == 10:
            batch = [check_determinism()]
        else:
            raise ValueError(f"no acceptance criterion {k}")
        for r in batch:
            if echo:
                echo(r.line())
        results.extend(batch)
    return results
