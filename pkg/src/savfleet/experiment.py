"""Experiment protocol: weekly training iterations, max-of-runs series and reports.

One iteration is one simulated week (one episode). An experiment trains a
fresh agent for ``iterations`` weeks once per seed; the series reported for
an agent is the elementwise maximum of the per-run iteration rewards.
"""

from __future__ import annotations

import csv
import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from savfleet.agents import AgentConfig, DQNAgent, ReinforceAgent, run_episode
from savfleet.policies import FOUR_NEAREST, MODES, N_ZONE, ImbalanceAgent, RandomAgent
from savfleet.sim import SAVEnv, SimConfig, load_scenario

AGENT_KINDS = ("dqn", "ddqn", "reinforce", "imbalance", "random")
LEARNING_KINDS = ("dqn", "ddqn", "reinforce")
AGGREGATES = ("mean", "sum")

# agent seeds are offset so that an agent and its environment never share a stream
_AGENT_SEED_OFFSET = 10_000


class ExperimentError(RuntimeError):
    """A run failed; the message names the agent, seed and iteration."""


@dataclass
class ExperimentConfig:
    agent: str = "dqn"
    action_space: str = FOUR_NEAREST
    iterations: int = 100
    runs: int = 2
    seeds: list = field(default_factory=lambda: [0, 1])
    sim: SimConfig = field(default_factory=SimConfig)
    agent_config: AgentConfig = field(default_factory=AgentConfig)
    out: str | None = None
    aggregate: str = "mean"
    scenario: str | None = None
    trace: bool = False

    def validate(self) -> list[str]:
        problems = []
        if self.agent not in AGENT_KINDS:
            problems.append(f"agent must be one of {AGENT_KINDS} (got {self.agent!r})")
        if self.action_space not in MODES:
            problems.append(f"action_space must be one of {MODES} (got {self.action_space!r})")
        if self.iterations < 1:
            problems.append("iterations must be at least 1")
        if self.runs < 1:
            problems.append("runs must be at least 1")
        if len(self.seeds) != self.runs:
            problems.append(f"{len(self.seeds)} seeds given for {self.runs} runs")
        if self.aggregate not in AGGREGATES:
            problems.append(f"aggregate must be one of {AGGREGATES} (got {self.aggregate!r})")
        return problems + self.sim.validate()

    @property
    def label(self) -> str:
        return f"{self.agent}/{self.action_space}"


@dataclass
class IterationRecord:
    index: int
    hourly: np.ndarray
    reward: float
    loss_mean: float = float("nan")
    epsilon: float = float("nan")
    # per-update training losses and the exploration rate in force at each
    losses: np.ndarray = field(default_factory=lambda: np.zeros(0))
    loss_epsilons: np.ndarray = field(default_factory=lambda: np.zeros(0))


# --- presets ----------------------------------------------------------------


def preset_agent_config(kind: str) -> AgentConfig:
    """Learner settings used by the desk and full presets.

    Inputs and rewards are rescaled online: the raw observation mixes shares
    of order 1/n with parking counts of order 10, and unscaled returns make
    sequential policy-gradient steps diverge.
    """
    if kind in ("dqn", "ddqn"):
        return AgentConfig(gamma=0.9, eta=1e-2, epsilon_floor=0.01, epsilon_decay_steps=15 * 168,
                           normalize_rewards=True, normalize_inputs=True)
    if kind == "reinforce":
        return AgentConfig(gamma=0.9, alpha=1e-2, normalize_inputs=True, standardize_returns=True,
                           max_grad_norm=1.0)
    return AgentConfig()


def desk_preset(agent: str, action_space: str = FOUR_NEAREST, seeds=(0, 1), **overrides) -> ExperimentConfig:
    """30 weekly iterations, fleet of 60, demand scale 1.0."""
    cfg = ExperimentConfig(agent=agent, action_space=action_space, iterations=30, runs=len(seeds),
                           seeds=list(seeds), sim=SimConfig(fleet_size=60, demand_scale=1.0,
                                                            action_space=action_space),
                           agent_config=preset_agent_config(agent))
    return dataclasses.replace(cfg, **overrides)


def full_preset(agent: str, action_space: str = FOUR_NEAREST, seeds=(0, 1), **overrides) -> ExperimentConfig:
    """100 weekly iterations, two runs."""
    return desk_preset(agent, action_space, seeds, iterations=100, **overrides)


PRESETS = {"desk": desk_preset, "full": full_preset}


# --- running ----------------------------------------------------------------


def make_agent(kind: str, env: SAVEnv, agent_config: AgentConfig, rng):
    n, mode = env.n_zones, env.mode
    if kind in ("dqn", "ddqn"):
        return DQNAgent(env.observation_size, n, mode, agent_config, rng, env.neighbors, double=kind == "ddqn")
    if kind == "reinforce":
        return ReinforceAgent(env.observation_size, n, mode, agent_config, rng, env.neighbors)
    if kind == "imbalance":
        return ImbalanceAgent()
    if kind == "random":
        return RandomAgent(n, mode)
    raise ValueError(f"unknown agent kind {kind!r}")


def aggregate_rewards(hourly, aggregate: str = "mean") -> float:
    hourly = np.asarray(hourly, dtype=float)
    if aggregate == "mean":
        return float(hourly.mean())
    if aggregate == "sum":
        return float(hourly.sum())
    raise ValueError(f"unknown aggregate {aggregate!r}")


def run_iteration(agent, env: SAVEnv, train: bool, rng, aggregate: str = "mean", index: int = 0) -> IterationRecord:
    """Play one week; the agent learns in place when ``train`` is set."""
    n_losses = len(getattr(agent, "losses", []))
    step0 = getattr(agent, "steps", None)
    traj, _ = run_episode(agent, env, train, rng)
    hourly = traj.rewards()
    losses = np.array(getattr(agent, "losses", [])[n_losses:], dtype=float)
    if len(losses) and step0 is not None:
        # updates happen once per step after the buffer fills; align each with its step's epsilon
        per_step = max(1, getattr(agent.config, "updates_per_step", 1))
        last = agent.steps - 1
        steps = last - (len(losses) - 1 - np.arange(len(losses))) // per_step
        eps = np.array([agent.config.epsilon(int(t)) for t in steps])
    else:
        eps = np.full(len(losses), float(getattr(agent, "epsilon", float("nan"))))
    return IterationRecord(
        index=index,
        hourly=hourly,
        reward=aggregate_rewards(hourly, aggregate),
        loss_mean=float(losses.mean()) if len(losses) else float("nan"),
        epsilon=float(getattr(agent, "epsilon", float("nan"))),
        losses=losses,
        loss_epsilons=eps,
    )


def _check_shapes(agent, env):
    obs = env.reset()
    action = agent.act(obs, np.random.default_rng(0), explore=False)
    if not hasattr(action, "targets") and np.shape(action)[0] != env.n_zones:
        raise ExperimentError(f"agent emits {np.shape(action)} actions for {env.n_zones} zones")


def _run_one(config: ExperimentConfig, seed: int) -> list[IterationRecord]:
    grid = load_scenario(config.scenario) if config.scenario else None
    sim = dataclasses.replace(config.sim, seed=int(seed), action_space=config.action_space)
    env = SAVEnv(sim, grid, trace=config.trace)
    rng = np.random.default_rng(int(seed) + _AGENT_SEED_OFFSET)
    agent = make_agent(config.agent, env, config.agent_config, rng)
    _check_shapes(agent, SAVEnv(sim, grid))
    records = []
    for i in range(config.iterations):
        try:
            records.append(run_iteration(agent, env, agent.learns, rng, config.aggregate, i))
        except Exception as exc:
            raise ExperimentError(f"{config.label} seed {seed}: iteration {i} failed: {exc}") from exc
    if config.trace and config.out:
        env.write_trace(Path(config.out) / "runs" / f"{_run_stem(config, seed)}_trace.csv")
    env.close()
    return records


def _run_stem(config: ExperimentConfig, seed) -> str:
    return f"{config.agent}__{config.action_space}__seed{seed}"


def run_experiment(config: ExperimentConfig, workers: int = 1) -> list[list[IterationRecord]]:
    """One fresh agent and environment per seed; returns one record list per run.

    With ``out`` set, every run's series and the resolved config are written
    under ``out``. ``workers > 1`` runs seeds in separate processes; results
    do not depend on the worker count.
    """
    problems = config.validate()
    if problems:
        raise ValueError("invalid experiment configuration: " + "; ".join(problems))
    if config.out:
        (Path(config.out) / "runs").mkdir(parents=True, exist_ok=True)
    if workers > 1 and config.runs > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            series = list(pool.map(_run_one, [config] * config.runs, config.seeds))
    else:
        series = [_run_one(config, s) for s in config.seeds]
    if config.out:
        out = Path(config.out)
        for seed, records in zip(config.seeds, series):
            write_run_csv(records, out / "runs" / f"{_run_stem(config, seed)}.csv")
            write_hourly_csv(records, out / "runs" / f"{_run_stem(config, seed)}_hourly.csv")
            if any(len(r.losses) for r in records):
                write_diagnostics_csv(records, out / "runs" / f"{_run_stem(config, seed)}_diagnostics.csv")
        write_config(config, out / "runs" / f"{config.agent}__{config.action_space}__config.txt")
    return series


def iteration_rewards(records) -> np.ndarray:
    return np.array([r.reward for r in records], dtype=float)


def max_of_runs(series_list) -> np.ndarray:
    """Elementwise maximum of iteration rewards across runs.

    Accepts reward arrays or lists of :class:`IterationRecord`.
    """
    arrays = [iteration_rewards(s) if len(s) and isinstance(s[0], IterationRecord) else np.asarray(s, float)
              for s in series_list]
    if not arrays:
        raise ValueError("no runs given")
    lengths = {len(a) for a in arrays}
    if len(lengths) != 1:
        raise ValueError(f"runs have different lengths: {sorted(lengths)}")
    return np.max(np.vstack(arrays), axis=0)


def improvement_percent(reward_a: float, reward_b: float) -> float:
    """Cost reduction of b relative to a: (|a| - |b|) / |a| * 100."""
    if reward_a == 0:
        raise ZeroDivisionError("reference reward is zero")
    return (abs(reward_a) - abs(reward_b)) / abs(reward_a) * 100.0


def final_mean(series, last: int = 5) -> float:
    series = np.asarray(series, dtype=float)
    return float(series[-last:].mean())


# --- files ------------------------------------------------------------------
#
# runs/<agent>__<mode>__seed<k>.csv         iteration,reward,loss_mean,epsilon
# runs/<agent>__<mode>__seed<k>_hourly.csv  iteration,hour,reward
# runs/<agent>__<mode>__seed<k>_diagnostics.csv
#                                           iteration,step,loss,epsilon,episode_return (learners
#                                           with per-step updates only)
# runs/<agent>__<mode>__config.txt          resolved key = value config
# <name>_<agent>__<mode>.csv                iteration,reward   (max over runs)
# <name>_summary.csv                        see emit_report
# <name>.svg                                reward against iteration
#
# Floats are written with repr() so files round-trip exactly.


def _fmt(x) -> str:
    return repr(float(x))


def write_run_csv(records, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["iteration", "reward", "loss_mean", "epsilon"])
        for r in records:
            wr.writerow([r.index, _fmt(r.reward), _fmt(r.loss_mean), _fmt(r.epsilon)])


def write_hourly_csv(records, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["iteration", "hour", "reward"])
        for r in records:
            for h, v in enumerate(r.hourly):
                wr.writerow([r.index, h, _fmt(v)])


def write_diagnostics_csv(records, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["iteration", "step", "loss", "epsilon", "episode_return"])
        for r in records:
            ret = _fmt(np.sum(r.hourly))
            for k, (loss, eps) in enumerate(zip(r.losses, r.loss_epsilons)):
                wr.writerow([r.index, k, _fmt(loss), _fmt(eps), ret])


def read_series_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(row["reward"]) for row in rows], dtype=float)


def write_series_csv(series, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["iteration", "reward"])
        for i, v in enumerate(series):
            wr.writerow([i, _fmt(v)])


def config_items(config: ExperimentConfig) -> list[tuple[str, object]]:
    items = [(f.name, getattr(config, f.name)) for f in dataclasses.fields(config)
             if f.name not in ("sim", "agent_config")]
    items += [(f"sim.{k}", v) for k, v in dataclasses.asdict(config.sim).items()]
    items += [(f"agent.{k}", v) for k, v in dataclasses.asdict(config.agent_config).items()]
    return items


def _text(value) -> str:
    if isinstance(value, (list, tuple)):
        return ", ".join(str(v) for v in value)
    return str(value)


def write_config(config: ExperimentConfig, path):
    """Write ``key = value`` lines; the output directory is left out since the file lives in it."""
    items = [(k, v) for k, v in config_items(config) if k != "out"]
    Path(path).write_text("".join(f"{k} = {_text(v)}\n" for k, v in items))


def _parse_value(text: str, current):
    text = text.strip()
    if isinstance(current, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if text in ("None", "none", ""):
        return None
    if isinstance(current, (list, tuple)):
        parts = [p.strip() for p in text.split(",") if p.strip()]
        kind = type(current[0]) if len(current) else int
        return type(current)(kind(p) for p in parts)
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float) or current is None:
        try:
            return float(text)
        except ValueError:
            return text
    return text


def apply_overrides(config: ExperimentConfig, pairs) -> ExperimentConfig:
    """Return a copy of ``config`` with ``key = value`` pairs applied.

    Keys are top-level field names or ``sim.<field>`` / ``agent.<field>``.
    """
    top, sim, agent = {}, {}, {}
    current = dict(config_items(config))
    for key, text in pairs:
        key = key.strip()
        if key not in current:
            raise KeyError(f"unknown config key {key!r}")
        value = _parse_value(text, current[key])
        if key.startswith("sim."):
            sim[key[4:]] = value
        elif key.startswith("agent."):
            agent[key[6:]] = value
        else:
            top[key] = value
    if "seeds" in top:
        top["seeds"] = list(top["seeds"])
    out = dataclasses.replace(config, **top)
    if sim:
        out = dataclasses.replace(out, sim=dataclasses.replace(out.sim, **sim))
    if agent:
        out = dataclasses.replace(out, agent_config=dataclasses.replace(out.agent_config, **agent))
    return out


def read_config_file(path) -> list[tuple[str, str]]:
    pairs = []
    for ln in Path(path).read_text().splitlines():
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        key, sep, value = ln.partition("=")
        if not sep:
            raise ValueError(f"{path}: expected 'key = value', got {ln!r}")
        pairs.append((key.strip(), value.strip()))
    return pairs


# --- reports ----------------------------------------------------------------

SUMMARY_FIELDS = ["row", "algorithm", "action_space", "reference", "final_iteration_reward", "final5_mean"]


def _split_label(label: str):
    agent, _, mode = label.partition("/")
    return agent, mode


def summary_rows(series: dict, pairs=()) -> list[dict]:
    """One ``reward`` row per series and one ``improvement`` row per (reference, candidate) pair.

    Improvement rows hold :func:`improvement_percent` of the candidate over
    the reference, computed on the final iteration and on the final-5 mean.
    """
    rows = []
    for label, s in series.items():
        agent, mode = _split_label(label)
        rows.append({"row": "reward", "algorithm": agent, "action_space": mode, "reference": "",
                     "final_iteration_reward": float(s[-1]), "final5_mean": final_mean(s)})
    for ref, cand in pairs:
        a, b = np.asarray(series[ref]), np.asarray(series[cand])
        agent, mode = _split_label(cand)
        rows.append({"row": "improvement_percent", "algorithm": agent, "action_space": mode, "reference": ref,
                     "final_iteration_reward": improvement_percent(a[-1], b[-1]),
                     "final5_mean": improvement_percent(final_mean(a), final_mean(b))})
    return rows


def plot_series(series: dict, path, title: str = "", aggregate: str = "mean"):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed metadata and hash salt keep the SVG byte-identical between runs
    with matplotlib.rc_context({"svg.hashsalt": "savfleet", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(7, 4))
        for label, s in series.items():
            ax.plot(np.arange(1, len(s) + 1), s, label=label, linewidth=1.2)
        ax.set_xlabel("iteration (week)")
        ax.set_ylabel(f"iteration reward ({aggregate} of hourly rewards)")
        if title:
            ax.set_title(title)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)


def emit_report(series: dict, out_dir, pairs=(), name: str = "comparison", aggregate: str = "mean",
                plot: bool = True) -> list[Path]:
    """Write one CSV per series, a summary CSV and an SVG plot; returns the paths.

    ``series`` maps ``"agent/mode"`` labels to final (max-over-runs) iteration
    rewards. ``pairs`` lists (reference, candidate) labels for improvement rows.
    """
    if not series:
        raise ValueError("no series to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for label, s in series.items():
        p = out / f"{name}_{label.replace('/', '__')}.csv"
        write_series_csv(s, p)
        paths.append(p)
    p = out / f"{name}_summary.csv"
    with open(p, "w", newline="") as fh:
        fh.write(f"# aggregate={aggregate}\n")
        wr = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        wr.writeheader()
        for row in summary_rows(series, pairs):
            row = dict(row)
            row["final_iteration_reward"] = f"{row['final_iteration_reward']:.6f}"
            row["final5_mean"] = f"{row['final5_mean']:.6f}"
            wr.writerow(row)
    paths.append(p)
    if plot:
        p = out / f"{name}.svg"
        plot_series(series, p, title=name.replace("_", " "), aggregate=aggregate)
        paths.append(p)
    return paths


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# --- the two comparisons ----------------------------------------------------


def action_space_pairs(agents) -> list[tuple[str, str]]:
    return [(f"{a}/{N_ZONE}", f"{a}/{FOUR_NEAREST}") for a in agents]


def baseline_pairs(agents, reference: str = "imbalance") -> list[tuple[str, str]]:
    return [(f"{reference}/{FOUR_NEAREST}", f"{a}/{FOUR_NEAREST}") for a in agents if a != reference]


def collect_runs(out_dir) -> dict:
    """Group stored per-run CSVs by ``agent/mode`` and reduce them with :func:`max_of_runs`."""
    runs = {}
    for path in sorted((Path(out_dir) / "runs").glob("*__seed*.csv")):
        if path.stem.endswith(("_hourly", "_trace", "_diagnostics")):
            continue
        agent, mode, seed = path.stem.split("__")
        runs.setdefault(f"{agent}/{mode}", []).append((int(seed[4:]), read_series_csv(path)))
    return {label: max_of_runs([s for _, s in sorted(items)]) for label, items in sorted(runs.items())}


def report_from_runs(out_dir, aggregate: str = "mean") -> list[Path]:
    """Rebuild the comparison reports from the per-run CSVs under ``out_dir``."""
    series = collect_runs(out_dir)
    if not series:
        raise FileNotFoundError(f"no run CSVs under {Path(out_dir) / 'runs'}")
    agents = sorted({_split_label(k)[0] for k in series}, key=AGENT_KINDS.index)
    both = [a for a in agents if f"{a}/{N_ZONE}" in series and f"{a}/{FOUR_NEAREST}" in series]
    paths = []
    if both:
        sub = {k: v for k, v in series.items() if _split_label(k)[0] in both}
        paths += emit_report(sub, out_dir, action_space_pairs(both), "action_spaces", aggregate)
    four = {k: v for k, v in series.items() if k.endswith(f"/{FOUR_NEAREST}")}
    ref = "imbalance" if f"imbalance/{FOUR_NEAREST}" in four else "random" if f"random/{FOUR_NEAREST}" in four else None
    if ref and len(four) > 1:
        pairs = baseline_pairs([_split_label(k)[0] for k in four], ref)
        paths += emit_report(four, out_dir, pairs, f"vs_{ref}", aggregate)
    if not paths:
        paths += emit_report(series, out_dir, (), "series", aggregate)
    return paths
