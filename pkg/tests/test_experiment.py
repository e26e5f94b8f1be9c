import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from savfleet import experiment as ex
from savfleet.agents import AgentConfig
from savfleet.policies import FOUR_NEAREST, N_ZONE, RandomAgent
from savfleet.sim import SAVEnv, SimConfig


class ConstantEnv:
    """Stand-in environment paying a fixed reward every hour for one week."""

    n_zones = 21

    def __init__(self, reward=-10.0, hours=168):
        self.reward, self.hours, self.t = reward, hours, 0

    def reset(self):
        self.t = 0
        return np.zeros(63)

    def step(self, action):
        self.t += 1
        return np.zeros(63), self.reward, self.t == self.hours, {}


def quick(agent, mode=FOUR_NEAREST, iterations=2, seeds=(0,), **kw):
    sim = SimConfig(episode_length=24, action_space=mode)
    return ex.desk_preset(agent, mode, seeds, iterations=iterations, sim=sim, **kw)


# --- iterations ----------------------------------------------------------------------


def test_constant_hourly_reward_gives_same_iteration_reward():
    rec = ex.run_iteration(RandomAgent(21, FOUR_NEAREST), ConstantEnv(), False, np.random.default_rng(0))
    assert rec.reward == -10.0
    assert len(rec.hourly) == 168


def test_sum_aggregate():
    rec = ex.run_iteration(RandomAgent(21, FOUR_NEAREST), ConstantEnv(), False, np.random.default_rng(0), "sum")
    assert rec.reward == -1680.0
    with pytest.raises(ValueError):
        ex.aggregate_rewards([1.0], "median")


@pytest.mark.parametrize("kind", ["dqn", "reinforce"])
def test_evaluation_iteration_leaves_parameters_bit_identical(kind):
    env = SAVEnv(SimConfig(episode_length=24))
    agent = ex.make_agent(kind, env, ex.preset_agent_config(kind), np.random.default_rng(0))
    before = agent.params.copy()
    ex.run_iteration(agent, env, False, np.random.default_rng(1))
    assert all(np.array_equal(a, b) for a, b in zip(agent.params.arrays(), before.arrays()))


def test_training_iteration_records_losses_and_epsilons():
    env = SAVEnv(SimConfig(episode_length=48))
    cfg = dataclasses.replace(ex.preset_agent_config("dqn"), batch_size=8)
    agent = ex.make_agent("dqn", env, cfg, np.random.default_rng(0))
    rec = ex.run_iteration(agent, env, True, np.random.default_rng(1))
    assert len(rec.losses) == 48 - 8 + 1 == len(rec.loss_epsilons)
    assert rec.loss_epsilons[0] == cfg.epsilon(7) and rec.loss_epsilons[-1] == cfg.epsilon(47)
    assert np.isfinite(rec.loss_mean)


def test_shape_mismatch_is_reported():
    class Wrong:
        def act(self, obs, rng, explore=True):
            return np.zeros(5, dtype=int)

    with pytest.raises(ex.ExperimentError, match="5"):
        ex._check_shapes(Wrong(), SAVEnv(SimConfig(episode_length=2)))


def test_make_agent_kinds():
    env = SAVEnv(SimConfig(episode_length=2))
    for kind in ex.AGENT_KINDS:
        agent = ex.make_agent(kind, env, AgentConfig(), np.random.default_rng(0))
        assert agent.learns == (kind in ex.LEARNING_KINDS)
    with pytest.raises(ValueError):
        ex.make_agent("sarsa", env, AgentConfig(), np.random.default_rng(0))


# --- experiments ----------------------------------------------------------------------


def test_run_experiment_counts():
    runs = ex.run_experiment(quick("random", iterations=3))
    assert len(runs) == 1 and len(runs[0]) == 3
    assert [r.index for r in runs[0]] == [0, 1, 2]


def test_distinct_seeds_give_distinct_series():
    a, b = ex.run_experiment(quick("random", seeds=(0, 1)))
    assert not np.array_equal(ex.iteration_rewards(a), ex.iteration_rewards(b))


def test_same_config_repeats_exactly():
    cfg = quick("dqn", agent_config=dataclasses.replace(ex.preset_agent_config("dqn"), batch_size=8))
    a = ex.run_experiment(cfg)[0]
    b = ex.run_experiment(cfg)[0]
    assert np.array_equal(ex.iteration_rewards(a), ex.iteration_rewards(b))


def test_invalid_config_rejected():
    cfg = quick("random")
    with pytest.raises(ValueError, match="seeds"):
        ex.run_experiment(dataclasses.replace(cfg, runs=3))
    assert any("agent" in p for p in dataclasses.replace(cfg, agent="sarsa").validate())


def test_run_experiment_writes_files(tmp_path):
    cfg = quick("dqn", seeds=(0, 1), out=str(tmp_path), trace=True,
                agent_config=dataclasses.replace(ex.preset_agent_config("dqn"), batch_size=8))
    ex.run_experiment(cfg)
    names = sorted(p.name for p in (tmp_path / "runs").iterdir())
    assert names == sorted(
        [f"dqn__four_nearest__seed{k}{suffix}.csv" for k in (0, 1)
         for suffix in ("", "_hourly", "_diagnostics", "_trace")] + ["dqn__four_nearest__config.txt"])
    series = ex.read_series_csv(tmp_path / "runs" / "dqn__four_nearest__seed0.csv")
    assert len(series) == 2


def test_failures_name_the_iteration(monkeypatch):
    calls = {"n": 0}
    real = ex.run_iteration

    def flaky(*args, **kw):
        calls["n"] += 1
        if calls["n"] == 2:
            raise RuntimeError("boom")
        return real(*args, **kw)

    monkeypatch.setattr(ex, "run_iteration", flaky)
    with pytest.raises(ex.ExperimentError, match="iteration 1"):
        ex.run_experiment(quick("random"))


# --- series arithmetic -------------------------------------------------------------------


def test_max_of_runs_examples():
    assert ex.max_of_runs([[-1290.0], [-1267.0]]).tolist() == [-1267.0]
    assert ex.max_of_runs([[1.0, 2.0, 3.0]]).tolist() == [1.0, 2.0, 3.0]
    with pytest.raises(ValueError):
        ex.max_of_runs([[1.0], [1.0, 2.0]])
    with pytest.raises(ValueError):
        ex.max_of_runs([])


@given(st.lists(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4), min_size=1, max_size=5), st.randoms())
def test_max_of_runs_properties(runs, random):
    best = ex.max_of_runs(runs)
    shuffled = list(runs)
    random.shuffle(shuffled)
    assert np.array_equal(best, ex.max_of_runs(shuffled))
    for r in runs:
        assert np.all(best >= np.asarray(r))


def test_improvement_percent_examples():
    assert round(ex.improvement_percent(-1290, -1267), 2) == 1.78
    assert round(ex.improvement_percent(-1287, -1267), 2) == 1.55
    assert round(ex.improvement_percent(-1273, -1268), 2) == 0.39
    assert ex.improvement_percent(-5.0, -5.0) == 0.0
    with pytest.raises(ZeroDivisionError):
        ex.improvement_percent(0.0, -1.0)


def test_final_mean():
    assert ex.final_mean([0, 0, 1, 1, 1, 1, 1]) == 1.0
    assert ex.final_mean([2.0, 4.0], last=5) == 3.0


# --- files and reports -------------------------------------------------------------------


def test_emit_report_files_and_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    series = {"dqn/four_nearest": rng.normal(-10, 1, 100), "random/four_nearest": rng.normal(-12, 1, 100)}
    paths = ex.emit_report(series, tmp_path, [("random/four_nearest", "dqn/four_nearest")], "cmp")
    assert sorted(p.suffix for p in paths) == [".csv", ".csv", ".csv", ".svg"]
    back = ex.read_series_csv(tmp_path / "cmp_dqn__four_nearest.csv")
    assert np.array_equal(back, series["dqn/four_nearest"])
    rows = ex.read_summary(tmp_path / "cmp_summary.csv")
    assert [r["row"] for r in rows] == ["reward", "reward", "improvement_percent"]
    assert (tmp_path / "cmp_summary.csv").read_text().startswith("# aggregate=mean")
    assert (tmp_path / "cmp.svg").read_text().lstrip().startswith("<?xml")


def test_emit_report_requires_series(tmp_path):
    with pytest.raises(ValueError):
        ex.emit_report({}, tmp_path)


def test_summary_improvement_values():
    series = {"a/n_zone": np.full(5, -1290.0), "a/four_nearest": np.full(5, -1267.0)}
    rows = ex.summary_rows(series, ex.action_space_pairs(["a"]))
    imp = [r for r in rows if r["row"] == "improvement_percent"][0]
    assert imp["reference"] == "a/n_zone"
    assert imp["final5_mean"] == pytest.approx(ex.improvement_percent(-1290.0, -1267.0))


def test_plot_is_deterministic(tmp_path):
    series = {"x/four_nearest": np.arange(10.0)}
    ex.plot_series(series, tmp_path / "a.svg")
    ex.plot_series(series, tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_config_file_round_trip(tmp_path):
    cfg = ex.desk_preset("reinforce", N_ZONE, seeds=(3, 4))
    ex.write_config(cfg, tmp_path / "c.txt")
    back = ex.apply_overrides(ex.ExperimentConfig(), ex.read_config_file(tmp_path / "c.txt"))
    assert dataclasses.replace(back, out=None) == cfg


def test_apply_overrides():
    cfg = ex.apply_overrides(ex.desk_preset("dqn"), [("iterations", "5"), ("sim.fleet_size", "80"),
                                                     ("agent.eta", "0.5"), ("agent.normalize_inputs", "off"),
                                                     ("agent.max_grad_norm", "2"), ("seeds", "7, 8")])
    assert cfg.iterations == 5 and cfg.sim.fleet_size == 80 and cfg.agent_config.eta == 0.5
    assert cfg.agent_config.normalize_inputs is False and cfg.agent_config.max_grad_norm == 2.0
    assert cfg.seeds == [7, 8]
    with pytest.raises(KeyError):
        ex.apply_overrides(cfg, [("sim.colour", "red")])
    with pytest.raises(ValueError):
        ex.apply_overrides(cfg, [("trace", "maybe")])


def test_read_config_file_rejects_bad_line(tmp_path):
    (tmp_path / "c.txt").write_text("# comment\niterations = 3\nnonsense\n")
    with pytest.raises(ValueError, match="key = value"):
        ex.read_config_file(tmp_path / "c.txt")


def test_report_from_runs(tmp_path):
    for agent in ("imbalance", "random"):
        for mode in (N_ZONE, FOUR_NEAREST):
            ex.run_experiment(quick(agent, mode, seeds=(0, 1), out=str(tmp_path)))
    paths = ex.report_from_runs(tmp_path)
    names = {p.name for p in paths}
    assert {"action_spaces_summary.csv", "action_spaces.svg", "vs_imbalance_summary.csv"} <= names
    rows = ex.read_summary(tmp_path / "vs_imbalance_summary.csv")
    assert {r["algorithm"] for r in rows} == {"imbalance", "random"}
    runs = [ex.read_series_csv(tmp_path / "runs" / f"random__four_nearest__seed{k}.csv") for k in (0, 1)]
    stored = ex.read_series_csv(tmp_path / "vs_imbalance_random__four_nearest.csv")
    assert np.array_equal(stored, ex.max_of_runs(runs))


def test_report_from_empty_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        ex.report_from_runs(tmp_path)
