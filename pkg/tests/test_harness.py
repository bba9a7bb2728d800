import json

import numpy as np
import pytest
from pydantic import ValidationError

from vapor.envs import RIGHT, deepsea_goal, make_deepsea, make_four_room
from vapor.harness import (
    AgentConfig,
    EnvConfig,
    ExperimentConfig,
    Step,
    _hit,
    aggregate_bayes_regret,
    build_world,
    coverage_run,
    coverage_time,
    loglog_slope,
    reachable_cells,
    run_episode,
    run_learning,
    run_seed,
    stream,
    time_to_solve,
)
from vapor.mdp import LayeredMdp, backward_induction


def cfg(**kw):
    base = dict(env=EnvConfig(name="random", layer_sizes=[2, 2], actions=2), agents=[AgentConfig(kind="psrl")],
                episodes=5, seeds=[0, 1])
    base.update(kw)
    return ExperimentConfig(**base)


def test_time_to_solve_examples():
    assert time_to_solve([1, 0, 0]) == 1
    assert time_to_solve([0] * 9 + [1]) == 10
    assert time_to_solve([0] * 20) is None
    assert time_to_solve([]) is None
    assert time_to_solve([0, 0, 1], threshold=1 / 3) == 3


def test_coverage_time_examples():
    assert coverage_time([np.array([[1]])], np.array([[True]])) == 1
    hist = [np.array([1, 0, 0]), np.array([1, 0, 1]), np.array([2, 0, 1])]
    assert coverage_time(hist, np.array([True, False, True])) == 2
    assert coverage_time(hist, np.array([True, True, True])) is None


def test_reachable_cells_deepsea():
    reach = reachable_cells(make_deepsea(4))
    assert all(np.all(r) for r in reach)


def test_regret_aggregation():
    curves = np.tile(np.arange(5.0), (3, 1))
    s = aggregate_bayes_regret(curves)
    np.testing.assert_array_equal(s.se, 0.0)
    np.testing.assert_array_equal(s.mean, np.arange(5.0))
    with pytest.raises(ValueError):
        aggregate_bayes_regret(curves[:1])


def test_loglog_slope_of_power_law():
    t = np.arange(1, 1001)
    assert loglog_slope(3 * t**0.5) == pytest.approx(0.5, abs=1e-9)


def test_run_episode_deterministic_path():
    m = make_deepsea(5)
    pi = [np.tile([0.0, 1.0], (S, 1)) for S in m.layer_sizes]
    traj = run_episode(m, pi, np.random.default_rng(0))
    assert [st.layer for st in traj] == list(range(5))
    assert [st.state for st in traj] == list(range(5))
    assert _hit(deepsea_goal(5), traj[-1])
    assert traj[-1].next_state is None
    left = [np.tile([1.0, 0.0], (S, 1)) for S in m.layer_sizes]
    assert not any(_hit(deepsea_goal(5), st) for st in run_episode(m, left, np.random.default_rng(0)))


def test_streams_are_reproducible_and_distinct():
    assert stream(0, 1, 2, 3).random() == stream(0, 1, 2, 3).random()
    assert stream(0, 1, 2, 3).random() != stream(0, 1, 2, 2).random()


def test_config_validation():
    with pytest.raises(ValidationError):
        cfg(episodes=0)
    with pytest.raises(ValidationError):
        cfg(seeds=[])
    with pytest.raises(ValidationError):
        cfg(agents=[])
    with pytest.raises(ValidationError):
        cfg(bogus=1)
    with pytest.raises(ValidationError):
        EnvConfig(name="deepsea")
    with pytest.raises(ValidationError):
        cfg(replication=0)
    assert ExperimentConfig(env=EnvConfig(name="deepsea", size=4), agents=[AgentConfig(kind="psrl")],
                            episodes=1, seeds=[0]).replication_factor == 100
    assert cfg().replication_factor == 1


def test_config_load_rejects_unknown_keys(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"env": {"name": "chain", "size": 4}, "agents": [{"kind": "vapor"}],
                             "episodes": 2, "seeds": [0], "extra": 1}))
    with pytest.raises(ValidationError):
        ExperimentConfig.load(p)


def test_bayes_protocol_draws_truth_from_agent_prior():
    c = cfg()
    m0, b0, _ = build_world(c, 0)
    m0b, _, _ = build_world(c, 0)
    m1, _, _ = build_world(c, 1)
    np.testing.assert_array_equal(m0.r[0], m0b.r[0])
    assert not np.array_equal(m0.r[0], m1.r[0])
    assert b0.counts[0].sum() == 0 and m0.reward_noise_std == b0.nu


def test_oracle_policy_has_zero_regret(monkeypatch):
    import vapor.harness as h

    c = cfg(episodes=4)
    truth = build_world(c, 0)[0]
    _, opt = backward_induction(truth)

    def fake_policy(self, b, t, rng):
        return opt, {"fw_gap": 0.0, "fw_iters": 0}

    monkeypatch.setattr(h.Agent, "policy", fake_policy)
    res = run_seed(c, c.agents[0], 0)
    np.testing.assert_array_equal(res.regret, 0.0)


def test_regret_is_non_negative_and_cumulative():
    res = run_seed(cfg(episodes=10), AgentConfig(kind="psrl"), 0)
    assert np.all(res.regret >= -1e-12)
    assert np.all(np.diff(res.cum_regret) >= -1e-12)


def test_results_are_bit_identical_and_worker_independent(tmp_path):
    c = cfg(episodes=6, seeds=[0, 1, 2], agents=[AgentConfig(kind="psrl"), AgentConfig(kind="klearning")])
    a = run_learning(c, workers=1).write(tmp_path / "a", with_agent=True)
    b = run_learning(c, workers=2).write(tmp_path / "b", with_agent=True)
    assert a.read_bytes() == b.read_bytes()
    header = a.read_text().splitlines()[0]
    assert header == "agent,seed,episode,regret,cum_regret,goal_found,fw_gap,fw_iters"
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["library_version"] and manifest["replication"] == 1
    assert len(manifest["seeds"]) == 6


def test_single_seed_rerun_matches_slice():
    c = cfg(episodes=5, seeds=[0, 1, 2])
    full = run_learning(c)
    alone = run_learning(cfg(episodes=5, seeds=[2]))
    np.testing.assert_array_equal(full.seeds[2].regret, alone.seeds[0].regret)


def test_chain_world_and_goal_tracking():
    c = ExperimentConfig(env=EnvConfig(name="chain", size=6), agents=[AgentConfig(kind="vapor")],
                         episodes=3, seeds=[0])
    truth, prior, goal = build_world(c, 0)
    assert goal == (5, 0, None)
    res = run_seed(c, c.agents[0], 0, until_goal=True)
    assert res.goal_found[0] and len(res.regret) == 1


def test_stop_on_solve_on_deepsea():
    c = ExperimentConfig(env=EnvConfig(name="deepsea", size=4), agents=[AgentConfig(kind="psrl")],
                         episodes=200, seeds=[0], stop_on_solve=True, prior={"nu": 0.0})
    res = run_seed(c, c.agents[0], 0)
    assert res.time_to_solve == len(res.regret)


def test_coverage_run_small_four_room():
    m = make_four_room(5)
    t = coverage_run(m, weighted=True, episodes=300, seed=0)
    assert t is not None and t >= 1


def test_coverage_on_single_cell():
    m = LayeredMdp([], [np.zeros((1, 1))], np.array([1.0]))
    assert coverage_run(m, weighted=False, episodes=3, seed=0) == 1


def test_step_is_plain_tuple():
    st = Step(0, 1, RIGHT, 0.5, None)
    assert st.layer == 0 and tuple(st) == (0, 1, RIGHT, 0.5, None)
