import pytest

import specmorl as sm


def test_parse_render_round_trip():
    spec = sm.parse("o2&(o1|o3)", 3)
    assert str(spec) == "o2 & ( o1 | o3 )"
    assert sm.parse(sm.render(spec), 3) == spec
    assert spec.leaf_count == 3


def test_evaluate_uses_min_max_semantics():
    assert sm.evaluate("o2 & ( o1 | o3 )", [0.2, 0.7, 0.5]) == 0.5
    assert sm.evaluate("o1 >= 0.5", [0.5, 0.0]) == 1.0
    assert sm.evaluate(sm.parse("-o1"), [0.25, 0.0]) == 0.75


def test_errors_map_to_python_exceptions():
    with pytest.raises(sm.ParseError):
        sm.parse("o1 &")
    with pytest.raises(sm.SpecmorlError):
        sm.parse("o7")
    with pytest.raises(sm.DegenerateSpec):
        sm.normalized_score(1.0, 2.0, 2.0)


def test_equivalent_specs_share_fingerprints():
    assert sm.fingerprint("-o3", 3) == sm.fingerprint("( ( -o3 | -o3 ) )", 3)
    assert sm.fingerprint("o1", 3) != sm.fingerprint("o2", 3)


def test_generation_is_seeded():
    assert sm.generate(4, 4, 9) == sm.generate(4, 4, 9)
    assert len(sm.tokenize("o1 & -o2")) == 4


def test_world_dynamics():
    w = sm.GridWorld.build("small", 3, 1)
    assert (w.width, w.height, w.horizon) == (5, 5, 50)
    right = w.reward_map(2)
    assert right[0] == 0.0 and right[4] == 1.0
    rng = sm.Rng(3)
    s = w.reset(rng)
    nxt, reward, terminal = w.with_slip(0.0).step(s, 3, rng)
    assert nxt[0] == min(s[0] + 1, 4) and nxt[2] == 1
    assert len(reward) == 3 and not terminal


def test_oracle_moves_right_for_o3():
    w = sm.GridWorld.build("small", 3, 1)
    table = sm.solve(w, "o3")
    for i, a in enumerate(table["policy"]):
        if i % w.width != w.width - 1:
            assert a == 3
    mean, _ = sm.policy_return(w, table["policy"], "o3", episodes=20, seed=1)
    assert mean > 0.0


def test_train_and_load_agent(tmp_path):
    run = tmp_path / "run"
    result = sm.train(str(run), {
        "total_steps": 300, "learning_starts": 100, "spec_count": 200, "eval_panel": 5,
        "eval_every": 300, "eval_episodes": 2, "checkpoint_at": [], "checkpoint_every": 0,
    })
    assert result["steps"] == 300
    agent = sm.load_agent(result["final_checkpoint"])
    assert agent.step == 300 and len(agent.sha256) == 64
    assert len(agent.q_values(0, 0, "o1 & o2")) == 4
    assert len(agent.greedy_policy("o1")) == 25
    assert len(agent.encode("-o2")) == 128
    with pytest.raises(sm.ConfigError):
        sm.train(str(run), {})
