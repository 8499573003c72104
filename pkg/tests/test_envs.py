import numpy as np
import pytest

from tdlab.envs import (CSV_HEADER, GlyphDataset, MaskedImageEnv, ReplayBuffer, TabularMDP, Transition,
                        brute_force_optimal, chain_mdp, dp_policy_evaluation, exact_policy_value,
                        glyph_generate, greedy_policy, grid_mdp, make_expert_buffer, mc_policy_evaluation,
                        mc_return, uniform_policy, value_iteration)
from tdlab.rng import Rng


@pytest.fixture(scope="module")
def glyphs():
    return glyph_generate(n_classes=4, n_per_class=6, seed=3)


def test_glyph_determinism_and_split(glyphs):
    again = glyph_generate(n_classes=4, n_per_class=6, seed=3)
    assert np.array_equal(glyphs.images, again.images) and glyphs.train_seeds == again.train_seeds
    assert not np.array_equal(glyphs.images, glyph_generate(n_classes=4, n_per_class=6, seed=4).images)
    assert np.bincount(glyphs.labels).tolist() == [6] * 4
    assert not set(glyphs.train_seeds) & set(glyphs.test_seeds)
    assert sorted(glyphs.train_seeds + glyphs.test_seeds) == list(range(24))
    assert glyphs.images.min() >= 0 and glyphs.images.max() <= 1 and glyphs.shape == (32, 32)
    with pytest.raises(ValueError):
        glyph_generate(n_per_class=0)
    with pytest.raises(ValueError):
        GlyphDataset(glyphs.images, glyphs.labels, (0, 1), (1, 2), 4, 3)


def test_glyph_save_load(glyphs, tmp_path):
    glyphs.save(tmp_path)
    back = GlyphDataset.load(tmp_path)
    assert np.array_equal(back.images, glyphs.images) and np.array_equal(back.labels, glyphs.labels)
    assert back.manifest() == glyphs.manifest()


def test_env_reset(glyphs):
    env = MaskedImageEnv(glyphs)
    obs = env.reset(0)
    assert env.pos == (12, 12) and env.steps == 0
    assert obs.shape == (1, 32, 32) and env.n_actions == 8
    outside = np.ones((32, 32), dtype=bool)
    outside[12:20, 12:20] = False
    assert np.all(obs[0][outside] == 0)
    assert np.array_equal(obs[0][12:20, 12:20], glyphs.images[0][12:20, 12:20])
    with pytest.raises(IndexError):
        env.reset(24)


def test_env_moves_clip_and_accumulate(glyphs):
    env = MaskedImageEnv(glyphs)
    env.reset(1)
    revealed = env.mask.sum()
    for _ in range(3):
        env.step(2)  # left
        assert env.mask.sum() >= revealed
        revealed = env.mask.sum()
    assert env.pos == (12, 0)
    env.step(2)
    assert env.pos == (12, 0)  # clipped at the left edge
    assert revealed == 8 * 20


def test_env_classification(glyphs):
    env = MaskedImageEnv(glyphs)
    env.reset(2)
    label = int(glyphs.labels[2])
    wrong = (label + 1) % 4
    _, r, done = env.step(4 + wrong)
    assert (r, done) == (0.0, False)
    _, r, done = env.step(4 + label)
    assert (r, done) == (1.0, True)
    with pytest.raises(RuntimeError):
        env.step(0)


def test_env_timeout(glyphs):
    env = MaskedImageEnv(glyphs)
    env.reset(3)
    wrong = 4 + (int(glyphs.labels[3]) + 1) % 4
    for _ in range(19):
        _, r, done = env.step(wrong)
        assert (r, done) == (0.0, False)
    _, r, done = env.step(wrong)
    assert (r, done) == (0.0, True) and env.steps == 20
    env.reset(3)
    with pytest.raises(ValueError):
        env.step(8)


def test_mdp_validation():
    P = np.zeros((2, 1, 2))
    P[:, 0, 1] = 1.0
    TabularMDP(P, np.zeros_like(P), 0.9, frozenset({1}))
    bad = P.copy()
    bad[0, 0, 1] = 0.9
    with pytest.raises(ValueError):
        TabularMDP(bad, np.zeros_like(P), 0.9)
    loop = np.zeros((1, 1, 1))
    loop[0, 0, 0] = 1.0
    with pytest.raises(ValueError):
        TabularMDP(loop, np.zeros_like(loop), 1.0)  # never terminates
    with pytest.raises(ValueError):
        chain_mdp(0)
    with pytest.raises(ValueError):
        grid_mdp(1, 1)


def test_chain_and_grid_construction():
    m = chain_mdp(2, gamma=0.5, n_actions=1)
    assert m.n_states == 3 and m.terminal == {2}
    assert np.allclose(m.P.sum(axis=2), 1.0, atol=1e-12, rtol=0)
    g = grid_mdp(3, 3, slip=0.2)
    assert g.n_states == 9 and g.n_actions == 4
    assert np.allclose(g.P.sum(axis=2), 1.0, atol=1e-12, rtol=0)


def test_dp_examples():
    m = chain_mdp(2, gamma=0.5, n_actions=1)
    V = dp_policy_evaluation(m, uniform_policy(m))
    assert V.tolist() == pytest.approx([0.5, 1.0, 0.0], abs=1e-10)
    zero = chain_mdp(3, rewards=[0, 0, 0], gamma=0.9, n_actions=2)
    assert np.all(dp_policy_evaluation(zero, uniform_policy(zero)) == 0)
    myopic = chain_mdp(3, rewards=[1.0, -2.0, 0.5], gamma=0.0, n_actions=2, slip=0.3)
    pi = uniform_policy(myopic)
    expect = np.einsum("sa,sa->s", pi, myopic.expected_reward())
    assert np.allclose(dp_policy_evaluation(myopic, pi), expect, atol=1e-12)
    with pytest.raises(ValueError):
        dp_policy_evaluation(m, np.full((3, 1), 0.5))


def test_dp_matches_linear_solve():
    g = grid_mdp(3, 3, gamma=0.9, slip=0.1)
    pi = uniform_policy(g)
    assert np.max(np.abs(dp_policy_evaluation(g, pi) - exact_policy_value(g, pi))) < 1e-8


def test_value_iteration_examples():
    m = chain_mdp(2, gamma=0.5, n_actions=2)
    Q = value_iteration(m)
    assert Q[0, 0] == pytest.approx(0.5, abs=1e-10)
    assert np.all(Q[2] == 0)


@pytest.mark.parametrize("mdp", [chain_mdp(3, gamma=0.9, slip=0.2),
                                 chain_mdp(3, rewards=[-1.0, 0.3, 2.0], gamma=0.8),
                                 grid_mdp(2, 2, gamma=0.9, slip=0.1)])
def test_greedy_matches_brute_force(mdp):
    Q = value_iteration(mdp)
    v_star, optimal = brute_force_optimal(mdp)
    acts = tuple(int(a) for a in np.argmax(Q, axis=1))
    live = [s for s in range(mdp.n_states) if s not in mdp.terminal]
    assert any(all(o[s] == acts[s] for s in live) for o in optimal)
    assert np.allclose(exact_policy_value(mdp, greedy_policy(Q)), v_star, atol=1e-8)


def test_mc_matches_dp_small():
    m = chain_mdp(5, gamma=0.9, slip=0.1, n_actions=2)
    pi = uniform_policy(m)
    V = dp_policy_evaluation(m, pi)
    means, ses = mc_policy_evaluation(m, pi, 2000, Rng(0))
    live = [s for s in range(m.n_states) if s not in m.terminal]
    assert np.all(np.abs(means - V)[live] < 3 * ses[live])


def test_expert_buffer_invariants():
    m = chain_mdp(4, gamma=0.9, slip=0.2)
    Q = value_iteration(m)
    buf = make_expert_buffer(m, Q, 0.05, 200, seed=1)
    assert len(buf) >= 200
    for tid, traj in buf.trajectories().items():
        assert [t.step for t in traj] == list(range(len(traj)))
        assert traj[-1].done and not any(t.done for t in traj[:-1])
    assert all(m.supports(t.state, t.action, t.next_state) for t in buf)
    again = make_expert_buffer(m, Q, 0.05, 200, seed=1)
    assert buf.to_csv() == again.to_csv()
    with pytest.raises(ValueError):
        make_expert_buffer(m, Q, 1.5, 10, seed=0)
    with pytest.raises(ValueError):
        make_expert_buffer(m, Q, 0.1, 0, seed=0)


def test_expert_buffer_greedy_repeats():
    m = chain_mdp(4, gamma=0.9)
    buf = make_expert_buffer(m, value_iteration(m), 0.0, 20, seed=0)
    trajs = list(buf.trajectories().values())
    assert all([(t.state, t.action) for t in tr] == [(s, 0) for s in range(4)] for tr in trajs)


def test_expert_buffer_uniform_actions():
    m = chain_mdp(4, gamma=0.9)
    buf = make_expert_buffer(m, value_iteration(m), 1.0, 4000, seed=2)
    n = len(buf)
    k = sum(t.action == 0 for t in buf)
    assert abs(k - n / 2) < 3 * np.sqrt(n / 4)


def test_replay_buffer_order_and_csv(tmp_path):
    buf = ReplayBuffer()
    buf.append(Transition(0, 1, 0.5, 1, False, 0, 0))
    buf.append(Transition(1, 0, 1.0, 2, True, 0, 1))
    with pytest.raises(ValueError):
        buf.append(Transition(0, 0, 0.0, 1, False, 0, 2))  # after done
    buf.append(Transition(0, 0, 0.0, 1, False, 1, 0))
    with pytest.raises(ValueError):
        buf.append(Transition(1, 0, 0.0, 2, True, 1, 2))  # skips step 1
    lines = buf.to_csv().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert lines[1:] == ["0,0,0,1,0.5,0", "0,1,1,0,1.0,1", "1,0,0,0,0.0,0"]
    buf.save(tmp_path)
    assert (tmp_path / "buffer.csv").exists() and (tmp_path / "buffer_states.tnsr").exists()


def test_mc_return_examples():
    traj = [Transition(0, 0, 1.0, 1, False, 0, 0), Transition(1, 0, 0.0, 2, True, 0, 1)]
    assert mc_return(traj, 0, 0.5) == 1.0
    assert mc_return(traj, 1, 0.5) == 0.0
    assert mc_return(traj, 0, 0.0) == 1.0
    with pytest.raises(ValueError):
        mc_return(traj[:1], 0, 0.5)
