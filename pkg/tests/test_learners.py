import numpy as np
import pytest

from tdlab.autodiff import LayoutMismatch, ParamVector, finite_diff_grad, grad
from tdlab.envs import (Transition, chain_mdp, dp_policy_evaluation, glyph_generate, make_expert_buffer,
                        mc_return, uniform_policy, value_iteration)
from tdlab.learners import (Objective, Sample, Schedule, TargetRule, accuracy, ddqn_loss, distill_losses,
                            lambda_return_direct, lambda_returns, lambda_samples, lambda_weights,
                            make_optimizer, optimizer_step, ql_loss, reinforce_program, reinforce_step,
                            tabular_td0, td0_target, td_error, train)
from tdlab.models import ModelSpec, ValueModel, init
from tdlab.rng import Rng


def bias_model(bias, n_in=1, head="value"):
    bias = np.asarray(bias, dtype=float)
    spec = ModelSpec("linear", (n_in,), n_o=len(bias), head=head)
    return ValueModel(spec, ParamVector.from_blocks({"out.w": np.zeros((n_in, len(bias))), "out.b": bias}))


def random_traj(rng, n, tid=0):
    return [Transition(int(rng.integer(4)), 0, float(rng.normal()), int(rng.integer(4)), t == n - 1, tid, t)
            for t in range(n)]


# --- targets ---------------------------------------------------------------

def test_td0_target_examples():
    tr = Transition(0, 0, 0.5, 1, False, 0, 0)
    V = np.array([1.0, 1.0])
    tgt = td0_target(V, tr, 0.9)
    assert tgt == pytest.approx(1.4, abs=1e-15)
    assert td_error(V[0], tgt) == pytest.approx(-0.4, abs=1e-15)
    assert td0_target(V, Transition(0, 0, 0.5, 1, True, 0, 0), 0.9) == 0.5
    assert td0_target(V, tr, 0.0) == 0.5
    assert td0_target(lambda s: 2.0, tr, 0.5) == 1.5


def test_lambda_returns_examples():
    traj = [Transition(0, 0, 1.0, 1, False, 0, 0), Transition(1, 0, 0.0, 2, True, 0, 1)]
    nv = [2.0, 123.0]  # terminal bootstrap ignored
    assert lambda_returns(traj, nv, 0.5, 0.0).targets[0] == 2.0
    assert lambda_returns(traj, nv, 0.5, 1.0).targets[0] == 1.0
    assert lambda_returns(traj, nv, 0.5, 0.5).targets[0] == 1.5
    with pytest.raises(ValueError):
        lambda_returns(traj[:1], nv, 0.5, 0.5)
    with pytest.raises(ValueError):
        lambda_returns(traj, nv, 0.5, 1.5)


@pytest.mark.parametrize("seed", range(5))
def test_lambda_endpoints_and_direct_sum(seed):
    rng = Rng(seed)
    traj = random_traj(rng, 7)
    V = rng.normal(4)
    nv = [V[t.next_state] for t in traj]
    g0 = lambda_returns(traj, nv, 0.9, 0.0).targets
    g1 = lambda_returns(traj, nv, 0.9, 1.0).targets
    assert g0.tolist() == [td0_target(V, t, 0.9) for t in traj]
    assert g1.tolist() == [mc_return(traj, t, 0.9) for t in range(7)]
    for lam in (0.0, 0.3, 0.8, 1.0):
        g = lambda_returns(traj, nv, 0.9, lam).targets
        direct = [lambda_return_direct(traj, t, nv, 0.9, lam) for t in range(7)]
        assert np.max(np.abs(g - direct)) < 1e-12


@pytest.mark.parametrize("n", [1, 2, 5, 40])
@pytest.mark.parametrize("lam", [0.0, 0.25, 0.9, 1.0])
def test_lambda_weights_sum_to_one(n, lam):
    w = lambda_weights(n, lam)
    assert len(w) == n and abs(w.sum() - 1.0) < 1e-12


def test_frozen_rule_bit_equal_between_refreshes():
    p0 = ParamVector.from_blocks({"w": np.zeros(3)})
    rule = TargetRule("frozen", k=3)
    rule.reset(p0)
    seen = []
    for i in range(1, 8):
        p = p0.with_data(np.full(3, float(i)))
        refreshed = rule.update(p)
        seen.append(rule.target_params(p).data.copy())
        assert refreshed == (i % 3 == 0)
    assert [s[0] for s in seen] == [0, 0, 3, 3, 3, 6, 6]


def test_ema_rule_geometric():
    theta = ParamVector.from_blocks({"w": np.array([1.0, -2.0])})
    rule = TargetRule("ema", tau=0.1)
    rule.reset(theta.with_data(np.zeros(2)))
    for _ in range(25):
        rule.update(theta)
    gap = rule.target_params(theta).data - theta.data
    assert np.allclose(gap, -theta.data * 0.9 ** 25, rtol=1e-12, atol=0)
    with pytest.raises(ValueError):
        TargetRule("ema", tau=0.0)
    with pytest.raises(ValueError):
        TargetRule("polyak")


# --- losses ----------------------------------------------------------------

def test_ql_example():
    m = bias_model([1.0, 1.0])
    s = Sample(np.zeros(1), a=0, r=0.0, x_next=np.zeros(1))
    assert ql_loss(m, s, 0.9) == pytest.approx(0.01, abs=1e-15)
    term = Sample(np.zeros(1), a=0, r=1.0, x_next=np.zeros(1), done=True)
    assert ql_loss(m, term, 0.9) == 0.0


def test_ddqn_decoupled_max():
    online = bias_model([1.0, 0.0])  # argmax at action 0
    rule = TargetRule("frozen", k=10**6)
    rule.reset(bias_model([0.2, 5.0]).params)
    s = Sample(np.zeros(1), a=0, r=0.0, x_next=np.zeros(1))
    assert ddqn_loss(online, s, 1.0, rule) == pytest.approx((1.0 - 0.2) ** 2, abs=1e-15)
    assert ql_loss(online, s, 1.0, rule) == pytest.approx((1.0 - 5.0) ** 2, abs=1e-15)


@pytest.mark.parametrize("seed", range(4))
def test_ddqn_equals_ql_with_self_shadow(seed):
    m = init(ModelSpec("mlp", (3,), n_h=5, n_o=4), seed)
    rng = Rng(seed)
    s = Sample(rng.normal(3), a=int(rng.integer(4)), r=float(rng.normal()), x_next=rng.normal(3))
    assert abs(ddqn_loss(m, s, 0.9) - ql_loss(m, s, 0.9)) < 1e-12


def test_objective_half_and_delta():
    m = bias_model([3.0])
    s = Sample(np.zeros(1), y=1.0)
    assert Objective("regression").loss(m, s) == 4.0
    assert Objective("regression", half=True).loss(m, s) == 2.0
    assert Objective("regression").delta(m, s) == 2.0
    with pytest.raises(ValueError):
        Objective("huber")


def distill_setup(slip):
    mdp = chain_mdp(3, rewards=[-0.5, -0.2, -1.0], gamma=0.9, slip=slip)
    Q = value_iteration(mdp)
    buf = make_expert_buffer(mdp, Q, 0.2, 30, seed=0)
    spec = ModelSpec("linear", (mdp.n_states,), n_o=2)
    return mdp, Q, buf, spec


def test_distill_exact_expert_zero_reg():
    mdp, Q, buf, spec = distill_setup(0.0)
    m = ValueModel(spec, ParamVector.from_blocks({"out.w": Q, "out.b": np.zeros(2)}))
    traj = next(iter(buf.trajectories().values()))
    for t in range(len(traj)):
        assert distill_losses(m, traj, t, Q, 0.9, mdp.features)["L_reg"] < 1e-18


def test_distill_td_star_matches_reg_on_deterministic_mdp():
    mdp, Q, buf, spec = distill_setup(0.0)
    m = init(spec, 3)
    for traj in buf.trajectories().values():
        for t in range(len(traj)):
            L = distill_losses(m, traj, t, Q, 0.9, mdp.features)
            assert abs(L["L_TD*"] - L["L_reg"]) < 1e-9


def test_distill_mc_example():
    m = bias_model([0.0, 0.0], n_in=2)
    traj = [Transition(0, 1, 1.0, 1, True, 0, 0)]
    L = distill_losses(m, traj, 0, np.zeros((2, 2)), 0.9, np.eye(2))
    assert L["L_MC"] == 1.0
    with pytest.raises(ValueError):
        distill_losses(m, traj, 0, None, 0.9, np.eye(2))


# --- REINFORCE ---------------------------------------------------------------

def test_reinforce_zero_returns_unchanged():
    m = init(ModelSpec("mlp", (2,), n_h=3, n_o=2, head="classifier"), 0)
    ep = [Transition(0, 1, 0.0, 1, False, 0, 0), Transition(1, 0, 0.0, 0, True, 0, 1)]
    new, _ = reinforce_step(m, ep, 0.9, make_optimizer("sgd", 0.5), np.eye(2))
    assert new.params.equals(m.params)
    with pytest.raises(ValueError):
        reinforce_step(m, [], 0.9, make_optimizer("sgd", 0.5))


def test_reinforce_hand_gradient():
    # pi = softmax(b); single step, action 1, return 2: d/db [2 log pi_1] = 2 (e_1 - pi)
    m = bias_model([0.3, -0.4], head="classifier")
    ep = [Transition(0, 1, 2.0, 0, True, 0, 0)]
    new, _ = reinforce_step(m, ep, 0.9, make_optimizer("sgd", 0.1), np.zeros((1, 1)))
    pi = np.exp([0.3, -0.4]) / np.exp([0.3, -0.4]).sum()
    expect = np.array([0.3, -0.4]) + 0.1 * 2.0 * (np.array([0.0, 1.0]) - pi)
    assert np.allclose(new.params.block("out.b"), expect, rtol=0, atol=1e-15)


def test_reinforce_gradient_fd():
    m = init(ModelSpec("mlp", (3,), n_h=4, n_o=3, head="classifier", activation="tanh"), 2)
    rng = Rng(5)
    inputs = (rng.normal((4, 3)), np.array([0, 2, 1, 2]), rng.normal(4))
    prog = reinforce_program(m.spec)
    a = grad(prog, m.params, inputs).grad.data
    b = finite_diff_grad(prog, m.params, inputs).data
    assert np.max(np.abs(a - b)) < 1e-5 * max(1.0, np.max(np.abs(b)))


# --- optimizers -------------------------------------------------------------

def pv(x):
    return ParamVector.from_blocks({"w": np.atleast_1d(np.asarray(x, dtype=float))})


def test_sgd_example():
    new, st = optimizer_step(make_optimizer("sgd", 0.1), pv(1.0), pv(4.0))
    assert new.data[0] == pytest.approx(0.6, abs=1e-15) and st.step == 1


def test_momentum_first_and_second_step():
    opt = make_optimizer("momentum", 0.1)
    p1, opt = optimizer_step(opt, pv(1.0), pv(4.0))
    assert p1.data[0] == pytest.approx(1.0 - 0.1 * 0.1 * 4.0, abs=1e-15)
    p2, _ = optimizer_step(opt, p1, pv(2.0))
    mu = 0.1 * 2.0 + 0.9 * 0.4
    assert p2.data[0] == pytest.approx(p1.data[0] - 0.1 * mu, abs=1e-15)


@pytest.mark.parametrize("g", [3.0, -0.02, 1e4])
def test_adam_first_step_is_sign(g):
    new, _ = optimizer_step(make_optimizer("adam", 0.01), pv(1.0), pv(g))
    assert abs(new.data[0] - (1.0 - 0.01 * np.sign(g))) <= 0.01 * 1e-8 / abs(g) + 1e-15


def test_rmsprop_first_step():
    new, _ = optimizer_step(make_optimizer("rmsprop", 0.01), pv(1.0), pv(2.0))
    assert new.data[0] == pytest.approx(1.0 - 0.01 * 2.0 / (np.sqrt(0.01 * 4.0) + 1e-8), abs=1e-15)


@pytest.mark.parametrize("kind", ["sgd", "momentum", "rmsprop", "adam"])
def test_zero_lr_and_layout(kind):
    p = ParamVector.from_blocks({"a": np.array([1.0, 2.0]), "b": np.array([[3.0]])})
    g = p.with_data(np.array([0.5, -1.0, 2.0]))
    opt = make_optimizer(kind, 0.0)
    for _ in range(3):
        new, opt = optimizer_step(opt, p, g)
        assert new.equals(p)
    with pytest.raises(LayoutMismatch):
        optimizer_step(make_optimizer(kind, 0.1), p, pv([1.0, 2.0, 3.0]))


def test_optimizer_validation():
    with pytest.raises(ValueError):
        make_optimizer("momentum", 0.1, beta=1.0)
    with pytest.raises(ValueError):
        make_optimizer("adam", 0.1, beta=0.9)
    with pytest.raises(ValueError):
        make_optimizer("lion", 0.1)


# --- training loops -----------------------------------------------------------

def regression_data(n=20, seed=0):
    rng = Rng(seed)
    return [Sample(rng.normal(2), y=float(rng.normal())) for _ in range(n)]


def test_train_deterministic_and_zero_lr():
    spec = ModelSpec("mlp", (2,), n_h=6)
    data = regression_data()
    a = train(init(spec, 0), Objective("regression"), data, make_optimizer("adam", 1e-2), schedule=Schedule(30, 8, 10))
    b = train(init(spec, 0), Objective("regression"), data, make_optimizer("adam", 1e-2), schedule=Schedule(30, 8, 10))
    assert a.model.params.equals(b.model.params)
    assert [r.value for r in a.records] == [r.value for r in b.records]
    assert [s for s, _ in a.checkpoints] == [0, 10, 20, 30]
    assert a.records[-1].value < a.records[0].value
    z = train(init(spec, 0), Objective("regression"), data, make_optimizer("sgd", 0.0), schedule=Schedule(5, 8))
    assert z.model.params.equals(init(spec, 0).params)


def test_lambda_samples_reject_unterminated():
    mdp = chain_mdp(3, gamma=0.9)
    buf = make_expert_buffer(mdp, value_iteration(mdp), 0.0, 6, seed=0, max_episode_len=2)
    m = init(ModelSpec("linear", (mdp.n_states,)), 0)
    with pytest.raises(ValueError):
        lambda_samples(buf, m, m.params, 0.9, 0.5, mdp.features)


def test_tabular_td0_matches_dp():
    mdp = chain_mdp(5, gamma=0.99, n_actions=1, slip=0.1)
    pi = uniform_policy(mdp)
    V = tabular_td0(mdp, pi, 0.1, 20_000, seed=0)
    assert np.max(np.abs(V - dp_policy_evaluation(mdp, pi))) < 2e-2
    assert np.array_equal(V, tabular_td0(mdp, pi, 0.1, 20_000, seed=0))
    assert np.all(tabular_td0(mdp, pi, 0.0, 10, seed=0) == 0)


def test_classification_overfits_glyphs():
    ds = glyph_generate(n_classes=10, n_per_class=20, seed=0, W=16, H=16)
    data = [Sample(ds.images[i].ravel(), y=int(ds.labels[i])) for i in range(len(ds))]
    spec = ModelSpec("mlp", (256,), n_h=64, n_o=10, head="classifier")
    res = train(init(spec, 0), Objective("classification"), data, make_optimizer("adam", 3e-3),
                schedule=Schedule(400, 32))
    assert accuracy(res.model, data) == 1.0
