"""Training loops: offline minibatch training, online Double DQN, REINFORCE and tabular TD(0)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..autodiff import engine as E
from ..autodiff import ParamVector, grad
from ..envs.buffer import ReplayBuffer, Transition, epsilon_greedy, is_terminated
from ..envs.images import MaskedImageEnv
from ..envs.tabular import TabularMDP, _check_policy
from ..models import ValueModel, apply, forward
from ..records import MetricRecord
from ..rng import Rng, derive_seed
from .losses import reinforce_step
from .objectives import Objective, Sample, sample_from_transition
from .optim import OptimizerState, optimizer_step
from .targets import TargetRule, lambda_returns


@dataclass(frozen=True)
class Schedule:
    steps: int
    batch_size: int = 32
    checkpoint_every: int = 0  # 0: only the final checkpoint

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.checkpoint_every < 0:
            raise ValueError("schedule needs steps >= 0, batch_size >= 1, checkpoint_every >= 0")

    def checkpoints(self) -> list[int]:
        every = self.checkpoint_every or max(self.steps, 1)
        marks = list(range(0, self.steps + 1, every))
        if marks[-1] != self.steps:
            marks.append(self.steps)
        return marks


@dataclass
class TrainResult:
    model: ValueModel
    opt: OptimizerState
    records: list[MetricRecord] = field(default_factory=list)
    checkpoints: list[tuple[int, ParamVector]] = field(default_factory=list)
    buffer: ReplayBuffer | None = None


def lambda_samples(buffer: ReplayBuffer, model: ValueModel, params: ParamVector, gamma: float,
                   lam: float, features=None, generation: int = 0) -> list[Sample]:
    """Regression samples whose targets are lambda-returns under ``params``.

    Bootstrap values come from ``params`` (the target rule's shadow).  Value
    heads bootstrap V(s'); action-value heads bootstrap Q(s', a') with the
    action actually taken next in the trajectory.
    """
    shadow = model.with_params(params)
    out = []
    for tid, traj in sorted(buffer.trajectories().items()):
        if not is_terminated(traj):
            raise ValueError(f"trajectory {tid} is not terminated; lambda-returns need whole episodes")
        samples = [sample_from_transition(tr, features) for tr in traj]
        q = forward(shadow, np.stack([s.x_next for s in samples]))
        if model.spec.n_o == 1:
            nv = q[:, 0]
        else:
            nxt = [traj[t + 1].action if t + 1 < len(traj) else 0 for t in range(len(traj))]
            nv = q[np.arange(len(traj)), nxt]
        ts = lambda_returns(traj, nv, gamma, lam, generation)
        out += [Sample(s.x, float(g), s.a, s.r, s.x_next, s.done, s.key, s.traj, s.step)
                for s, g in zip(samples, ts.targets)]
    return out


def train(model: ValueModel, objective: Objective, data, opt: OptimizerState,
          rule: TargetRule | None = None, schedule: Schedule = Schedule(1000), seed: int = 0,
          run_id: str = "run", refresh: Callable[[ParamVector, int], list] | None = None,
          on_checkpoint: Callable[[int, ValueModel, TargetRule, OptimizerState], list] | None = None) -> TrainResult:
    """Offline minibatch training on a fixed list of samples.

    ``refresh(shadow_params, generation)`` rebuilds the dataset whenever the
    target rule refreshes its shadow (used for lambda-return targets);
    ``on_checkpoint(step, model, rule, opt)`` returns extra metric records.
    Minibatches are drawn uniformly without replacement.
    """
    rule = rule if rule is not None else TargetRule("self")
    rule.reset(model.params)
    if refresh is not None:
        data = refresh(rule.target_params(model.params), rule.generation)
    if not data:
        raise ValueError("empty training set")
    rng = Rng(derive_seed(seed, "minibatch"))
    marks = set(schedule.checkpoints())
    res = TrainResult(model, opt)

    def checkpoint(step):
        shadow = None if rule.kind == "self" else rule.target_params(model.params)
        with E.no_grad():
            pv = {n: E.Var(b) for n, b in model.params.blocks().items()}
            value = objective.batch_loss_var(model.spec, pv, data, shadow).value
        res.records.append(MetricRecord(run_id, step, "train_loss", float(value)))
        res.checkpoints.append((step, model.params))
        if on_checkpoint is not None:
            res.records.extend(on_checkpoint(step, model, rule, opt))

    if 0 in marks:
        checkpoint(0)
    for step in range(1, schedule.steps + 1):
        idx = rng.sample_without_replacement(len(data), min(schedule.batch_size, len(data)))
        batch = [data[i] for i in idx]
        shadow = None if rule.kind == "self" else rule.target_params(model.params)
        g = grad(objective.batch_program(model.spec, shadow), model.params, batch).grad
        params, opt = optimizer_step(opt, model.params, g)
        model = model.with_params(params)
        if rule.update(params) and refresh is not None and rule.kind == "frozen":
            data = refresh(rule.target_params(params), rule.generation)
        if step in marks:
            checkpoint(step)
    res.model, res.opt = model, opt
    return res


def accuracy(model: ValueModel, samples) -> float:
    if not samples:
        raise ValueError("empty split")
    logits = forward(model, np.stack([s.x for s in samples]))
    return float(np.mean(np.argmax(logits, axis=1) == np.array([s.y for s in samples])))


# ---------------------------------------------------------------------------
# tabular TD(0)


def tabular_td0(mdp: TabularMDP, pi, alpha: float, episodes: int, seed: int,
                max_steps: int = 10_000) -> np.ndarray:
    """V(S_t) <- V(S_t) - alpha (V(S_t) - (R_t + gamma V(S_{t+1}))) along sampled episodes."""
    pi = _check_policy(mdp, pi)
    rng = Rng(derive_seed(seed, "tabular-td0"))
    V = np.zeros(mdp.n_states)
    for _ in range(episodes):
        s = mdp.start
        for _ in range(max_steps):
            a = rng.choice(pi[s])
            s2, r, done = mdp.step(s, a, rng)
            target = r + (0.0 if done else mdp.gamma * V[s2])
            V[s] -= alpha * (V[s] - target)
            s = s2
            if done:
                break
    return V


# ---------------------------------------------------------------------------
# online control on the masked-image environment


def _q_values(model: ValueModel, obs) -> np.ndarray:
    with E.no_grad():
        return apply(model.spec, {n: E.Var(b) for n, b in model.params.blocks().items()},
                     np.asarray(obs)[None]).value[0]


def greedy_rollouts(env: MaskedImageEnv, model: ValueModel, indices) -> list[Transition]:
    """One greedy episode per image seed; trajectory ids follow ``indices`` order."""
    out = []
    for tid, i in enumerate(indices):
        obs, done, t = env.reset(int(i)), False, 0
        while not done:
            a = int(np.argmax(_q_values(model, obs)))
            nobs, r, done = env.step(a)
            out.append(Transition(obs, a, r, nobs, done, tid, t, key=int(i)))
            obs, t = nobs, t + 1
    return out


def evaluate_policy(env: MaskedImageEnv, model: ValueModel, indices) -> float:
    """Mean undiscounted return of the greedy policy over the given image seeds."""
    return sum(tr.reward for tr in greedy_rollouts(env, model, indices)) / max(len(indices), 1)


def train_online_q(env: MaskedImageEnv, model: ValueModel, objective: Objective, opt: OptimizerState,
                   rule: TargetRule, train_indices, steps: int, seed: int, eps: float = 0.1,
                   batch_size: int = 32, capacity: int = 10_000, warmup: int = 100,
                   checkpoint_every: int = 0, run_id: str = "run", on_checkpoint=None) -> TrainResult:
    """Epsilon-greedy Q-learning / Double DQN from scratch with a replay buffer."""
    if not objective.is_bootstrapped or model.spec.n_o != env.n_actions:
        raise ValueError("online control needs a bootstrapped objective and one output per action")
    rng = Rng(derive_seed(seed, "online"))
    buf = ReplayBuffer(capacity)
    rule.reset(model.params)
    sched = Schedule(steps, batch_size, checkpoint_every)
    marks = set(sched.checkpoints())
    res = TrainResult(model, opt)
    episode, ret, tid, t = 0, 0.0, 0, 0
    obs = env.reset(int(train_indices[rng.integer(len(train_indices))]))
    for step in range(1, steps + 1):
        a = epsilon_greedy(_q_values(model, obs), eps, rng)
        nobs, r, done = env.step(a)
        buf.append(Transition(obs, a, r, nobs, done, tid, t, key=env.index))
        ret += r
        t += 1
        obs = nobs
        if done:
            res.records.append(MetricRecord(run_id, step, "episode_return", ret))
            tid, t, ret = tid + 1, 0, 0.0
            obs = env.reset(int(train_indices[rng.integer(len(train_indices))]))
        if len(buf) >= warmup:
            batch = [sample_from_transition(buf[i]) for i in buf.sample_indices(rng, batch_size)]
            shadow = None if rule.kind == "self" else rule.target_params(model.params)
            g = grad(objective.batch_program(model.spec, shadow), model.params, batch).grad
            params, opt = optimizer_step(opt, model.params, g)
            model = model.with_params(params)
            rule.update(params)
        if step in marks:
            res.checkpoints.append((step, model.params))
            if on_checkpoint is not None:
                res.records.extend(on_checkpoint(step, model, rule, opt, buf))
    res.model, res.opt = model, opt
    res.buffer = buf
    return res


def train_reinforce(env: MaskedImageEnv, model: ValueModel, opt: OptimizerState, train_indices,
                    episodes: int, gamma: float, seed: int, run_id: str = "run") -> TrainResult:
    """Sample episodes from the softmax policy and apply one REINFORCE step per episode."""
    rng = Rng(derive_seed(seed, "reinforce"))
    res = TrainResult(model, opt)
    for ep in range(episodes):
        obs = env.reset(int(train_indices[rng.integer(len(train_indices))]))
        traj, done, t = [], False, 0
        while not done:
            z = _q_values(model, obs)
            p = np.exp(z - z.max())
            a = rng.choice(p / p.sum())
            nobs, r, done = env.step(a)
            traj.append(Transition(obs, a, r, nobs, done, ep, t, key=env.index))
            obs, t = nobs, t + 1
        model, opt = reinforce_step(model, traj, gamma, opt)
        res.records.append(MetricRecord(run_id, ep, "episode_return", sum(tr.reward for tr in traj)))
    res.model, res.opt = model, opt
    return res
