"""Named losses: Q-learning, Double DQN, distillation, TD(lambda), REINFORCE."""

from __future__ import annotations

import numpy as np

from ..autodiff import engine as E
from ..autodiff import ParamVector, grad
from ..envs.buffer import is_terminated, mc_return
from ..models import ValueModel, apply
from .objectives import Objective, Sample
from .optim import OptimizerState, optimizer_step
from .targets import TargetRule


def _shadow(model: ValueModel, rule: TargetRule | None) -> ParamVector | None:
    if rule is None:
        return None
    shadow = rule.target_params(model.params)
    return None if shadow is model.params else shadow


def ql_loss(model: ValueModel, s: Sample, gamma: float, rule: TargetRule | None = None) -> float:
    """(Q(s,a) - (r + gamma max_a' Q_shadow(s',a')))**2."""
    return Objective("ql", gamma).loss(model, s, _shadow(model, rule))


def ddqn_loss(model: ValueModel, s: Sample, gamma: float, rule: TargetRule | None = None) -> float:
    """Bootstrap Q_shadow(s', argmax_a' Q_online(s', a')) instead of the shadow's own max."""
    return Objective("ddqn", gamma).loss(model, s, _shadow(model, rule))


def expert_q_values(expert, state, x) -> np.ndarray:
    """Q*(state, .) from a table indexed by state id, or from a reference model applied to ``x``."""
    if isinstance(expert, ValueModel):
        with E.no_grad():
            return apply(expert.spec, {n: E.Var(b) for n, b in expert.params.blocks().items()},
                         np.asarray(x, dtype=np.float64)[None]).value[0]
    return np.asarray(expert[int(state)], dtype=np.float64)


def _inputs(tr, features):
    if features is not None:
        return features[int(tr.state)], features[int(tr.next_state)]
    return np.asarray(tr.state, dtype=np.float64), np.asarray(tr.next_state, dtype=np.float64)


def distill_samples(trajectory, expert, gamma: float, features=None) -> dict[str, list[Sample]]:
    """Regression datasets for L_MC, L_reg and L_TD* over one trajectory.

    ``expert`` is a Q table indexed by state id (``features`` maps ids to
    model inputs) or a reference :class:`ValueModel` applied to observations.
    L_MC samples exist only for terminated trajectories.
    """
    if expert is None:
        raise ValueError("distillation needs expert values")
    out = {"mc": [], "reg": [], "td_star": []}
    for t, tr in enumerate(trajectory):
        x, xn = _inputs(tr, features)
        q = expert_q_values(expert, tr.state, x)
        qn = expert_q_values(expert, tr.next_state, xn)
        td_star = tr.reward + (0.0 if tr.done else gamma * float(np.max(qn)))
        common = dict(a=tr.action, r=tr.reward, x_next=xn, done=tr.done, key=tr.state_key,
                      traj=tr.traj_id, step=tr.step)
        if is_terminated(trajectory):
            out["mc"].append(Sample(x, mc_return(trajectory, t, gamma), **common))
        out["reg"].append(Sample(x, float(q[tr.action]), **common))
        out["td_star"].append(Sample(x, td_star, **common))
    return out


def distill_losses(model: ValueModel, trajectory, t: int, expert, gamma: float,
                   features=None) -> dict[str, float]:
    """L_MC, L_reg and L_TD* of position ``t`` of a trajectory (unhalved squared errors)."""
    data = distill_samples(trajectory, expert, gamma, features)
    reg = Objective("regression")
    res = {"L_reg": reg.loss(model, data["reg"][t]), "L_TD*": reg.loss(model, data["td_star"][t])}
    res["L_MC"] = reg.loss(model, data["mc"][t]) if data["mc"] else None
    return res


def td_lambda_loss(model: ValueModel, s: Sample, target: float) -> float:
    """(V(s) - G^lambda(s))**2 for a precomputed lambda-return."""
    return Objective("regression").loss(model, Sample(s.x, target, s.a))


# ---------------------------------------------------------------------------
# REINFORCE


def _episode_arrays(episode, features=None):
    xs = np.stack([features[int(tr.state)] if features is not None
                   else np.asarray(tr.state, dtype=np.float64) for tr in episode])
    acts = np.array([tr.action for tr in episode], dtype=np.int64)
    return xs, acts


def episode_returns(episode, gamma: float) -> np.ndarray:
    g, out = 0.0, np.empty(len(episode))
    for t in range(len(episode) - 1, -1, -1):
        g = episode[t].reward + gamma * g
        out[t] = g
    return out


def reinforce_program(spec):
    """``(pvars, (xs, actions, returns)) -> sum_t G_t log pi(a_t | x_t)`` (to be maximized)."""
    def fn(p, inputs):
        xs, acts, rets = inputs
        logp = E.neg(E.cross_entropy(apply(spec, p, xs), acts))
        return E.sum(logp * rets)
    return fn


def reinforce_step(model: ValueModel, episode, gamma: float, opt: OptimizerState, features=None):
    """One ascent step along sum_t G_t grad log pi(A_t | S_t), no baseline.

    Returns ``(model, opt)``.
    """
    if len(episode) == 0:
        raise ValueError("REINFORCE needs a nonempty episode")
    if not is_terminated(episode):
        raise ValueError("REINFORCE needs a terminated episode")
    xs, acts = _episode_arrays(episode, features)
    rets = episode_returns(episode, gamma)
    g = grad(reinforce_program(model.spec), model.params, (xs, acts, rets)).grad
    params, opt = optimizer_step(opt, model.params, -g)
    return model.with_params(params), opt
