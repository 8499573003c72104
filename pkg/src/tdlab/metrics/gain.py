"""Pointwise loss difference around an update sample, and TD-error sign variance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import ParamVector, grad
from ..learners.objectives import Objective, Sample
from ..learners.optim import OptimizerState, optimizer_step
from ..models import ValueModel

DEFAULT_OFFSETS = tuple(range(-30, 31))


@dataclass(frozen=True)
class GainCurve:
    offsets: tuple[int, ...]
    mean_gain: tuple  # float or None per offset
    counts: tuple[int, ...]

    def at(self, k: int):
        return self.mean_gain[self.offsets.index(k)]


def trajectory_index(samples) -> dict[tuple[int, int], int]:
    """(trajectory id, step) -> position in ``samples``."""
    return {(s.traj, s.step): i for i, s in enumerate(samples)}


def update_gains(model: ValueModel, samples, t: int, objective: Objective, opt: OptimizerState,
                 offsets=DEFAULT_OFFSETS, eval_objective: Objective | None = None,
                 target_params: ParamVector | None = None, freeze_eval_target: bool = False,
                 index=None) -> list:
    """J(theta', s_{t+k}) - J(theta, s_{t+k}) per offset after one step on sample ``t``.

    Offsets leaving the trajectory give ``None``.  ``eval_objective`` is the
    loss being measured (the update objective by default).  With
    ``freeze_eval_target`` the measured loss bootstraps from the pre-update
    parameters, which makes the offset-0 gain equal -lr * rho(t, t) to first
    order under SGD.  Inputs are never modified.
    """
    eval_objective = eval_objective or objective
    index = index if index is not None else trajectory_index(samples)
    s = samples[t]
    g = grad(objective.program(model.spec, target_params), model.params, s).grad
    new_params, _ = optimizer_step(opt, model.params, g)
    after = model.with_params(new_params)
    eval_tp = model.params if freeze_eval_target else target_params
    out = []
    for k in offsets:
        j = index.get((s.traj, s.step + k))
        if j is None:
            out.append(None)
            continue
        n = samples[j]
        out.append(eval_objective.loss(after, n, eval_tp) - eval_objective.loss(model, n, eval_tp))
    return out


def td_gain_curve(model: ValueModel, samples, update_indices, objective: Objective, opt: OptimizerState,
                  offsets=DEFAULT_OFFSETS, eval_objective: Objective | None = None,
                  target_params: ParamVector | None = None, freeze_eval_target: bool = False) -> GainCurve:
    """Mean of :func:`update_gains` over several update samples; missing offsets are skipped."""
    if isinstance(update_indices, (int, np.integer)):
        update_indices = [int(update_indices)]
    index = trajectory_index(samples)
    rows = [update_gains(model, samples, t, objective, opt, offsets, eval_objective, target_params,
                         freeze_eval_target, index) for t in update_indices]
    means, counts = [], []
    for c in range(len(offsets)):
        vals = [r[c] for r in rows if r[c] is not None]
        counts.append(len(vals))
        means.append(float(np.mean(vals)) if vals else None)
    return GainCurve(tuple(offsets), tuple(means), tuple(counts))


def stiffness_curve(model: ValueModel, samples, update_indices, objective: Objective,
                    offsets=DEFAULT_OFFSETS, target_params: ParamVector | None = None) -> GainCurve:
    """Mean cosine between the update direction at S_t and at S_{t+k}, per offset ``k``.

    Offsets outside the trajectory and vanishing gradients are skipped;
    offset 0 is trivially 1 and reported as such when present.
    """
    from .interference import cosine, loss_grad
    index = trajectory_index(samples)
    cache: dict[int, ParamVector] = {}

    def g(i):
        if i not in cache:
            cache[i] = loss_grad(model, objective, samples[i], target_params)
        return cache[i]

    vals: list[list[float]] = [[] for _ in offsets]
    for t in update_indices:
        s = samples[int(t)]
        for c, k in enumerate(offsets):
            j = index.get((s.traj, s.step + k))
            if j is None:
                continue
            v = cosine(g(int(t)), g(j))
            if v is not None:
                vals[c].append(v)
    return GainCurve(tuple(offsets), tuple(float(np.mean(v)) if v else None for v in vals),
                     tuple(len(v) for v in vals))


def mean_off_center(curve: GainCurve) -> float | None:
    """Count-weighted mean of a curve over its nonzero offsets."""
    num = den = 0.0
    for k, m, n in zip(curve.offsets, curve.mean_gain, curve.counts):
        if k != 0 and m is not None:
            num += m * n
            den += n
    return num / den if den else None


def _sign(d: float) -> float:
    return 0.0 if d == 0 else (1.0 if d > 0 else -1.0)


def sign_variance_of(sequences, window: int = 5) -> float | None:
    """Mean over all sliding windows (within each sequence) of the population variance of sign(delta)."""
    if window < 1:
        raise ValueError("window must be >= 1")
    vals = []
    for seq in sequences:
        signs = np.array([_sign(d) for d in seq])
        for i in range(len(signs) - window + 1):
            vals.append(float(np.var(signs[i:i + window])))
    return float(np.mean(vals)) if vals else None


def sign_variance(model: ValueModel, samples, objective: Objective, window: int = 5,
                  target_params: ParamVector | None = None) -> float | None:
    """TD-error sign variance along the buffer's trajectories; ``None`` when no full window exists."""
    trajs: dict[int, list[tuple[int, float]]] = {}
    for s in samples:
        trajs.setdefault(s.traj, []).append((s.step, objective.delta(model, s, target_params)))
    seqs = [[d for _, d in sorted(items)] for _, items in sorted(trajs.items())]
    return sign_variance_of(seqs, window)
