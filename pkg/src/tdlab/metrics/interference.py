"""Interference, function interference and stiffness between sample pairs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..autodiff import ParamVector, dot, grad
from ..learners.objectives import Objective, Sample
from ..models import ValueModel
from ..rng import Rng, derive_seed


@dataclass(frozen=True)
class InterferenceRecord:
    checkpoint: int
    pair_a: int
    pair_b: int
    rho: float
    rho_bar: float  # argmax-rule output gradients
    stiffness: float | None
    delta_a: float | None
    delta_b: float | None
    rho_bar_pred: float | None = None  # gradients of the output the loss acts on


def loss_grad(model: ValueModel, objective: Objective, s: Sample,
              target_params: ParamVector | None = None) -> ParamVector:
    """Update direction of ``objective`` at ``s`` (semi-gradient for bootstrapped losses)."""
    return grad(objective.program(model.spec, target_params), model.params, s).grad


def output_grad(model: ValueModel, s) -> ParamVector:
    """Gradient of the scalarized output (argmax rule) at a sample or raw input."""
    x = s.x if isinstance(s, Sample) else s
    return grad(model.scalar_program(), model.params, np.asarray(x, dtype=np.float64)).grad


def prediction_grad(model: ValueModel, objective: Objective, s: Sample) -> ParamVector:
    return grad(objective.prediction_program(model.spec), model.params, s).grad


def rho(model: ValueModel, objective: Objective, a: Sample, b: Sample,
        target_params: ParamVector | None = None) -> float:
    """Interference: inner product of the two loss gradients."""
    return dot(loss_grad(model, objective, a, target_params), loss_grad(model, objective, b, target_params))


def rho_bar(model: ValueModel, a, b) -> float:
    """Function interference: inner product of the scalarized output gradients."""
    return dot(output_grad(model, a), output_grad(model, b))


def cosine(ga: ParamVector, gb: ParamVector) -> float | None:
    na, nb = ga.norm(), gb.norm()
    if na == 0.0 or nb == 0.0:
        return None
    return float(min(1.0, max(-1.0, dot(ga, gb) / (na * nb))))


def stiffness(model: ValueModel, objective: Objective, a: Sample, b: Sample,
              target_params: ParamVector | None = None) -> float | None:
    """Cosine similarity of the loss gradients; ``None`` when either gradient vanishes."""
    return cosine(loss_grad(model, objective, a, target_params), loss_grad(model, objective, b, target_params))


class _GradCache:
    def __init__(self, model, objective, target_params):
        self.model, self.objective, self.tp = model, objective, target_params
        self.cache = {}

    def get(self, i, s):
        if i not in self.cache:
            m, o = self.model, self.objective
            g = loss_grad(m, o, s, self.tp)
            gf = output_grad(m, s)
            if o.squared:
                gp = prediction_grad(m, o, s)
                d = o.delta(m, s, self.tp) * o.scale
            else:
                gp, d = gf, None
            self.cache[i] = (g, gf, gp, d)
        return self.cache[i]


def pair_record(model, objective, a: Sample, b: Sample, ia: int, ib: int, checkpoint: int = 0,
                target_params=None, cache: _GradCache | None = None) -> InterferenceRecord:
    """Measure one pair.  ``delta_*`` is dJ/df (equal to the error under the halved loss)."""
    cache = cache or _GradCache(model, objective, target_params)
    ga, fa, pa, da = cache.get(ia, a)
    gb, fb, pb, db = cache.get(ib, b)
    return InterferenceRecord(checkpoint, ia, ib, dot(ga, gb), dot(fa, fb), cosine(ga, gb), da, db, dot(pa, pb))


def pair_sample_metrics(model: ValueModel, samples, objective: Objective, n_pairs: int, seed: int,
                        checkpoint: int = 0, target_params: ParamVector | None = None) -> list[InterferenceRecord]:
    """All cross pairs of two independent minibatches of sqrt(n_pairs) samples each."""
    m = math.isqrt(n_pairs) if n_pairs >= 1 else 0
    if n_pairs < 1 or m * m != n_pairs:
        raise ValueError("n_pairs must be a positive perfect square")
    if len(samples) < m:
        raise ValueError(f"need at least {m} samples for {n_pairs} pairs")
    rng = Rng(derive_seed(seed, "pairs", checkpoint))
    ia = rng.sample_without_replacement(len(samples), m)
    ib = rng.sample_without_replacement(len(samples), m)
    cache = _GradCache(model, objective, target_params)
    return [pair_record(model, objective, samples[i], samples[j], int(i), int(j), checkpoint,
                        target_params, cache) for i in ia for j in ib]
