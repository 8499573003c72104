"""Training objectives as autodiff programs.

An :class:`Objective` turns a model spec and a :class:`Sample` into a scalar
loss.  Squared losses are unhalved by default, ``(f - target)**2``; with
``half=True`` they become ``(f - target)**2 / 2`` so that the loss derivative
with respect to the prediction is exactly the error ``delta``.

Bootstrapped objectives (``td0``, ``ql``, ``ddqn``) build their target from
``target_params`` when given (frozen/EMA shadow) and from the online
parameters otherwise.  Training uses the semi-gradient: the target is held
constant for differentiation.  :func:`gradient_field` returns that
semi-gradient as a differentiable expression in which the target still
depends on the online parameters, which is what second-order dynamics need.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import engine as E
from ..autodiff import ParamVector
from ..autodiff.engine import Var
from ..models import ModelSpec, ValueModel, apply

KINDS = ("regression", "classification", "td0", "ql", "ddqn")
BOOTSTRAP = ("td0", "ql", "ddqn")


@dataclass(frozen=True, eq=False)
class Sample:
    x: np.ndarray
    y: float | int | None = None  # regression target or class label
    a: int | None = None  # action whose value the loss acts on
    r: float = 0.0
    x_next: np.ndarray | None = None
    done: bool = False
    key: int | None = None  # state id / image index
    traj: int | None = None
    step: int | None = None


def sample_from_transition(tr, features=None, y=None) -> Sample:
    """Wrap a buffer transition; tabular states are mapped through ``features``."""
    if features is not None:
        x, xn = features[int(tr.state)], features[int(tr.next_state)]
    else:
        x, xn = np.asarray(tr.state, dtype=np.float64), np.asarray(tr.next_state, dtype=np.float64)
    return Sample(x, y, tr.action, float(tr.reward), xn, bool(tr.done), tr.state_key, tr.traj_id, tr.step)


def _consts(params: ParamVector) -> dict[str, Var]:
    return {n: Var(b) for n, b in params.blocks().items()}


@dataclass(frozen=True)
class Objective:
    kind: str
    gamma: float = 0.99
    half: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown objective {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")

    @property
    def is_bootstrapped(self) -> bool:
        return self.kind in BOOTSTRAP

    @property
    def squared(self) -> bool:
        return self.kind != "classification"

    @property
    def scale(self) -> float:
        """dJ/df = scale * delta."""
        return 1.0 if self.half else 2.0

    # --- pieces (batched over a list of samples) ---------------------------

    def predictions(self, spec: ModelSpec, p, samples) -> Var:
        """``(N,)`` model outputs the squared loss acts on: V(x) or Q(x, a)."""
        out = apply(spec, p, np.stack([np.asarray(s.x, dtype=np.float64) for s in samples]))
        if spec.n_o == 1:
            return E.reshape(out, (len(samples),))
        if any(s.a is None for s in samples):
            raise ValueError("multi-output value head needs an action")
        return E.take(out, np.array([s.a for s in samples], dtype=np.int64))

    def bootstraps(self, spec: ModelSpec, p, tp, samples) -> Var:
        """``(N,)`` successor values, zero on terminal transitions.

        td0: V(x'); ql: max_a Q(x', a); ddqn: Q_shadow(x', argmax_a Q_online(x', a)).
        """
        if any(s.x_next is None and not s.done for s in samples):
            raise ValueError("bootstrapped objective needs a successor state")
        xn = np.stack([np.asarray(s.x if s.x_next is None else s.x_next, dtype=np.float64)
                       for s in samples])
        live = np.array([0.0 if s.done else 1.0 for s in samples])
        out = apply(spec, tp, xn)
        if self.kind == "td0":
            if spec.n_o != 1:
                raise ValueError("td0 expects a single-output value head")
            v = E.reshape(out, (len(samples),))
        elif self.kind == "ql":
            v = E.max(out, -1)
        else:
            with E.no_grad():
                online = apply(spec, {n: Var(b.value) for n, b in p.items()}, xn).value
            v = E.take(out, np.argmax(online, axis=-1))
        return v * live

    def targets(self, spec: ModelSpec, p, tp, samples) -> Var:
        if self.is_bootstrapped:
            r = np.array([s.r for s in samples], dtype=np.float64)
            return Var(r) + self.gamma * self.bootstraps(spec, p, tp, samples)
        if any(s.y is None for s in samples):
            raise ValueError("regression sample has no target")
        return Var(np.array([float(s.y) for s in samples]))

    def prediction(self, spec: ModelSpec, p, s: Sample) -> Var:
        return E.reshape(self.predictions(spec, p, [s]), ())

    def bootstrap(self, spec: ModelSpec, p, tp, s: Sample) -> Var:
        return E.reshape(self.bootstraps(spec, p, tp, [s]), ())

    def target(self, spec: ModelSpec, p, tp, s: Sample) -> Var:
        return E.reshape(self.targets(spec, p, tp, [s]), ())

    def _target_vars(self, p, target_params):
        return p if target_params is None else _consts(target_params)

    def batch_loss_var(self, spec: ModelSpec, p, samples, target_params: ParamVector | None = None) -> Var:
        """Mean loss over ``samples``."""
        if len(samples) == 0:
            raise ValueError("empty minibatch")
        if self.kind == "classification":
            if any(s.y is None for s in samples):
                raise ValueError("classification sample has no label")
            logits = apply(spec, p, np.stack([np.asarray(s.x, dtype=np.float64) for s in samples]))
            return E.mean(E.cross_entropy(logits, np.array([int(s.y) for s in samples])))
        tgt = E.stop_gradient(self.targets(spec, p, self._target_vars(p, target_params), samples))
        d = self.predictions(spec, p, samples) - tgt
        return E.mean(d * d) * (0.5 if self.half else 1.0)

    def loss_var(self, spec: ModelSpec, p, s: Sample, target_params: ParamVector | None = None) -> Var:
        return self.batch_loss_var(spec, p, [s], target_params)

    # --- programs ---------------------------------------------------------

    def program(self, spec: ModelSpec, target_params: ParamVector | None = None):
        """Loss program ``(pvars, sample) -> scalar`` for the calculus helpers."""
        return lambda p, s: self.loss_var(spec, p, s, target_params)

    def batch_program(self, spec: ModelSpec, target_params: ParamVector | None = None):
        """Mean-loss program ``(pvars, samples) -> scalar``."""
        return lambda p, samples: self.batch_loss_var(spec, p, samples, target_params)

    def prediction_program(self, spec: ModelSpec):
        return lambda p, s: self.prediction(spec, p, s)

    def bootstrap_program(self, spec: ModelSpec):
        """``(pvars, sample) -> successor value`` evaluated with the same parameters."""
        return lambda p, s: self.bootstrap(spec, p, p, s)

    # --- numeric helpers --------------------------------------------------

    def loss(self, model: ValueModel, s: Sample, target_params: ParamVector | None = None) -> float:
        with E.no_grad():
            return float(self.loss_var(model.spec, _consts(model.params), s, target_params).value)

    def delta(self, model: ValueModel, s: Sample, target_params: ParamVector | None = None) -> float:
        """Prediction minus target (the TD error for bootstrapped objectives)."""
        if not self.squared:
            raise ValueError("delta is defined for squared losses only")
        with E.no_grad():
            p = _consts(model.params)
            pred = self.prediction(model.spec, p, s)
            tgt = self.target(model.spec, p, self._target_vars(p, target_params), s)
            return float(pred.value - tgt.value)


def gradient_field(objective: Objective, spec: ModelSpec, p: dict, s: Sample,
                   target_params: ParamVector | None = None) -> list:
    """Update direction of the loss as differentiable ``Var`` blocks (create_graph).

    For squared losses this is ``scale * delta * grad f`` where ``delta`` keeps
    its dependence on the online parameters through a self-bootstrapped
    target, so differentiating it once more gives the dynamics of the actual
    semi-gradient update.  Classification returns the plain loss gradient.
    """
    leaves = list(p.values())
    if not objective.squared:
        out = objective.loss_var(spec, p, s)
        return E.backward(out, leaves, create_graph=True)
    pred = objective.prediction(spec, p, s)
    grads = E.backward(pred, leaves, create_graph=True)
    tgt = objective.target(spec, p, objective._target_vars(p, target_params), s)
    coef = (pred - tgt) * objective.scale
    return [None if g is None else coef * g for g in grads]
