"""SGD, momentum, RMSProp and Adam as pure functions of (state, params, grad)."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..autodiff import LayoutMismatch, ParamVector

DEFAULTS = {
    "sgd": {},
    "momentum": {"beta": 0.9},
    "rmsprop": {"alpha": 0.99, "eps": 1e-8},
    "adam": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
}


@dataclass(frozen=True)
class OptimizerState:
    kind: str
    lr: float
    hyper: dict = field(default_factory=dict)
    weight_decay: float = 0.0
    step: int = 0
    slots: dict = field(default_factory=dict)  # name -> ParamVector accumulator

    def __post_init__(self):
        if self.kind not in DEFAULTS:
            raise ValueError(f"unknown optimizer {self.kind!r}")
        merged = {**DEFAULTS[self.kind], **self.hyper}
        unknown = set(merged) - set(DEFAULTS[self.kind])
        if unknown:
            raise ValueError(f"unknown {self.kind} settings: {sorted(unknown)}")
        for key in ("beta", "beta1", "beta2", "alpha"):
            if key in merged and not 0.0 <= merged[key] < 1.0:
                raise ValueError(f"{key} must lie in [0, 1)")
        object.__setattr__(self, "hyper", merged)

    def to_json(self) -> dict:
        return {"kind": self.kind, "lr": self.lr, "weight_decay": self.weight_decay, **self.hyper}


def make_optimizer(kind: str, lr: float, weight_decay: float = 0.0, **hyper) -> OptimizerState:
    return OptimizerState(kind, float(lr), hyper, float(weight_decay))


def _slot(state: OptimizerState, name: str, params: ParamVector) -> np.ndarray:
    acc = state.slots.get(name)
    if acc is None:
        return np.zeros(len(params))
    if acc.layout != params.layout:
        raise LayoutMismatch(f"optimizer slot {name!r} layout does not match the parameters")
    return acc.data


def optimizer_step(state: OptimizerState, params: ParamVector, grad: ParamVector):
    """Apply one update; returns ``(new_params, new_state)``.

    Momentum uses the convex-combination form mu_t = (1 - beta) g + beta mu_{t-1},
    theta' = theta - lr mu_t.
    """
    params.check_layout(grad)
    g = grad.data
    if state.weight_decay:
        g = g + state.weight_decay * params.data
    h = state.hyper
    t = state.step + 1
    slots = {}
    if state.kind == "sgd":
        delta = state.lr * g
    elif state.kind == "momentum":
        mu = (1.0 - h["beta"]) * g + h["beta"] * _slot(state, "mu", params)
        slots["mu"] = mu
        delta = state.lr * mu
    elif state.kind == "rmsprop":
        v = h["alpha"] * _slot(state, "v", params) + (1.0 - h["alpha"]) * g * g
        slots["v"] = v
        delta = state.lr * g / (np.sqrt(v) + h["eps"])
    else:
        m = h["beta1"] * _slot(state, "m", params) + (1.0 - h["beta1"]) * g
        v = h["beta2"] * _slot(state, "v", params) + (1.0 - h["beta2"]) * g * g
        slots["m"], slots["v"] = m, v
        m_hat = m / (1.0 - h["beta1"] ** t)
        v_hat = v / (1.0 - h["beta2"] ** t)
        delta = state.lr * m_hat / (np.sqrt(v_hat) + h["eps"])
    new_slots = {k: params.with_data(v) for k, v in slots.items()}
    return params.with_data(params.data - delta), replace(state, step=t, slots=new_slots)
