"""Bootstrap targets: one-step TD, forward-view lambda-returns, target-network rules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import ParamVector
from ..envs.buffer import is_terminated


class TargetRule:
    """Shadow parameters used for bootstrap values.

    ``self``       bootstrap from the online parameters
    ``frozen(k)``  copy the online parameters every ``k`` updates
    ``ema(tau)``   shadow <- (1 - tau) shadow + tau theta after every update
    """

    def __init__(self, kind: str = "self", k: int = 10_000, tau: float = 0.01):
        if kind not in ("self", "frozen", "ema"):
            raise ValueError(f"unknown target rule {kind!r}")
        if kind == "frozen" and k < 1:
            raise ValueError("frozen refresh period must be >= 1")
        if kind == "ema" and not 0.0 < tau <= 1.0:
            raise ValueError("ema rate must lie in (0, 1]")
        self.kind = kind
        self.k = int(k)
        self.tau = float(tau)
        self.shadow: ParamVector | None = None
        self.counter = 0
        self.generation = 0

    def __repr__(self):
        return f"TargetRule({self.kind}, k={self.k}, tau={self.tau})"

    def to_json(self) -> dict:
        return {"kind": self.kind, "k": self.k, "tau": self.tau}

    def reset(self, params: ParamVector):
        self.shadow = params
        self.counter = 0
        self.generation = 0

    def update(self, params: ParamVector) -> bool:
        """Call after each optimizer step; returns True when the shadow was refreshed."""
        self.counter += 1
        if self.kind == "self":
            self.shadow = params
            return False
        if self.kind == "frozen":
            if self.counter % self.k == 0:
                self.shadow = params
                self.generation += 1
                return True
            return False
        self.shadow = self.shadow.with_data((1.0 - self.tau) * self.shadow.data + self.tau * params.data)
        self.generation += 1
        return True

    def target_params(self, online: ParamVector) -> ParamVector:
        if self.kind == "self" or self.shadow is None:
            return online
        return self.shadow


def _lookup(values, state) -> float:
    if callable(values):
        return float(values(state))
    return float(np.asarray(values)[state])


def td0_target(values, transition, gamma: float) -> float:
    """r + gamma V(s'); zero bootstrap on terminal transitions.

    ``values`` is a table indexed by state or a callable ``state -> V``.
    """
    if transition.done:
        return float(transition.reward)
    return float(transition.reward) + gamma * _lookup(values, transition.next_state)


def td_error(prediction: float, target: float) -> float:
    return prediction - target


@dataclass(frozen=True)
class TDErrorRecord:
    delta: float
    index: int
    target: float
    prediction: float


@dataclass(frozen=True)
class LambdaTargetSet:
    lam: float
    targets: np.ndarray  # one per trajectory position
    generation: int = 0


def lambda_returns(trajectory, next_values, gamma: float, lam: float,
                   generation: int = 0) -> LambdaTargetSet:
    """Forward-view lambda-returns of a terminated trajectory.

    ``next_values[t]`` is the bootstrap value of ``trajectory[t].next_state``
    (ignored when that transition is terminal).  Computed by the recursion
    G_t = r_t + gamma ((1 - lam) V(s_{t+1}) + lam G_{t+1}), which on a
    terminated episode equals the truncated weighted sum with the residual
    weight lam^(N-1) on the full return.
    """
    if not is_terminated(trajectory):
        raise ValueError("lambda-returns need a terminated trajectory")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    n = len(trajectory)
    nv = [_lookup(next_values, tr.next_state) for tr in trajectory] if callable(next_values) \
        else np.asarray(next_values, dtype=np.float64)
    out = np.empty(n)
    g = 0.0
    for t in range(n - 1, -1, -1):
        tr = trajectory[t]
        if tr.done:
            g = float(tr.reward)
        else:
            g = float(tr.reward) + gamma * ((1.0 - lam) * nv[t] + lam * g)
        out[t] = g
    return LambdaTargetSet(lam, out, generation)


def lambda_weights(n_remaining: int, lam: float) -> np.ndarray:
    """Weights on the n-step returns G^1..G^N for N remaining steps (last entry = full return)."""
    w = np.array([(1.0 - lam) * lam ** (k - 1) for k in range(1, n_remaining)] + [lam ** (n_remaining - 1)])
    return w


def n_step_return(trajectory, t: int, n: int, next_values, gamma: float) -> float:
    """G^n(S_t): n rewards then the bootstrap value (0 past the episode end)."""
    g, disc = 0.0, 1.0
    end = min(t + n, len(trajectory))
    for j in range(t, end):
        g += disc * trajectory[j].reward
        disc *= gamma
    last = trajectory[end - 1]
    if not last.done:
        nv = next_values(last.next_state) if callable(next_values) else next_values[end - 1]
        g += disc * float(nv)
    return g


def lambda_return_direct(trajectory, t: int, next_values, gamma: float, lam: float) -> float:
    """Explicit weighted sum of n-step returns (independent check of :func:`lambda_returns`)."""
    N = len(trajectory) - t
    w = lambda_weights(N, lam)
    return float(sum(w[n - 1] * n_step_return(trajectory, t, n, next_values, gamma)
                     for n in range(1, N + 1)))
