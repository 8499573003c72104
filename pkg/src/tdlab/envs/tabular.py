"""Finite MDPs with exact dynamic-programming solutions."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..rng import Rng

ROW_TOL = 1e-12
DP_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Transition tensor ``P[s, a, s']`` and reward tensor ``R[s, a, s']``.

    Terminal states are absorbing with zero reward; their value is 0 by
    convention.  ``features`` gives the model input for each state (one-hot
    rows unless provided).
    """

    P: np.ndarray
    R: np.ndarray
    gamma: float
    terminal: frozenset = frozenset()
    start: int = 0
    features: np.ndarray | None = None
    name: str = "mdp"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64)
        R = np.asarray(self.R, dtype=np.float64)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "terminal", frozenset(int(s) for s in self.terminal))
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"P must have shape (S, A, S), got {P.shape}")
        if R.shape != P.shape:
            raise ValueError(f"R must have the shape of P {P.shape}, got {R.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > ROW_TOL):
            raise ValueError("every P(.|s,a) must be a probability vector")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        for s in self.terminal:
            if not (np.allclose(P[s, :, s], 1.0) and np.all(R[s] == 0)):
                raise ValueError(f"terminal state {s} must be absorbing with zero reward")
        if self.gamma >= 1.0 and not self._all_reach_terminal():
            raise ValueError("gamma = 1 requires every state to reach a terminal state")
        if self.features is None:
            object.__setattr__(self, "features", np.eye(self.n_states))
        else:
            object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    def _all_reach_terminal(self) -> bool:
        # under every policy: states whose every action leads (with positive prob) onward
        reach = set(self.terminal)
        if not reach:
            return False
        changed = True
        while changed:
            changed = False
            for s in range(self.n_states):
                if s in reach:
                    continue
                ok = all(any(self.P[s, a, t] > 0 for t in reach) for a in range(self.n_actions))
                if ok:
                    reach.add(s)
                    changed = True
        return len(reach) == self.n_states

    def expected_reward(self) -> np.ndarray:
        """R(s, a) = sum_s' P(s'|s,a) R(s,a,s')."""
        return np.einsum("ijk,ijk->ij", self.P, self.R)

    def step(self, s: int, a: int, rng: Rng) -> tuple[int, float, bool]:
        s2 = rng.choice(self.P[s, a])
        return s2, float(self.R[s, a, s2]), s2 in self.terminal

    def supports(self, s: int, a: int, s2: int) -> bool:
        return bool(self.P[s, a, s2] > 0)


def chain_mdp(n_states: int, rewards=None, gamma: float = 0.9, n_actions: int = 2,
              slip: float = 0.0, features=None) -> TabularMDP:
    """Chain of ``n_states`` states followed by one absorbing terminal state.

    Action 0 advances toward the terminal end, action 1 (if present) steps
    back (clipped at state 0).  With probability ``slip`` the opposite move is
    executed.  ``rewards=None`` pays 1 on entering the terminal state;
    otherwise ``rewards[s]`` is paid on leaving state ``s``.
    """
    if n_states < 1 or n_actions not in (1, 2) or not 0.0 <= slip <= 1.0:
        raise ValueError("chain_mdp needs n_states >= 1, n_actions in {1, 2}, slip in [0, 1]")
    if rewards is not None and len(rewards) != n_states:
        raise ValueError("rewards must give one value per non-terminal state")
    S = n_states + 1
    term = n_states
    P = np.zeros((S, n_actions, S))
    R = np.zeros((S, n_actions, S))
    for s in range(n_states):
        fwd, back = s + 1, max(s - 1, 0)
        for a in range(n_actions):
            main, other = (fwd, back) if a == 0 else (back, fwd)
            P[s, a, main] += 1.0 - slip
            P[s, a, other] += slip
            if rewards is None:
                R[s, a, term] = 1.0
            else:
                R[s, a, :] = rewards[s]
    P[term, :, term] = 1.0
    return TabularMDP(P, R, gamma, frozenset({term}), 0, features, name=f"chain{n_states}",
                      info={"n_states": n_states, "slip": slip, "n_actions": n_actions,
                            "rewards": None if rewards is None else list(map(float, rewards))})


GRID_MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))  # up, right, down, left as (drow, dcol)


def grid_mdp(width: int, height: int, gamma: float = 0.9, slip: float = 0.0) -> TabularMDP:
    """Grid world with 4 moves clipped at the walls; the bottom-right cell is terminal.

    Entering the goal pays 1.  With probability ``slip`` a uniformly random
    other direction is taken instead.
    """
    if width < 1 or height < 1 or width * height < 2:
        raise ValueError("grid needs at least two cells")
    S = width * height
    goal = S - 1
    P = np.zeros((S, 4, S))
    R = np.zeros((S, 4, S))
    for s in range(S):
        if s == goal:
            P[s, :, s] = 1.0
            continue
        r, c = divmod(s, width)
        for a in range(4):
            for b, (dr, dc) in enumerate(GRID_MOVES):
                p = (1.0 - slip) if b == a else slip / 3.0
                if p == 0.0:
                    continue
                rr = min(max(r + dr, 0), height - 1)
                cc = min(max(c + dc, 0), width - 1)
                s2 = rr * width + cc
                P[s, a, s2] += p
                if s2 == goal:
                    R[s, a, s2] = 1.0
    return TabularMDP(P, R, gamma, frozenset({goal}), 0, name=f"grid{width}x{height}",
                      info={"width": width, "height": height, "slip": slip})


def _check_policy(mdp: TabularMDP, pi) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy must have shape {(mdp.n_states, mdp.n_actions)}")
    if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > ROW_TOL):
        raise ValueError("policy rows must be probability vectors")
    return pi


def uniform_policy(mdp: TabularMDP) -> np.ndarray:
    return np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)


def dp_policy_evaluation(mdp: TabularMDP, pi, tol: float = DP_TOL, max_iter: int = 10**7) -> np.ndarray:
    """Iterate V <- r_pi + gamma P_pi V until the sup-norm change is below ``tol``."""
    pi = _check_policy(mdp, pi)
    r_pi = np.einsum("sa,sa->s", pi, mdp.expected_reward())
    P_pi = np.einsum("sa,sat->st", pi, mdp.P)
    live = np.ones(mdp.n_states, dtype=bool)
    live[list(mdp.terminal)] = False
    V = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        V_new = np.where(live, r_pi + mdp.gamma * P_pi @ V, 0.0)
        if np.max(np.abs(V_new - V)) < tol:
            return V_new
        V = V_new
    raise RuntimeError("policy evaluation did not converge")


def value_iteration(mdp: TabularMDP, tol: float = DP_TOL, max_iter: int = 10**7) -> np.ndarray:
    """Optimal action values Q*[s, a] by Bellman-optimality iteration."""
    Rsa = mdp.expected_reward()
    live = np.ones(mdp.n_states, dtype=bool)
    live[list(mdp.terminal)] = False
    Q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        V = Q.max(axis=1)
        Q_new = np.where(live[:, None], Rsa + mdp.gamma * np.einsum("sat,t->sa", mdp.P, V), 0.0)
        if np.max(np.abs(Q_new - Q)) < tol:
            return Q_new
        Q = Q_new
    raise RuntimeError("value iteration did not converge")


def greedy_policy(Q) -> np.ndarray:
    """Deterministic greedy policy as a one-hot (S, A) matrix; ties -> lowest action."""
    Q = np.asarray(Q)
    pi = np.zeros_like(Q, dtype=np.float64)
    pi[np.arange(Q.shape[0]), np.argmax(Q, axis=1)] = 1.0
    return pi


def exact_policy_value(mdp: TabularMDP, pi) -> np.ndarray:
    """V^pi by a direct linear solve on the non-terminal states."""
    pi = _check_policy(mdp, pi)
    r_pi = np.einsum("sa,sa->s", pi, mdp.expected_reward())
    P_pi = np.einsum("sa,sat->st", pi, mdp.P)
    live = [s for s in range(mdp.n_states) if s not in mdp.terminal]
    A = np.eye(len(live)) - mdp.gamma * P_pi[np.ix_(live, live)]
    V = np.zeros(mdp.n_states)
    V[live] = np.linalg.solve(A, r_pi[live])
    return V


def brute_force_optimal(mdp: TabularMDP):
    """Best deterministic policy by enumeration; returns (V*, list of optimal action tuples)."""
    if mdp.n_actions ** mdp.n_states > 200_000:
        raise ValueError("MDP too large for exhaustive policy search")
    best_v, best = None, []
    for acts in itertools.product(range(mdp.n_actions), repeat=mdp.n_states):
        pi = np.zeros((mdp.n_states, mdp.n_actions))
        pi[np.arange(mdp.n_states), acts] = 1.0
        try:
            v = exact_policy_value(mdp, pi)
        except np.linalg.LinAlgError:
            continue  # improper policy under gamma = 1
        if best_v is None or np.all(v >= best_v - 1e-12) and np.any(v > best_v + 1e-12):
            best_v, best = v, [acts]
        elif np.allclose(v, best_v, atol=1e-12):
            best.append(acts)
    return best_v, best


def sample_returns(mdp: TabularMDP, pi, start: int, n: int, rng: Rng, max_steps: int = 10_000) -> np.ndarray:
    """Monte-Carlo returns of ``n`` episodes started in ``start``."""
    pi = _check_policy(mdp, pi)
    out = np.empty(n)
    for i in range(n):
        s, g, disc = start, 0.0, 1.0
        for _ in range(max_steps):
            if s in mdp.terminal:
                break
            a = rng.choice(pi[s])
            s, r, _ = mdp.step(s, a, rng)
            g += disc * r
            disc *= mdp.gamma
        out[i] = g
    return out


def mc_policy_evaluation(mdp: TabularMDP, pi, n: int, rng: Rng):
    """Per-state Monte-Carlo mean return and its standard error."""
    means = np.zeros(mdp.n_states)
    ses = np.zeros(mdp.n_states)
    for s in range(mdp.n_states):
        if s in mdp.terminal:
            continue
        g = sample_returns(mdp, pi, s, n, rng.spawn("mc", s))
        means[s] = g.mean()
        ses[s] = g.std(ddof=1) / np.sqrt(n)
    return means, ses
