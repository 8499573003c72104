"""Transitions, replay buffers, expert data and Monte-Carlo returns."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from ..autodiff.tensor import save_tnsr
from ..rng import Rng, derive_seed
from .tabular import TabularMDP

CSV_HEADER = ["trajectory_id", "step", "state_id_or_image_index", "action", "reward", "done"]


@dataclass(frozen=True)
class Transition:
    state: Any  # tabular state id or an observation array
    action: int
    reward: float
    next_state: Any
    done: bool
    traj_id: int
    step: int
    key: int | None = None  # state id / image index, for serialization

    @property
    def state_key(self) -> int:
        return int(self.state) if self.key is None else int(self.key)


class ReplayBuffer:
    """Append-only ordered transition store; FIFO eviction once ``capacity`` is reached."""

    def __init__(self, capacity: int | None = None, transitions: Iterable[Transition] = ()):
        self.capacity = capacity
        self._items: list[Transition] = []
        self._last: dict[int, Transition] = {}
        for t in transitions:
            self.append(t)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i) -> Transition:
        return self._items[i]

    def __iter__(self):
        return iter(self._items)

    def append(self, t: Transition):
        prev = self._last.get(t.traj_id)
        if prev is not None and (prev.step + 1 != t.step or prev.done):
            raise ValueError(f"trajectory {t.traj_id}: step {t.step} does not follow {prev.step}")
        self._last[t.traj_id] = t
        self._items.append(t)
        if self.capacity is not None and len(self._items) > self.capacity:
            del self._items[0]

    def trajectories(self) -> dict[int, list[Transition]]:
        out: dict[int, list[Transition]] = {}
        for t in self._items:
            out.setdefault(t.traj_id, []).append(t)
        return out

    def positions(self) -> list[tuple[int, int, int]]:
        """For every buffer index: (trajectory id, position in trajectory, trajectory length)."""
        trajs = self.trajectories()
        where = {}
        for tid, items in trajs.items():
            for k, t in enumerate(items):
                where[id(t)] = (tid, k, len(items))
        return [where[id(t)] for t in self._items]

    def sample_indices(self, rng: Rng, k: int) -> np.ndarray:
        """Uniform minibatch of distinct indices."""
        return rng.sample_without_replacement(len(self._items), min(k, len(self._items)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for t in self._items:
            w.writerow([t.traj_id, t.step, t.state_key, t.action, repr(float(t.reward)), int(t.done)])
        return buf.getvalue()

    def save(self, directory, name: str = "buffer"):
        """CSV view, TNSR arrays (states, next states, scalars) and a JSON manifest."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{name}.csv").write_text(self.to_csv())
        states = np.stack([np.asarray(t.state, dtype=np.float64) for t in self._items])
        nexts = np.stack([np.asarray(t.next_state, dtype=np.float64) for t in self._items])
        scalars = np.array([[t.traj_id, t.step, t.action, t.reward, float(t.done),
                             -1 if t.key is None else t.key] for t in self._items], dtype=np.float64)
        save_tnsr(d / f"{name}_states.tnsr", states)
        save_tnsr(d / f"{name}_next_states.tnsr", nexts)
        save_tnsr(d / f"{name}_scalars.tnsr", scalars)
        manifest = {"n_transitions": len(self), "capacity": self.capacity,
                    "n_trajectories": len(self.trajectories()),
                    "scalar_columns": ["traj_id", "step", "action", "reward", "done", "key"]}
        (d / f"{name}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def is_terminated(trajectory) -> bool:
    return len(trajectory) > 0 and bool(trajectory[-1].done)


def mc_return(trajectory, t: int, gamma: float) -> float:
    """Discounted reward sum from position ``t`` to the end of a terminated episode."""
    if not is_terminated(trajectory):
        raise ValueError("Monte-Carlo return needs a terminated trajectory")
    if not 0 <= t < len(trajectory):
        raise IndexError(f"position {t} outside trajectory of length {len(trajectory)}")
    g = 0.0
    for tr in reversed(trajectory[t:]):
        g = tr.reward + gamma * g
    return g


def epsilon_greedy(q_row, eps: float, rng: Rng) -> int:
    if rng.random() < eps:
        return rng.integer(len(q_row))
    return int(np.argmax(q_row))


def make_expert_buffer(mdp: TabularMDP, Q, eps: float, n_transitions: int, seed: int,
                       max_episode_len: int = 1000) -> ReplayBuffer:
    """Epsilon-greedy rollouts of the greedy policy of ``Q`` from ``mdp.start``.

    Whole episodes are collected until at least ``n_transitions`` transitions
    are stored; an episode hitting ``max_episode_len`` is kept unterminated.
    """
    if not 0.0 <= eps <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if n_transitions < 1:
        raise ValueError("n_transitions must be >= 1")
    Q = np.asarray(Q)
    rng = Rng(derive_seed(seed, "expert"))
    buf = ReplayBuffer()
    tid = 0
    while len(buf) < n_transitions:
        s = mdp.start
        for step in range(max_episode_len):
            a = epsilon_greedy(Q[s], eps, rng)
            s2, r, done = mdp.step(s, a, rng)
            buf.append(Transition(s, a, r, s2, done, tid, step, key=s))
            s = s2
            if done:
                break
        tid += 1
    return buf
