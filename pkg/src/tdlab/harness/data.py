"""Datasets and environments built from a run config."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from ..envs import GlyphDataset, MaskedImageEnv, chain_mdp, glyph_generate, make_expert_buffer, value_iteration
from ..learners.objectives import Sample
from ..rng import Rng, derive_seed

COST_RANGE = (-1.0, -0.5)  # narrow enough that walking to the end beats any loop for the usual discounts


def rbf_features(n_states: int, k: int, width: float | None = None) -> np.ndarray:
    """Gaussian bumps over chain position; the terminal state sits at position 1."""
    pos = np.linspace(0.0, 1.0, n_states + 1)
    centers = np.linspace(0.0, 1.0, k)
    width = width if width is not None else 1.0 / k
    return np.exp(-((pos[:, None] - centers[None]) ** 2) / (2.0 * width * width))


@lru_cache(maxsize=8)
def _glyphs(n_classes: int, n_per_class: int, seed: int, size: int, noise: float) -> GlyphDataset:
    return glyph_generate(n_classes, n_per_class, seed, size, size, 0.5, noise)


def glyph_split(env: dict, n_train: int, n_test: int):
    """Dataset plus the first ``n_train`` train seeds and ``n_test`` test seeds."""
    need = max(n_train, n_test, 1)
    per_class = 2 * math.ceil(need / env["n_classes"])
    ds = _glyphs(env["n_classes"], per_class, env["data_seed"], env["image_size"], float(env["noise"]))
    return ds, list(ds.train_seeds[:n_train]), list(ds.test_seeds[:n_test])


def glyph_samples(ds: GlyphDataset, indices) -> list[Sample]:
    return [Sample(ds.images[i][None], int(ds.labels[i]), key=int(i)) for i in indices]


def masked_env(env: dict, ds: GlyphDataset) -> MaskedImageEnv:
    return MaskedImageEnv(ds, env["window"], env["move"], env["t_max"])


def regression_split(env: dict, n_train: int, n_test: int):
    """Inputs ~ N(0, I); targets from a fixed random tanh teacher plus Gaussian label noise."""
    rng = Rng(derive_seed(env["data_seed"], "regression"))
    d, h = env["dim"], env["teacher_hidden"]
    w1 = rng.normal((d, h)) / math.sqrt(d)
    w2 = rng.normal((h,)) / math.sqrt(h)

    def make(n, label):
        r = rng.spawn(label)
        x = r.normal((n, d))
        y = np.tanh(x @ w1) @ w2 + env["label_noise"] * r.normal((n,))
        return [Sample(x[i], float(y[i]), key=i) for i in range(n)]

    return make(n_train, "train"), make(n_test, "test")


def chain_task(env: dict, gamma: float, seed: int):
    """Cost-per-step chain, its optimal Q and an epsilon-greedy expert buffer.

    Per-state costs are drawn once from ``data_seed`` in ``COST_RANGE``; a
    draw whose optimal policy loops instead of terminating is rejected.  The
    buffer depends on the run seed.
    """
    n = env["chain_length"]
    rng = Rng(derive_seed(env["data_seed"], "chain-rewards"))
    rewards = [float(r) for r in rng.uniform(*COST_RANGE, n)]
    feats = rbf_features(n, env["n_features"], env["rbf_width"]) if env["features"] == "rbf" else np.eye(n + 1)
    mdp = chain_mdp(n, rewards=rewards, gamma=gamma, n_actions=2, slip=env["slip"], features=feats)
    q = value_iteration(mdp)
    if not _greedy_terminates(mdp, q):
        raise ValueError(f"env.data_seed={env['data_seed']}: the optimal policy of this cost draw never "
                         "reaches the terminal state; pick another data_seed")
    buf = make_expert_buffer(mdp, q, env["expert_eps"], env["buffer_size"], seed)
    return mdp, q, buf


def _greedy_terminates(mdp, q) -> bool:
    """Does the greedy policy reach the terminal state when no slip occurs?"""
    s, seen = mdp.start, set()
    while s not in mdp.terminal:
        if s in seen:
            return False
        seen.add(s)
        s = int(np.argmax(mdp.P[s, int(np.argmax(q[s]))]))
    return True


def describe_env(cfg, out=None) -> dict:
    """Summary of the environment a config builds; with ``out``, also writes its dataset or buffer files."""
    env = cfg.env
    if cfg.experiment in ("classify", "ddqn", "reinforce"):
        ds, tr, te = glyph_split(env, cfg.n_train, cfg.n_test)
        info = {"kind": "glyphs", **ds.manifest(), "train_used": tr, "test_used": te}
        if cfg.experiment != "classify":
            me = masked_env(env, ds)
            info.update(n_actions=me.n_actions, observation_shape=list(me.observation_shape),
                        window=me.window, move=me.move, t_max=me.t_max)
        if out is not None:
            ds.save(out)
        return info
    if cfg.experiment == "regress":
        tr, te = regression_split(env, cfg.n_train, cfg.n_test)
        ys = np.array([s.y for s in tr])
        return {"kind": "regression", "dim": env["dim"], "n_train": len(tr), "n_test": len(te),
                "train_target_mean": float(ys.mean()), "train_target_std": float(ys.std())}
    if cfg.experiment == "tabular":
        from .runner import tabular_task
        mdp = tabular_task(cfg)
        return {"kind": "tabular-chain", "n_states": mdp.n_states, "n_actions": mdp.n_actions,
                "gamma": mdp.gamma, "terminal": sorted(mdp.terminal)}
    mdp, q, buf = chain_task(env, cfg.objective["gamma"], cfg.seed)
    if out is not None:
        buf.save(out)
    trajs = buf.trajectories()
    return {"kind": "chain", "n_states": mdp.n_states, "n_actions": mdp.n_actions, "gamma": mdp.gamma,
            "expected_reward": mdp.expected_reward().tolist(), "optimal_q": q.tolist(),
            "greedy_actions": [int(a) for a in np.argmax(q, axis=1)], "n_features": int(mdp.features.shape[1]),
            "buffer_transitions": len(buf), "buffer_trajectories": len(trajs),
            "terminated_trajectories": sum(bool(t[-1].done) for t in trajs.values())}
