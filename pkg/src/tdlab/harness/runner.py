"""One run: build data and model from a config, train, measure every checkpoint, write the run directory.

Run directory layout::

    manifest.json          full config, defaults, derived seeds, conventions, file list
    checkpoints/step_*.{tnsr,json}
    scalars.csv            always
    interference.csv       metrics.interference
    gain_curve.csv         metrics.gain_curve (trajectory experiments)
    stiffness_curve.csv    metrics.stiffness_curve (trajectory experiments)
    rho_prime.csv          metrics.rho_prime (squared losses)
"""

from __future__ import annotations

import json
import math
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..dynamics import (RHO_PRIME_HEADER, fd_oracle_rho_prime, rho_prime_csv, rho_prime_reg_terms,
                        rho_prime_td_terms)
from ..envs import (dp_policy_evaluation, exact_policy_value, chain_mdp, mc_policy_evaluation,
                    uniform_policy)
from ..learners import (Objective, Sample, Schedule, TargetRule, accuracy, distill_samples,
                        evaluate_policy, greedy_rollouts, lambda_samples, make_optimizer, sample_from_transition,
                        tabular_td0, train, train_online_q, train_reinforce)
from ..metrics import (GAIN_HEADER, INTERFERENCE_HEADER, SCALARS_HEADER, STIFFNESS_HEADER,
                       InterferenceRecord, gain_csv, gap, interference_csv, mean_off_center,
                       output_grad, pair_sample_metrics, scalars_csv, sign_variance, singular_spread,
                       stiffness_curve, stiffness_csv, td_gain_curve)
from ..models import ModelSpec, ValueModel, forward, init, save_checkpoint
from ..autodiff import dot
from ..autodiff import engine as E
from ..records import MetricRecord
from ..rng import Rng, derive_seed
from . import data as D
from .config import (ENV_DEFAULTS, METRIC_DEFAULTS, MODEL_DEFAULTS, OBJECTIVE_DEFAULTS,
                     OPTIMIZER_DEFAULTS, OPTIMIZER_HYPER, TARGET_DEFAULTS, TOP_DEFAULTS, RunConfig,
                     load_config)

OUT_ENV = "TDLAB_OUT"
SIGN_WINDOW = 5
TABULAR_MC_EPISODES = 2000

# Choices that shape every run; recorded verbatim in the manifest.
CONVENTIONS = {
    "loss": "squared losses are unhalved, J = (f - y)^2; delta columns hold dJ/df = 2 (f - y)",
    "rho_bar": "gradients of the argmax output component (value heads: the single output)",
    "gap": "loss kinds: test - train; accuracy and return kinds: train - test",
    "gap_metric": {"classify": "accuracy", "regress": "loss", "ddqn": "return", "reinforce": "return"},
    "momentum": "mu_t = (1 - beta) g_t + beta mu_{t-1}; theta <- theta - lr mu_t",
    "bootstrap_delta": "delta uses the shadow target unless metrics.shadow_delta is false",
    "gain_eval_loss": "Q heads: Q-learning loss; V heads: TD(0) loss; supervised runs: the training loss",
    "stiffness": "cosine of update directions at S_t and S_{t+k}",
    "pairs": "all cross pairs of two independent draws of sqrt(n_pairs) training samples",
    "chain_rewards": "per-state costs U(-1, -0.5) drawn from env.data_seed; draws whose optimal policy loops are rejected",
    "ddqn_gap_loss": "mean TD loss on greedy episodes from test seeds minus the same on train seeds",
    "greedy_return": "exact start-state value of the greedy policy of the learned Q (chain Q heads)",
}


def output_root(out_root=None) -> Path:
    return Path(out_root if out_root is not None else os.environ.get(OUT_ENV, "runs"))


@dataclass
class Collector:
    run_id: str
    scalars: list = field(default_factory=list)
    interference: list = field(default_factory=list)
    gains: list = field(default_factory=list)
    stiffness: list = field(default_factory=list)
    rho_prime: list = field(default_factory=list)

    def add(self, step: int, metric: str, value):
        v = None if value is None or (isinstance(value, float) and math.isnan(value)) else float(value)
        self.scalars.append(MetricRecord(self.run_id, step, metric, v))


@dataclass
class Probe:
    """What a checkpoint measures on: training samples and, for RL data, ordered trajectories."""

    samples: list
    objective: Objective | None
    eval_objective: Objective | None = None
    trajectories: bool = False
    policy: bool = False  # REINFORCE: only function interference is defined
    sign_samples: list | None = None  # one-step transitions for the TD-error sign variance


# ---------------------------------------------------------------------------
# construction helpers


def _spec(cfg: RunConfig, input_shape, n_o: int, head: str = "value") -> ModelSpec:
    m = cfg.model
    return ModelSpec(m["kind"], tuple(input_shape), m["n_h"], m["n_L"], n_o, m["slope"], m["activation"], head)


def _optimizer(cfg: RunConfig):
    o = cfg.optimizer
    return make_optimizer(o["kind"], o["lr"], o["weight_decay"], **{k: o[k] for k in OPTIMIZER_HYPER[o["kind"]]})


def _rule(cfg: RunConfig) -> TargetRule:
    t = cfg.target
    return TargetRule(t["kind"], t["k"], t["tau"])


def _shadow(rule: TargetRule, model: ValueModel):
    return None if rule.kind == "self" else rule.target_params(model.params)


def _td_kind(cfg: RunConfig, default: str) -> str:
    k = cfg.objective["loss"]
    return default if k == "auto" else k


def _eval_objective(model: ValueModel, gamma: float) -> Objective:
    return Objective("ql" if model.spec.n_o > 1 else "td0", gamma)


# ---------------------------------------------------------------------------
# per-checkpoint measurement


def _function_pairs(model: ValueModel, samples, n_pairs: int, seed: int, ck: int) -> list[InterferenceRecord]:
    m = math.isqrt(n_pairs)
    rng = Rng(derive_seed(seed, "pairs", ck))
    ia = rng.sample_without_replacement(len(samples), m)
    ib = rng.sample_without_replacement(len(samples), m)
    cache = {}

    def g(i):
        if i not in cache:
            cache[i] = output_grad(model, samples[i])
        return cache[i]

    return [InterferenceRecord(ck, int(i), int(j), None, dot(g(int(i)), g(int(j))), None, None, None)
            for i in ia for j in ib]


def _mean(vals) -> float | None:
    vals = [v for v in vals if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


def measure(col: Collector, cfg: RunConfig, ck: int, model: ValueModel, opt, rule: TargetRule, probe: Probe):
    m, seed = cfg.metrics, cfg.seed
    tp = _shadow(rule, model)
    samples = probe.samples
    if m["interference"] and len(samples) >= math.isqrt(m["n_pairs"]):
        if probe.policy:
            recs = _function_pairs(model, samples, m["n_pairs"], seed, ck)
        else:
            recs = pair_sample_metrics(model, samples, probe.objective, m["n_pairs"], seed, ck, tp)
        col.interference += recs
        col.add(ck, "rho_mean", _mean([r.rho for r in recs]))
        col.add(ck, "rho_bar_mean", _mean([r.rho_bar for r in recs]))
        col.add(ck, "stiffness_mean", _mean([r.stiffness for r in recs]))
    if probe.trajectories and not probe.policy:
        offsets = tuple(range(-m["max_offset"], m["max_offset"] + 1))
        if m["gain_curve"]:
            idx = Rng(derive_seed(seed, "gain", ck)).sample_without_replacement(
                len(samples), min(m["gain_updates"], len(samples)))
            curve = td_gain_curve(model, samples, [int(i) for i in idx], probe.objective, opt, offsets,
                                  probe.eval_objective, tp)
            col.gains.append((ck, curve))
            col.add(ck, "gain_offcenter_mean", mean_off_center(curve))
        if m["stiffness_curve"]:
            idx = Rng(derive_seed(seed, "stiffness", ck)).sample_without_replacement(
                len(samples), min(m["stiffness_updates"], len(samples)))
            curve = stiffness_curve(model, samples, [int(i) for i in idx], probe.objective, offsets, tp)
            col.stiffness.append((ck, curve))
            col.add(ck, "stiffness_offcenter_mean", mean_off_center(curve))
        if m["sign_variance"] and probe.eval_objective is not None:
            sv_samples = probe.sign_samples if probe.sign_samples is not None else samples
            col.add(ck, "sign_variance", sign_variance(model, sv_samples, probe.eval_objective, SIGN_WINDOW, tp))
    if m["rho_prime"] and not probe.policy and probe.objective is not None and probe.objective.squared:
        _rho_prime_rows(col, cfg, ck, model, rule, probe.objective, samples, tp)
    if m["singular_values"]:
        name = model.spec.last_hidden_weight_name()
        w = model.params.blocks()[name]
        sv = singular_spread(w.reshape(w.shape[0], -1))
        for k in ("max", "min", "ratio", "entropy"):
            col.add(ck, f"sv_{k}", sv[k])


def _rho_prime_rows(col, cfg, ck, model, rule, objective, samples, tp):
    m = cfg.metrics
    rng = Rng(derive_seed(cfg.seed, "rho-prime", ck))
    alphas = (10.0 * m["fd_alpha"], m["fd_alpha"])
    for _ in range(m["rho_prime_pairs"]):
        a, b = samples[rng.integer(len(samples))], samples[rng.integer(len(samples))]
        if objective.is_bootstrapped:
            delta_tp = tp if m["shadow_delta"] else None
            bd = rho_prime_td_terms(model, objective, a, b, rule.kind, delta_tp)
        else:
            bd = rho_prime_reg_terms(model, objective, a, b)
        rep = fd_oracle_rho_prime(model, objective, a, b, alphas, bd.total, tp)
        col.rho_prime.append((ck, bd, rep))


# ---------------------------------------------------------------------------
# experiments


def _checkpointer(col, cfg, out: Path, probe_fn):
    """Hook for the training loops: save parameters, then measure."""
    def hook(step, model, rule, opt, *extra):
        save_checkpoint(model, out / "checkpoints" / f"step_{step:07d}", cfg.seed, {"step": step})
        probe = probe_fn(step, model, rule, *extra)
        measure(col, cfg, step, model, opt, rule, probe)
        return []
    return hook


def _supervised(cfg: RunConfig, col: Collector, out: Path):
    if cfg.experiment == "classify":
        ds, tr, te = D.glyph_split(cfg.env, cfg.n_train, cfg.n_test)
        train_s, test_s = D.glyph_samples(ds, tr), D.glyph_samples(ds, te)
        spec = _spec(cfg, (1,) + ds.shape, ds.n_classes, "classifier")
        objective = Objective("classification")
    else:
        train_s, test_s = D.regression_split(cfg.env, cfg.n_train, cfg.n_test)
        spec = _spec(cfg, (cfg.env["dim"],), 1)
        objective = Objective("regression")
    model = init(spec, cfg.seed)
    probe = Probe(train_s, objective)

    def extra(step, model, rule):
        tl = objective.batch_loss_var(model.spec, _pvars(model), train_s).value
        vl = objective.batch_loss_var(model.spec, _pvars(model), test_s).value
        col.add(step, "test_loss", float(vl))
        col.add(step, "gap_loss", gap(float(tl), float(vl), "loss"))
        if cfg.experiment == "classify":
            ta, va = accuracy(model, train_s), accuracy(model, test_s)
            col.add(step, "train_accuracy", ta)
            col.add(step, "test_accuracy", va)
            col.add(step, "gap", gap(ta, va, "accuracy"))
        else:
            col.add(step, "gap", gap(float(tl), float(vl), "loss"))
        return probe

    res = train(model, objective, train_s, _optimizer(cfg), TargetRule("self"),
                Schedule(cfg.steps, cfg.batch_size, cfg.checkpoint_every), cfg.seed, col.run_id,
                on_checkpoint=_checkpointer(col, cfg, out, extra))
    col.scalars += res.records


def _pvars(model):
    return {n: E.Var(b) for n, b in model.params.blocks().items()}


def _greedy_return(mdp, m, feats) -> float:
    """Exact start-state value of acting greedily on the learned Q."""
    pi = np.zeros((mdp.n_states, mdp.n_actions))
    pi[np.arange(mdp.n_states), np.argmax(forward(m, feats), axis=1)] = 1.0
    return float(exact_policy_value(mdp, pi)[mdp.start])


def _control(cfg: RunConfig, col: Collector, out: Path):
    ds, tr, te = D.glyph_split(cfg.env, cfg.n_train, cfg.n_test)
    env = D.masked_env(cfg.env, ds)
    spec = _spec(cfg, env.observation_shape, env.n_actions)
    objective = Objective(_td_kind(cfg, "ddqn"), cfg.objective["gamma"])
    model = init(spec, cfg.seed)
    eval_env = D.masked_env(cfg.env, ds)

    def extra(step, model, rule, buf):
        r_tr, r_te = evaluate_policy(eval_env, model, tr), evaluate_policy(eval_env, model, te)
        col.add(step, "train_return", r_tr)
        col.add(step, "test_return", r_te)
        col.add(step, "gap", gap(r_tr, r_te, "return"))
        tp = _shadow(rule, model)
        losses = [objective.batch_loss_var(model.spec, _pvars(model),
                                           [sample_from_transition(t) for t in greedy_rollouts(eval_env, model, ix)],
                                           tp).value for ix in (tr, te)]
        col.add(step, "gap_loss", gap(float(losses[0]), float(losses[1]), "loss"))
        samples = [sample_from_transition(t) for t in buf]
        return Probe(samples, objective, objective, trajectories=True)

    res = train_online_q(env, model, objective, _optimizer(cfg), _rule(cfg), tr, cfg.steps, cfg.seed,
                         cfg.objective["eps_greedy"], cfg.batch_size, checkpoint_every=cfg.checkpoint_every,
                         run_id=col.run_id, on_checkpoint=_checkpointer(col, cfg, out, extra))
    col.scalars += res.records


def _reinforce(cfg: RunConfig, col: Collector, out: Path):
    """``steps`` counts episodes; checkpoints every ``checkpoint_every`` episodes."""
    ds, tr, te = D.glyph_split(cfg.env, cfg.n_train, cfg.n_test)
    env = D.masked_env(cfg.env, ds)
    spec = _spec(cfg, env.observation_shape, env.n_actions, "classifier")
    model, opt = init(spec, cfg.seed), _optimizer(cfg)
    marks = Schedule(cfg.steps, 1, cfg.checkpoint_every).checkpoints()
    rule = TargetRule("self")
    done = 0
    for ck in marks:
        if ck > done:
            res = train_reinforce(env, model, opt, tr, ck - done, cfg.objective["gamma"],
                                  derive_seed(cfg.seed, "episodes", done), col.run_id)
            model, opt = res.model, res.opt
            col.scalars += [MetricRecord(r.run_id, r.step + done, r.metric, r.value) for r in res.records]
            done = ck
        save_checkpoint(model, out / "checkpoints" / f"step_{ck:07d}", cfg.seed, {"step": ck})
        r_tr, r_te = evaluate_policy(env, model, tr), evaluate_policy(env, model, te)
        col.add(ck, "train_return", r_tr)
        col.add(ck, "test_return", r_te)
        col.add(ck, "gap", gap(r_tr, r_te, "return"))
        obs = [Sample(env.reset(int(i)), key=int(i)) for i in tr]
        measure(col, cfg, ck, model, opt, rule, Probe(obs, None, policy=True))


def _chain(cfg: RunConfig):
    mdp, q, buf = D.chain_task(cfg.env, cfg.objective["gamma"], cfg.seed)
    return mdp, q, buf, mdp.features


def _policy_values(mdp, q, eps: float) -> np.ndarray:
    """Exact V of the epsilon-greedy expert."""
    n_a = mdp.n_actions
    pi = np.full((mdp.n_states, n_a), eps / n_a)
    pi[np.arange(mdp.n_states), np.argmax(q, axis=1)] += 1.0 - eps
    return exact_policy_value(mdp, pi)


def _policy_eval(cfg: RunConfig, col: Collector, out: Path):
    mdp, q, buf, feats = _chain(cfg)
    gamma = cfg.objective["gamma"]
    lam_mode = cfg.experiment == "policy-eval-td-lambda"
    spec = _spec(cfg, (feats.shape[1],), 1 if lam_mode else mdp.n_actions)
    model = init(spec, cfg.seed)
    nonterm = [s for s in range(mdp.n_states) if s not in mdp.terminal]
    if lam_mode:
        objective = Objective("regression")
        lam = cfg.objective["lam"]
        refresh = lambda p, gen: lambda_samples(buf, model, p, gamma, lam, feats, gen)
        data, v_true = None, _policy_values(mdp, q, cfg.env["expert_eps"])
    else:
        objective = Objective(_td_kind(cfg, "ql"), gamma)
        refresh, data = None, [sample_from_transition(t, feats) for t in buf]
    eval_obj = _eval_objective(model, gamma)
    transitions = [sample_from_transition(t, feats) for t in buf]
    rule = _rule(cfg)

    def extra(step, m, rule):
        out_v = forward(m, feats[nonterm])
        if lam_mode:
            col.add(step, "value_error", float(np.mean(np.abs(out_v[:, 0] - v_true[nonterm]))))
            samples = lambda_samples(buf, m, rule.target_params(m.params), gamma, lam, feats, rule.generation)
        else:
            col.add(step, "value_error", float(np.mean(np.abs(out_v - q[nonterm]))))
            col.add(step, "greedy_return", _greedy_return(mdp, m, feats))
            samples = data
        # TD-error sign variance is measured on the one-step TD loss, not the regression targets
        return Probe(samples, objective, eval_obj, trajectories=True, sign_samples=transitions)

    res = train(model, objective, data, _optimizer(cfg), rule, Schedule(cfg.steps, cfg.batch_size, cfg.checkpoint_every),
                cfg.seed, col.run_id, refresh, _checkpointer(col, cfg, out, extra))
    col.scalars += res.records


def _distill(cfg: RunConfig, col: Collector, out: Path):
    mdp, q, buf, feats = _chain(cfg)
    gamma = cfg.objective["gamma"]
    kind = cfg.objective["distill"]
    data = []
    for _, traj in sorted(buf.trajectories().items()):
        data += distill_samples(traj, q, gamma, feats)[kind]
    if not data:
        raise ValueError("no terminated trajectories for Monte-Carlo distillation")
    spec = _spec(cfg, (feats.shape[1],), mdp.n_actions)
    model = init(spec, cfg.seed)
    objective = Objective("regression")
    eval_obj = Objective("ql", gamma)
    nonterm = [s for s in range(mdp.n_states) if s not in mdp.terminal]

    def extra(step, m, rule):
        col.add(step, "value_error", float(np.mean(np.abs(forward(m, feats[nonterm]) - q[nonterm]))))
        col.add(step, "greedy_return", _greedy_return(mdp, m, feats))
        return Probe(data, objective, eval_obj, trajectories=True)

    res = train(model, objective, data, _optimizer(cfg), TargetRule("self"),
                Schedule(cfg.steps, cfg.batch_size, cfg.checkpoint_every), cfg.seed, col.run_id,
                on_checkpoint=_checkpointer(col, cfg, out, extra))
    col.scalars += res.records


def tabular_task(cfg: RunConfig):
    """Single-action chain paying 1 on termination; the behaviour policy is the only policy."""
    return chain_mdp(cfg.env["chain_length"], gamma=cfg.objective["gamma"], n_actions=1, slip=cfg.env["slip"])


def _tabular(cfg: RunConfig, col: Collector, out: Path):
    mdp = tabular_task(cfg)
    pi = uniform_policy(mdp)
    v_dp = dp_policy_evaluation(mdp, pi)
    v_td = tabular_td0(mdp, pi, cfg.env["alpha"], cfg.env["episodes"], cfg.seed)
    mc, se = mc_policy_evaluation(mdp, pi, TABULAR_MC_EPISODES, Rng(derive_seed(cfg.seed, "mc")))
    z = [abs(mc[s] - v_dp[s]) / se[s] for s in range(mdp.n_states) if s not in mdp.terminal and se[s] > 0]
    step = cfg.env["episodes"]
    col.add(step, "td0_sup_error", float(np.max(np.abs(v_td - v_dp))))
    col.add(step, "mc_max_z", max(z) if z else None)
    for s in range(mdp.n_states):
        col.add(step, f"v_dp_{s}", float(v_dp[s]))
        col.add(step, f"v_td0_{s}", float(v_td[s]))


EXPERIMENT_FNS = {
    "classify": _supervised, "regress": _supervised, "ddqn": _control, "reinforce": _reinforce,
    "policy-eval-ql": _policy_eval, "policy-eval-td-lambda": _policy_eval, "distill": _distill,
    "tabular": _tabular,
}


# ---------------------------------------------------------------------------
# entry point


def derived_seeds(cfg: RunConfig) -> dict:
    s = cfg.seed
    return {"init": derive_seed(s, "init"), "minibatch": derive_seed(s, "minibatch"),
            "online": derive_seed(s, "online"), "expert": derive_seed(s, "expert"),
            "pairs_ck0": derive_seed(s, "pairs", 0), "data": cfg.env["data_seed"]}


def _write(path: Path, text: str):
    path.write_text(text, newline="")


def run(config, out_root=None) -> Path:
    """Execute one configured run; returns its directory (``<root>/<config name>``).

    An existing directory of the same name is replaced.
    """
    cfg = load_config(config)
    out = output_root(out_root) / cfg.name()
    if out.exists():
        shutil.rmtree(out)
    (out / "checkpoints").mkdir(parents=True)
    col = Collector(cfg.name())
    EXPERIMENT_FNS[cfg.experiment](cfg, col, out)
    files = ["scalars.csv"]
    _write(out / "scalars.csv", scalars_csv(sorted(col.scalars, key=lambda r: r.step)))
    m = cfg.metrics
    if m["interference"] and col.interference:
        _write(out / "interference.csv", interference_csv(col.interference))
        files.append("interference.csv")
    if m["gain_curve"] and col.gains:
        _write(out / "gain_curve.csv", gain_csv(col.gains))
        files.append("gain_curve.csv")
    if m["stiffness_curve"] and col.stiffness:
        _write(out / "stiffness_curve.csv", stiffness_csv(col.stiffness))
        files.append("stiffness_curve.csv")
    if m["rho_prime"] and col.rho_prime:
        _write(out / "rho_prime.csv", rho_prime_csv(col.rho_prime))
        files.append("rho_prime.csv")
    manifest = {
        "run_id": cfg.name(), "version": __version__, "config": cfg.to_dict(), "digest": cfg.digest(),
        "defaults": {"top": TOP_DEFAULTS, "env": ENV_DEFAULTS, "model": MODEL_DEFAULTS,
                     "optimizer": OPTIMIZER_DEFAULTS, "objective": OBJECTIVE_DEFAULTS,
                     "target": TARGET_DEFAULTS, "metrics": METRIC_DEFAULTS},
        "seeds": derived_seeds(cfg), "conventions": CONVENTIONS,
        "constants": {"sign_window": SIGN_WINDOW, "tabular_mc_episodes": TABULAR_MC_EPISODES},
        "headers": {"scalars.csv": SCALARS_HEADER, "interference.csv": INTERFERENCE_HEADER,
                    "gain_curve.csv": GAIN_HEADER, "stiffness_curve.csv": STIFFNESS_HEADER,
                    "rho_prime.csv": RHO_PRIME_HEADER},
        "files": files,
    }
    _write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out
