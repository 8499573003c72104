"""Run configuration: one JSON document per run, unknown keys rejected."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

EXPERIMENTS = ("classify", "regress", "ddqn", "reinforce", "policy-eval-ql", "policy-eval-td-lambda",
               "distill", "tabular")

# Per-section defaults; a key absent here is not accepted.
ENV_DEFAULTS = {
    # glyph images (classify / ddqn / reinforce)
    "n_classes": 10, "image_size": 16, "noise": 0.15, "window": 8, "move": 4, "t_max": 20,
    "data_seed": 0,
    # regression
    "dim": 8, "teacher_hidden": 16, "label_noise": 0.1,
    # chain MDP (policy evaluation / distill / tabular)
    "chain_length": 20, "slip": 0.1, "features": "rbf", "n_features": 8, "rbf_width": 0.15, "buffer_size": 600,
    "expert_eps": 0.05, "episodes": 100_000, "alpha": 0.1,
}
MODEL_DEFAULTS = {"kind": "mlp", "n_h": 32, "n_L": 0, "activation": "leaky_relu", "slope": 0.01}
OPTIMIZER_DEFAULTS = {"kind": "adam", "lr": 1e-3, "weight_decay": 0.0, "beta": 0.9, "beta1": 0.9,
                      "beta2": 0.999, "alpha": 0.99, "eps": 1e-8}
OBJECTIVE_DEFAULTS = {"loss": "auto", "gamma": 0.99, "lam": 0.0, "distill": "reg", "eps_greedy": 0.1}
TARGET_DEFAULTS = {"kind": "frozen", "k": 10_000, "tau": 0.01}
METRIC_DEFAULTS = {
    "interference": True, "n_pairs": 64, "gain_curve": True, "gain_updates": 16, "max_offset": 30,
    "stiffness_curve": True, "stiffness_updates": 32, "rho_prime": True, "rho_prime_pairs": 8,
    "fd_alpha": 1e-6, "sign_variance": True, "singular_values": True, "shadow_delta": True,
}
SECTIONS = {"env": ENV_DEFAULTS, "model": MODEL_DEFAULTS, "optimizer": OPTIMIZER_DEFAULTS,
            "objective": OBJECTIVE_DEFAULTS, "target": TARGET_DEFAULTS, "metrics": METRIC_DEFAULTS}
TOP_DEFAULTS = {"seed": 0, "n_train": 100, "n_test": 200, "steps": 2000, "batch_size": 32,
                "checkpoint_every": 500, "run_id": None}

ALIASES = {"policy-eval-tdλ": "policy-eval-td-lambda"}

OPTIMIZER_HYPER = {"sgd": (), "momentum": ("beta",), "rmsprop": ("alpha", "eps"),
                   "adam": ("beta1", "beta2", "eps")}


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists each offending key with a reason."""

    def __init__(self, problems: list[str]):
        super().__init__("invalid config: " + "; ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    seed: int = 0
    n_train: int = 100  # n_T: number of training seeds / examples
    n_test: int = 200
    steps: int = 2000
    batch_size: int = 32
    checkpoint_every: int = 500
    run_id: str | None = None
    env: dict = field(default_factory=lambda: dict(ENV_DEFAULTS))
    model: dict = field(default_factory=lambda: dict(MODEL_DEFAULTS))
    optimizer: dict = field(default_factory=lambda: dict(OPTIMIZER_DEFAULTS))
    objective: dict = field(default_factory=lambda: dict(OBJECTIVE_DEFAULTS))
    target: dict = field(default_factory=lambda: dict(TARGET_DEFAULTS))
    metrics: dict = field(default_factory=lambda: dict(METRIC_DEFAULTS))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError(["<root>: expected a JSON object"])
        d = dict(d)
        d["experiment"] = ALIASES.get(d.get("experiment"), d.get("experiment"))
        problems = []
        allowed = set(TOP_DEFAULTS) | set(SECTIONS) | {"experiment"}
        problems += [f"{k}: unknown key" for k in sorted(set(d) - allowed)]
        if d.get("experiment") not in EXPERIMENTS:
            problems.append(f"experiment: must be one of {list(EXPERIMENTS)}")
        kw = {k: d.get(k, v) for k, v in TOP_DEFAULTS.items()}
        for name, defaults in SECTIONS.items():
            sec = d.get(name, {})
            if not isinstance(sec, dict):
                problems.append(f"{name}: expected an object")
                sec = {}
            problems += [f"{name}.{k}: unknown key" for k in sorted(set(sec) - set(defaults))]
            kw[name] = {**defaults, **{k: v for k, v in sec.items() if k in defaults}}
        for k in ("seed", "n_train", "n_test", "steps", "batch_size", "checkpoint_every"):
            v = kw[k]
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                problems.append(f"{k}: expected a nonnegative integer")
        if isinstance(kw["batch_size"], int) and kw["batch_size"] < 1:
            problems.append("batch_size: must be >= 1")
        if kw["run_id"] is not None and not isinstance(kw["run_id"], str):
            problems.append("run_id: expected a string")
        problems += _check_sections(kw, d.get("experiment"))
        if problems:
            raise ConfigError(problems)
        return cls(experiment=d["experiment"], **kw)

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:12]

    def name(self) -> str:
        return self.run_id or f"{self.experiment}-{self.digest()}"


def _check_sections(kw, experiment) -> list[str]:
    p = []
    m, o, ob, t, e = kw["model"], kw["optimizer"], kw["objective"], kw["target"], kw["env"]
    if m["kind"] not in ("linear", "mlp", "conv"):
        p.append("model.kind: must be linear, mlp or conv")
    if m["activation"] not in ("leaky_relu", "tanh"):
        p.append("model.activation: must be leaky_relu or tanh")
    for k in ("n_h", "n_L"):
        if not isinstance(m[k], int) or m[k] < (1 if k == "n_h" else 0):
            p.append(f"model.{k}: out of range")
    if o["kind"] not in OPTIMIZER_HYPER:
        p.append(f"optimizer.kind: must be one of {list(OPTIMIZER_HYPER)}")
    if not isinstance(o["lr"], (int, float)) or o["lr"] < 0:
        p.append("optimizer.lr: must be >= 0")
    for k in ("beta", "beta1", "beta2", "alpha"):
        if not 0.0 <= o[k] < 1.0:
            p.append(f"optimizer.{k}: must lie in [0, 1)")
    if not 0.0 <= ob["gamma"] <= 1.0:
        p.append("objective.gamma: must lie in [0, 1]")
    if not 0.0 <= ob["lam"] <= 1.0:
        p.append("objective.lam: must lie in [0, 1]")
    if ob["loss"] not in ("auto", "td0", "ql", "ddqn"):
        p.append("objective.loss: must be auto, td0, ql or ddqn")
    if ob["distill"] not in ("mc", "reg", "td_star"):
        p.append("objective.distill: must be mc, reg or td_star")
    if t["kind"] not in ("self", "frozen", "ema"):
        p.append("target.kind: must be self, frozen or ema")
    if not isinstance(t["k"], int) or t["k"] < 1:
        p.append("target.k: must be a positive integer")
    if not 0.0 < t["tau"] <= 1.0:
        p.append("target.tau: must lie in (0, 1]")
    if e["features"] not in ("onehot", "rbf"):
        p.append("env.features: must be onehot or rbf")
    mt = kw["metrics"]
    for k in ("n_pairs", "gain_updates", "max_offset", "stiffness_updates", "rho_prime_pairs"):
        if not isinstance(mt[k], int) or mt[k] < 1:
            p.append(f"metrics.{k}: must be a positive integer")
    if isinstance(mt["n_pairs"], int) and mt["n_pairs"] >= 1 and math.isqrt(mt["n_pairs"]) ** 2 != mt["n_pairs"]:
        p.append("metrics.n_pairs: must be a perfect square (sqrt(n) draws per side)")
    if not mt["fd_alpha"] > 0:
        p.append("metrics.fd_alpha: must be positive")
    if m["kind"] == "conv" and e["image_size"] < 14:
        p.append("env.image_size: conv models need images of at least 14x14")
    if experiment == "policy-eval-td-lambda" and t["kind"] == "self" and ob["lam"] > 0:
        p.append("target.kind: lambda-returns are recomputed at shadow refreshes; use frozen or ema")
    return p


def load_config(source) -> RunConfig:
    """From a dict, a JSON string or a path to a JSON file."""
    if isinstance(source, RunConfig):
        return source
    if isinstance(source, dict):
        return RunConfig.from_dict(source)
    text = str(source)
    if isinstance(source, Path) or not text.lstrip().startswith("{"):
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ConfigError([f"<root>: cannot read config file ({exc.strerror})"]) from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"<root>: not valid JSON ({exc.msg})"]) from None
    return RunConfig.from_dict(d)
