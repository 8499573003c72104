"""Grid sweeps: cross product of axes x repetition seeds, one independent run directory each.

Grid document::

    {"name": "capacity",                      # optional, defaults to the base experiment
     "base": {...run config...},
     "grid": {"n_train": [20, 50], "model.n_h": [16, 32]},
     "seeds": 3}                              # count (0..n-1) or explicit list; default 3

Dotted axis keys address a config section.  Runs are validated before any
starts; a run that fails at execution time is reported in ``sweep.json``
without stopping its siblings.
"""

from __future__ import annotations

import copy
import itertools
import json
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import ConfigError, RunConfig
from .runner import output_root, run

DEFAULT_SEEDS = 3
GRID_KEYS = {"name", "base", "grid", "seeds"}


@dataclass
class RunStatus:
    run_id: str
    path: str | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _set(d: dict, key: str, value):
    *sections, leaf = key.split(".")
    for s in sections:
        d = d.setdefault(s, {})
        if not isinstance(d, dict):
            raise ConfigError([f"grid.{key}: {s} is not a section"])
    d[leaf] = value


def _label(v) -> str:
    s = v if isinstance(v, str) else json.dumps(v, separators=(",", ""))
    return s.replace("/", "_").replace(" ", "")


def load_grid(source) -> dict:
    if isinstance(source, dict):
        return source
    text = str(source)
    if not text.lstrip().startswith("{"):
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ConfigError([f"<root>: cannot read grid file ({exc.strerror})"]) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"<root>: not valid JSON ({exc.msg})"]) from None


def expand(grid_doc) -> tuple[str, list[RunConfig]]:
    """Sweep name and the validated run configs, in axis order then seed order."""
    g = load_grid(grid_doc)
    if not isinstance(g, dict):
        raise ConfigError(["<root>: expected a JSON object"])
    problems = [f"{k}: unknown key" for k in sorted(set(g) - GRID_KEYS)]
    base, axes = g.get("base", {}), g.get("grid", {})
    if not isinstance(base, dict):
        problems.append("base: expected an object")
    if not isinstance(axes, dict) or any(not isinstance(v, list) or not v for v in axes.values()):
        problems.append("grid: expected an object of nonempty lists")
    seeds = g.get("seeds", DEFAULT_SEEDS)
    if isinstance(seeds, int) and not isinstance(seeds, bool) and seeds >= 1:
        seeds = list(range(seeds))
    elif not (isinstance(seeds, list) and seeds and all(isinstance(s, int) and s >= 0 for s in seeds)):
        problems.append("seeds: expected a positive count or a list of nonnegative integers")
    if problems:
        raise ConfigError(problems)
    name = g.get("name") or base.get("experiment", "sweep")
    keys = list(axes)
    configs = []
    for combo in itertools.product(*(axes[k] for k in keys)):
        for seed in seeds:
            d = copy.deepcopy(base)
            for k, v in zip(keys, combo):
                _set(d, k, v)
            d["seed"] = seed
            parts = [name] + [f"{k}={_label(v)}" for k, v in zip(keys, combo)] + [f"seed={seed}"]
            d["run_id"] = "-".join(parts)
            try:
                configs.append(RunConfig.from_dict(d))
            except ConfigError as exc:
                problems += [f"{d['run_id']}: {p}" for p in exc.problems]
    if problems:
        raise ConfigError(problems)
    return name, configs


def _worker(args) -> RunStatus:
    cfg_dict, root = args
    try:
        return RunStatus(cfg_dict["run_id"], str(run(cfg_dict, root)))
    except Exception as exc:  # isolate: one bad run never stops the sweep
        tb = traceback.format_exception_only(type(exc), exc)[-1].strip()
        return RunStatus(cfg_dict["run_id"], None, tb)


def sweep(grid_doc, jobs: int = 1, out_root=None) -> tuple[Path, list[RunStatus]]:
    """Run every config of the grid; returns the sweep directory and per-run statuses."""
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    name, configs = expand(grid_doc)
    root = output_root(out_root) / name
    root.mkdir(parents=True, exist_ok=True)
    tasks = [(c.to_dict(), str(root)) for c in configs]
    if jobs == 1:
        statuses = [_worker(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            statuses = list(ex.map(_worker, tasks))
    summary = {"name": name, "n_runs": len(statuses), "n_failed": sum(not s.ok for s in statuses),
               "runs": [{"run_id": s.run_id, "path": Path(s.path).name if s.path else None, "error": s.error}
                        for s in statuses]}
    (root / "sweep.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return root, statuses
