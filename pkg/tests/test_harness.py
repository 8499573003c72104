import json

import numpy as np
import pytest
from click.testing import CliRunner

from tdlab.harness import runner as runner_mod
from tdlab.harness.cli import main
from tdlab.harness.config import ConfigError, RunConfig, load_config
from tdlab.harness.report import bootstrap_r, load_runs, report_correlations, report_curves
from tdlab.harness.runner import run
from tdlab.harness.sweep import expand, sweep
from tdlab.metrics import pearson_r
from tdlab.rng import Rng

SMALL = {"experiment": "regress", "n_train": 20, "n_test": 20, "steps": 40, "checkpoint_every": 20,
         "model": {"n_h": 8},
         "metrics": {"n_pairs": 9, "gain_updates": 2, "stiffness_updates": 2, "rho_prime_pairs": 2, "max_offset": 3}}
TOGGLES = ("interference", "gain_curve", "stiffness_curve", "rho_prime", "sign_variance", "singular_values")
CSVS = ("scalars.csv", "interference.csv", "gain_curve.csv", "stiffness_curve.csv", "rho_prime.csv")


def csv_bytes(d):
    return {n: (d / n).read_bytes() for n in CSVS if (d / n).exists()}


# --- config ------------------------------------------------------------------------

def test_config_rejects_unknown_and_invalid():
    with pytest.raises(ConfigError) as exc:
        RunConfig.from_dict({"experiment": "regress", "stpes": 3, "model": {"n_hidden": 4, "kind": "rnn"},
                             "optimizer": {"beta": 1.2}})
    probs = exc.value.problems
    assert "stpes: unknown key" in probs and "model.n_hidden: unknown key" in probs
    assert any(p.startswith("model.kind") for p in probs) and any(p.startswith("optimizer.beta") for p in probs)
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"experiment": "atari"})
    with pytest.raises(ConfigError):
        load_config("{not json")
    assert load_config({"experiment": "policy-eval-tdλ", "target": {"kind": "frozen"}}).experiment == \
        "policy-eval-td-lambda"


def test_config_round_trip():
    cfg = load_config(SMALL)
    assert load_config(cfg.canonical_json()) == cfg
    assert cfg.digest() == load_config(json.loads(cfg.canonical_json())).digest()


# --- runs ---------------------------------------------------------------------------

def test_run_deterministic(tmp_path):
    a = run({**SMALL, "run_id": "a"}, tmp_path / "1")
    b = run({**SMALL, "run_id": "a"}, tmp_path / "2")
    assert csv_bytes(a) == csv_bytes(b) and len(csv_bytes(a)) >= 3
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["config"] == load_config({**SMALL, "run_id": "a"}).to_dict()
    assert set(manifest["files"]) <= set(CSVS) and "seeds" in manifest and "conventions" in manifest


def test_toggles_off_only_scalars(tmp_path):
    d = run({**SMALL, "metrics": {k: False for k in TOGGLES}}, tmp_path)
    assert sorted(p.name for p in d.iterdir() if p.is_file()) == ["manifest.json", "scalars.csv"]


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv(runner_mod.OUT_ENV, str(tmp_path / "envroot"))
    d = run({**SMALL, "run_id": "env"})
    assert d == tmp_path / "envroot" / "env"


def test_tabular_run_matches_dp(tmp_path):
    cfg = {"experiment": "tabular", "env": {"chain_length": 5, "episodes": 20_000}}
    d = run(cfg, tmp_path)
    rows = {r.split(",")[1]: float(r.split(",")[2]) for r in (d / "scalars.csv").read_text().splitlines()[1:]}
    assert rows["td0_sup_error"] < 2e-2 and rows["mc_max_z"] < 3


# --- sweeps ----------------------------------------------------------------------------

GRID = {"name": "g", "base": SMALL, "grid": {"model.n_h": [4, 8], "n_train": [10, 15, 20]}}


def test_expand_counts_and_validation():
    name, cfgs = expand(GRID)
    assert name == "g" and len(cfgs) == 18
    assert cfgs[0].run_id == "g-model.n_h=4-n_train=10-seed=0"
    assert len({c.run_id for c in cfgs}) == 18
    with pytest.raises(ConfigError) as exc:
        expand({"base": SMALL, "grid": {"model.n_h": [0]}, "seeds": 1})
    assert exc.value.problems[0].startswith("regress-model.n_h=0-seed=0: model.n_h")


def test_sweep_isolates_failures(tmp_path, monkeypatch):
    real = runner_mod.EXPERIMENT_FNS["regress"]

    def flaky(cfg, col, out):
        if cfg.run_id == "g-model.n_h=8-n_train=15-seed=1":
            raise RuntimeError("planted failure")
        return real(cfg, col, out)

    monkeypatch.setitem(runner_mod.EXPERIMENT_FNS, "regress", flaky)
    root, statuses = sweep(GRID, 1, tmp_path)
    assert len(statuses) == 18 and sum(s.ok for s in statuses) == 17
    bad = [s for s in statuses if not s.ok][0]
    assert "planted failure" in bad.error
    summary = json.loads((root / "sweep.json").read_text())
    assert summary["n_runs"] == 18 and summary["n_failed"] == 1


def test_sweep_parallel_matches_serial(tmp_path):
    grid = {"name": "p", "base": SMALL, "grid": {"model.n_h": [4, 8]}, "seeds": 2}
    r1, s1 = sweep(grid, 1, tmp_path / "serial")
    r2, s2 = sweep(grid, 2, tmp_path / "parallel")
    assert [s.run_id for s in s1] == [s.run_id for s in s2] and all(s.ok for s in s1 + s2)
    for s in s1:
        assert csv_bytes(r1 / s.run_id) == csv_bytes(r2 / s.run_id)


# --- reports on planted runs --------------------------------------------------------

def plant(root, run_id, experiment="regress", n_train=20, scalars=None, lam=0.0, n_h=16, tables=None):
    d = root / run_id
    d.mkdir(parents=True)
    cfg = load_config({"experiment": experiment, "n_train": n_train, "run_id": run_id, "model": {"n_h": n_h},
                       "objective": {"lam": lam}, "target": {"kind": "frozen"}}).to_dict()
    (d / "manifest.json").write_text(json.dumps({"run_id": run_id, "config": cfg}))
    lines = ["checkpoint,metric,value"] + [f"100,{k},{v!r}" for k, v in (scalars or {}).items()]
    (d / "scalars.csv").write_text("\n".join(lines) + "\n")
    for name, text in (tables or {}).items():
        (d / name).write_text(text)
    return d


def planted_corr(tmp_path, sign, noise=0.0, n=6):
    rng = Rng(1)
    for nt in (20, 50):
        for i in range(n):
            rb = float(np.exp(rng.normal()))
            g = sign * rb + noise * float(rng.normal())
            plant(tmp_path / "runs", f"r{nt}-{i}", n_train=nt, scalars={"rho_bar_mean": rb, "gap": g})
    return load_runs(tmp_path / "runs")


@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_report_planted_correlation(tmp_path, sign):
    runs = planted_corr(tmp_path, sign)
    summary = report_correlations(runs, tmp_path / "rep", log_rho=False, n_boot=200)
    rows = summary["correlations"]
    assert len(rows) == 2 and all(r["r"] == pytest.approx(sign, abs=1e-12) for r in rows)
    for name in ("correlations.csv", "scatter.csv", "regression_lines.csv", "gap_vs_ntrain.csv",
                 "capacity.csv", "report.json"):
        assert (tmp_path / "rep" / name).exists()
    header = (tmp_path / "rep" / "correlations.csv").read_text().splitlines()[0]
    assert header == "experiment,n_train,n_runs,n_dropped,r,ci_low,ci_high,status"


def test_report_log_rho_and_missing_group(tmp_path):
    root = tmp_path / "runs"
    for i, rb in enumerate([0.5, 1.0, 2.0, 4.0]):
        plant(root, f"a{i}", scalars={"rho_bar_mean": rb, "gap": float(np.log(rb))})
    plant(root, "b0", n_train=50, scalars={"rho_bar_mean": 1.0, "gap": 0.1})
    plant(root, "b1", n_train=50, scalars={"rho_bar_mean": -1.0, "gap": 0.1})
    summary = report_correlations(load_runs(root), tmp_path / "rep", n_boot=100)
    by = {r["n_train"]: r for r in summary["correlations"]}
    assert by[20]["r"] == pytest.approx(1.0, abs=1e-12)
    assert by[50]["status"] == "missing" and by[50]["r"] is None and by[50]["n_dropped"] == 1


def test_bootstrap_ci_contains_plugin_r():
    rng = Rng(3)
    x = rng.normal(40)
    y = 0.8 * x + 0.6 * rng.normal(40)
    r = pearson_r(x, y)
    lo, hi = bootstrap_r(x, y, 1000)
    assert lo < r < hi and hi - lo < 0.5
    assert bootstrap_r(x, y, 1000) == (lo, hi)


def test_report_does_not_touch_runs(tmp_path):
    runs = planted_corr(tmp_path, 1.0)
    before = {p: p.read_bytes() for p in (tmp_path / "runs").rglob("*") if p.is_file()}
    report_correlations(runs, tmp_path / "rep", n_boot=50)
    report_curves(runs, tmp_path / "rep2")
    after = {p: p.read_bytes() for p in (tmp_path / "runs").rglob("*") if p.is_file()}
    assert before == after
    with pytest.raises(ValueError):
        report_correlations(runs, runs[0].path / "inside", n_boot=10)


def stiffness_table(values):
    rows = ["checkpoint,offset,mean_stiffness,count"]
    rows += [f"100,{k},{v!r},1" for k, v in values.items()]
    return "\n".join(rows) + "\n"


def test_report_curves_lambda_grid(tmp_path):
    root = tmp_path / "runs"
    for lam in (0.0, 0.5, 0.9, 1.0):
        curve = {-1: 0.1 + lam / 2, 0: 1.0, 1: 0.1 + lam / 2}
        plant(root, f"pe-{lam}", "policy-eval-td-lambda", lam=lam,
              scalars={"stiffness_offcenter_mean": 0.1 + lam / 2},
              tables={"stiffness_curve.csv": stiffness_table(curve)})
    summary = report_curves(load_runs(root), tmp_path / "rep")
    groups = summary["groups"]
    assert len(groups) == 4
    finals = [groups[f"policy-eval-td-lambda|adam|lam={lam}|loss=auto"]["mean_final_stiffness"]
              for lam in (0.0, 0.5, 0.9, 1.0)]
    assert finals == sorted(finals)
    lines = (tmp_path / "rep" / "stiffness_curves.csv").read_text().splitlines()
    assert lines[0] == "group,offset,mean_stiffness,n_runs" and len(lines) == 1 + 4 * 3
    assert any("gain panel omitted" in n for n in summary["notices"])


def test_report_curves_single_run_and_sign_variance(tmp_path):
    root = tmp_path / "runs"
    plant(root, "one", "policy-eval-ql", tables={"stiffness_curve.csv": stiffness_table({0: 1.0, 2: 0.25})})
    s = report_curves(load_runs(root), tmp_path / "rep")
    rows = (tmp_path / "rep" / "stiffness_curves.csv").read_text().splitlines()[1:]
    assert rows == ["policy-eval-ql|adam|lam=0.0|loss=auto,0,1.0,1", "policy-eval-ql|adam|lam=0.0|loss=auto,2,0.25,1"]
    assert s["sign_variance_vs_reward"] is None
    root2 = tmp_path / "runs2"
    for i, sv in enumerate([0.1, 0.3, 0.2, 0.6]):
        plant(root2, f"d{i}", "ddqn", scalars={"sign_variance": sv, "train_return": -sv, "rho_bar_mean": 1.0})
    s2 = report_curves(load_runs(root2), tmp_path / "rep2")
    assert s2["sign_variance_vs_reward"]["r"] == pytest.approx(-1.0, abs=1e-12)
    assert s2["sign_variance_vs_rho_bar"]["r"] is None


# --- CLI ----------------------------------------------------------------------------------

def test_cli_exit_codes(tmp_path):
    cli = CliRunner()
    res = cli.invoke(main, ["run", "-c", json.dumps({"experiment": "regress", "bogus": 1})])
    assert res.exit_code == 2 and "bogus: unknown key" in res.output
    res = cli.invoke(main, ["run", "-c", json.dumps({**SMALL, "run_id": "cli"}), "-o", str(tmp_path)])
    assert res.exit_code == 0 and (tmp_path / "cli" / "scalars.csv").exists()
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"name": "s", "base": SMALL, "grid": {"n_train": [0, 10]}, "seeds": 1}))
    res = cli.invoke(main, ["sweep", "-c", str(grid), "-o", str(tmp_path)])
    assert res.exit_code == 1 and "1/2 runs completed" in res.output
    res = cli.invoke(main, ["report", "correlations", "-i", str(tmp_path / "s"), "-o", str(tmp_path / "rep")])
    assert res.exit_code == 0 and "missing" in res.output
    res = cli.invoke(main, ["report", "curves", "-i", str(tmp_path / "nothing_here")])
    assert res.exit_code != 0
    res = cli.invoke(main, ["env", "inspect", "-c", json.dumps({"experiment": "tabular", "env": {"chain_length": 3}})])
    assert res.exit_code == 0 and json.loads(res.output)


def test_cli_verify_quick(tmp_path):
    res = CliRunner().invoke(main, ["verify", "--quick", "--json", str(tmp_path / "v.json")])
    assert res.exit_code == 0, res.output
    checks = json.loads((tmp_path / "v.json").read_text())
    assert checks and all(c["passed"] for c in checks)
    assert any(c["name"] == "misprinted_r2_coefficient_rejected" for c in checks)
