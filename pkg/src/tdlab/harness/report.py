"""Figure pipelines over finished run directories.

Reports only read runs; everything they produce goes under the output
directory.  CSV tables are authoritative, SVG panels are conveniences.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..metrics import pearson_r, read_csv
from ..records import fmt, parse
from ..rng import Rng
from . import svg

BOOT_RESAMPLES = 1000
BOOT_LEVEL = 0.90
BOOT_SEED = 0
MIN_GROUP = 3
NORMALIZATION = "z-score of log rho_bar and of the gap within each experiment, then pooled"
GAP_CONVENTION = {"classify": "train - test accuracy", "regress": "test - train loss",
                  "ddqn": "train - test greedy return (gap_loss: test - train TD loss)",
                  "reinforce": "train - test greedy return"}


@dataclass
class RunData:
    path: Path
    manifest: dict
    scalars: dict = field(default_factory=dict)  # metric -> {step: value or None}

    @property
    def config(self) -> dict:
        return self.manifest["config"]

    @property
    def run_id(self) -> str:
        return self.manifest["run_id"]

    def final(self, metric: str):
        """Value at the last step that recorded ``metric`` (None when absent or missing)."""
        rows = self.scalars.get(metric)
        return rows[max(rows)] if rows else None

    def table(self, name: str) -> list[dict] | None:
        p = self.path / name
        return read_csv(p.read_text()) if p.exists() else None


def load_run(path) -> RunData:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    scalars = defaultdict(dict)
    for row in read_csv((path / "scalars.csv").read_text()):
        scalars[row["metric"]][int(row["checkpoint"])] = parse(row["value"])
    return RunData(path, manifest, dict(scalars))


def load_runs(dirs) -> list[RunData]:
    """Every run directory (one holding manifest.json) at or below ``dirs``, ordered by run id."""
    found = {}
    for d in [dirs] if isinstance(dirs, (str, Path)) else dirs:
        d = Path(d)
        if not d.exists():
            raise FileNotFoundError(f"no such directory: {d}")
        for m in sorted([d / "manifest.json"] if (d / "manifest.json").exists() else d.rglob("manifest.json")):
            found[m.parent.resolve()] = m.parent
    runs = [load_run(p) for p in found.values()]
    return sorted(runs, key=lambda r: r.run_id)


def _out_dir(out, runs) -> Path:
    out = Path(out).resolve()
    for r in runs:
        rp = r.path.resolve()
        if out == rp or rp in out.parents:
            raise ValueError(f"report output {out} lies inside run directory {rp}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, float) or v is None else v for v in row])
    path.write_text(buf.getvalue())


def _mean(vals):
    vals = [v for v in vals if v is not None and math.isfinite(v)]
    return float(math.fsum(vals) / len(vals)) if vals else None


def _std(vals):
    vals = [v for v in vals if v is not None and math.isfinite(v)]
    return float(np.std(vals, ddof=1)) if len(vals) > 1 else None


def bootstrap_r(xs, ys, n: int = BOOT_RESAMPLES, level: float = BOOT_LEVEL, seed: int = BOOT_SEED):
    """Percentile bootstrap interval for Pearson r; degenerate resamples are skipped."""
    xs, ys = np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)
    rng = Rng(seed)
    rs = []
    for _ in range(n):
        ix = rng.integers(len(xs), len(xs))
        r = pearson_r(xs[ix], ys[ix])
        if r is not None:
            rs.append(r)
    if not rs:
        return None, None
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(rs, [tail, 100.0 - tail])
    return float(lo), float(hi)


def _zscore(v: np.ndarray) -> np.ndarray:
    sd = v.std()
    return (v - v.mean()) / sd if sd > 0 else np.zeros_like(v)


# ---------------------------------------------------------------------------
# interference vs generalization


def report_correlations(runs, out, gap_metric: str = "gap", log_rho: bool = True, n_boot: int = BOOT_RESAMPLES,
                        seed: int = BOOT_SEED) -> dict:
    """Per (experiment, n_train) correlation of final rho_bar with the final generalization gap."""
    runs = load_runs(runs) if not (runs and isinstance(runs[0], RunData)) else runs
    out = _out_dir(out, runs)
    groups = defaultdict(list)
    for r in runs:
        groups[(r.config["experiment"], r.config["n_train"])].append(r)

    rows, points, notices = [], defaultdict(list), []
    for (exp, nt), members in sorted(groups.items()):
        xs, ys, dropped = [], [], 0
        for r in members:
            rb, g = r.final("rho_bar_mean"), r.final(gap_metric)
            if rb is None or g is None or (log_rho and rb <= 0):
                dropped += 1
                continue
            xs.append(math.log(rb) if log_rho else rb)
            ys.append(g)
            points[exp].append((r.run_id, nt, xs[-1], g))
        if len(xs) < MIN_GROUP:
            rows.append([exp, nt, len(members), dropped, None, None, None, "missing"])
            notices.append(f"{exp} n_train={nt}: {len(xs)} usable runs (< {MIN_GROUP}); group marked missing")
            continue
        r = pearson_r(xs, ys)
        lo, hi = bootstrap_r(xs, ys, n_boot, BOOT_LEVEL, seed) if r is not None else (None, None)
        rows.append([exp, nt, len(members), dropped, r, lo, hi, "ok" if r is not None else "degenerate"])
    _write_csv(out / "correlations.csv",
               ["experiment", "n_train", "n_runs", "n_dropped", "r", "ci_low", "ci_high", "status"], rows)

    # pooled scatter, z-scored per experiment
    scatter_rows, zs, lines = [], {}, {}
    for exp, pts in sorted(points.items()):
        x = np.array([p[2] for p in pts])
        y = np.array([p[3] for p in pts])
        zx, zy = _zscore(x), _zscore(y)
        zs[exp] = list(zip(zx.tolist(), zy.tolist()))
        if len(pts) >= 2 and zx.std() > 0:
            slope, icpt = np.polyfit(zx, zy, 1)
            lines[exp] = (float(slope), float(icpt))
        for (rid, nt, _, _), a, b, c, d in zip(pts, x, y, zx, zy):
            scatter_rows.append([exp, rid, nt, float(a), float(b), float(c), float(d)])
    xname = "log_rho_bar" if log_rho else "rho_bar"
    _write_csv(out / "scatter.csv", ["experiment", "run_id", "n_train", xname, "gap", "z_" + xname, "z_gap"],
               scatter_rows)
    _write_csv(out / "regression_lines.csv", ["experiment", "slope", "intercept"],
               [[e, a, b] for e, (a, b) in sorted(lines.items())])

    gap_rows = []
    for (exp, nt), members in sorted(groups.items()):
        g = [r.final(gap_metric) for r in members]
        gap_rows.append([exp, nt, len([v for v in g if v is not None]), _mean(g), _std(g)])
    _write_csv(out / "gap_vs_ntrain.csv", ["experiment", "n_train", "n_runs", "mean_gap", "std_gap"], gap_rows)

    cap = defaultdict(list)
    for r in runs:
        m = r.config["model"]
        cap[(r.config["experiment"], m["n_h"], m["n_L"])].append(r)
    cap_rows = [[exp, nh, nl, len(ms), _mean([r.final("rho_bar_mean") for r in ms]),
                 _mean([r.final("rho_mean") for r in ms]), _mean([r.final(gap_metric) for r in ms])]
                for (exp, nh, nl), ms in sorted(cap.items())]
    _write_csv(out / "capacity.csv",
               ["experiment", "n_h", "n_L", "n_runs", "mean_rho_bar", "mean_rho", "mean_gap"], cap_rows)

    for exp in sorted({k[0] for k in groups}):
        series = {exp: [(nt, r) for e, nt, _, _, r, *_ in rows if e == exp]}
        (out / f"correlation_{exp}.svg").write_text(
            svg.line_chart(series, f"r({xname}, gap) by n_train", "n_train", "r"))
    if zs:
        (out / "scatter.svg").write_text(svg.scatter_chart(zs, lines, "gap vs interference (z-scored)",
                                                           "z " + xname, "z gap"))
    summary = {"n_runs": len(runs), "gap_metric": gap_metric, "rho_axis": xname,
               "normalization": NORMALIZATION, "gap_convention": GAP_CONVENTION,
               "bootstrap": {"method": "percentile", "resamples": n_boot, "level": BOOT_LEVEL, "seed": seed},
               "correlations": [dict(zip(["experiment", "n_train", "n_runs", "n_dropped", "r", "ci_low", "ci_high",
                                          "status"], row)) for row in rows],
               "regression_lines": {e: {"slope": a, "intercept": b} for e, (a, b) in sorted(lines.items())},
               "notices": notices}
    (out / "report.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary


# ---------------------------------------------------------------------------
# temporal curves and sign variance


def curve_group(r: RunData) -> str:
    c = r.config
    return f"{c['experiment']}|{c['optimizer']['kind']}|lam={c['objective']['lam']}|loss={c['objective']['loss']}"


def _curve(rows, value: str, checkpoint: int | None = None) -> dict:
    """offset -> value at ``checkpoint`` (default: the last one in the table)."""
    if not rows:
        return {}
    ck = checkpoint if checkpoint is not None else max(int(r["checkpoint"]) for r in rows)
    return {int(r["offset"]): parse(r[value]) for r in rows if int(r["checkpoint"]) == ck}


def _mean_curves(curves) -> dict:
    offs = sorted({k for c in curves for k in c})
    return {k: (_mean([c.get(k) for c in curves]), sum(c.get(k) is not None for c in curves)) for k in offs}


def report_curves(runs, out) -> dict:
    """Final-checkpoint gain and stiffness curves averaged per group, sign-variance scatters, gain heatmaps."""
    runs = load_runs(runs) if not (runs and isinstance(runs[0], RunData)) else runs
    out = _out_dir(out, runs)
    groups = defaultdict(list)
    for r in runs:
        groups[curve_group(r)].append(r)
    notices, summary = [], {"n_runs": len(runs), "groups": {}}

    for table, value, stem in (("gain_curve.csv", "mean_gain", "gain"),
                               ("stiffness_curve.csv", "mean_stiffness", "stiffness")):
        rows, series = [], {}
        for g, members in sorted(groups.items()):
            curves = [_curve(r.table(table), value) for r in members if r.table(table) is not None]
            if not curves:
                continue
            mc = _mean_curves(curves)
            series[g] = [(k, v) for k, (v, _) in mc.items()]
            rows += [[g, k, v, n] for k, (v, n) in mc.items()]
            off = [v for k, (v, _) in mc.items() if k != 0]
            summary["groups"].setdefault(g, {})[f"{stem}_runs"] = len(curves)
            summary["groups"][g][f"mean_off_center_{stem}"] = _mean(off)
        if not rows:
            notices.append(f"{stem} panel omitted: no run carries {table}")
            continue
        _write_csv(out / f"{stem}_curves.csv", ["group", "offset", f"mean_{stem}", "n_runs"], rows)
        (out / f"{stem}_curves.svg").write_text(svg.line_chart(series, f"{stem} vs temporal offset", "offset", stem))

    # per-run final off-center stiffness, the quantity the lambda ordering is read from
    stiff = {g: _mean([r.final("stiffness_offcenter_mean") for r in ms]) for g, ms in groups.items()}
    for g, v in stiff.items():
        if v is not None:
            summary["groups"].setdefault(g, {})["mean_final_stiffness"] = v

    sv_rows, reward_pts, rho_pts = [], defaultdict(list), defaultdict(list)
    for r in runs:
        sv = r.final("sign_variance")
        metric = "train_return" if "train_return" in r.scalars else "greedy_return"
        rw, rb = r.final(metric), r.final("rho_bar_mean")
        if sv is None:
            continue
        sv_rows.append([r.run_id, curve_group(r), sv, rw, metric if rw is not None else None, rb])
        if rw is not None:
            reward_pts[r.config["experiment"]].append((sv, rw))
        if rb is not None:
            rho_pts[r.config["experiment"]].append((sv, rb))
    if sv_rows:
        _write_csv(out / "sign_variance.csv", ["run_id", "group", "sign_variance", "reward", "reward_metric",
                                               "rho_bar"], sv_rows)
    for name, pts, ylabel in (("reward", reward_pts, "final reward"), ("rho_bar", rho_pts, "final rho_bar")):
        flat = [p for ps in pts.values() for p in ps]
        if len(flat) < 2:
            notices.append(f"sign variance vs {name} panel omitted: fewer than two runs carry both metrics")
            summary[f"sign_variance_vs_{name}"] = None
            continue
        summary[f"sign_variance_vs_{name}"] = {"r": pearson_r([p[0] for p in flat], [p[1] for p in flat]),
                                               "n": len(flat)}
        (out / f"sign_variance_vs_{name}.svg").write_text(
            svg.scatter_chart(dict(pts), None, f"sign variance vs {name}", "sign variance", ylabel))

    heat_rows = []
    for g, members in sorted(groups.items()):
        tabs = [r.table("gain_curve.csv") for r in members]
        tabs = [t for t in tabs if t]
        if not tabs:
            continue
        cells = defaultdict(list)
        for t in tabs:
            for row in t:
                cells[(int(row["checkpoint"]), int(row["offset"]))].append(parse(row["mean_gain"]))
        cks = sorted({c for c, _ in cells})
        offs = sorted({o for _, o in cells})
        grid = [[_mean(cells.get((c, o), [])) for o in offs] for c in cks]
        heat_rows += [[g, c, o, grid[i][j], len(cells.get((c, o), []))]
                      for i, c in enumerate(cks) for j, o in enumerate(offs)]
        safe = g.replace("|", "_").replace("=", "")
        (out / f"gain_heatmap_{safe}.svg").write_text(
            svg.heatmap(cks, offs, grid, f"gain, {g}", "offset", "checkpoint"))
    if heat_rows:
        _write_csv(out / "gain_heatmap.csv", ["group", "checkpoint", "offset", "mean_gain", "n_runs"], heat_rows)
    else:
        notices.append("gain heatmap omitted: no run carries gain_curve.csv")
    summary["notices"] = notices
    (out / "curves.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary
