"""CSV writers with fixed headers; missing values are written as ``NA``."""

from __future__ import annotations

import csv
import io

from ..records import fmt

INTERFERENCE_HEADER = ["checkpoint", "pair_a", "pair_b", "rho", "rho_bar", "stiffness", "delta_a", "delta_b"]
GAIN_HEADER = ["checkpoint", "offset", "mean_gain", "count"]
STIFFNESS_HEADER = ["checkpoint", "offset", "mean_stiffness", "count"]
SCALARS_HEADER = ["checkpoint", "metric", "value"]


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def interference_csv(records) -> str:
    return _csv(INTERFERENCE_HEADER, [[r.checkpoint, r.pair_a, r.pair_b, fmt(r.rho), fmt(r.rho_bar),
                                       fmt(r.stiffness), fmt(r.delta_a), fmt(r.delta_b)] for r in records])


def gain_csv(curves) -> str:
    """``curves``: iterable of (checkpoint, GainCurve)."""
    rows = []
    for ck, c in curves:
        rows += [[ck, k, fmt(m), n] for k, m, n in zip(c.offsets, c.mean_gain, c.counts)]
    return _csv(GAIN_HEADER, rows)


def stiffness_csv(curves) -> str:
    """``curves``: iterable of (checkpoint, GainCurve holding mean cosines)."""
    rows = []
    for ck, c in curves:
        rows += [[ck, k, fmt(m), n] for k, m, n in zip(c.offsets, c.mean_gain, c.counts)]
    return _csv(STIFFNESS_HEADER, rows)


def scalars_csv(records) -> str:
    """``records``: MetricRecords, written as (step, metric, value)."""
    return _csv(SCALARS_HEADER, [[r.step, r.metric, fmt(r.value)] for r in records])


def read_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))
