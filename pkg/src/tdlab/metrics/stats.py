"""Correlation, generalization gap and singular values."""

from __future__ import annotations

import math

import numpy as np


def pearson_r(xs, ys) -> float | None:
    """Sample correlation coefficient; ``None`` when either variance is zero."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson_r needs two 1-D sequences of equal length")
    if len(x) < 2:
        raise ValueError("pearson_r needs at least two points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return None
    return float(min(1.0, max(-1.0, float(dx @ dy) / math.sqrt(sxx * syy))))


GAP_KINDS = ("loss", "accuracy", "return")


def gap(train_value: float, test_value: float, kind: str) -> float:
    """Positive means overfitting: test - train for losses, train - test otherwise."""
    if kind not in GAP_KINDS:
        raise ValueError(f"metric kind must be one of {GAP_KINDS}")
    return test_value - train_value if kind == "loss" else train_value - test_value


def generalization_gap(metric, train, test, kind: str) -> float:
    """``gap(metric(train), metric(test), kind)`` for a split-level metric callable."""
    if len(train) == 0 or len(test) == 0:
        raise ValueError("generalization gap needs nonempty train and test splits")
    return gap(float(metric(train)), float(metric(test)), kind)


def singular_values(a, tol: float = 1e-15, max_sweeps: int = 100) -> np.ndarray:
    """Singular values (descending) by one-sided Jacobi rotations of the columns."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("singular_values needs a 2-D matrix")
    u = a.T.copy() if a.shape[1] > a.shape[0] else a.copy()
    n = u.shape[1]
    for _ in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = u[:, i] @ u[:, i]
                beta = u[:, j] @ u[:, j]
                gamma = u[:, i] @ u[:, j]
                if abs(gamma) <= tol * math.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                ui = u[:, i].copy()
                u[:, i] = c * ui - s * u[:, j]
                u[:, j] = s * ui + c * u[:, j]
        if not rotated:
            break
    sv = np.sqrt(np.sum(u * u, axis=0))
    return np.sort(sv)[::-1]


def singular_spread(a) -> dict:
    """Summary of the singular-value spectrum of a weight matrix."""
    sv = singular_values(a)
    nz = sv[sv > 0]
    return {"max": float(sv[0]), "min": float(sv[-1]),
            "ratio": float(sv[0] / sv[-1]) if sv[-1] > 0 else None,
            "entropy": float(-np.sum((p := nz / nz.sum()) * np.log(p))) if len(nz) else None}
