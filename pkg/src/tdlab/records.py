"""Metric rows shared by training loops, metrics and the harness."""

from __future__ import annotations

import math
from dataclasses import dataclass

MISSING = "NA"


@dataclass(frozen=True)
class MetricRecord:
    run_id: str
    step: int
    metric: str
    value: float | None  # None = missing, never zero-filled

    @property
    def is_missing(self) -> bool:
        return self.value is None or (isinstance(self.value, float) and math.isnan(self.value))


def fmt(value) -> str:
    """Format a float for CSV output; missing values become ``NA``."""
    if value is None:
        return MISSING
    value = float(value)
    if math.isnan(value):
        return MISSING
    return repr(value)


def parse(text: str) -> float | None:
    return None if text == MISSING else float(text)
