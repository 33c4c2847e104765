"""Structured results of identity checks."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    return value


@dataclass
class CheckReport:
    """Both sides of one verified relation plus the verdict.

    ``gap`` is the quantity compared against ``tolerance``; depending on the
    check it is an absolute or a relative discrepancy (``details['gap_kind']``).
    """

    name: str
    lhs: float
    rhs: float
    gap: float
    tolerance: float
    passed: bool
    paper_anchor: str = ""
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def abs_gap(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def rel_gap(self) -> float:
        scale = max(abs(self.lhs), abs(self.rhs))
        return self.abs_gap / scale if scale > 0 else 0.0

    def to_dict(self) -> dict[str, Any]:
        return _jsonable(
            {
                "name": self.name,
                "paper_anchor": self.paper_anchor,
                "lhs": self.lhs,
                "rhs": self.rhs,
                "gap": self.gap,
                "abs_gap": self.abs_gap,
                "rel_gap": self.rel_gap,
                "tolerance": self.tolerance,
                "pass": bool(self.passed),
                "details": self.details,
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def summary_line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"[{verdict}] {self.name}: lhs={self.lhs:.6g} rhs={self.rhs:.6g} "
            f"gap={self.gap:.3g} tol={self.tolerance:.3g}"
        )
