"""The audit record produced by every checker in the package."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any


@dataclass
class AuditReport:
    """One audited inequality.

    ``samples`` holds one dict per sampled configuration. Each dict carries the
    configuration keys together with ``lhs``, ``rhs`` and ``ratio`` where these
    make sense. ``worst_ratio`` is the largest ratio seen and ``implied_constant``
    the smallest constant that makes every sample pass.
    """

    inequality: str
    samples: list[dict[str, Any]] = field(default_factory=list)
    worst_ratio: float = 0.0
    implied_constant: float = 0.0
    passed: bool = True
    seed: int | None = None
    applicable: bool = True
    notes: list[str] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "inequality": self.inequality,
            "passed": bool(self.passed),
            "applicable": bool(self.applicable),
            "worst_ratio": self.worst_ratio,
            "implied_constant": self.implied_constant,
            "seed": self.seed,
            "notes": list(self.notes),
            "extra": dict(self.extra),
            "n_samples": len(self.samples),
            "samples": list(self.samples),
        }

    def sample_columns(self) -> list[str]:
        cols: list[str] = []
        for row in self.samples:
            for key in row:
                if key not in cols:
                    cols.append(key)
        return cols


def safe_ratio(lhs: float, rhs: float) -> float:
    """lhs/rhs with the audit division policy: 0/0 is 0 and x/0 is inf for x > 0."""
    if rhs > 0:
        return lhs / rhs
    if lhs > 0:
        return math.inf
    return 0.0
