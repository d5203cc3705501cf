"""Structured pass/fail records shared by every verification routine."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

PASS, FAIL, SKIPPED = "PASS", "FAIL", "SKIPPED"


def _clean(obj: Any) -> Any:
    # JSON has no inf/nan; keep them readable as strings.
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        return _clean(obj.item())
    return obj


@dataclass
class VerificationReport:
    """Outcome of one check.

    ``margin`` is signed: non-negative means the checked inequality holds
    with that much room (after the tolerance has been applied it decides
    ``status``). ``witness`` records where the worst case occurred and
    ``fingerprint`` the configuration (seeds, tolerances, grid) that makes
    the report reproducible.
    """

    name: str
    status: str
    margin: float
    witness: dict = field(default_factory=dict)
    fingerprint: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status != FAIL

    def to_dict(self) -> dict:
        return _clean(
            {
                "name": self.name,
                "status": self.status,
                "margin": self.margin,
                "witness": self.witness,
                "fingerprint": self.fingerprint,
                "details": self.details,
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> VerificationReport:
        margin = d["margin"]
        if isinstance(margin, str):
            margin = float(margin)
        return cls(d["name"], d["status"], margin, d.get("witness", {}),
                   d.get("fingerprint", {}), d.get("details", {}))

    def line(self) -> str:
        return f"[{self.status:7s}] {self.name}: margin={self.margin:.3e}"


def status_from(ok: bool) -> str:
    return PASS if ok else FAIL


def merge(name: str, reports: list[VerificationReport], fingerprint: dict | None = None
          ) -> VerificationReport:
    """Aggregate several reports: FAIL if any failed, margin is the minimum."""
    active = [r for r in reports if r.status != SKIPPED]
    margin = min((r.margin for r in active), default=math.inf)
    status = FAIL if any(r.status == FAIL for r in reports) else PASS
    if not active and reports:
        status = SKIPPED
    worst = min(active, key=lambda r: r.margin, default=None)
    return VerificationReport(
        name=name,
        status=status,
        margin=margin,
        witness={"check": worst.name, **worst.witness} if worst else {},
        fingerprint=fingerprint or {},
        details={"checks": [r.to_dict() for r in reports]},
    )
