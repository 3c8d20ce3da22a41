"""Pass/fail report shared by the admissibility and trajectory checks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def _plain(x):
    """Convert numpy scalars and arrays to JSON-friendly values."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


@dataclass
class CheckReport:
    """Outcome of one named check.

    ``worst`` locates the largest violation (or the tightest margin when
    everything passes).  ``constants`` holds measured quantities such as
    ratios, ``tolerances`` the thresholds used.
    """

    name: str
    passed: bool
    worst: dict | None = None
    constants: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        self.passed = bool(self.passed)
        if not self.passed and not self.worst:
            raise ValueError(f"failing report {self.name!r} needs a worst-case location")

    def __bool__(self):
        return self.passed

    def to_dict(self):
        return _plain({
            "name": self.name, "passed": self.passed, "worst": self.worst,
            "constants": self.constants, "tolerances": self.tolerances, "details": self.details,
        })

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], d["passed"], d.get("worst"), d.get("constants", {}),
                   d.get("tolerances", {}), d.get("details", {}))

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        consts = " ".join(f"{k}={v:.4g}" for k, v in self.constants.items()
                          if isinstance(v, (int, float)))
        where = "" if self.passed or not self.worst else f" worst={_plain(self.worst)}"
        return f"{status} {self.name}{' ' + consts if consts else ''}{where}"


def render_table(reports):
    """Fixed-width text table of several reports."""
    width = max((len(r.name) for r in reports), default=4)
    rows = [f"{'check':<{width}}  status  constants"]
    for r in reports:
        consts = ", ".join(f"{k}={v:.4g}" for k, v in r.constants.items() if isinstance(v, (int, float)))
        rows.append(f"{r.name:<{width}}  {'pass' if r.passed else 'FAIL':<6}  {consts}")
    return "\n".join(rows)
