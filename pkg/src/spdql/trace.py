"""Per-checkpoint metric rows and their CSV form."""

from __future__ import annotations

import io
import math
import os
import tempfile
from dataclasses import dataclass, field

from .errors import NumericalError


@dataclass
class RunTrace:
    metadata: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)

    def add(self, step: int, metric: str, value: float):
        value = float(value)
        if not math.isfinite(value):
            raise NumericalError(f"non-finite {metric} at step {step}: {value!r} ({self.metadata})")
        self.rows.append((int(step), metric, value))

    def series(self, metric: str):
        """``(steps, values)`` for one metric."""
        pts = [(k, v) for k, m, v in self.rows if m == metric]
        return [k for k, _ in pts], [v for _, v in pts]

    def last(self, metric: str) -> float:
        return self.series(metric)[1][-1]

    def metrics(self) -> list:
        seen = []
        for _, m, _ in self.rows:
            if m not in seen:
                seen.append(m)
        return seen

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key, value in self.metadata.items():
            buf.write(f"# {key}: {value}\n")
        buf.write("k,metric,value\n")
        for k, m, v in self.rows:
            buf.write(f"{k},{m},{v!r}\n")
        return buf.getvalue()

    def write_csv(self, path):
        """Write atomically: temp file in the target directory, then rename."""
        path = os.fspath(path)
        directory = os.path.dirname(path) or "."
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".csv")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(self.to_csv())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def from_csv(cls, text: str) -> "RunTrace":
        trace = cls()
        for line in text.splitlines():
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(": ")
                trace.metadata[key] = value
            elif line and line != "k,metric,value":
                k, m, v = line.split(",")
                trace.rows.append((int(k), m, float(v)))
        return trace
