"""Per-timestep trace record shared by the simulator, the reduced models,
and processed dynamometer logs.

Columns are SI: t [s], v [m/s], a [m/s2], grade [rad], gear [1..n],
engine_speed [rad/s], engine_torque [Nm], pedal [%], fuel [g/s].
Reduced models that do not produce internal dynamics leave those columns
as None.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ParseError

RADPS_TO_RPM = 60.0 / (2.0 * np.pi)

# flag bits set per step by producers
FLAG_ENVELOPE = 1    # demanded torque clamped to the engine envelope
FLAG_CLAMPED = 2     # model input clamped to its fitted/defined domain
FLAG_FLOOR = 4       # demanded torque lifted to the minimum-torque floor

_FLOAT_COLS = ("v", "a", "grade", "engine_speed", "engine_torque", "pedal", "fuel")


@dataclass
class Trace:
    name: str
    t: np.ndarray
    v: np.ndarray
    a: np.ndarray | None = None
    grade: np.ndarray | None = None
    gear: np.ndarray | None = None
    engine_speed: np.ndarray | None = None
    engine_torque: np.ndarray | None = None
    pedal: np.ndarray | None = None
    fuel: np.ndarray | None = None
    flags: np.ndarray | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        for col in _FLOAT_COLS:
            val = getattr(self, col)
            if val is not None:
                val = np.asarray(val, dtype=float)
                if val.shape != self.t.shape:
                    raise ValueError(f"column '{col}' length {val.size} != t length {self.t.size}")
                setattr(self, col, val)
        for col in ("gear", "flags"):
            val = getattr(self, col)
            if val is not None:
                setattr(self, col, np.asarray(val, dtype=int))
        if self.t.size and np.any(np.diff(self.t) <= 0):
            raise ValueError("trace timestamps must be strictly increasing")

    def __len__(self) -> int:
        return self.t.size

    def columns(self) -> list[str]:
        """Names of the populated data columns (t excluded)."""
        return [
            f.name for f in fields(self)
            if f.name not in ("name", "t") and getattr(self, f.name) is not None
        ]


def write_trace_csv(trace: Trace, path) -> None:
    cols = trace.columns()
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["t"] + cols)
        for i in range(len(trace)):
            # repr round-trips float64 exactly, so rows sitting on mask
            # thresholds (standstill speed, torque floor) survive re-reading
            row = [repr(float(trace.t[i]))]
            for col in cols:
                val = getattr(trace, col)[i]
                if col in ("gear", "flags"):
                    row.append(str(int(val)))
                else:
                    row.append(repr(float(val)))
            writer.writerow(row)


def read_trace_csv(path, name: str | None = None) -> Trace:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[0] != "t":
            raise ParseError(f"{path}: expected a trace CSV starting with column 't'")
        data: dict[str, list[float]] = {col: [] for col in header}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} columns")
            for col, cell in zip(header, row):
                try:
                    data[col].append(float(cell))
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: bad value {cell!r}") from None
    known = {f.name for f in fields(Trace)} - {"name"}
    extra = [c for c in header if c not in known]
    if extra:
        raise ParseError(f"{path}: unknown columns {extra}")
    kwargs = {col: np.array(vals) for col, vals in data.items()}
    return Trace(name=name or path.stem, **kwargs)
