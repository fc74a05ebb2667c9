"""Drive cycle loading, validation, and resampling.

A drive cycle is a timestamped target-speed schedule. All cycles are held
internally in SI units (seconds, m/s); unit conversion happens once at load
time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidDt, MonotonicityError, ParseError, UnitError

# factors converting the named unit TO m/s
_UNIT_FACTORS = {
    "mps": 1.0,
    "kph": 1.0 / 3.6,
    "mph": 0.44704,
}


@dataclass(frozen=True)
class DriveCycle:
    """Target-speed schedule: time in seconds, speed in m/s.

    Immutable after construction; safe to share across threads.
    """

    name: str
    t: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.v, dtype=float)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "v", v)
        if t.size < 2:
            raise ParseError(f"cycle '{self.name}': needs at least 2 samples")
        if t[0] != 0.0:
            raise MonotonicityError(f"cycle '{self.name}': first timestamp must be 0")
        if np.any(np.diff(t) <= 0):
            raise MonotonicityError(f"cycle '{self.name}': timestamps not strictly increasing")
        if np.any(v < 0):
            raise ParseError(f"cycle '{self.name}': negative speed sample")

    @property
    def duration(self) -> float:
        return float(self.t[-1])

    def speed_at(self, t) -> np.ndarray:
        """Piecewise-linear speed at arbitrary times (clamped to the schedule)."""
        return np.interp(t, self.t, self.v)


def load_cycle(path, unit: str = "mps", name: str | None = None) -> DriveCycle:
    """Load a two-column `t,v` CSV and convert speed to m/s.

    Parameters
    ----------
    path : file path
        CSV with header ``t,v``, UTF-8, ``.`` decimal separator.
    unit : {"mps", "kph", "mph"}
        Unit of the speed column.
    name : str, optional
        Cycle name; defaults to the file stem.
    """
    path = Path(path)
    if unit not in _UNIT_FACTORS:
        raise UnitError(f"unknown unit '{unit}' (expected one of {sorted(_UNIT_FACTORS)})")
    factor = _UNIT_FACTORS[unit]

    ts, vs = [], []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: empty file")
        cols = [c.strip().lower() for c in header]
        if cols[:2] != ["t", "v"]:
            raise ParseError(f"{path}: expected header 't,v', got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise ParseError(f"{path}:{lineno}: expected two columns")
            try:
                ts.append(float(row[0]))
                vs.append(float(row[1]) * factor)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    if len(ts) < 2:
        raise ParseError(f"{path}: needs at least 2 samples, got {len(ts)}")

    t = np.array(ts)
    if np.any(np.diff(t) <= 0):
        raise MonotonicityError(f"{path}: timestamps not strictly increasing")
    return DriveCycle(name=name or path.stem, t=t, v=np.array(vs))


def save_cycle(cycle: DriveCycle, path, unit: str = "mps") -> None:
    """Write a cycle back to `t,v` CSV in the requested unit."""
    if unit not in _UNIT_FACTORS:
        raise UnitError(f"unknown unit '{unit}'")
    factor = _UNIT_FACTORS[unit]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["t", "v"])
        for t, v in zip(cycle.t, cycle.v):
            writer.writerow([f"{t:.10g}", f"{v / factor:.10g}"])


def resample(cycle: DriveCycle, dt: float) -> DriveCycle:
    """Linear interpolation onto the uniform grid 0, dt, 2dt, ... <= t_end.

    The final original timestamp is kept if it does not land on the grid, so
    endpoints are always preserved.
    """
    if dt <= 0:
        raise InvalidDt(f"dt must be positive, got {dt}")
    n = int(np.floor(cycle.duration / dt + 1e-9))
    grid = np.arange(n + 1) * dt
    if grid[-1] < cycle.duration - 1e-9:
        grid = np.append(grid, cycle.duration)
    v = np.interp(grid, cycle.t, cycle.v)
    return DriveCycle(name=cycle.name, t=grid, v=v)
