"""Chassis dynamometer log post-processing.

Raw dyno speed comes quantized to 1 km/h and without acceleration, so the
pipeline rebuilds a usable (t, v, a) profile: regress speed on transmission
output shaft speed, rederive speed at the shaft's resolution, smooth it
with an iterated three-point average until the derived acceleration is
physically plausible, differentiate, and winsorize the acceleration tails.
Warm-up data is dropped via an engine water temperature window first.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BoundNotReached,
    InsufficientData,
    NeverHot,
    NonPositiveSlope,
    ParseError,
    SeriesTooShort,
    SmoothingDiverged,
)
from .extraction import percentile
from .trace import RADPS_TO_RPM, Trace

KPH_TO_MPS = 1.0 / 3.6

ACCEL_BOUND = 4.0          # m/s2, acceptable acceleration magnitude
CLIP_FRACTION = 0.05       # winsorize tails of the acceleration distribution
SMOOTHING_MU = 0.5
CONVERGENCE_EPS = 1e-3     # m/s2, improvement below this counts as converged
HOT_THRESHOLD_C = 85.0

DYNO_COLUMNS = ("t", "v_kph", "engine_rpm", "engine_torque_nm", "pedal_pct",
                "fuel_gps", "water_temp_c", "gear", "trans_out_rpm")


@dataclass
class DynoLog:
    """Raw dynamometer channels, SI-ish as measured (kph, rpm, Nm, g/s, C)."""

    name: str
    t: np.ndarray
    v_kph: np.ndarray
    engine_rpm: np.ndarray
    engine_torque_nm: np.ndarray
    pedal_pct: np.ndarray
    fuel_gps: np.ndarray
    water_temp_c: np.ndarray
    gear: np.ndarray
    trans_out_rpm: np.ndarray

    def __post_init__(self):
        for name in DYNO_COLUMNS:
            arr = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, arr)
            if arr.shape != self.t.shape:
                raise ValueError(f"column '{name}' length mismatch")
        if np.any(np.diff(self.t) < 0):
            raise ValueError("dyno timestamps must be non-decreasing")
        if np.any(self.fuel_gps < 0):
            raise ValueError("fuel must be nonnegative")
        if not np.all(np.isfinite(self.water_temp_c)):
            raise ValueError("water temperature must be finite")

    def __len__(self):
        return self.t.size

    def window(self, t_start: float, t_end: float) -> "DynoLog":
        mask = (self.t >= t_start) & (self.t <= t_end)
        kwargs = {name: getattr(self, name)[mask] for name in DYNO_COLUMNS}
        return DynoLog(name=self.name, **kwargs)

    def resampled(self, dt: float) -> "DynoLog":
        """Uniform grid via linear interpolation (nearest for gear)."""
        n = int(np.floor((self.t[-1] - self.t[0]) / dt + 1e-9))
        grid = self.t[0] + np.arange(n + 1) * dt
        kwargs = {}
        for name in DYNO_COLUMNS[1:]:
            kwargs[name] = np.interp(grid, self.t, getattr(self, name))
        idx = np.clip(np.searchsorted(self.t, grid - 1e-12), 0, self.t.size - 1)
        kwargs["gear"] = self.gear[idx]
        return DynoLog(name=self.name, t=grid, **kwargs)


def read_dyno_csv(path, name: str | None = None) -> DynoLog:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != DYNO_COLUMNS:
            raise ParseError(f"{path}: expected header {','.join(DYNO_COLUMNS)}")
        rows = {col: [] for col in DYNO_COLUMNS}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(DYNO_COLUMNS):
                raise ParseError(f"{path}:{lineno}: expected {len(DYNO_COLUMNS)} columns")
            for col, cell in zip(DYNO_COLUMNS, row):
                try:
                    rows[col].append(float(cell))
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: bad value {cell!r}") from None
    return DynoLog(name=name or Path(path).stem,
                   **{col: np.array(vals) for col, vals in rows.items()})


def write_dyno_csv(log: DynoLog, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(DYNO_COLUMNS)
        for i in range(len(log)):
            writer.writerow([repr(float(getattr(log, col)[i])) for col in DYNO_COLUMNS])


# --- speed reconstruction ----------------------------------------------------

def fit_speed_regression(log: DynoLog, min_rows: int = 100) -> float:
    """Through-origin slope of raw speed [km/h] on output shaft speed [rpm]."""
    mask = log.v_kph > 0
    if mask.sum() < min_rows:
        raise InsufficientData(f"only {int(mask.sum())} moving rows, need {min_rows}")
    n = log.trans_out_rpm[mask]
    v = log.v_kph[mask]
    denom = float(np.dot(n, n))
    if denom <= 0:
        raise NonPositiveSlope("output shaft speed is identically zero")
    slope = float(np.dot(v, n)) / denom
    if slope <= 0:
        raise NonPositiveSlope(f"regression slope {slope:.3g} <= 0")
    return slope


def derive_speed(log: DynoLog, slope: float) -> np.ndarray:
    """Shaft-derived speed in m/s, floored at standstill."""
    if slope <= 0:
        raise NonPositiveSlope(f"slope must be positive, got {slope}")
    return np.maximum(0.0, slope * log.trans_out_rpm) * KPH_TO_MPS


# --- smoothing and differentiation --------------------------------------------

def smooth_speed(series, mu: float = SMOOTHING_MU, steps: int = 1) -> np.ndarray:
    """Iterated three-point weighted average.

    Each pass replaces every interior point with
    mu/2 * left + (1 - mu) * center + mu/2 * right, reading the previous
    pass's values throughout (full-pass update); the two endpoints are
    left untouched.
    """
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mu must be in [0, 1], got {mu}")
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    s = np.asarray(series, dtype=float).copy()
    if s.size < 3:
        raise SeriesTooShort(f"need at least 3 samples, got {s.size}")
    for _ in range(steps):
        s[1:-1] = 0.5 * mu * (s[:-2] + s[2:]) + (1.0 - mu) * s[1:-1]
    return s


def derive_acceleration(series, dt: float) -> np.ndarray:
    """Temporal derivative: central differences inside, one-sided at the ends."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return np.gradient(np.asarray(series, dtype=float), dt)


def clip_outliers(series, fraction: float = CLIP_FRACTION) -> np.ndarray:
    """Winsorize: values beyond the [fraction, 1-fraction] percentiles are
    replaced by the percentile bounds, keeping the series aligned."""
    if not 0.0 <= fraction < 0.5:
        raise ValueError(f"fraction must be in [0, 0.5), got {fraction}")
    s = np.asarray(series, dtype=float)
    if fraction == 0.0:
        return s.copy()
    lo = percentile(s, 100.0 * fraction)
    hi = percentile(s, 100.0 * (1.0 - fraction))
    return np.clip(s, lo, hi)


@dataclass
class SmoothingSelection:
    steps: int
    smoothed: np.ndarray
    accel: np.ndarray
    max_abs_accel: float


def auto_select_smoothing(series, dt: float, bound: float = ACCEL_BOUND,
                          max_steps: int = 200, mu: float = SMOOTHING_MU) -> SmoothingSelection:
    """Smallest smoothing step count bringing peak |acceleration| in bound.

    Step counts are tried in order; the first one whose derived
    acceleration fits the bound wins. If successive counts stop improving
    the peak before the bound is met, BoundNotReached is raised carrying
    the best selection so the caller can decide. Peak acceleration must
    never grow with extra passes; that would indicate a broken series and
    aborts the run.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    smoothed = np.asarray(series, dtype=float).copy()
    if smoothed.size < 3:
        raise SeriesTooShort(f"need at least 3 samples, got {smoothed.size}")
    prev_max = None
    for n in range(max_steps + 1):
        if n > 0:
            smoothed = smooth_speed(smoothed, mu=mu, steps=1)
        accel = derive_acceleration(smoothed, dt)
        cur = float(np.max(np.abs(accel)))
        if prev_max is not None and cur > prev_max + 1e-9:
            raise SmoothingDiverged(
                f"peak |a| rose from {prev_max:.6g} to {cur:.6g} at {n} steps")
        selection = SmoothingSelection(steps=n, smoothed=smoothed.copy(),
                                       accel=accel, max_abs_accel=cur)
        if cur <= bound:
            return selection
        if prev_max is not None and prev_max - cur < CONVERGENCE_EPS:
            raise BoundNotReached(
                f"converged at {cur:.3g} m/s2 after {n} steps, bound {bound} unmet",
                best=selection)
        prev_max = cur
    raise BoundNotReached(
        f"peak |a| still {cur:.3g} m/s2 after {max_steps} steps", best=selection)


def hot_engine_window(log: DynoLog, threshold: float = HOT_THRESHOLD_C) -> tuple[float, float]:
    """Time span [t*, t_end] where the engine is warm and stays warm."""
    below = np.nonzero(log.water_temp_c < threshold)[0]
    if below.size == 0:
        return float(log.t[0]), float(log.t[-1])
    last_cold = below[-1]
    if last_cold == len(log) - 1:
        raise NeverHot(f"water temperature never settles above {threshold} C")
    return float(log.t[last_cold + 1]), float(log.t[-1])


# --- full pipeline ------------------------------------------------------------

@dataclass
class ProcessedProfile:
    """Model-ready (t, v, a) rows plus how they were produced."""

    name: str
    t: np.ndarray
    v: np.ndarray
    a: np.ndarray
    provenance: dict = field(default_factory=dict)


def process_log(log: DynoLog, dt: float = 0.1, bound: float = ACCEL_BOUND,
                clip_fraction: float = CLIP_FRACTION, mu: float = SMOOTHING_MU,
                hot_threshold: float | None = HOT_THRESHOLD_C,
                max_steps: int = 200) -> ProcessedProfile:
    """Window, resample, regress, smooth, differentiate, winsorize."""
    if hot_threshold is not None:
        t_start, t_end = hot_engine_window(log, hot_threshold)
        windowed = log.window(t_start, t_end)
    else:
        t_start, t_end = float(log.t[0]), float(log.t[-1])
        windowed = log
    slope = fit_speed_regression(windowed)
    uniform = windowed.resampled(dt)
    v_derived = derive_speed(uniform, slope)
    selection = auto_select_smoothing(v_derived, dt, bound=bound, mu=mu, max_steps=max_steps)
    accel = clip_outliers(selection.accel, clip_fraction)
    return ProcessedProfile(
        name=log.name, t=uniform.t, v=selection.smoothed, a=accel,
        provenance={
            "slope_kph_per_rpm": slope,
            "smoothing_steps": selection.steps,
            "smoothing_mu": mu,
            "max_abs_accel_before_clip": selection.max_abs_accel,
            "clip_fraction": clip_fraction,
            "hot_window_s": [t_start, t_end],
            "dt": dt,
        })


def write_profile(profile: ProcessedProfile, csv_path, sidecar_path=None) -> None:
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["t", "v_mps", "a_mps2"])
        for i in range(profile.t.size):
            writer.writerow([repr(float(profile.t[i])), repr(float(profile.v[i])),
                             repr(float(profile.a[i]))])
    if sidecar_path is not None:
        with open(sidecar_path, "w", encoding="utf-8") as f:
            json.dump(profile.provenance, f, indent=1, sort_keys=True)
            f.write("\n")


def log_to_trace(log: DynoLog, profile: ProcessedProfile) -> Trace:
    """Dyno channels interpolated onto the processed profile's grid, as a
    Trace comparable with model output."""
    uniform = log.window(profile.provenance.get("hot_window_s", [log.t[0], log.t[-1]])[0],
                         profile.provenance.get("hot_window_s", [log.t[0], log.t[-1]])[1])
    t = profile.t
    idx = np.clip(np.searchsorted(uniform.t, t - 1e-12), 0, len(uniform) - 1)
    return Trace(name=log.name, t=t, v=profile.v, a=profile.a,
                 grade=np.zeros_like(t),
                 gear=uniform.gear[idx].astype(int),
                 engine_speed=np.interp(t, uniform.t, uniform.engine_rpm) / RADPS_TO_RPM,
                 engine_torque=np.interp(t, uniform.t, uniform.engine_torque_nm),
                 pedal=np.interp(t, uniform.t, uniform.pedal_pct),
                 fuel=np.interp(t, uniform.t, uniform.fuel_gps))
