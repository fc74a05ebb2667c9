"""Trace-to-trace comparison metrics and report generation.

All comparisons run on a common uniform time grid over the overlap of the
two traces. Fuel metrics are always produced; internal-dynamics metrics
(engine speed/torque, pedal, gear) appear only when both traces carry the
columns, so reduced models without internal state are handled naturally.
Engine speed is reported in rpm and torque in Nm to match conventional
dyno tables; everything is SI internally.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import LengthMismatch, NoOverlap, ZeroReference
from .trace import RADPS_TO_RPM, Trace


@dataclass
class AlignedPair:
    t: np.ndarray
    ref: dict[str, np.ndarray]
    model: dict[str, np.ndarray]


def _interp_columns(trace: Trace, grid: np.ndarray) -> dict[str, np.ndarray]:
    out = {}
    for col in trace.columns():
        if col == "flags":
            continue
        src = getattr(trace, col)
        if col == "gear":
            # integers take the nearest sample, never an interpolated blend
            centers = 0.5 * (trace.t[:-1] + trace.t[1:])
            idx = np.searchsorted(centers, grid)
            out[col] = src[idx]
        else:
            out[col] = np.interp(grid, trace.t, src)
    return out


def align(ref: Trace, model: Trace, dt: float = 0.1) -> AlignedPair:
    """Interpolate both traces onto the uniform grid covering their overlap."""
    t0 = max(ref.t[0], model.t[0])
    t1 = min(ref.t[-1], model.t[-1])
    if t0 > t1:
        raise NoOverlap(f"traces '{ref.name}' and '{model.name}' share no time range")
    n = int(np.floor((t1 - t0) / dt + 1e-9))
    grid = t0 + np.arange(n + 1) * dt
    return AlignedPair(t=grid, ref=_interp_columns(ref, grid), model=_interp_columns(model, grid))


def mae(series_a, series_b) -> float:
    """Mean absolute difference of two equal-length series."""
    a = np.asarray(series_a, dtype=float)
    b = np.asarray(series_b, dtype=float)
    if a.size != b.size:
        raise LengthMismatch(f"series lengths differ: {a.size} vs {b.size}")
    if a.size == 0:
        raise LengthMismatch("series must have at least one sample")
    return float(np.mean(np.abs(a - b)))


def cumulative_fuel(trace_or_t, fuel=None) -> tuple[float, np.ndarray]:
    """Trapezoidal fuel integral [g]: total and the running series."""
    if fuel is None:
        t, f = trace_or_t.t, trace_or_t.fuel
    else:
        t = np.asarray(trace_or_t, dtype=float)
        f = np.asarray(fuel, dtype=float)
    increments = 0.5 * (f[1:] + f[:-1]) * np.diff(t)
    running = np.concatenate([[0.0], np.cumsum(increments)])
    return float(running[-1]), running


def cumulative_error_pct(ref: Trace, model: Trace) -> float:
    """Relative total-fuel error in percent of the reference total."""
    total_ref, _ = cumulative_fuel(ref)
    total_model, _ = cumulative_fuel(model)
    if total_ref <= 0:
        raise ZeroReference("reference trace consumed no fuel")
    return 100.0 * abs(total_model - total_ref) / total_ref


def gear_metrics(ref_gears, model_gears) -> tuple[float, float]:
    """(mean |gear difference|, percent of steps with differing gear)."""
    a = np.asarray(ref_gears)
    b = np.asarray(model_gears)
    if a.size != b.size:
        raise LengthMismatch(f"gear series lengths differ: {a.size} vs {b.size}")
    if a.size == 0:
        raise LengthMismatch("gear series must have at least one sample")
    diff = np.abs(a - b)
    return float(diff.mean()), float(100.0 * np.count_nonzero(diff) / a.size)


@dataclass
class PairMetrics:
    cycle: str
    ref_id: str
    model_id: str
    dt: float
    mae_fuel_gps: float
    cumulative_fuel_ref_g: float
    cumulative_fuel_model_g: float
    cumulative_error_pct: float
    mae_engine_speed_rpm: float | None = None
    mae_engine_torque_nm: float | None = None
    mae_pedal_pct: float | None = None
    mae_gear: float | None = None
    gear_mismatch_pct: float | None = None


@dataclass
class ValidationReport:
    records: list[PairMetrics]

    def to_dict(self) -> dict:
        return {"records": {rec.cycle: asdict(rec) for rec in self.records}}

    @classmethod
    def from_dict(cls, doc: dict) -> "ValidationReport":
        records = [PairMetrics(**rec) for _, rec in sorted(doc["records"].items())]
        return cls(records=records)

    def format_table(self) -> str:
        rows = [("cycle", "MAE fuel (g/s)", "cum. fuel err (%)", "MAE N (rpm)",
                 "MAE T (Nm)", "MAE pedal (%)", "gear mismatch (%)")]
        for rec in self.records:
            rows.append((
                rec.cycle,
                f"{rec.mae_fuel_gps:.4f}",
                f"{rec.cumulative_error_pct:.2f}",
                "-" if rec.mae_engine_speed_rpm is None else f"{rec.mae_engine_speed_rpm:.0f}",
                "-" if rec.mae_engine_torque_nm is None else f"{rec.mae_engine_torque_nm:.4f}",
                "-" if rec.mae_pedal_pct is None else f"{rec.mae_pedal_pct:.4f}",
                "-" if rec.gear_mismatch_pct is None else f"{rec.gear_mismatch_pct:.2f}",
            ))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
                 for row in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines)


def compare_pair(cycle: str, ref: Trace, model: Trace, dt: float = 0.1) -> PairMetrics:
    pair = align(ref, model, dt)
    total_ref, _ = cumulative_fuel(ref)
    total_model, _ = cumulative_fuel(model)
    rec = PairMetrics(
        cycle=cycle, ref_id=ref.name, model_id=model.name, dt=dt,
        mae_fuel_gps=mae(pair.ref["fuel"], pair.model["fuel"]),
        cumulative_fuel_ref_g=total_ref,
        cumulative_fuel_model_g=total_model,
        cumulative_error_pct=cumulative_error_pct(ref, model),
    )
    if "engine_speed" in pair.ref and "engine_speed" in pair.model:
        rec.mae_engine_speed_rpm = mae(pair.ref["engine_speed"] * RADPS_TO_RPM,
                                       pair.model["engine_speed"] * RADPS_TO_RPM)
    if "engine_torque" in pair.ref and "engine_torque" in pair.model:
        rec.mae_engine_torque_nm = mae(pair.ref["engine_torque"], pair.model["engine_torque"])
    if "pedal" in pair.ref and "pedal" in pair.model:
        rec.mae_pedal_pct = mae(pair.ref["pedal"], pair.model["pedal"])
    if "gear" in pair.ref and "gear" in pair.model:
        rec.mae_gear, rec.gear_mismatch_pct = gear_metrics(pair.ref["gear"], pair.model["gear"])
    return rec


def write_comparison_csv(pair: AlignedPair, path) -> None:
    """Per-timestep data behind the usual comparison panels: fuel rate,
    cumulative fuel, gear, engine speed, engine torque."""
    _, cum_ref = cumulative_fuel(pair.t, pair.ref["fuel"])
    _, cum_model = cumulative_fuel(pair.t, pair.model["fuel"])
    cols = [("t", pair.t),
            ("fuel_ref_gps", pair.ref["fuel"]), ("fuel_model_gps", pair.model["fuel"]),
            ("cumfuel_ref_g", cum_ref), ("cumfuel_model_g", cum_model)]
    for key, label in (("gear", "gear"), ("engine_speed", "engine_speed_radps"),
                       ("engine_torque", "engine_torque_nm"), ("pedal", "pedal_pct")):
        if key in pair.ref and key in pair.model:
            cols.append((f"{label}_ref", pair.ref[key]))
            cols.append((f"{label}_model", pair.model[key]))
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([name for name, _ in cols])
        for i in range(pair.t.size):
            writer.writerow([f"{arr[i]:.10g}" for _, arr in cols])


def build_report(pairs: list[tuple[str, Trace, Trace]], dt: float = 0.1,
                 out_dir=None) -> ValidationReport:
    """Metrics for every (cycle, reference, model) pair.

    With out_dir set, also writes `<cycle>_<model>_vs_<ref>.csv` comparison
    files next to the report for plotting.
    """
    if not pairs:
        raise ValueError("need at least one pair")
    records = []
    for cycle, ref, model in pairs:
        records.append(compare_pair(cycle, ref, model, dt))
        if out_dir is not None:
            pair = align(ref, model, dt)
            path = Path(out_dir) / f"{cycle}_{model.name}_vs_{ref.name}.csv"
            write_comparison_csv(pair, path)
    return ValidationReport(records=records)


def save_report(report: ValidationReport, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=1, sort_keys=True)
        f.write("\n")


def load_report(path) -> ValidationReport:
    with open(path, encoding="utf-8") as f:
        return ValidationReport.from_dict(json.load(f))
