"""Stateless map-based fuel model.

The model combines principled vehicle constants, extracted control
constants, the principled upshift schedule and torque-limit curve, and the
fitted polynomial maps into a pure function (v, a, grade) -> (gear, engine
speed, engine torque, pedal, fuel rate). No state is carried between
evaluations; gear choice is a function of the instantaneous operating
point, which is what makes the model cheap but also produces the known
quick-downshift artifact during decelerations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .drive_cycles import DriveCycle
from .extraction import (
    ExtractedConstants,
    PolyMap2D,
    VcdDataset,
    extract_downshift_map,
    extract_fuel_cut_thresholds,
    extract_idle_constants,
    extract_torque_correction,
    fit_all_maps,
    run_vcd,
)
from .powertrain import (
    GRAVITY,
    STANDSTILL_SPEED,
    GearShiftMaps,
    ReferenceVehicle,
    VehicleParams,
    max_wheel_torque,
    max_wheel_torque_gear,
    params_from_dict,
    params_to_dict,
    road_load,
    shift_maps_from_dict,
    shift_maps_to_dict,
    transmission_output_speed,
    wheel_force,
)
from .trace import FLAG_CLAMPED, FLAG_ENVELOPE, FLAG_FLOOR, Trace

ACCEL_LIMITS = (-5.0, 5.0)    # m/s2, defined evaluation domain
GRADE_LIMITS = (-0.15, 0.15)  # rad


@dataclass(frozen=True)
class SemiPrincipledModel:
    """Immutable model object; evaluation is reentrant and thread-safe."""

    params: VehicleParams
    constants: ExtractedConstants
    fuel_map: PolyMap2D
    engine_speed_maps: tuple[PolyMap2D, ...]
    torque_maps: tuple[PolyMap2D, ...]
    shift_maps: GearShiftMaps
    speed_max: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.params.n_gears
        if len(self.engine_speed_maps) != n or len(self.torque_maps) != n:
            raise ValueError("need one engine-speed and one torque map per gear")


def select_gear_stateless(model: SemiPrincipledModel, v, pedal):
    """Gear as a pure function of speed and pedal.

    The upshift map proposes a gear; the extracted downshift cutoffs cap it
    (a gear is only allowed at or above its cutoff speed). Ties resolve
    toward the upshift map's choice.
    """
    k_up = np.atleast_1d(model.shift_maps.gear_from_speed(pedal, v))
    k_down = np.searchsorted(model.constants.downshift_cutoffs, np.atleast_1d(v), side="right")
    gear = np.clip(np.minimum(k_up, k_down), 1, model.params.n_gears)
    return gear if np.ndim(v) else int(gear[0])


def evaluate(model: SemiPrincipledModel, v, a, grade=0.0):
    """Vectorized model evaluation.

    Returns a dict of arrays: gear, engine_speed, engine_torque, pedal,
    fuel, flags. Inputs outside the defined domain are clamped and flagged;
    map inputs outside the fitted boxes likewise.
    """
    p = model.params
    c = model.constants
    v = np.atleast_1d(np.asarray(v, dtype=float))
    a = np.broadcast_to(np.asarray(a, dtype=float), v.shape).copy()
    grade = np.broadcast_to(np.asarray(grade, dtype=float), v.shape).copy()

    flags = np.zeros(v.shape, dtype=int)
    clamped = (v < 0) | (v > model.speed_max) | (a < ACCEL_LIMITS[0]) | (a > ACCEL_LIMITS[1]) \
        | (grade < GRADE_LIMITS[0]) | (grade > GRADE_LIMITS[1])
    flags[clamped] |= FLAG_CLAMPED
    v = np.clip(v, 0.0, model.speed_max)
    a = np.clip(a, *ACCEL_LIMITS)
    grade = np.clip(grade, *GRADE_LIMITS)

    # pedal estimate from demanded wheel torque against the peak-torque curve
    force_est = p.mass * a + road_load(p, v) + p.mass * GRAVITY * np.sin(grade)
    t_wmax = max_wheel_torque(p, model.shift_maps, v)
    with np.errstate(divide="ignore", invalid="ignore"):
        pedal = np.where(t_wmax > 0,
                         100.0 * np.maximum(force_est, 0.0) * p.tire_radius / t_wmax, 0.0)
    pedal = np.clip(pedal, 0.0, 100.0)

    gear = select_gear_stateless(model, v, pedal)
    force = p.gear_masses[gear - 1] * a + road_load(p, v) + p.mass * GRAVITY * np.sin(grade)
    n_out = transmission_output_speed(p, v)

    engine_speed = np.zeros_like(v)
    engine_torque = np.zeros_like(v)
    for k in range(1, p.n_gears + 1):
        mask = gear == k
        if not np.any(mask):
            continue
        # demanded force capped by the gear's peak wheel torque before the
        # maps see it; the raw demand still decides the fuel cut below
        f_cap = max_wheel_torque_gear(p, model.shift_maps, v[mask], k) / p.tire_radius
        f_used = np.minimum(force[mask], f_cap)
        flags[mask] |= np.where(force[mask] > f_cap, FLAG_ENVELOPE, 0)
        n_map = model.engine_speed_maps[k - 1]
        t_map = model.torque_maps[k - 1]
        oob = n_map.out_of_domain(n_out[mask], f_used) \
            | t_map.out_of_domain(n_out[mask], f_used)
        flags[mask] |= np.where(oob, FLAG_CLAMPED, 0)
        engine_speed[mask] = n_map.evaluate(n_out[mask], f_used, clamp=True)
        engine_torque[mask] = t_map.evaluate(n_out[mask], f_used, clamp=True)
    engine_torque[gear == 1] += c.launch_torque(a[gear == 1])

    engine_speed = np.clip(engine_speed, p.engine_speed_idle, p.engine_speed_max)
    t_cap = model.shift_maps.max_engine_torque(engine_speed)
    flags |= np.where(engine_torque > t_cap, FLAG_ENVELOPE, 0)
    flags |= np.where(engine_torque < c.torque_floor, FLAG_FLOOR, 0)
    engine_torque = np.clip(engine_torque, c.torque_floor, t_cap)

    fuel = np.maximum(0.0, model.fuel_map.evaluate(engine_speed, engine_torque, clamp=True))
    flags |= np.where(model.fuel_map.out_of_domain(engine_speed, engine_torque), FLAG_CLAMPED, 0)
    cut = (v > c.cut_speed) & (force < c.cut_force)
    fuel[cut] = 0.0

    idle = v < STANDSTILL_SPEED
    gear[idle] = 1
    engine_speed[idle] = p.engine_speed_idle
    engine_torque[idle] = c.torque_floor
    pedal[idle] = 0.0
    fuel[idle] = c.idle_fuel

    return {"gear": gear, "engine_speed": engine_speed, "engine_torque": engine_torque,
            "pedal": pedal, "fuel": fuel, "flags": flags}


def domain_excess(model: SemiPrincipledModel, v, a, grade=0.0):
    """How far the driveline-map inputs fall outside their fitted boxes.

    Returns the largest fractional overshoot (relative to each box's span)
    of (output speed, wheel force) against the selected gear's map domains;
    zero inside. Useful to tell deep extrapolation from boundary grazing.
    """
    p = model.params
    v = np.atleast_1d(np.asarray(v, dtype=float))
    a = np.broadcast_to(np.asarray(a, dtype=float), v.shape)
    grade = np.broadcast_to(np.asarray(grade, dtype=float), v.shape)
    out = evaluate(model, v, a, grade)
    gear = out["gear"]
    force = p.gear_masses[gear - 1] * np.clip(a, *ACCEL_LIMITS) \
        + road_load(p, np.clip(v, 0, model.speed_max)) \
        + p.mass * GRAVITY * np.sin(np.clip(grade, *GRADE_LIMITS))
    n_out = transmission_output_speed(p, np.clip(v, 0, model.speed_max))
    excess = np.zeros_like(n_out)
    for k in range(1, p.n_gears + 1):
        mask = gear == k
        if not np.any(mask):
            continue
        f_cap = max_wheel_torque_gear(p, model.shift_maps, np.clip(v, 0, model.speed_max)[mask], k) \
            / p.tire_radius
        f_used = np.minimum(force[mask], f_cap)
        for poly in (model.engine_speed_maps[k - 1], model.torque_maps[k - 1]):
            (x0, x1), (y0, y1) = poly.domain
            ex = np.maximum(np.maximum(x0 - n_out[mask], n_out[mask] - x1), 0.0) / max(x1 - x0, 1e-9)
            ey = np.maximum(np.maximum(y0 - f_used, f_used - y1), 0.0) / max(y1 - y0, 1e-9)
            excess[mask] = np.maximum(excess[mask], np.maximum(ex, ey))
    return excess


def eval_semi(model: SemiPrincipledModel, v: float, a: float, grade: float = 0.0):
    """Single-point evaluation: (gear, engine_speed, engine_torque, pedal, fuel)."""
    out = evaluate(model, v, a, grade)
    return (int(out["gear"][0]), float(out["engine_speed"][0]),
            float(out["engine_torque"][0]), float(out["pedal"][0]), float(out["fuel"][0]))


def eval_semi_trace(model: SemiPrincipledModel, t, v, a, grade=0.0, name: str = "semi") -> Trace:
    """Rowwise application over a (t, v, a) profile; no state between rows."""
    t = np.asarray(t, dtype=float)
    out = evaluate(model, v, a, grade)
    return Trace(name=name, t=t, v=np.asarray(v, dtype=float), a=np.asarray(a, dtype=float),
                 grade=np.broadcast_to(np.asarray(grade, dtype=float), t.shape).copy(),
                 gear=out["gear"], engine_speed=out["engine_speed"],
                 engine_torque=out["engine_torque"], pedal=out["pedal"],
                 fuel=out["fuel"], flags=out["flags"])


# --- assembly ----------------------------------------------------------------

def build_semi_model(vehicle: ReferenceVehicle, cycles: list[DriveCycle], dt: float = 0.1,
                     fuel_degree=(2, 2), gear_degree=(1, 1),
                     min_gear_samples: int = 50) -> SemiPrincipledModel:
    """Full extraction pipeline: campaign, constants, correction, maps.

    The first-gear torque correction is identified against the principled
    driveline inversion (a map fitted on first-gear data would absorb any
    systematic open-converter offset and hide it); the first-gear torque
    map is then refit with the correction subtracted so map + correction
    reproduces the reference.
    """
    ds = run_vcd(vehicle, cycles, dt=dt)
    return build_semi_model_from_dataset(ds, vehicle.shift_maps, fuel_degree=fuel_degree,
                                         gear_degree=gear_degree,
                                         min_gear_samples=min_gear_samples,
                                         source_cycles=[c.name for c in cycles], dt=dt)


def build_semi_model_from_dataset(ds: VcdDataset, shift_maps: GearShiftMaps,
                                  fuel_degree=(2, 2), gear_degree=(1, 1),
                                  min_gear_samples: int = 50,
                                  source_cycles=None, dt: float | None = None) -> SemiPrincipledModel:
    p = ds.params

    torque_floor, idle_fuel = extract_idle_constants(ds)
    cut_speed, cut_force = extract_fuel_cut_thresholds(ds)
    cutoffs, filled = extract_downshift_map(ds)

    def principled_first_gear_torque(v, a, grade):
        force = wheel_force(p, v, a, grade, 1)
        return force * p.tire_radius / (p.final_drive * p.gear_ratios[0] * p.driveline_eff)

    correction = extract_torque_correction(ds, principled_first_gear_torque)
    constants = ExtractedConstants(torque_floor=torque_floor, idle_fuel=idle_fuel,
                                   cut_speed=cut_speed, cut_force=cut_force,
                                   downshift_cutoffs=cutoffs, launch_correction=correction,
                                   interpolated_gears=filled)
    maps = fit_all_maps(ds, fuel_degree=fuel_degree, gear_degree=gear_degree,
                        min_gear_samples=min_gear_samples, min_torque=torque_floor,
                        launch_correction=correction)
    speed_max = float(max(tr.v.max() for tr in ds.traces))
    metadata = {
        "source_cycles": source_cycles or [tr.name for tr in ds.traces],
        "dt": dt,
        "fuel_map_rms": maps.fuel_map.rms_residual,
        "engine_speed_map_rms": [m.rms_residual for m in maps.engine_speed_maps],
        "torque_map_rms": [m.rms_residual for m in maps.torque_maps],
    }
    return SemiPrincipledModel(params=p, constants=constants, fuel_map=maps.fuel_map,
                               engine_speed_maps=tuple(maps.engine_speed_maps),
                               torque_maps=tuple(maps.torque_maps), shift_maps=shift_maps,
                               speed_max=speed_max, metadata=metadata)


# --- serialization -----------------------------------------------------------

def model_to_dict(model: SemiPrincipledModel) -> dict:
    c = model.constants
    return {
        "params": params_to_dict(model.params),
        "constants": {
            "torque_floor_nm": c.torque_floor,
            "idle_fuel_gps": c.idle_fuel,
            "cut_speed_mps": c.cut_speed,
            "cut_force_n": c.cut_force,
            "downshift_cutoffs_mps": c.downshift_cutoffs.tolist(),
            "launch_correction": [list(pt) for pt in c.launch_correction],
            "interpolated_gears": list(c.interpolated_gears),
        },
        "fuel_map": model.fuel_map.to_dict(),
        "engine_speed_maps": [m.to_dict() for m in model.engine_speed_maps],
        "torque_maps": [m.to_dict() for m in model.torque_maps],
        "shifting": shift_maps_to_dict(model.shift_maps),
        "speed_max_mps": model.speed_max,
        "metadata": model.metadata,
    }


def model_from_dict(doc: dict) -> SemiPrincipledModel:
    c = doc["constants"]
    constants = ExtractedConstants(
        torque_floor=c["torque_floor_nm"],
        idle_fuel=c["idle_fuel_gps"],
        cut_speed=c["cut_speed_mps"],
        cut_force=c["cut_force_n"],
        downshift_cutoffs=c["downshift_cutoffs_mps"],
        launch_correction=tuple(tuple(pt) for pt in c.get("launch_correction", [])),
        interpolated_gears=tuple(c.get("interpolated_gears", [])),
    )
    return SemiPrincipledModel(
        params=params_from_dict(doc["params"]),
        constants=constants,
        fuel_map=PolyMap2D.from_dict(doc["fuel_map"]),
        engine_speed_maps=tuple(PolyMap2D.from_dict(d) for d in doc["engine_speed_maps"]),
        torque_maps=tuple(PolyMap2D.from_dict(d) for d in doc["torque_maps"]),
        shift_maps=shift_maps_from_dict(doc["shifting"]),
        speed_max=doc["speed_max_mps"],
        metadata=doc.get("metadata", {}),
    )


def save_semi_model(model: SemiPrincipledModel, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model_to_dict(model), f, indent=1, sort_keys=True)
        f.write("\n")


def load_semi_model(path) -> SemiPrincipledModel:
    with open(path, encoding="utf-8") as f:
        return model_from_dict(json.load(f))
