"""Forward simulator of a conventional powertrain on a drive cycle.

The simulator plays the role of a high-fidelity reference: it follows the
cycle speed exactly (virtual chassis dynamometer style, no driver model),
resolves gear selection through a hysteresis shift schedule, inverts the
driveline to engine speed/torque, and looks fuel rate up in a tabulated
engine map. Everything downstream of this module (constant extraction, map
fitting, reduced models) treats its traces as ground truth.

The torque converter is idealized as an engine-speed floor at idle (plus a
configurable first-gear torque correction); there is no transient slip
model blending converter modes.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .drive_cycles import DriveCycle, resample
from .errors import GearOutOfRange
from .trace import FLAG_ENVELOPE, Trace

GRAVITY = 9.81  # m/s2

# below this speed the vehicle is treated as stationary (open torque
# converter, engine idling)
STANDSTILL_SPEED = 0.1  # m/s


@dataclass(frozen=True)
class VehicleParams:
    """Principled vehicle constants.

    Road load follows the coastdown form a + b*v + c*v**2 (N with v in m/s).
    ``gear_masses`` are generalized masses per gear: vehicle mass plus the
    reflected driveline inertia, so they decrease toward the top gear.
    """

    mass: float                 # kg
    gear_masses: np.ndarray     # kg, one per gear
    tire_radius: float          # m
    final_drive: float
    gear_ratios: np.ndarray     # strictly decreasing with gear index
    road_load_a: float          # N
    road_load_b: float          # N/(m/s)
    road_load_c: float          # N/(m/s)^2
    engine_speed_idle: float    # rad/s
    engine_speed_max: float     # rad/s
    driveline_eff: float = 0.92

    def __post_init__(self):
        object.__setattr__(self, "gear_masses", np.asarray(self.gear_masses, dtype=float))
        object.__setattr__(self, "gear_ratios", np.asarray(self.gear_ratios, dtype=float))
        if len(self.gear_masses) != len(self.gear_ratios):
            raise ValueError("gear_masses and gear_ratios must have the same length")
        if self.mass <= 0 or np.any(self.gear_masses <= 0):
            raise ValueError("masses must be positive")
        if self.tire_radius <= 0 or self.final_drive <= 0:
            raise ValueError("tire_radius and final_drive must be positive")
        if np.any(np.diff(self.gear_ratios) >= 0):
            raise ValueError("gear_ratios must be strictly decreasing")
        if not (self.engine_speed_max > self.engine_speed_idle > 0):
            raise ValueError("need engine_speed_max > engine_speed_idle > 0")
        if not 0 < self.driveline_eff <= 1:
            raise ValueError("driveline_eff must be in (0, 1]")

    @property
    def n_gears(self) -> int:
        return len(self.gear_ratios)


@dataclass(frozen=True)
class EngineFuelMap:
    """Tabulated fuel rate [g/s] over engine speed [rad/s] x torque [Nm]."""

    speed_grid: np.ndarray
    torque_grid: np.ndarray
    fuel: np.ndarray  # shape (len(speed_grid), len(torque_grid))

    def __post_init__(self):
        object.__setattr__(self, "speed_grid", np.asarray(self.speed_grid, dtype=float))
        object.__setattr__(self, "torque_grid", np.asarray(self.torque_grid, dtype=float))
        object.__setattr__(self, "fuel", np.asarray(self.fuel, dtype=float))
        if np.any(np.diff(self.speed_grid) <= 0) or np.any(np.diff(self.torque_grid) <= 0):
            raise ValueError("fuel map grids must be strictly ascending")
        if self.fuel.shape != (self.speed_grid.size, self.torque_grid.size):
            raise ValueError("fuel table shape does not match grids")
        if np.any(self.fuel < 0):
            raise ValueError("fuel map must be nonnegative")
        if np.any(np.diff(self.fuel, axis=1) < -1e-12):
            raise ValueError("fuel map must be non-decreasing in torque at fixed speed")

    @classmethod
    def from_affine_power(cls, speed_grid, torque_grid, power_gain: float,
                          friction_torque: float, accessory_power: float,
                          lhv: float = 43500.0, floor_gps: float = 0.08) -> "EngineFuelMap":
        """Tabulate a Willans-line style map.

        fuel = max(floor, (power_gain*N*T + friction_torque*N + accessory_power) / lhv)

        The positive floor models closed-throttle injection: the tabulated
        map never reaches zero, so zero fuel in a trace always means an
        explicit fuel cut.
        """
        n = np.asarray(speed_grid, dtype=float)[:, None]
        tq = np.asarray(torque_grid, dtype=float)[None, :]
        raw = (power_gain * n * tq + friction_torque * n + accessory_power) / lhv
        return cls(speed_grid, torque_grid, np.maximum(raw, floor_gps))

    def interpolate(self, speed, torque):
        """Bilinear interpolation; inputs clamped to the grid box."""
        n = np.clip(np.asarray(speed, dtype=float), self.speed_grid[0], self.speed_grid[-1])
        t = np.clip(np.asarray(torque, dtype=float), self.torque_grid[0], self.torque_grid[-1])
        i = np.clip(np.searchsorted(self.speed_grid, n, side="right") - 1, 0, self.speed_grid.size - 2)
        j = np.clip(np.searchsorted(self.torque_grid, t, side="right") - 1, 0, self.torque_grid.size - 2)
        dn = self.speed_grid[i + 1] - self.speed_grid[i]
        dt = self.torque_grid[j + 1] - self.torque_grid[j]
        wn = (n - self.speed_grid[i]) / dn
        wt = (t - self.torque_grid[j]) / dt
        f00 = self.fuel[i, j]
        f10 = self.fuel[i + 1, j]
        f01 = self.fuel[i, j + 1]
        f11 = self.fuel[i + 1, j + 1]
        out = (f00 * (1 - wn) * (1 - wt) + f10 * wn * (1 - wt)
               + f01 * (1 - wn) * wt + f11 * wn * wt)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class GearShiftMaps:
    """Shift schedule plus engine/wheel torque limit curves.

    ``upshift_speeds[k-1]`` is the base speed above which gear k upshifts;
    ``downshift_speeds[k-1]`` the speed below which gear k+1 drops back.
    Both scale with pedal position by (1 + pedal_gain * pedal), so the box
    holds gears longer under load. The hysteresis band between the two must
    be nonempty everywhere.
    """

    upshift_speeds: np.ndarray    # m/s, length n_gears - 1
    downshift_speeds: np.ndarray  # m/s, length n_gears - 1
    pedal_gain: float             # per percent pedal
    torque_curve_speed: np.ndarray  # rad/s, ascending
    torque_curve: np.ndarray        # Nm, max engine torque at each speed

    def __post_init__(self):
        for name in ("upshift_speeds", "downshift_speeds", "torque_curve_speed", "torque_curve"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.upshift_speeds.size != self.downshift_speeds.size:
            raise ValueError("upshift and downshift tables must have the same length")
        if np.any(self.downshift_speeds >= self.upshift_speeds):
            raise ValueError("hysteresis band empty: need downshift < upshift everywhere")
        if np.any(np.diff(self.upshift_speeds) <= 0) or np.any(np.diff(self.downshift_speeds) <= 0):
            raise ValueError("shift speed tables must be ascending")
        if np.any(np.diff(self.torque_curve_speed) <= 0):
            raise ValueError("torque curve speeds must be ascending")

    def v_upshift(self, pedal: float, gear: int) -> float:
        """Speed above which `gear` shifts up; +inf for the top gear."""
        if gear >= self.upshift_speeds.size + 1:
            return np.inf
        return float(self.upshift_speeds[gear - 1] * (1.0 + self.pedal_gain * pedal))

    def v_downshift(self, pedal: float, gear: int) -> float:
        """Speed below which `gear` shifts down; -inf for first gear."""
        if gear <= 1:
            return -np.inf
        return float(self.downshift_speeds[gear - 2] * (1.0 + self.pedal_gain * pedal))

    def gear_from_speed(self, pedal, v):
        """Automatic upshift map: target gear for a (pedal, speed) point."""
        scale = 1.0 + self.pedal_gain * np.asarray(pedal, dtype=float)
        thresholds = self.upshift_speeds[None, :] * np.atleast_1d(scale)[..., None]
        gear = 1 + np.sum(np.atleast_1d(v)[..., None] > thresholds, axis=-1)
        return gear if np.ndim(v) else int(gear[0])

    def max_engine_torque(self, speed):
        return np.interp(speed, self.torque_curve_speed, self.torque_curve)


@dataclass(frozen=True)
class ControlParams:
    """Engine/transmission control constants of the reference vehicle."""

    idle_fuel_gps: float = 0.15
    idle_torque_nm: float = 12.0
    fuel_cut_speed: float = 6.0      # m/s; cut only above this speed
    fuel_cut_force: float = -150.0   # N; cut only below this wheel force
    # piecewise-linear first-gear torque correction over acceleration,
    # as (accel m/s2, extra torque Nm) knots; empty list means zero
    launch_correction: tuple = ()

    def launch_torque(self, accel) -> np.ndarray:
        if not self.launch_correction:
            return np.zeros_like(np.asarray(accel, dtype=float))
        pts = np.asarray(self.launch_correction, dtype=float)
        return np.interp(accel, pts[:, 0], pts[:, 1])


@dataclass(frozen=True)
class ReferenceVehicle:
    """Bundle of everything the simulator needs for one vehicle."""

    params: VehicleParams
    fuel_map: EngineFuelMap
    shift_maps: GearShiftMaps
    control: ControlParams = field(default_factory=ControlParams)


# --- physics -----------------------------------------------------------------

def road_load(params: VehicleParams, v):
    """Resistive force a + b*v + c*v**2 [N]; negative speeds clamp to 0."""
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        warnings.warn("negative speed clamped to 0 in road_load", stacklevel=2)
        v = np.maximum(v, 0.0)
    return params.road_load_a + params.road_load_b * v + params.road_load_c * v * v


def wheel_force(params: VehicleParams, v, a, grade, gear: int):
    """Demanded wheel force: inertia + road load + grade component [N]."""
    if not 1 <= gear <= params.n_gears:
        raise GearOutOfRange(f"gear {gear} outside [1, {params.n_gears}]")
    return (params.gear_masses[gear - 1] * np.asarray(a, dtype=float)
            + road_load(params, v)
            + params.mass * GRAVITY * np.sin(grade))


def transmission_output_speed(params: VehicleParams, v):
    """Transmission output shaft speed [rad/s] at vehicle speed v [m/s]."""
    return np.asarray(v, dtype=float) * params.final_drive / params.tire_radius


def select_gear(maps: GearShiftMaps, n_gears: int, prev_gear: int, v: float, pedal: float) -> int:
    """One step of the hysteresis shift logic; at most one shift per call.

    Strict inequalities on both thresholds, so a speed exactly at a
    threshold holds the gear.
    """
    if not 1 <= prev_gear <= n_gears:
        raise GearOutOfRange(f"gear {prev_gear} outside [1, {n_gears}]")
    if prev_gear < n_gears and v > maps.v_upshift(pedal, prev_gear):
        return prev_gear + 1
    if prev_gear > 1 and v < maps.v_downshift(pedal, prev_gear):
        return prev_gear - 1
    return prev_gear


def max_wheel_torque_gear(params: VehicleParams, maps: GearShiftMaps, v, gear: int):
    """Peak wheel torque [Nm] deliverable in one gear at speed v.

    Zero where the gear would overspeed the engine. Below idle speed the
    open converter lets the engine stay at idle, so the idle-speed torque
    limit applies.
    """
    ratio = params.final_drive * params.gear_ratios[gear - 1]
    n = transmission_output_speed(params, v) * params.gear_ratios[gear - 1]
    n_eff = np.maximum(n, params.engine_speed_idle)
    t_engine = maps.max_engine_torque(n_eff)
    return np.where(n <= params.engine_speed_max, t_engine * ratio * params.driveline_eff, 0.0)


def max_wheel_torque(params: VehicleParams, maps: GearShiftMaps, v):
    """Peak wheel torque over all gears; the pedal normalization curve."""
    per_gear = [max_wheel_torque_gear(params, maps, v, k) for k in range(1, params.n_gears + 1)]
    return np.max(np.stack(per_gear), axis=0)


# --- simulation --------------------------------------------------------------

def simulate(cycle: DriveCycle, vehicle: ReferenceVehicle, grade=0.0, dt: float = 0.1) -> Trace:
    """Run the vehicle over a cycle and return the full trace.

    grade is either a constant [rad] or a callable t -> rad. The cycle is
    resampled to a uniform dt grid and followed exactly; acceleration comes
    from finite differences of the resampled speed. Pure function: identical
    inputs produce an identical trace.
    """
    p = vehicle.params
    ctl = vehicle.control
    grid = resample(cycle, dt)
    t, v = grid.t, grid.v
    n_steps = t.size
    a = np.gradient(v, t)
    theta = grade(t) if callable(grade) else np.full(n_steps, float(grade))

    gear = np.ones(n_steps, dtype=int)
    engine_speed = np.zeros(n_steps)
    engine_torque = np.zeros(n_steps)
    pedal = np.zeros(n_steps)
    fuel = np.zeros(n_steps)
    flags = np.zeros(n_steps, dtype=int)

    t_wmax = max_wheel_torque(p, vehicle.shift_maps, v)
    prev_gear = 1
    prev_pedal = 0.0
    for i in range(n_steps):
        if v[i] < STANDSTILL_SPEED:
            # open converter, engine idling; box back in first
            gear[i] = 1
            engine_speed[i] = p.engine_speed_idle
            engine_torque[i] = ctl.idle_torque_nm
            fuel[i] = ctl.idle_fuel_gps
            pedal[i] = 0.0
            prev_gear, prev_pedal = 1, 0.0
            continue

        # shift decision first, sampling the previous step's pedal
        k = select_gear(vehicle.shift_maps, p.n_gears, prev_gear, v[i], prev_pedal)
        gear[i] = k

        force = wheel_force(p, v[i], a[i], theta[i], k)
        ratio = p.final_drive * p.gear_ratios[k - 1]
        n_eng = float(np.clip(transmission_output_speed(p, v[i]) * p.gear_ratios[k - 1],
                              p.engine_speed_idle, p.engine_speed_max))
        torque = force * p.tire_radius / (ratio * p.driveline_eff)
        if k == 1:
            torque += float(ctl.launch_torque(a[i]))
        t_cap = float(vehicle.shift_maps.max_engine_torque(n_eng))
        if torque > t_cap:
            torque = t_cap
            flags[i] |= FLAG_ENVELOPE

        engine_speed[i] = n_eng
        engine_torque[i] = torque
        pedal[i] = float(np.clip(100.0 * force * p.tire_radius / t_wmax[i], 0.0, 100.0)) \
            if t_wmax[i] > 0 else 0.0

        if v[i] > ctl.fuel_cut_speed and force < ctl.fuel_cut_force:
            fuel[i] = 0.0
        else:
            fuel[i] = max(0.0, vehicle.fuel_map.interpolate(n_eng, torque))

        prev_gear, prev_pedal = k, pedal[i]

    return Trace(name=cycle.name, t=t, v=v, a=a, grade=theta, gear=gear,
                 engine_speed=engine_speed, engine_torque=engine_torque,
                 pedal=pedal, fuel=fuel, flags=flags)


# --- vehicle JSON ------------------------------------------------------------

def params_to_dict(p: VehicleParams) -> dict:
    return {
        "mass_kg": p.mass,
        "gear_masses_kg": p.gear_masses.tolist(),
        "tire_radius_m": p.tire_radius,
        "final_drive": p.final_drive,
        "gear_ratios": p.gear_ratios.tolist(),
        "road_load_a_n": p.road_load_a,
        "road_load_b_n_per_mps": p.road_load_b,
        "road_load_c_n_per_mps2": p.road_load_c,
        "engine_speed_idle_radps": p.engine_speed_idle,
        "engine_speed_max_radps": p.engine_speed_max,
        "driveline_eff": p.driveline_eff,
    }


def params_from_dict(p: dict) -> VehicleParams:
    return VehicleParams(
        mass=p["mass_kg"],
        gear_masses=p["gear_masses_kg"],
        tire_radius=p["tire_radius_m"],
        final_drive=p["final_drive"],
        gear_ratios=p["gear_ratios"],
        road_load_a=p["road_load_a_n"],
        road_load_b=p["road_load_b_n_per_mps"],
        road_load_c=p["road_load_c_n_per_mps2"],
        engine_speed_idle=p["engine_speed_idle_radps"],
        engine_speed_max=p["engine_speed_max_radps"],
        driveline_eff=p.get("driveline_eff", 0.92),
    )


def shift_maps_to_dict(s: GearShiftMaps) -> dict:
    return {
        "upshift_speeds_mps": s.upshift_speeds.tolist(),
        "downshift_speeds_mps": s.downshift_speeds.tolist(),
        "pedal_gain_per_pct": s.pedal_gain,
        "torque_curve_speed_radps": s.torque_curve_speed.tolist(),
        "torque_curve_nm": s.torque_curve.tolist(),
    }


def shift_maps_from_dict(s: dict) -> GearShiftMaps:
    return GearShiftMaps(
        upshift_speeds=s["upshift_speeds_mps"],
        downshift_speeds=s["downshift_speeds_mps"],
        pedal_gain=s["pedal_gain_per_pct"],
        torque_curve_speed=s["torque_curve_speed_radps"],
        torque_curve=s["torque_curve_nm"],
    )


def vehicle_to_dict(vehicle: ReferenceVehicle) -> dict:
    m, c = vehicle.fuel_map, vehicle.control
    return {
        "params": params_to_dict(vehicle.params),
        "engine_map": {
            "speed_grid_radps": m.speed_grid.tolist(),
            "torque_grid_nm": m.torque_grid.tolist(),
            "fuel_gps": m.fuel.tolist(),
        },
        "shifting": shift_maps_to_dict(vehicle.shift_maps),
        "control": {
            "idle_fuel_gps": c.idle_fuel_gps,
            "idle_torque_nm": c.idle_torque_nm,
            "fuel_cut_speed_mps": c.fuel_cut_speed,
            "fuel_cut_force_n": c.fuel_cut_force,
            "launch_correction": [list(pt) for pt in c.launch_correction],
        },
    }


def vehicle_from_dict(doc: dict) -> ReferenceVehicle:
    params = params_from_dict(doc["params"])
    m = doc["engine_map"]
    fuel_map = EngineFuelMap(m["speed_grid_radps"], m["torque_grid_nm"], m["fuel_gps"])
    shift_maps = shift_maps_from_dict(doc["shifting"])
    c = doc["control"]
    control = ControlParams(
        idle_fuel_gps=c["idle_fuel_gps"],
        idle_torque_nm=c["idle_torque_nm"],
        fuel_cut_speed=c["fuel_cut_speed_mps"],
        fuel_cut_force=c["fuel_cut_force_n"],
        launch_correction=tuple(tuple(pt) for pt in c.get("launch_correction", [])),
    )
    return ReferenceVehicle(params, fuel_map, shift_maps, control)


def load_vehicle(path) -> ReferenceVehicle:
    with open(path, encoding="utf-8") as f:
        return vehicle_from_dict(json.load(f))


def save_vehicle(vehicle: ReferenceVehicle, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(vehicle_to_dict(vehicle), f, indent=1, sort_keys=True)
        f.write("\n")
