"""Extraction of empirical constants and fitted maps from simulator traces.

The reference vehicle is driven over a battery of cycles (the virtual
dynamometer campaign); this module mines the resulting traces for idle
constants, fuel-cut thresholds, downshift cutoff speeds, a first-gear
torque correction, and least-squares polynomial maps. Everything here is
deterministic and order-independent: shuffling the trace list changes no
output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .drive_cycles import DriveCycle
from .errors import (
    DegreeTooHigh,
    InsufficientGearData,
    NoDownshiftData,
    NoFirstGearData,
    NoFuelCutData,
    NoIdleData,
    RankDeficient,
)
from .powertrain import (
    STANDSTILL_SPEED,
    ReferenceVehicle,
    VehicleParams,
    simulate,
    transmission_output_speed,
    wheel_force,
)
from .trace import FLAG_ENVELOPE, Trace

# torque change rate below which a step counts as settled idle, evaluated
# over the +-1 s neighborhood
IDLE_TORQUE_RATE = 0.01  # Nm/s
IDLE_WINDOW = 1.0        # s

CUT_SPEED_PERCENTILE = 1.0
CUT_FORCE_PERCENTILE = 95.0


def percentile(values, q: float) -> float:
    """Linear-interpolated (inclusive) order statistic, the convention used
    for every percentile in this package."""
    return float(np.percentile(np.asarray(values, dtype=float), q, method="linear"))


@dataclass(frozen=True)
class ShiftEvent:
    cycle: str
    t: float
    from_gear: int
    to_gear: int
    v: float
    pedal: float


@dataclass
class VcdDataset:
    """Traces plus detected shift events from one campaign."""

    params: VehicleParams
    traces: list[Trace]
    events: list[ShiftEvent] = field(default_factory=list)

    def stacked(self) -> dict[str, np.ndarray]:
        """All traces concatenated per column, with derived driveline inputs."""
        cols = {}
        for name in ("v", "a", "grade", "gear", "engine_speed", "engine_torque", "fuel", "flags"):
            cols[name] = np.concatenate([getattr(tr, name) for tr in self.traces])
        cols["output_speed"] = transmission_output_speed(self.params, cols["v"])
        force = np.empty_like(cols["v"])
        for k in range(1, self.params.n_gears + 1):
            mask = cols["gear"] == k
            if np.any(mask):
                force[mask] = wheel_force(self.params, cols["v"][mask], cols["a"][mask],
                                          cols["grade"][mask], k)
        cols["wheel_force"] = force
        return cols


def detect_shift_events(trace: Trace) -> list[ShiftEvent]:
    events = []
    gear = trace.gear
    idx = np.nonzero(np.diff(gear) != 0)[0] + 1
    for i in idx:
        events.append(ShiftEvent(cycle=trace.name, t=float(trace.t[i]),
                                 from_gear=int(gear[i - 1]), to_gear=int(gear[i]),
                                 v=float(trace.v[i]), pedal=float(trace.pedal[i])))
    return events


def run_vcd(vehicle: ReferenceVehicle, cycles: list[DriveCycle], dt: float = 0.1) -> VcdDataset:
    """Simulate every cycle on flat grade and collect traces + shift events."""
    if not cycles:
        raise ValueError("need at least one cycle")
    traces = [simulate(c, vehicle, grade=0.0, dt=dt) for c in cycles]
    events = [ev for tr in traces for ev in detect_shift_events(tr)]
    return VcdDataset(params=vehicle.params, traces=traces, events=events)


# --- constants ---------------------------------------------------------------

@dataclass(frozen=True)
class ExtractedConstants:
    torque_floor: float           # Nm, settled idle torque
    idle_fuel: float              # g/s
    cut_speed: float              # m/s, fuel cut only above
    cut_force: float              # N, fuel cut only below
    downshift_cutoffs: np.ndarray  # m/s per gear, [0] = 0 for first gear
    launch_correction: tuple = ()  # (accel, extra Nm) knots
    interpolated_gears: tuple = ()  # gears whose cutoff was filled, not observed

    def __post_init__(self):
        object.__setattr__(self, "downshift_cutoffs",
                           np.asarray(self.downshift_cutoffs, dtype=float))
        if self.idle_fuel <= 0:
            raise ValueError("idle fuel must be positive")
        if self.cut_speed <= 0:
            raise ValueError("cut speed must be positive")
        if np.any(np.diff(self.downshift_cutoffs) <= 0):
            raise ValueError("downshift cutoffs must increase with gear")

    def launch_torque(self, accel):
        if not self.launch_correction:
            return np.zeros_like(np.asarray(accel, dtype=float))
        pts = np.asarray(self.launch_correction, dtype=float)
        return np.interp(accel, pts[:, 0], pts[:, 1])


def _settled_mask(t: np.ndarray, torque: np.ndarray) -> np.ndarray:
    """True where |dT/dt| stays below IDLE_TORQUE_RATE over [t-1s, t+1s].

    Edges use the samples that exist; a window reaching past the trace is
    judged on the recorded part only.
    """
    rate_ok = np.abs(np.gradient(torque, t)) < IDLE_TORQUE_RATE
    dt = float(np.median(np.diff(t)))
    half = max(1, int(round(IDLE_WINDOW / dt)))
    padded = np.pad(rate_ok, half, constant_values=True)
    windows = np.lib.stride_tricks.sliding_window_view(padded, 2 * half + 1)
    return windows.all(axis=1)


def extract_idle_constants(ds: VcdDataset) -> tuple[float, float]:
    """Mean torque and fuel rate over settled standstill steps."""
    torques, fuels = [], []
    for tr in ds.traces:
        mask = (tr.v < STANDSTILL_SPEED) & _settled_mask(tr.t, tr.engine_torque)
        torques.append(tr.engine_torque[mask])
        fuels.append(tr.fuel[mask])
    torques = np.concatenate(torques)
    fuels = np.concatenate(fuels)
    if torques.size == 0:
        raise NoIdleData("no settled standstill steps in any trace")
    return float(torques.mean()), float(fuels.mean())


def extract_fuel_cut_thresholds(ds: VcdDataset) -> tuple[float, float]:
    """Speed / wheel-force thresholds of the fuel-cut region.

    Over all zero-fuel moving steps: cut speed is the 1st percentile of
    speed, cut force the 95th percentile of wheel force.
    """
    cols = ds.stacked()
    cut = (cols["fuel"] == 0.0) & (cols["v"] >= STANDSTILL_SPEED)
    if not np.any(cut):
        raise NoFuelCutData("no zero-fuel moving steps in the dataset")
    v_c = percentile(cols["v"][cut], CUT_SPEED_PERCENTILE)
    f_wc = percentile(cols["wheel_force"][cut], CUT_FORCE_PERCENTILE)
    return v_c, f_wc


def extract_downshift_map(ds: VcdDataset) -> tuple[np.ndarray, tuple]:
    """Per-gear downshift cutoff speeds from observed single-step downshifts.

    cutoffs[k-1] is the speed below which gear k is dropped; first gear has
    cutoff 0. Transitions never observed are filled by interpolating over
    gear index between observed neighbors and reported back.
    """
    n_gears = ds.params.n_gears
    cutoffs = np.full(n_gears, np.nan)
    cutoffs[0] = 0.0
    for k in range(2, n_gears + 1):
        speeds = [ev.v for ev in ds.events if ev.from_gear == k and ev.to_gear == k - 1]
        if speeds:
            cutoffs[k - 1] = float(np.median(speeds))
    if np.all(np.isnan(cutoffs[1:])):
        raise NoDownshiftData("no downshift events in the dataset")
    missing = np.nonzero(np.isnan(cutoffs))[0]
    if missing.size:
        known = np.nonzero(~np.isnan(cutoffs))[0]
        cutoffs[missing] = np.interp(missing, known, cutoffs[known])
    return cutoffs, tuple(int(g) + 1 for g in missing)


def extract_torque_correction(ds: VcdDataset, predict_torque, n_bins: int = 8,
                              accel_range: tuple[float, float] = (-3.0, 3.0)) -> tuple:
    """First-gear torque correction binned over acceleration.

    predict_torque(v, a, grade) must return the draft model's engine torque
    for first-gear operation. Standstill steps are skipped (their torque is
    set by the idle governor, not the driveline, and the assembled model
    handles them through the idle rule), as are envelope-clamped steps
    (their torque reflects the cap, not converter behavior). Empty bins are
    omitted, so the returned knots interpolate across them.
    """
    vs, accs, grades, torques = [], [], [], []
    for tr in ds.traces:
        mask = (tr.gear == 1) & (tr.v >= STANDSTILL_SPEED) & ((tr.flags & FLAG_ENVELOPE) == 0)
        vs.append(tr.v[mask])
        accs.append(tr.a[mask])
        grades.append(tr.grade[mask])
        torques.append(tr.engine_torque[mask])
    v = np.concatenate(vs)
    if v.size == 0:
        raise NoFirstGearData("no moving first-gear steps in the dataset")
    a = np.concatenate(accs)
    grade = np.concatenate(grades)
    residual = np.concatenate(torques) - np.asarray(predict_torque(v, a, grade), dtype=float)

    edges = np.linspace(accel_range[0], accel_range[1], n_bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    knots = []
    for b in range(n_bins):
        hi = a <= edges[b + 1] if b == n_bins - 1 else a < edges[b + 1]
        in_bin = (a >= edges[b]) & hi
        if np.any(in_bin):
            knots.append((float(centers[b]), float(residual[in_bin].mean())))
    return tuple(knots)


# --- polynomial surface fitting ----------------------------------------------

@dataclass(frozen=True)
class PolyMap2D:
    """Least-squares tensor-product polynomial surface z(x, y).

    Coefficients are solved and stored in standardized coordinates
    (zero-mean, unit-variance inputs) so evaluation reproduces the fit
    exactly; ``coeffs`` converts them back to plain x**i * y**j powers for
    inspection.
    """

    degree: tuple[int, int]
    coeffs_std: np.ndarray
    x_mean: float
    x_std: float
    y_mean: float
    y_std: float
    domain: tuple[tuple[float, float], tuple[float, float]]
    rms_residual: float

    def __post_init__(self):
        object.__setattr__(self, "coeffs_std", np.asarray(self.coeffs_std, dtype=float))
        d1, d2 = self.degree
        if self.coeffs_std.shape != (d1 + 1, d2 + 1):
            raise ValueError("coefficient matrix shape does not match degree")

    def evaluate(self, x, y, clamp: bool = False):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if clamp:
            (x0, x1), (y0, y1) = self.domain
            x = np.clip(x, x0, x1)
            y = np.clip(y, y0, y1)
        u = (x - self.x_mean) / self.x_std
        w = (y - self.y_mean) / self.y_std
        out = np.polynomial.polynomial.polyval2d(u, w, self.coeffs_std)
        return out if out.ndim else float(out)

    def out_of_domain(self, x, y):
        (x0, x1), (y0, y1) = self.domain
        return (np.asarray(x) < x0) | (np.asarray(x) > x1) | \
               (np.asarray(y) < y0) | (np.asarray(y) > y1)

    @property
    def coeffs(self) -> np.ndarray:
        """Coefficient matrix over the raw monomial basis x**i * y**j."""
        mx = _shift_scale_matrix(self.degree[0], self.x_mean, self.x_std)
        my = _shift_scale_matrix(self.degree[1], self.y_mean, self.y_std)
        return mx.T @ self.coeffs_std @ my

    def to_dict(self) -> dict:
        return {
            "degree": list(self.degree),
            "coeffs_std": self.coeffs_std.tolist(),
            "x_mean": self.x_mean, "x_std": self.x_std,
            "y_mean": self.y_mean, "y_std": self.y_std,
            "domain": [list(self.domain[0]), list(self.domain[1])],
            "rms_residual": self.rms_residual,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PolyMap2D":
        return cls(degree=tuple(doc["degree"]), coeffs_std=np.array(doc["coeffs_std"]),
                   x_mean=doc["x_mean"], x_std=doc["x_std"],
                   y_mean=doc["y_mean"], y_std=doc["y_std"],
                   domain=(tuple(doc["domain"][0]), tuple(doc["domain"][1])),
                   rms_residual=doc["rms_residual"])


def _shift_scale_matrix(deg: int, mean: float, std: float) -> np.ndarray:
    """Rows give ((x - mean)/std)**i expanded over plain powers of x."""
    m = np.zeros((deg + 1, deg + 1))
    for i in range(deg + 1):
        for j in range(i + 1):
            m[i, j] = math.comb(i, j) * (-mean) ** (i - j) / std ** i
    return m


def fit_poly2d(xs, ys, zs, degree: tuple[int, int], degree_cap: int = 4,
               domain=None) -> PolyMap2D:
    """Ordinary least squares on the tensor monomial basis.

    The map's validity box defaults to the bounding box of the fitted
    samples; pass ``domain`` to widen it (e.g. when some rows are kept out
    of the regression but still describe reachable inputs). Raises
    DegreeTooHigh when d1 + d2 exceeds the cap and RankDeficient when the
    sample geometry cannot determine all coefficients.
    """
    d1, d2 = degree
    if d1 < 0 or d2 < 0:
        raise ValueError("degrees must be nonnegative")
    if d1 + d2 > degree_cap:
        raise DegreeTooHigh(f"total degree {d1 + d2} exceeds cap {degree_cap}")
    x = np.asarray(xs, dtype=float).ravel()
    y = np.asarray(ys, dtype=float).ravel()
    z = np.asarray(zs, dtype=float).ravel()
    if not (x.size == y.size == z.size):
        raise ValueError("xs, ys, zs must have equal lengths")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
        raise ValueError("fit inputs must be finite")
    n_coeffs = (d1 + 1) * (d2 + 1)
    if x.size < n_coeffs:
        raise RankDeficient(f"{x.size} samples cannot determine {n_coeffs} coefficients")

    x_mean, x_std = float(x.mean()), float(x.std())
    y_mean, y_std = float(y.mean()), float(y.std())
    x_std = x_std if x_std > 1e-12 else 1.0
    y_std = y_std if y_std > 1e-12 else 1.0
    u = (x - x_mean) / x_std
    w = (y - y_mean) / y_std
    design = np.polynomial.polynomial.polyvander2d(u, w, [d1, d2])
    coeffs, _, rank, _ = np.linalg.lstsq(design, z, rcond=None)
    if rank < n_coeffs:
        raise RankDeficient(f"design matrix rank {rank} < {n_coeffs} coefficients")
    rms = float(np.sqrt(np.mean((design @ coeffs - z) ** 2)))
    if domain is None:
        domain = ((float(x.min()), float(x.max())), (float(y.min()), float(y.max())))
    return PolyMap2D(degree=(d1, d2), coeffs_std=coeffs.reshape(d1 + 1, d2 + 1),
                     x_mean=x_mean, x_std=x_std, y_mean=y_mean, y_std=y_std,
                     domain=domain, rms_residual=rms)


# --- map battery -------------------------------------------------------------

@dataclass
class FittedMaps:
    fuel_map: PolyMap2D                # (engine speed, torque) -> g/s
    engine_speed_maps: list[PolyMap2D]  # per gear, (output speed, wheel force) -> rad/s
    torque_maps: list[PolyMap2D]        # per gear, (output speed, wheel force) -> Nm


def fit_all_maps(ds: VcdDataset, fuel_degree=(2, 2), gear_degree=(1, 1),
                 min_gear_samples: int = 50, min_torque: float | None = None,
                 launch_correction=()) -> FittedMaps:
    """Fit the fuel surface and the per-gear driveline maps.

    The fuel fit drops standstill and fuel-cut rows (those regimes are
    represented by the idle constant and the cut rule) and, when
    ``min_torque`` is given, rows below it (unreachable after the model's
    torque clamp). Per-gear fits drop rows pinned at the engine-speed
    clamps or the torque envelope, since the model re-applies those clamps
    after map evaluation. A nonempty ``launch_correction`` is subtracted
    from first-gear torque targets so the fitted map composes with it.
    """
    cols = ds.stacked()
    idle = cols["v"] < STANDSTILL_SPEED
    cut = (cols["fuel"] == 0.0) & ~idle

    fuel_rows = ~idle & ~cut
    if min_torque is not None:
        fuel_rows &= cols["engine_torque"] >= min_torque
    fuel_map = fit_poly2d(cols["engine_speed"][fuel_rows], cols["engine_torque"][fuel_rows],
                          cols["fuel"][fuel_rows], fuel_degree)

    p = ds.params
    speed_maps, torque_maps = [], []
    for k in range(1, p.n_gears + 1):
        rows = (cols["gear"] == k) & ~idle
        unclamped = (cols["engine_speed"] > p.engine_speed_idle) & \
                    (cols["engine_speed"] < p.engine_speed_max)
        n_rows = rows & unclamped
        t_rows = n_rows & ((cols["flags"] & FLAG_ENVELOPE) == 0)
        if min(n_rows.sum(), t_rows.sum()) < min_gear_samples:
            raise InsufficientGearData(k, int(min(n_rows.sum(), t_rows.sum())), min_gear_samples)
        # validity box spans everything the gear actually saw; clamped rows
        # are kept out of the regression but still mark reachable inputs
        box = ((float(cols["output_speed"][rows].min()), float(cols["output_speed"][rows].max())),
               (float(cols["wheel_force"][rows].min()), float(cols["wheel_force"][rows].max())))
        speed_maps.append(fit_poly2d(cols["output_speed"][n_rows], cols["wheel_force"][n_rows],
                                     cols["engine_speed"][n_rows], gear_degree, domain=box))
        torque_target = cols["engine_torque"][t_rows]
        if k == 1 and launch_correction:
            pts = np.asarray(launch_correction, dtype=float)
            torque_target = torque_target - np.interp(cols["a"][t_rows], pts[:, 0], pts[:, 1])
        torque_maps.append(fit_poly2d(cols["output_speed"][t_rows], cols["wheel_force"][t_rows],
                                      torque_target, gear_degree, domain=box))
    return FittedMaps(fuel_map=fuel_map, engine_speed_maps=speed_maps, torque_maps=torque_maps)
