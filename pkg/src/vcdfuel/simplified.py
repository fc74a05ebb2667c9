"""Closed-form polynomial fuel model fit from the map-based model.

The target form is

    fuel(v, a, th) = C(v) + P(v)*a + Q(v)*max(a,0)**2 + Z(v)*th

above an explicit lower bound, with a hard fuel-cut region below a
polynomial boundary accel(v, th) and a standstill floor beta. Fitting is
plain linear least squares of the map-based model's fuel rate sampled on a
regular midpoint grid, with the cut and standstill cells excluded, followed
by a positivity projection on the constant term.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import numpy.polynomial.polynomial as npoly

from .errors import ConstraintInfeasible, RankDeficient
from .powertrain import STANDSTILL_SPEED
from .semi_principled import SemiPrincipledModel, domain_excess, evaluate
from .trace import FLAG_CLAMPED, FLAG_ENVELOPE, FLAG_FLOOR, Trace

DEFAULT_DEGREES = {"C": 3, "P": 2, "Q": 1, "Z": 1}
POSITIVITY_MARGIN = 1e-3  # g/s kept above zero after projection

# term exponents (i, j) of the cut-boundary polynomial sum c_ij v**i th**j,
# total degree <= 2
CUT_BOUNDARY_TERMS = ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))


@dataclass(frozen=True)
class FitGrid:
    """Regular midpoint grid over (speed, acceleration, grade)."""

    v_range: tuple[float, float]
    a_range: tuple[float, float]
    grade_range: tuple[float, float]
    shape: tuple[int, int, int] = (48, 36, 11)

    def __post_init__(self):
        if min(self.shape) < 10:
            raise ValueError("need at least 10 grid cells per axis")

    def axes(self):
        out = []
        for (lo, hi), n in zip((self.v_range, self.a_range, self.grade_range), self.shape):
            step = (hi - lo) / n
            out.append(lo + step * (np.arange(n) + 0.5))
        return out

    def refined(self, factor: int = 2) -> "FitGrid":
        return FitGrid(self.v_range, self.a_range, self.grade_range,
                       tuple(n * factor for n in self.shape))


def default_grid(semi: SemiPrincipledModel) -> FitGrid:
    """Default fit box: full speed range, acceleration over the responsive
    band (below it the cut region rules, above it the torque envelope pins
    the output), grades within the map-based model's domain."""
    return FitGrid(v_range=(0.0, semi.speed_max), a_range=(-1.0, 2.5),
                   grade_range=(-0.12, 0.12))


@dataclass(frozen=True)
class SimplifiedModel:
    beta: float       # g/s lower bound at and below the cut speed
    cut_speed: float  # m/s
    coeff_c: np.ndarray  # ascending powers of v
    coeff_p: np.ndarray
    coeff_q: np.ndarray
    coeff_z: np.ndarray
    cut_boundary: np.ndarray  # over CUT_BOUNDARY_TERMS
    v_range: tuple[float, float]
    a_range: tuple[float, float]
    grade_range: tuple[float, float]
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("coeff_c", "coeff_p", "coeff_q", "coeff_z", "cut_boundary"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.beta <= 0 or self.cut_speed <= 0:
            raise ValueError("beta and cut_speed must be positive")

    def cut_accel(self, v, grade=0.0):
        """Boundary acceleration below which fuel is cut (for v above cut_speed)."""
        v = np.asarray(v, dtype=float)
        grade = np.asarray(grade, dtype=float)
        out = np.zeros(np.broadcast(v, grade).shape)
        for c, (i, j) in zip(self.cut_boundary, CUT_BOUNDARY_TERMS):
            out = out + c * v ** i * grade ** j
        return out

    def positive_part(self, v, a, grade=0.0):
        """The polynomial branch C + P*a + Q*(a+)^2 + Z*grade."""
        v = np.asarray(v, dtype=float)
        a_plus = np.maximum(np.asarray(a, dtype=float), 0.0)
        return (npoly.polyval(v, self.coeff_c)
                + npoly.polyval(v, self.coeff_p) * np.asarray(a, dtype=float)
                + npoly.polyval(v, self.coeff_q) * a_plus ** 2
                + npoly.polyval(v, self.coeff_z) * np.asarray(grade, dtype=float))

    def min_accel(self, v):
        """Lower edge of the meaningful operating band at zero grade."""
        return np.clip(self.cut_accel(v, 0.0), self.a_range[0], self.a_range[1])


def eval_simplified(model: SimplifiedModel, v, a, grade=0.0, with_flags: bool = False):
    """Fuel rate [g/s]; total function, inputs clamped to the fitted box.

    Returns exactly 0 in the fuel-cut region (v above the cut speed and
    acceleration below the fitted boundary) and at least beta at or below
    the cut speed.
    """
    v_in = np.atleast_1d(np.asarray(v, dtype=float))
    a_in = np.broadcast_to(np.asarray(a, dtype=float), v_in.shape)
    g_in = np.broadcast_to(np.asarray(grade, dtype=float), v_in.shape)
    clamped = (v_in < model.v_range[0]) | (v_in > model.v_range[1]) \
        | (a_in < model.a_range[0]) | (a_in > model.a_range[1]) \
        | (g_in < model.grade_range[0]) | (g_in > model.grade_range[1])
    vv = np.clip(v_in, *model.v_range)
    aa = np.clip(a_in, *model.a_range)
    gg = np.clip(g_in, *model.grade_range)

    fp = model.positive_part(vv, aa, gg)
    fuel = np.maximum(fp, 0.0)
    low = vv <= model.cut_speed
    fuel[low] = np.maximum(fp[low], model.beta)
    cut = ~low & (aa < model.cut_accel(vv, gg))
    fuel[cut] = 0.0

    if not np.ndim(v):
        return (float(fuel[0]), bool(clamped[0])) if with_flags else float(fuel[0])
    return (fuel, clamped) if with_flags else fuel


def eval_simplified_trace(model: SimplifiedModel, t, v, a, grade=0.0,
                          name: str = "simplified") -> Trace:
    """Rowwise evaluation over a (t, v, a) profile; no internal dynamics."""
    t = np.asarray(t, dtype=float)
    fuel, clamped = eval_simplified(model, np.asarray(v, dtype=float), a, grade, with_flags=True)
    return Trace(name=name, t=t, v=np.asarray(v, dtype=float),
                 a=np.broadcast_to(np.asarray(a, dtype=float), t.shape).copy(),
                 grade=np.broadcast_to(np.asarray(grade, dtype=float), t.shape).copy(),
                 fuel=np.atleast_1d(fuel),
                 flags=np.where(np.atleast_1d(clamped), FLAG_CLAMPED, 0))


# --- fitting -----------------------------------------------------------------

def fit_simplified(semi: SemiPrincipledModel, grid: FitGrid | None = None,
                   degrees: dict | None = None,
                   extrapolation_margin: float = 0.25) -> SimplifiedModel:
    """Reduce a map-based model to the closed polynomial form.

    The polynomial is fit over the region where the map-based model
    actually responds to its inputs. Cells where its output is pinned by a
    clamp carry no signal about the fuel surface and are left out: the
    torque floor and the engine envelope produce flat shelves, and inputs
    beyond the fitted map boxes by more than ``extrapolation_margin`` of
    their span sit on extrapolation plateaus. Letting those shelves into
    the least squares would drag the polynomial away from the band the
    model is used in; the lower bound and the cut rule cover them at
    evaluation time instead.
    """
    grid = grid or default_grid(semi)

    def fuel_fn(v, a, grade):
        return evaluate(semi, v, a, grade)["fuel"]

    def usable_fn(v, a, grade):
        pinned = (evaluate(semi, v, a, grade)["flags"] & (FLAG_ENVELOPE | FLAG_FLOOR)) != 0
        return ~pinned & (domain_excess(semi, v, a, grade) <= extrapolation_margin)

    return fit_to_function(fuel_fn, cut_speed=semi.constants.cut_speed,
                           beta=semi.constants.idle_fuel, grid=grid, degrees=degrees,
                           usable_fn=usable_fn)


def fit_to_function(fuel_fn, cut_speed: float, beta: float, grid: FitGrid,
                    degrees: dict | None = None, usable_fn=None) -> SimplifiedModel:
    """L2 fit of an arbitrary fuel function f(v, a, grade) on a midpoint grid.

    fuel_fn must accept equal-shaped arrays and return fuel in g/s, with
    zeros marking its fuel-cut region. Cells in that region, standstill
    cells, and cells usable_fn rejects are excluded from the polynomial
    fit; the cut boundary gets its own least-squares polynomial. The
    constant term of C is raised afterwards if the minimum of the
    polynomial along the boundary at zero grade falls to zero or below.
    """
    deg = dict(DEFAULT_DEGREES)
    if degrees:
        deg.update(degrees)
    v_ax, a_ax, g_ax = grid.axes()
    vg, ag, gg = np.meshgrid(v_ax, a_ax, g_ax, indexing="ij")
    fuel = np.asarray(fuel_fn(vg.ravel(), ag.ravel(), gg.ravel()), dtype=float)
    fuel = fuel.reshape(vg.shape)

    cut_cells = (fuel == 0.0) & (vg > cut_speed)
    idle_cells = vg < STANDSTILL_SPEED
    include = ~cut_cells & ~idle_cells
    if usable_fn is not None:
        usable = np.asarray(usable_fn(vg.ravel(), ag.ravel(), gg.ravel()), dtype=bool)
        include &= usable.reshape(vg.shape)

    boundary = _fit_cut_boundary(v_ax, a_ax, g_ax, cut_cells, cut_speed)
    v_scale = max(abs(grid.v_range[0]), abs(grid.v_range[1]), 1e-12)

    # stage 1: grade coefficient from antisymmetric grade differences at
    # fixed (v, a); the assumption that grade sensitivity does not depend
    # on acceleration makes these slopes a direct estimate of Z(v), and
    # differencing cancels the grade-independent terms exactly
    z = _fit_grade_coefficient(v_ax, g_ax, fuel, include, deg["Z"], v_scale)

    # stage 2: C, P, Q by least squares on the grade-corrected fuel
    residual = fuel - npoly.polyval(vg, z) * gg
    design = _design_matrix(vg[include] / v_scale, ag[include], deg)
    n_coeffs = design.shape[1]
    coeffs, _, rank, _ = np.linalg.lstsq(design, residual[include], rcond=None)
    if rank < n_coeffs:
        raise RankDeficient(f"simplified-fit design rank {rank} < {n_coeffs}")
    l2 = float(np.sqrt(np.mean((design @ coeffs - residual[include]) ** 2)))
    max_err = float(np.max(np.abs(design @ coeffs - residual[include])))

    c, p, q = _split_coeffs(coeffs, deg, v_scale)
    model = SimplifiedModel(beta=beta, cut_speed=cut_speed, coeff_c=c, coeff_p=p,
                            coeff_q=q, coeff_z=z, cut_boundary=boundary,
                            v_range=grid.v_range, a_range=grid.a_range,
                            grade_range=grid.grade_range,
                            diagnostics={"l2_error": l2, "max_error": max_err,
                                         "positivity_shift": 0.0,
                                         "grid_shape": list(grid.shape)})
    return _enforce_positivity(model)


def _design_matrix(v_scaled, a, deg):
    a_plus = np.maximum(a, 0.0)
    blocks = [npoly.polyvander(v_scaled, deg["C"])]
    blocks.append(npoly.polyvander(v_scaled, deg["P"]) * a[:, None])
    blocks.append(npoly.polyvander(v_scaled, deg["Q"]) * (a_plus ** 2)[:, None])
    return np.hstack(blocks)


def _split_coeffs(coeffs, deg, v_scale):
    sizes = [deg["C"] + 1, deg["P"] + 1, deg["Q"] + 1]
    parts = np.split(coeffs, np.cumsum(sizes)[:-1])
    # undo the v scaling so stored coefficients act on v in m/s
    return tuple(part / v_scale ** np.arange(part.size) for part in parts)


def _fit_grade_coefficient(v_ax, g_ax, fuel, include, degree, v_scale) -> np.ndarray:
    """Z(v) from symmetric-difference grade slopes, one polynomial LS."""
    vs, slopes = [], []
    n_g = len(g_ax)
    for i, v in enumerate(v_ax):
        acc = []
        for j in range(n_g // 2):
            k = n_g - 1 - j
            if abs(g_ax[j] + g_ax[k]) > 1e-12:
                continue
            both = include[i, :, j] & include[i, :, k]
            if np.any(both):
                diff = (fuel[i, both, k] - fuel[i, both, j]) / (g_ax[k] - g_ax[j])
                acc.extend(diff.tolist())
        if acc:
            vs.append(v)
            slopes.append(float(np.mean(acc)))
    if len(vs) < degree + 1:
        raise RankDeficient(f"only {len(vs)} grade-slope samples for degree {degree}")
    design = npoly.polyvander(np.array(vs) / v_scale, degree)
    coeffs, _, rank, _ = np.linalg.lstsq(design, np.array(slopes), rcond=None)
    if rank < degree + 1:
        raise RankDeficient("grade-slope sample geometry is degenerate")
    return coeffs / v_scale ** np.arange(coeffs.size)


def _fit_cut_boundary(v_ax, a_ax, g_ax, cut_cells, cut_speed) -> np.ndarray:
    """Least-squares surface through the cut boundary per (speed, grade)
    grid line.

    The true boundary lies between the last cut cell and the first fueled
    one, so the sample is placed on the shared cell edge; taking the cut
    cell's center instead would bias the whole surface low by half a step.
    """
    half_step = 0.5 * (a_ax[1] - a_ax[0])
    vs, gs, bounds = [], [], []
    for i, v in enumerate(v_ax):
        if v <= cut_speed:
            continue
        for j, g in enumerate(g_ax):
            line = cut_cells[i, :, j]
            if np.any(line):
                bounds.append(a_ax[np.nonzero(line)[0].max()] + half_step)
                vs.append(v)
                gs.append(g)
    if len(bounds) < len(CUT_BOUNDARY_TERMS):
        raise RankDeficient(
            f"only {len(bounds)} cut-boundary samples for {len(CUT_BOUNDARY_TERMS)} terms")
    vs = np.array(vs)
    gs = np.array(gs)
    design = np.column_stack([vs ** i * gs ** j for i, j in CUT_BOUNDARY_TERMS])
    coeffs, _, rank, _ = np.linalg.lstsq(design, np.array(bounds), rcond=None)
    if rank < len(CUT_BOUNDARY_TERMS):
        raise RankDeficient("cut-boundary sample geometry is degenerate")
    return coeffs


def _enforce_positivity(model: SimplifiedModel, n_check: int = 512) -> SimplifiedModel:
    """Raise C's constant term until f_p stays positive along the lower
    operating edge at zero grade."""
    v = np.linspace(model.v_range[0], model.v_range[1], n_check)
    worst = float(np.min(model.positive_part(v, model.min_accel(v), 0.0)))
    if worst > 0:
        return model
    shift = -worst + POSITIVITY_MARGIN
    coeff_c = model.coeff_c.copy()
    coeff_c[0] += shift
    diagnostics = dict(model.diagnostics)
    diagnostics["positivity_shift"] = shift
    fixed = SimplifiedModel(beta=model.beta, cut_speed=model.cut_speed, coeff_c=coeff_c,
                            coeff_p=model.coeff_p, coeff_q=model.coeff_q, coeff_z=model.coeff_z,
                            cut_boundary=model.cut_boundary, v_range=model.v_range,
                            a_range=model.a_range, grade_range=model.grade_range,
                            diagnostics=diagnostics)
    check = float(np.min(fixed.positive_part(v, fixed.min_accel(v), 0.0)))
    if check <= 0:
        raise ConstraintInfeasible("positivity projection failed to lift the minimum")
    return fixed


# --- serialization -----------------------------------------------------------

def simplified_to_dict(model: SimplifiedModel) -> dict:
    return {
        "beta_gps": model.beta,
        "cut_speed_mps": model.cut_speed,
        "coeff_c": model.coeff_c.tolist(),
        "coeff_p": model.coeff_p.tolist(),
        "coeff_q": model.coeff_q.tolist(),
        "coeff_z": model.coeff_z.tolist(),
        "cut_boundary": model.cut_boundary.tolist(),
        "cut_boundary_terms": [list(t) for t in CUT_BOUNDARY_TERMS],
        "v_range_mps": list(model.v_range),
        "a_range_mps2": list(model.a_range),
        "grade_range_rad": list(model.grade_range),
        "diagnostics": model.diagnostics,
        "units": {
            "coeff_c": "g/s per (m/s)^i",
            "coeff_p": "g/s per (m/s)^i per (m/s^2)",
            "coeff_q": "g/s per (m/s)^i per (m/s^2)^2",
            "coeff_z": "g/s per (m/s)^i per rad",
        },
    }


def simplified_from_dict(doc: dict) -> SimplifiedModel:
    return SimplifiedModel(
        beta=doc["beta_gps"],
        cut_speed=doc["cut_speed_mps"],
        coeff_c=doc["coeff_c"],
        coeff_p=doc["coeff_p"],
        coeff_q=doc["coeff_q"],
        coeff_z=doc["coeff_z"],
        cut_boundary=doc["cut_boundary"],
        v_range=tuple(doc["v_range_mps"]),
        a_range=tuple(doc["a_range_mps2"]),
        grade_range=tuple(doc["grade_range_rad"]),
        diagnostics=doc.get("diagnostics", {}),
    )


def save_simplified(model: SimplifiedModel, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(simplified_to_dict(model), f, indent=1, sort_keys=True)
        f.write("\n")


def load_simplified(path) -> SimplifiedModel:
    with open(path, encoding="utf-8") as f:
        return simplified_from_dict(json.load(f))
