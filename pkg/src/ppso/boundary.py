"""Optimal surrender boundaries read off a solved grid.

The stopping set is parametrised two ways. ``c(x)`` is the first time the
level ``x`` is in the stopping set. ``b1``, ``b2``, ``b3`` are the
time-parametrised edges: everything at or below ``b1(t)`` is stopped, and in
regime B so is the band ``[b2(t), b3(t)]`` between the bonus activation level
and the upper threshold.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .engine import GridSolution
from .model import DerivedThresholds, FeeCase

__all__ = [
    "Regime",
    "BoundaryCurves",
    "ShapeCheck",
    "ShapeReport",
    "extract_c",
    "extract_time_boundaries",
    "extract_boundaries",
    "validate_shape",
    "smooth_fit_gap",
    "stopping_mask_from_curves",
    "curves_to_csv",
    "landmarks_dict",
]

LANDMARK_CELLS = 2.0


class Regime(str, enum.Enum):
    A = "A"
    B = "B"


def _empty_curve() -> np.ndarray:
    return np.empty((0, 2))


@dataclass(frozen=True, eq=False)
class BoundaryCurves:
    """Boundary samples. Each curve is an ``(m, 2)`` array.

    ``c_samples`` rows are ``(x_k, c(x_k))``; ``b1``, ``b2``, ``b3`` rows are
    ``(t_n, x)``. Landmarks are ``None`` until the time boundaries are
    extracted or when they do not exist for the run.
    """

    c_samples: np.ndarray
    t0: float
    T: float
    dt: float
    dx: float
    n_steps: int
    b1: np.ndarray = field(default_factory=_empty_curve)
    b2: np.ndarray = field(default_factory=_empty_curve)
    b3: np.ndarray = field(default_factory=_empty_curve)
    regime: Optional[Regime] = None
    hat_c: Optional[float] = None
    x1: Optional[float] = None
    x2: Optional[float] = None
    x3: Optional[float] = None
    hat_x3: Optional[float] = None

    @property
    def levels(self) -> np.ndarray:
        return self.c_samples[:, 0]

    @property
    def c(self) -> np.ndarray:
        return self.c_samples[:, 1]


def extract_c(solution: GridSolution) -> BoundaryCurves:
    """First stopping time per level. Layer N counts as stopped, so ``c <= T``."""
    spec = solution.spec
    first = np.argmax(solution.stopped, axis=0)
    c = first * spec.dt
    samples = np.column_stack([solution.levels, c])
    t0 = float(c[1]) if len(c) > 1 else 0.0
    return BoundaryCurves(
        c_samples=samples,
        t0=t0,
        T=solution.params.T,
        dt=spec.dt,
        dx=spec.dx,
        n_steps=spec.n_steps,
    )


def _regime(thresholds: DerivedThresholds) -> Regime:
    return Regime.A if thresholds.x_alpha >= thresholds.x_bar_q else Regime.B


def _alpha_index(levels: np.ndarray, x_alpha: float, dx: float) -> int:
    """First level strictly above ``x_alpha`` minus one, i.e. the last level <= x_alpha."""
    return int(math.floor(x_alpha / dx + 1e-12))


def extract_time_boundaries(curves: BoundaryCurves, solution: GridSolution,
                            thresholds: DerivedThresholds) -> BoundaryCurves:
    """Classify each time layer's stopped levels into connected runs.

    ``b1`` is the top of the run containing level 0, kept below ``x_alpha``.
    In regime B, the first stopped run above ``x_alpha`` that starts below the
    upper threshold gives ``b2`` (its bottom) and ``b3`` (its top).
    """
    regime = _regime(thresholds)
    dx = curves.dx
    levels = solution.levels
    stopped = solution.stopped
    N = curves.n_steps
    times = solution.times
    k_alpha = _alpha_index(levels, thresholds.x_alpha, dx)
    below_alpha = int(np.searchsorted(levels, thresholds.x_alpha, side="left"))  # levels < x_alpha
    upper = thresholds.upper_threshold
    k_upper = len(levels) - 1 if not math.isfinite(upper) else min(
        len(levels) - 1, int(math.floor((upper + LANDMARK_CELLS * dx) / dx + 1e-12))
    )

    b1, b2, b3 = [], [], []
    for n in range(N):
        row = stopped[n]
        free = np.flatnonzero(~row[: max(below_alpha, 1)])
        top = (free[0] - 1) if free.size else max(below_alpha - 1, 0)
        b1.append((times[n], levels[top]))
        if regime is Regime.B:
            above = np.flatnonzero(row[k_alpha + 1: k_upper + 1])
            if above.size:
                lo = k_alpha + 1 + above[0]
                gaps = np.flatnonzero(~row[lo:])
                hi = lo + (gaps[0] - 1 if gaps.size else len(row) - 1 - lo)
                b2.append((times[n], levels[lo]))
                b3.append((times[n], levels[hi]))

    c = curves.c
    # x1: top of the run of c == 0 starting at x = 0, below x_alpha
    zero_run = np.flatnonzero(c[:below_alpha] > 0)
    k1 = (zero_run[0] - 1) if zero_run.size else below_alpha - 1
    x1 = float(levels[max(k1, 0)])

    hat_c = x2 = x3 = None
    if regime is Regime.B:
        window = np.arange(k_alpha + 1, min(k_upper, len(levels) - 1) + 1)
        window = window[levels[window] < upper] if math.isfinite(upper) else window
        if window.size:
            cw = c[window]
            hat_c = float(cw.min())
            at_min = window[np.isclose(cw, hat_c, rtol=0, atol=1e-12)]
            x2, x3 = float(levels[at_min[0]]), float(levels[at_min[-1]])

    hat_x3 = None
    if thresholds.fee_case is FeeCase.CASE_II and thresholds.hat_x2 is not None:
        far = np.flatnonzero((levels > thresholds.hat_x2) & (c == 0))
        if far.size:
            hat_x3 = float(levels[far[0]])

    return replace(
        curves,
        b1=np.array(b1).reshape(-1, 2),
        b2=np.array(b2).reshape(-1, 2),
        b3=np.array(b3).reshape(-1, 2),
        regime=regime,
        hat_c=hat_c,
        x1=x1,
        x2=x2,
        x3=x3,
        hat_x3=hat_x3,
    )


def extract_boundaries(solution: GridSolution, thresholds: DerivedThresholds) -> BoundaryCurves:
    return extract_time_boundaries(extract_c(solution), solution, thresholds)


@dataclass(frozen=True)
class ShapeCheck:
    name: str
    passed: bool
    measured: Optional[float]
    tolerance: Optional[float]
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "measured": self.measured,
                "tolerance": self.tolerance, "detail": self.detail}


@dataclass(frozen=True)
class ShapeReport:
    regime: Regime
    checks: list[ShapeCheck]

    @property
    def summary(self) -> bool:
        return all(ch.passed for ch in self.checks)

    def __getitem__(self, name: str) -> ShapeCheck:
        for ch in self.checks:
            if ch.name == name:
                return ch
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"regime": self.regime.value, "summary": self.summary,
                "checks": [ch.to_dict() for ch in self.checks]}


def _max_increase(values: np.ndarray) -> float:
    return float(np.max(np.diff(values))) if values.size > 1 else 0.0


def _plateaus(c: np.ndarray, idx: np.ndarray, T: float) -> int:
    """Adjacent levels with equal ``c`` strictly inside (0, T)."""
    if idx.size < 2:
        return 0
    cv = c[idx]
    inner = (cv[:-1] > 0) & (cv[:-1] < T - 1e-12)
    return int(np.sum(inner & np.isclose(cv[:-1], cv[1:], rtol=0, atol=1e-12)))


def validate_shape(curves: BoundaryCurves, thresholds: DerivedThresholds,
                   fee_case: Optional[FeeCase] = None, continuity_tol: Optional[float] = None,
                   landmark_cells: float = LANDMARK_CELLS) -> ShapeReport:
    """Check the extracted curves against the qualitative shape theory.

    Failures are recorded in the report; nothing is raised.
    """
    if curves.regime is None:
        raise ValueError("time boundaries have not been extracted")
    fee_case = thresholds.fee_case if fee_case is None else fee_case
    dx, dt, T = curves.dx, curves.dt, curves.T
    tol_x = landmark_cells * dx
    if continuity_tol is None:
        continuity_tol = 10.0 * dt * (1.0 + 1.0 / dx)
    levels, c = curves.levels, curves.c
    regime = curves.regime
    upper = thresholds.upper_threshold
    x_alpha = thresholds.x_alpha
    checks: list[ShapeCheck] = []

    def add(name, passed, measured=None, tolerance=None, detail=""):
        checks.append(ShapeCheck(name, bool(passed),
                                 None if measured is None else float(measured),
                                 None if tolerance is None else float(tolerance), detail))

    # strip at x_alpha is never stopped before T
    k_near = int(round(x_alpha / dx))
    add("x_alpha_strip_continuation", c[k_near] >= T - 1e-9, c[k_near], T,
        f"c at level {levels[k_near]!r} nearest x_alpha")

    b1x = curves.b1[:, 1]
    b1t = curves.b1[:, 0]
    worst_drop = -float(np.min(np.diff(b1x))) if b1x.size > 1 else 0.0
    rises_after_t0 = bool(np.any(np.diff(b1x[b1t >= curves.t0 - 1e-12]) > 0)) if b1x.size > 1 else False
    add("b1_nondecreasing", worst_drop <= 0 and rises_after_t0, max(worst_drop, 0.0), 0.0,
        "largest decrease of b1 between layers; requires a strict rise after t0")

    k_hi_b1 = int(np.searchsorted(levels, min(x_alpha, thresholds.x_bar_q), side="left"))
    piece1 = np.arange(0, k_hi_b1)
    piece1 = piece1[levels[piece1] > (curves.x1 or 0.0)]
    add("b1_strict", _plateaus(c, piece1, T) == 0, _plateaus(c, piece1, T), 0,
        "equal c on adjacent levels where c is strictly increasing")

    if regime is Regime.B:
        b2x, b3x = curves.b2[:, 1], curves.b3[:, 1]
        inc2 = _max_increase(b2x)
        add("b2_nonincreasing", inc2 <= 0, max(inc2, 0.0), 0.0)
        drop3 = -float(np.min(np.diff(b3x))) if b3x.size > 1 else 0.0
        add("b3_nondecreasing", drop3 <= 0, max(drop3, 0.0), 0.0)

        common = _common_layers(curves.b1, curves.b2)
        excess12 = float(np.max(common[:, 0] - common[:, 1])) if common.size else 0.0
        excess23 = float(np.max(b2x - b3x)) if b2x.size else 0.0
        add("ordering_b1_b2_b3", excess12 <= 0 and excess23 <= 0, max(excess12, excess23, 0.0), 0.0)

        add("b1_terminal_limit", abs(b1x[-1] - x_alpha) <= tol_x, abs(b1x[-1] - x_alpha), tol_x)
        if b2x.size and curves.b2[-1, 0] >= T - dt - 1e-9:
            add("b2_terminal_limit", abs(b2x[-1] - x_alpha) <= tol_x, abs(b2x[-1] - x_alpha), tol_x)
            if math.isfinite(upper):
                add("b3_terminal_limit", abs(b3x[-1] - upper) <= tol_x, abs(b3x[-1] - upper), tol_x)
        else:
            add("b2_terminal_limit", False, None, tol_x, "no inner stopping band at the last layer")

        if curves.hat_c is not None and curves.hat_c > 0 and b2x.size:
            gap = float(b3x[0] - b2x[0])
            add("band_closes_at_hat_c", gap <= dx + 1e-12, gap, dx,
                "b3 - b2 at the first layer where the band exists")
        if curves.x2 is not None and curves.x3 is not None and curves.x3 > curves.x2 + 1e-12:
            add("flat_minimum_implies_zero", curves.hat_c <= dt + 1e-12, curves.hat_c, dt)

        k_a = int(math.floor(x_alpha / dx + 1e-12)) + 1
        k_min = int(round(curves.x2 / dx)) if curves.x2 is not None else k_a
        k_max = int(round(curves.x3 / dx)) if curves.x3 is not None else k_a
        k_up = int(np.searchsorted(levels, upper, side="left")) if math.isfinite(upper) else len(levels)
        piece2 = np.arange(k_a, k_min + 1)
        piece3 = np.arange(k_max, min(k_up, len(levels)))
        plate = _plateaus(c, piece2, T) + _plateaus(c, piece3, T)
        add("b2_b3_strict", plate == 0, plate, 0, "equal c on adjacent levels inside the band's monotone pieces")
    else:
        add("b1_terminal_limit", abs(b1x[-1] - thresholds.x_bar_q) <= tol_x,
            abs(b1x[-1] - thresholds.x_bar_q), tol_x, "regime A: b1(T-) approaches the upper threshold")
        add("no_inner_band", curves.b2.size == 0 and curves.b3.size == 0, curves.b2.shape[0], 0)

    if fee_case is FeeCase.NO_FEE_BASELINE or (fee_case is FeeCase.CASE_II and math.isfinite(upper)):
        lo = upper + tol_x if regime is Regime.B else thresholds.x_bar_q + tol_x
        mask = levels > lo
        if fee_case is FeeCase.CASE_II:
            mask &= levels < thresholds.hat_x2 - tol_x
        shortfall = float(np.max(T - c[mask])) if mask.any() else 0.0
        add("continuation_above_threshold", shortfall <= 1e-9, shortfall, 0.0,
            "largest T - c(x) above the upper threshold")

    jumps = np.abs(np.diff(c))
    exempt = np.zeros(jumps.size, dtype=bool)
    exempt[0] = True  # c(0) = 0 while c(0+) = t0
    k1 = int(round((curves.x1 or 0.0) / dx))
    exempt[max(k1 - 1, 0): k1 + 2] = True
    if curves.x2 is not None:
        lo_k = max(int(round(curves.x2 / dx)) - 2, 0)
        hi_k = int(round(curves.x3 / dx)) + 2
        exempt[lo_k: hi_k] = True
    if fee_case is FeeCase.CASE_II and curves.hat_x3 is not None:
        k3 = int(round(curves.hat_x3 / dx))
        exempt[max(k3 - 2, 0): k3 + 2] = True
    worst = float(np.max(jumps[~exempt])) if (~exempt).any() else 0.0
    add("c_bounded_jumps", worst <= continuity_tol, worst, continuity_tol)

    if fee_case is FeeCase.CASE_II:
        if curves.hat_x3 is None:
            add("far_stopping_strip", False, None, tol_x, "no level above hat_x2 with c = 0")
        else:
            mask = levels >= curves.hat_x3 + tol_x
            worst_far = float(np.max(c[mask])) if mask.any() else 0.0
            add("far_stopping_strip", worst_far <= 0.0 and mask.any(), worst_far, 0.0,
                f"max c above hat_x3 + {landmark_cells:g} dx")

    return ShapeReport(regime=regime, checks=checks)


def _common_layers(lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    if lower.size == 0 or upper.size == 0:
        return np.empty((0, 2))
    _, il, iu = np.intersect1d(np.round(lower[:, 0], 12), np.round(upper[:, 0], 12), return_indices=True)
    return np.column_stack([lower[il, 1], upper[iu, 1]])


def smooth_fit_gap(solution: GridSolution, curves: BoundaryCurves, layer: int = 0) -> dict:
    """One-sided difference quotients of ``v`` and ``h`` at the boundary levels of one layer.

    Purely diagnostic: reports the gap between the slope of the value and of
    the payoff just inside the continuation region.
    """
    from .model import payoff_h

    x = solution.levels
    v = solution.values[layer]
    h = payoff_h(x, solution.params)
    dx = solution.spec.dx
    out = {}
    for name, curve, side in (("b1", curves.b1, +1), ("b2", curves.b2, -1), ("b3", curves.b3, +1)):
        row = curve[np.isclose(curve[:, 0], layer * solution.spec.dt)] if curve.size else curve
        if row.size == 0:
            continue
        k = int(round(row[0, 1] / dx))
        j = k + side
        if not 0 <= j < len(x) or k == 0:
            continue
        dv = (v[j] - v[k]) / (side * dx)
        dh = (h[j] - h[k]) / (side * dx)
        out[name] = {"x": float(x[k]), "slope_v": float(dv), "slope_h": float(dh), "gap": float(dv - dh)}
    return out


def stopping_mask_from_curves(curves: BoundaryCurves, t, x) -> np.ndarray:
    """Stopping rule from the time boundaries, linear in t between layers.

    Returns True where ``x <= b1(t)`` or ``b2(t) <= x <= b3(t)``.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    stop = np.zeros(np.broadcast(t, x).shape, dtype=bool)
    if curves.b1.size:
        stop |= x <= np.interp(t, curves.b1[:, 0], curves.b1[:, 1])
    if curves.b2.size and curves.b3.size:
        t_lo, t_hi = curves.b2[0, 0], curves.b2[-1, 0]
        inside = (t >= t_lo - 1e-12) & (t <= t_hi + curves.dt)
        lo = np.interp(t, curves.b2[:, 0], curves.b2[:, 1])
        hi = np.interp(t, curves.b3[:, 0], curves.b3[:, 1])
        stop |= inside & (x >= lo) & (x <= hi)
    return stop


def curves_to_csv(curves: BoundaryCurves) -> str:
    """Rows ``kind,t_years,x`` for kinds c, b1, b2, b3 (header included)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["kind", "t_years", "x"])
    for x, t in curves.c_samples:
        writer.writerow(["c", repr(float(t)), repr(float(x))])
    for kind in ("b1", "b2", "b3"):
        for t, x in getattr(curves, kind):
            writer.writerow([kind, repr(float(t)), repr(float(x))])
    return buf.getvalue()


def landmarks_dict(curves: BoundaryCurves) -> dict:
    return {
        "t0": curves.t0,
        "hat_c": curves.hat_c,
        "x1": curves.x1,
        "x2": curves.x2,
        "x3": curves.x3,
        "hat_x3": curves.hat_x3,
        "regime": curves.regime.value if curves.regime else None,
        "b2_empty": curves.b2.size == 0,
        "b3_empty": curves.b3.size == 0,
    }
