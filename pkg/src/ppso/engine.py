"""Lattice valuation of the surrender problem.

Two schemes share the same one-step rule. ``price_cone`` runs the recombining
binomial tree rooted at the contract's initial BDR and returns headline
prices. ``solve_grid`` sweeps a rectangular (t, x) lattice so that every node
carries a value and an exercise flag, which is what the boundary extraction
needs.

The up-probability follows the Nelson-Ramaswamy coupling ``dx = sigma * sqrt(dt)``
with ``p = 1/2 + sqrt(dt) * pi(x) / (2 sigma)`` clamped to [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import (
    FeeCase,
    ParameterError,
    PolicyParams,
    derive_thresholds,
    drift_pi,
    payoff_h,
    running_cost,
)

__all__ = [
    "SpecError",
    "LatticeSpec",
    "ValuationResult",
    "GridSolution",
    "up_probability",
    "price_cone",
    "solve_grid",
    "value_at",
    "minimum_x_max",
    "default_x_max",
    "solve_default_grid",
    "tie_tolerance",
]

TRUNCATION_SIGMAS = 6.0


class SpecError(ValueError):
    """Raised for an invalid lattice setup (steps, spacing or truncation)."""


def tie_tolerance(h):
    return 1e-12 * np.maximum(1.0, h)


@dataclass(frozen=True)
class LatticeSpec:
    n_steps: int
    dt: float
    dx: float
    x_max: Optional[float] = None
    x0: Optional[float] = None

    @classmethod
    def build(cls, params: PolicyParams, n_steps: int, x_max: Optional[float] = None,
              x0: Optional[float] = None) -> "LatticeSpec":
        if not isinstance(n_steps, (int, np.integer)) or n_steps < 1:
            raise SpecError(f"n_steps must be a positive integer, got {n_steps!r}")
        dt = params.T / n_steps
        dx = params.sigma * math.sqrt(dt)
        if x_max is not None:
            x_max = math.ceil(x_max / dx - 1e-9) * dx
        return cls(n_steps=int(n_steps), dt=dt, dx=dx, x_max=x_max, x0=x0)

    @property
    def n_levels(self) -> int:
        if self.x_max is None:
            raise SpecError("x_max is required in grid mode")
        return int(round(self.x_max / self.dx)) + 1

    def to_dict(self) -> dict:
        return {"n_steps": self.n_steps, "dt": self.dt, "dx": self.dx, "x_max": self.x_max, "x0": self.x0}


def minimum_x_max(params: PolicyParams) -> float:
    """Smallest admissible top of the grid, before rounding to a level."""
    th = derive_thresholds(params)
    top = max(th.x_alpha, th.x_bar0, th.x_bar_q_gamma if params.has_fees else th.x_bar0)
    return top + TRUNCATION_SIGMAS * params.sigma * math.sqrt(params.T)


def default_x_max(params: PolicyParams) -> float:
    """Default grid top; in fee Case II it must also clear the far stopping strip."""
    base = minimum_x_max(params)
    th = derive_thresholds(params)
    if th.fee_case is FeeCase.CASE_II:
        return max(base, th.hat_x2 + 2 * TRUNCATION_SIGMAS * params.sigma * math.sqrt(params.T))
    return base


def up_probability(x, params: PolicyParams, dt: float):
    if dt <= 0:
        raise SpecError("dt must be > 0")
    p = np.clip(0.5 + math.sqrt(dt) * np.asarray(drift_pi(x, params)) / (2.0 * params.sigma), 0.0, 1.0)
    return float(p) if np.ndim(x) == 0 else p


@dataclass(frozen=True)
class ValuationResult:
    v0: float
    v0_european: float
    premium: float
    price_V0: float
    price_V0E: float
    price_Vopt: float
    n_steps: int
    spec: LatticeSpec

    def to_dict(self) -> dict:
        return {
            "v0": self.v0,
            "v0_european": self.v0_european,
            "premium": self.premium,
            "V0": self.price_V0,
            "V0E": self.price_V0E,
            "Vopt": self.price_Vopt,
            "n_steps": self.n_steps,
            "lattice": self.spec.to_dict(),
        }


def price_cone(params: PolicyParams, n_steps: int, x0: Optional[float] = None) -> ValuationResult:
    """American and European values from the recombining tree rooted at ``x0``.

    ``x0`` defaults to the contract's initial BDR ``ln(1/alpha)``. Nodes at or
    below zero are absorbed with value ``h(0) = 1`` and accrue no fees.
    """
    root = params.x_alpha if x0 is None else float(x0)
    if root < 0:
        raise ParameterError("x0 must be >= 0")
    spec = LatticeSpec.build(params, n_steps, x0=root)
    dt, dx, N = spec.dt, spec.dx, spec.n_steps

    x = root + (2.0 * np.arange(N + 1) - N) * dx
    xc = np.maximum(x, 0.0)
    amer = payoff_h(xc, params)
    euro = amer.copy()
    for n in range(N - 1, -1, -1):
        x = root + (2.0 * np.arange(n + 1) - n) * dx
        xc = np.maximum(x, 0.0)
        pu = up_probability(xc, params, dt)
        cost = running_cost(xc, params) * dt
        cont = pu * amer[1:] + (1.0 - pu) * amer[:-1] - cost
        cont_e = pu * euro[1:] + (1.0 - pu) * euro[:-1] - cost
        absorbed = x <= 0
        amer = np.where(absorbed, 1.0, np.maximum(payoff_h(xc, params), cont))
        euro = np.where(absorbed, 1.0, cont_e)

    v0, v0e = float(amer[0]), float(euro[0])
    return ValuationResult(
        v0=v0,
        v0_european=v0e,
        premium=v0 - v0e,
        price_V0=params.a0 * v0,
        price_V0E=params.a0 * v0e,
        price_Vopt=params.a0 * (v0 - v0e),
        n_steps=N,
        spec=spec,
    )


@dataclass(frozen=True, eq=False)
class GridSolution:
    """Values on the rectangle ``t_n = n dt`` (rows) by ``x_k = k dx`` (columns)."""

    params: PolicyParams
    spec: LatticeSpec
    levels: np.ndarray
    values: np.ndarray
    stopped: np.ndarray
    european_values: np.ndarray
    times: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "times", np.arange(self.spec.n_steps + 1) * self.spec.dt)
        for arr in (self.levels, self.values, self.stopped, self.european_values, self.times):
            arr.setflags(write=False)

    def level_index(self, x: float) -> int:
        """Index of the grid level nearest ``x``."""
        k = int(round(x / self.spec.dx))
        return min(max(k, 0), len(self.levels) - 1)

    @property
    def v0(self) -> float:
        return value_at(self, 0.0, self.params.x_alpha)

    @property
    def v0_european(self) -> float:
        return value_at(self, 0.0, self.params.x_alpha, european=True)


def solve_grid(params: PolicyParams, spec: LatticeSpec) -> GridSolution:
    """Backward induction on the full rectangle ``[0, N] x [0, k_max]``.

    The bottom level (x = 0) is absorbing with value 1. The top level uses a
    reflecting closure: its up-move lands back on itself.
    """
    if spec.x_max is None:
        raise SpecError("grid mode requires x_max")
    required = minimum_x_max(params)
    if spec.x_max < required - 1e-12:
        raise SpecError(f"x_max={spec.x_max!r} is below the required minimum {required!r}")
    expected_dx = params.sigma * math.sqrt(params.T / spec.n_steps)
    if not math.isclose(spec.dx, expected_dx, rel_tol=1e-12) or not math.isclose(
        spec.dt, params.T / spec.n_steps, rel_tol=1e-12
    ):
        raise SpecError("lattice spacing must satisfy dt = T/N and dx = sigma*sqrt(dt)")

    N, dt = spec.n_steps, spec.dt
    x = np.arange(spec.n_levels) * spec.dx
    h = payoff_h(x, params)
    pu = up_probability(x, params, dt)
    cost = running_cost(x, params) * dt
    tol = tie_tolerance(h)

    values = np.empty((N + 1, x.size))
    euro = np.empty_like(values)
    stopped = np.zeros(values.shape, dtype=bool)
    values[N] = h
    euro[N] = h
    stopped[N] = True

    for n in range(N - 1, -1, -1):
        cont = _expectation(values[n + 1], pu) - cost
        cont_e = _expectation(euro[n + 1], pu) - cost
        stop = cont - h <= tol
        row = np.where(stop, h, cont)
        row[0] = 1.0
        stop[0] = True
        cont_e[0] = 1.0
        values[n] = row
        euro[n] = cont_e
        stopped[n] = stop

    return GridSolution(params=params, spec=spec, levels=x, values=values, stopped=stopped,
                        european_values=euro)


def solve_default_grid(params: PolicyParams, n_steps: int, x_max: Optional[float] = None,
                       max_doublings: int = 4) -> GridSolution:
    """Grid solve with the default truncation.

    In fee Case II the far stopping strip sits at an a-priori unknown height,
    so the span above ``hat_x2`` is doubled until the top level is stopped at
    ``t = 0`` (or ``max_doublings`` is exhausted). An explicit ``x_max`` is
    used as given.
    """
    if x_max is not None:
        return solve_grid(params, LatticeSpec.build(params, n_steps, x_max=x_max))
    top = default_x_max(params)
    solution = solve_grid(params, LatticeSpec.build(params, n_steps, x_max=top))
    th = derive_thresholds(params)
    if th.fee_case is not FeeCase.CASE_II:
        return solution
    for _ in range(max_doublings):
        if solution.stopped[0, -1]:
            break
        top = th.hat_x2 + 2.0 * (top - th.hat_x2)
        solution = solve_grid(params, LatticeSpec.build(params, n_steps, x_max=top))
    return solution


def _expectation(nxt: np.ndarray, pu: np.ndarray) -> np.ndarray:
    up = np.empty_like(nxt)
    up[:-1] = nxt[1:]
    up[-1] = nxt[-1]
    down = np.empty_like(nxt)
    down[1:] = nxt[:-1]
    down[0] = nxt[0]
    return pu * up + (1.0 - pu) * down


def value_at(solution: GridSolution, t: float, x: float, european: bool = False) -> float:
    """Bilinear interpolation of the grid values; exact at nodes."""
    spec = solution.spec
    T = solution.params.T
    if not (0.0 <= t <= T) or not (0.0 <= x <= spec.x_max + 1e-12):
        raise ParameterError(f"query (t={t!r}, x={x!r}) outside [0, {T!r}] x [0, {spec.x_max!r}]")
    grid = solution.european_values if european else solution.values
    tn = _snap(min(t / spec.dt, spec.n_steps))
    xk = _snap(min(x / spec.dx, len(solution.levels) - 1))
    n0 = min(int(math.floor(tn)), spec.n_steps - 1)
    k0 = min(int(math.floor(xk)), len(solution.levels) - 2)
    wt = tn - n0
    wx = xk - k0
    v00, v01 = grid[n0, k0], grid[n0, k0 + 1]
    v10, v11 = grid[n0 + 1, k0], grid[n0 + 1, k0 + 1]
    return float(
        (1 - wt) * ((1 - wx) * v00 + wx * v01) + wt * ((1 - wx) * v10 + wx * v11)
    )


def _snap(u: float) -> float:
    nearest = round(u)
    return float(nearest) if abs(u - nearest) < 1e-9 else u
